#include "pulsestress/nn.hpp"

#include "pulsestress/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pulsestress::nn {

namespace {

struct ConvSpec {
    const char* name;
    std::size_t width, stride, in, out;
};

constexpr ConvSpec kConv1{"conv1", 64, 4, 1, 8};
constexpr ConvSpec kConv2{"conv2", 32, 2, 8, 16};
constexpr ConvSpec kConv3{"conv3", 16, 1, 16, 8};
constexpr std::size_t kPoolWidth = 4;
constexpr std::size_t kPoolStride = 4;
constexpr std::size_t kFeatureDenseWidth = 4;

std::size_t flatten_width() { return kConv3.out; }

std::size_t head_width(Variant v) {
    return v == Variant::HCNN ? flatten_width() + kFeatureDenseWidth : flatten_width();
}

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) {
        v = static_cast<T>((2.0 * layers::uniform01(rng) - 1.0) * limit);
    }
    return t;
}

template <typename T>
void add_conv(ModelState<T>& m, const ConvSpec& c, std::mt19937_64& rng) {
    m.params.push_back({std::string(c.name) + "/kernel", c.name,
                        glorot_uniform<T>({c.width, c.in, c.out}, c.width * c.in,
                                          c.width * c.out, rng),
                        true});
    m.params.push_back({std::string(c.name) + "/bias", c.name, Tensor<T>({c.out}), true});
}

template <typename T>
void add_batchnorm(ModelState<T>& m, const std::string& name, std::size_t ch) {
    m.params.push_back({name + "/gamma", name, Tensor<T>({ch}, T(1)), true});
    m.params.push_back({name + "/beta", name, Tensor<T>({ch}), true});
    m.params.push_back({name + "/moving_mean", name, Tensor<T>({ch}), false});
    m.params.push_back({name + "/moving_variance", name, Tensor<T>({ch}, T(1)), false});
}

template <typename T>
void add_dense(ModelState<T>& m, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng) {
    m.params.push_back(
        {name + "/kernel", name, glorot_uniform<T>({in, out}, in, out, rng), true});
    m.params.push_back({name + "/bias", name, Tensor<T>({out}), true});
}

void check_rng(std::mt19937_64* rng, double p) {
    if (p > 0.0 && rng == nullptr) {
        throw Error(Errc::Usage, "train-mode forward with dropout needs a random generator");
    }
}


template <typename T>
using TapList = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void tap(TapList<T>* taps, const char* name, const Tensor<T>& t) {
    if (taps) taps->emplace_back(name, t);
}

// Strips the batch axis for shape checks.
Shape per_sample(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

template <typename T>
void expect_shape(const Tensor<T>& t, const Shape& expected, const char* layer) {
    if (per_sample(t.shape()) != expected) {
        throw Error(Errc::Shape, std::string(layer) + ": output shape " +
                                     shape_string(per_sample(t.shape())) + " != expected " +
                                     shape_string(expected));
    }
}

struct ExpectedShapes {
    Shape conv1, pool1, conv2, pool2, conv3;
};

ExpectedShapes expected_shapes() {
    using layers::conv_output_length;
    ExpectedShapes e;
    const auto c1 = conv_output_length(kInputLength, kConv1.width, kConv1.stride);
    const auto p1 = conv_output_length(c1, kPoolWidth, kPoolStride);
    const auto c2 = conv_output_length(p1, kConv2.width, kConv2.stride);
    const auto p2 = conv_output_length(c2, kPoolWidth, kPoolStride);
    const auto c3 = conv_output_length(p2, kConv3.width, kConv3.stride);
    e.conv1 = {c1, kConv1.out};
    e.pool1 = {p1, kConv1.out};
    e.conv2 = {c2, kConv2.out};
    e.pool2 = {p2, kConv2.out};
    e.conv3 = {c3, kConv3.out};
    return e;
}

template <typename T>
void validate_batch(const ModelState<T>& model, const Batch<T>& batch) {
    if (batch.segments.rank() != 3 || batch.segments.dim(1) != kInputLength ||
        batch.segments.dim(2) != 1) {
        throw Error(Errc::Shape, "segment input must be [B, 3840, 1], got " +
                                     shape_string(batch.segments.shape()));
    }
    const std::size_t b = batch.segments.dim(0);
    if (b == 0) throw Error(Errc::Shape, "empty batch");
    if (model.variant == Variant::HCNN) {
        if (batch.features.rank() != 2 || batch.features.dim(0) != b ||
            batch.features.dim(1) != kFeatureWidth) {
            throw Error(Errc::Shape, "feature input must be [B, 19], got " +
                                         shape_string(batch.features.shape()));
        }
    } else if (batch.features.size() != 0) {
        throw Error(Errc::Shape, "the CNN variant takes no feature input");
    }
}

// Shared forward. `running` is non-null only for Train mode, where batch
// statistics feed the running averages.
template <typename T>
Tensor<T> run_forward(const ModelState<T>& model, ModelState<T>* running, const Batch<T>& batch,
                      Mode mode, std::mt19937_64* rng, ForwardTrace<T>* trace,
                      TapList<T>* taps) {
    validate_batch(model, batch);
    const auto& opt = model.options;
    const bool train = mode == Mode::Train;
    const bool relu = !opt.linear_activations;
    const auto shapes = expected_shapes();
    if (train) {
        check_rng(rng, std::max({opt.input_dropout, opt.block_dropout, opt.feature_dropout}));
    }

    auto P = [&](std::string_view name) -> const Tensor<T>& { return model.param(name).value; };

    Tensor<T> x = batch.segments;
    tap(taps, "segment_input", x);
    if (train) layers::dropout_inplace(x, opt.input_dropout, *rng);
    tap(taps, "dropout1", x);

    Tensor<T> z = layers::conv1d_forward(x, P("conv1/kernel"), P("conv1/bias"), kConv1.stride);
    expect_shape(z, shapes.conv1, "conv1");
    if (trace) {
        trace->input = std::move(x);
        trace->conv1_pre = z;
        trace->conv1_shape = z.shape();
    }
    if (relu) layers::relu_inplace(z);
    tap(taps, "conv1", z);
    Tensor<T> h = layers::avgpool_forward(z, kPoolWidth, kPoolStride);
    expect_shape(h, shapes.pool1, "pool1");
    tap(taps, "pool1", h);

    auto batchnorm = [&](const Tensor<T>& in, const char* name,
                         layers::BatchNormCache<T>* cache) {
        const std::string n(name);
        if (train) {
            layers::BatchNormCache<T> local;
            return layers::batchnorm_forward_train(
                in, P(n + "/gamma"), P(n + "/beta"), running->param(n + "/moving_mean").value,
                running->param(n + "/moving_variance").value, opt.bn_momentum, opt.bn_epsilon,
                cache ? *cache : local);
        }
        return layers::batchnorm_forward_infer(in, P(n + "/gamma"), P(n + "/beta"),
                                               P(n + "/moving_mean"), P(n + "/moving_variance"),
                                               opt.bn_epsilon);
    };

    h = batchnorm(h, "bn1", trace ? &trace->bn1 : nullptr);
    tap(taps, "bn1", h);
    if (train) {
        auto mask = layers::dropout_inplace(h, opt.block_dropout, *rng);
        if (trace) trace->mask_block2 = std::move(mask);
    }
    tap(taps, "dropout2", h);

    z = layers::conv1d_forward(h, P("conv2/kernel"), P("conv2/bias"), kConv2.stride);
    expect_shape(z, shapes.conv2, "conv2");
    if (trace) {
        trace->block2_in = std::move(h);
        trace->conv2_pre = z;
        trace->conv2_shape = z.shape();
    }
    if (relu) layers::relu_inplace(z);
    tap(taps, "conv2", z);
    h = layers::avgpool_forward(z, kPoolWidth, kPoolStride);
    expect_shape(h, shapes.pool2, "pool2");
    tap(taps, "pool2", h);
    h = batchnorm(h, "bn2", trace ? &trace->bn2 : nullptr);
    tap(taps, "bn2", h);
    if (train) {
        auto mask = layers::dropout_inplace(h, opt.block_dropout, *rng);
        if (trace) trace->mask_block3 = std::move(mask);
    }
    tap(taps, "dropout3", h);

    z = layers::conv1d_forward(h, P("conv3/kernel"), P("conv3/bias"), kConv3.stride);
    expect_shape(z, shapes.conv3, "conv3");
    if (trace) {
        trace->block3_in = std::move(h);
        trace->conv3_pre = z;
    }
    if (relu) layers::relu_inplace(z);
    tap(taps, "conv3", z);
    Tensor<T> pooled = layers::global_avgpool_forward(z);
    expect_shape(pooled, {flatten_width()}, "global_pool");
    tap(taps, "global_pool", pooled);
    tap(taps, "flatten", pooled);

    const std::size_t bsz = batch.size();
    Tensor<T> head;
    if (model.variant == Variant::HCNN) {
        Tensor<T> f = batch.features;
        tap(taps, "feature_input", f);
        if (train) layers::dropout_inplace(f, opt.feature_dropout, *rng);
        tap(taps, "dropout4", f);
        Tensor<T> fz = layers::dense_forward(f, P("feature_dense/kernel"), P("feature_dense/bias"));
        expect_shape(fz, {kFeatureDenseWidth}, "feature_dense");
        if (trace) {
            trace->features_in = std::move(f);
            trace->feature_pre = fz;
        }
        if (relu) layers::relu_inplace(fz);
        tap(taps, "feature_dense", fz);

        const std::size_t width = head_width(model.variant);
        head = Tensor<T>({bsz, width});
        for (std::size_t b = 0; b < bsz; ++b) {
            std::copy_n(pooled.data() + b * flatten_width(), flatten_width(),
                        head.data() + b * width);
            std::copy_n(fz.data() + b * kFeatureDenseWidth, kFeatureDenseWidth,
                        head.data() + b * width + flatten_width());
        }
        expect_shape(head, {width}, "concatenate");
        tap(taps, "concatenate", head);
    } else {
        head = std::move(pooled);
    }

    Tensor<T> logits = layers::dense_forward(head, P("output_dense/kernel"), P("output_dense/bias"));
    Tensor<T> probs = layers::softmax_rows(logits);
    expect_shape(probs, {static_cast<std::size_t>(model.n_classes)}, "output_dense");
    tap(taps, "output_dense", probs);

    if (trace) {
        trace->concat = std::move(head);
        trace->probs = probs;
        trace->batch = bsz;
        trace->model_step = model.step;
        trace->valid = true;
    }
    return probs;
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

const char* variant_name(Variant v) { return v == Variant::HCNN ? "hcnn" : "cnn"; }

Variant parse_variant(const std::string& text) {
    if (text == "hcnn") return Variant::HCNN;
    if (text == "cnn") return Variant::CNN;
    throw Error(Errc::Usage, "unknown variant '" + text + "' (expected cnn or hcnn)");
}

template <typename T>
std::size_t ModelState<T>::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name) return i;
    }
    throw Error(Errc::Usage, "no parameter named " + std::string(name));
}

template <typename T>
std::size_t ModelState<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

template <typename T>
std::size_t ModelState<T>::layer_parameter_count(std::string_view layer) const {
    std::size_t n = 0;
    for (const auto& p : params) {
        if (p.layer == layer) n += p.value.size();
    }
    return n;
}

template <typename T>
ModelState<T> build_model(Variant variant, int n_classes, std::uint64_t seed,
                          NetworkOptions options) {
    if (n_classes != 2 && n_classes != 3) {
        throw Error(Errc::Usage, "n_classes must be 2 or 3");
    }
    std::mt19937_64 rng(seed);
    ModelState<T> m;
    m.variant = variant;
    m.n_classes = n_classes;
    m.options = options;
    add_conv(m, kConv1, rng);
    add_batchnorm(m, "bn1", kConv1.out);
    add_conv(m, kConv2, rng);
    add_batchnorm(m, "bn2", kConv2.out);
    add_conv(m, kConv3, rng);
    if (variant == Variant::HCNN) {
        add_dense(m, "feature_dense", kFeatureWidth, kFeatureDenseWidth, rng);
    }
    add_dense(m, "output_dense", head_width(variant), static_cast<std::size_t>(n_classes), rng);

    for (const auto& p : m.params) {
        m.adam_m.emplace_back(p.trainable ? Tensor<T>(p.value.shape()) : Tensor<T>());
        m.adam_v.emplace_back(p.trainable ? Tensor<T>(p.value.shape()) : Tensor<T>());
    }
    return m;
}

std::vector<LayerInfo> describe(Variant variant, int n_classes) {
    const auto s = expected_shapes();
    const auto conv_params = [](const ConvSpec& c) { return c.width * c.in * c.out + c.out; };
    const auto nc = static_cast<std::size_t>(n_classes);
    std::vector<LayerInfo> rows = {
        {"segment_input", 0, 0, "", {kInputLength, 1}, 0},
        {"dropout1", 0, 0, "", {kInputLength, 1}, 0},
        {"conv1", kConv1.width, kConv1.stride, "relu", s.conv1, conv_params(kConv1)},
        {"pool1", kPoolWidth, kPoolStride, "", s.pool1, 0},
        {"bn1", 0, 0, "", s.pool1, 4 * kConv1.out},
        {"dropout2", 0, 0, "", s.pool1, 0},
        {"conv2", kConv2.width, kConv2.stride, "relu", s.conv2, conv_params(kConv2)},
        {"pool2", kPoolWidth, kPoolStride, "", s.pool2, 0},
        {"bn2", 0, 0, "", s.pool2, 4 * kConv2.out},
        {"dropout3", 0, 0, "", s.pool2, 0},
        {"conv3", kConv3.width, kConv3.stride, "relu", s.conv3, conv_params(kConv3)},
        {"global_pool", 0, 0, "", {flatten_width()}, 0},
        {"flatten", 0, 0, "", {flatten_width()}, 0},
    };
    if (variant == Variant::HCNN) {
        rows.push_back({"feature_input", 0, 0, "", {kFeatureWidth}, 0});
        rows.push_back({"dropout4", 0, 0, "", {kFeatureWidth}, 0});
        rows.push_back({"feature_dense", 0, 0, "relu", {kFeatureDenseWidth},
                        kFeatureWidth * kFeatureDenseWidth + kFeatureDenseWidth});
        rows.push_back({"concatenate", 0, 0, "", {head_width(variant)}, 0});
    }
    rows.push_back({"output_dense", 0, 0, "softmax", {nc}, head_width(variant) * nc + nc});
    return rows;
}

std::string summary(Variant variant, int n_classes) {
    std::ostringstream out;
    out << "model: " << variant_name(variant) << ", " << n_classes << " classes\n";
    std::size_t total = 0;
    for (const auto& row : describe(variant, n_classes)) {
        out << "  " << row.name;
        for (std::size_t pad = row.name.size(); pad < 16; ++pad) out << ' ';
        out << shape_string(row.output_shape);
        if (row.parameters) out << "  params=" << row.parameters;
        if (!row.activation.empty()) out << "  " << row.activation;
        out << '\n';
        total += row.parameters;
    }
    out << "  total parameters: " << total << '\n';
    return out.str();
}

template <typename To, typename From>
ModelState<To> convert(const ModelState<From>& src) {
    auto cast = [](const Tensor<From>& t) {
        std::vector<To> data(t.size());
        std::transform(t.values().begin(), t.values().end(), data.begin(),
                       [](From v) { return static_cast<To>(v); });
        return Tensor<To>(t.shape(), std::move(data));
    };
    ModelState<To> dst;
    dst.variant = src.variant;
    dst.n_classes = src.n_classes;
    dst.options = src.options;
    dst.step = src.step;
    for (const auto& p : src.params) dst.params.push_back({p.name, p.layer, cast(p.value), p.trainable});
    for (const auto& t : src.adam_m) dst.adam_m.push_back(cast(t));
    for (const auto& t : src.adam_v) dst.adam_v.push_back(cast(t));
    return dst;
}

template <typename T>
Tensor<T> forward(ModelState<T>& model, const Batch<T>& batch, Mode mode, std::mt19937_64* rng,
                  ForwardTrace<T>* trace) {
    if (mode == Mode::Infer) {
        if (trace) *trace = ForwardTrace<T>{};
        return run_forward<T>(model, nullptr, batch, mode, nullptr, nullptr, nullptr);
    }
    if (trace) *trace = ForwardTrace<T>{};
    return run_forward<T>(model, &model, batch, mode, rng, trace, nullptr);
}

template <typename T>
Tensor<T> predict(const ModelState<T>& model, const Batch<T>& batch) {
    return run_forward<T>(model, nullptr, batch, Mode::Infer, nullptr, nullptr, nullptr);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> forward_activations(const ModelState<T>& model,
                                                                   const Batch<T>& batch) {
    TapList<T> taps;
    run_forward<T>(model, nullptr, batch, Mode::Infer, nullptr, nullptr, &taps);
    return taps;
}

double loss_weighted_cce(std::span<const double> probs, int target,
                         std::span<const double> class_weights) {
    const double p = std::clamp(probs[static_cast<std::size_t>(target)], kProbabilityClamp,
                                1.0 - kProbabilityClamp);
    return -class_weights[static_cast<std::size_t>(target)] * std::log(p);
}

template <typename T>
double batch_loss(const Tensor<T>& probs, std::span<const int> targets,
                  std::span<const double> class_weights) {
    const std::size_t n = probs.dim(0), nc = probs.dim(1);
    if (targets.size() != n) throw Error(Errc::Usage, "target count does not match batch");
    double total = 0.0;
    std::vector<double> row(nc);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t c = 0; c < nc; ++c) row[c] = static_cast<double>(probs[b * nc + c]);
        total += loss_weighted_cce(row, targets[b], class_weights);
    }
    return total / static_cast<double>(n);
}

template <typename T>
Gradients<T> backward(const ModelState<T>& model, const ForwardTrace<T>& trace,
                      std::span<const int> targets, std::span<const double> class_weights) {
    if (!trace.valid) throw Error(Errc::Usage, "backward needs a train-mode forward trace");
    if (trace.model_step != model.step) {
        throw Error(Errc::Usage, "stale forward trace (model was updated since the forward pass)");
    }
    if (targets.size() != trace.batch) {
        throw Error(Errc::Usage, "target count does not match traced batch");
    }
    if (class_weights.size() != static_cast<std::size_t>(model.n_classes)) {
        throw Error(Errc::Usage, "class weight count does not match n_classes");
    }
    const bool relu = !model.options.linear_activations;

    Gradients<T> grads;
    for (const auto& p : model.params) grads.emplace_back(p.value.shape());
    auto G = [&](std::string_view name) -> Tensor<T>& { return grads[model.index_of(name)]; };
    auto P = [&](std::string_view name) -> const Tensor<T>& { return model.param(name).value; };

    const std::size_t bsz = trace.batch;
    const std::size_t nc = static_cast<std::size_t>(model.n_classes);
    Tensor<T> dlogits({bsz, nc});
    for (std::size_t b = 0; b < bsz; ++b) {
        const auto t = static_cast<std::size_t>(targets[b]);
        if (t >= nc) throw Error(Errc::Usage, "target label out of range");
        const double pt = static_cast<double>(trace.probs[b * nc + t]);
        // Clamp saturated: the clipped log has zero slope.
        if (pt < kProbabilityClamp || pt > 1.0 - kProbabilityClamp) continue;
        const double scale = class_weights[t] / static_cast<double>(bsz);
        for (std::size_t c = 0; c < nc; ++c) {
            const double delta = (c == t) ? 1.0 : 0.0;
            dlogits[b * nc + c] =
                static_cast<T>(scale * (static_cast<double>(trace.probs[b * nc + c]) - delta));
        }
    }

    Tensor<T> dhead = layers::dense_backward(trace.concat, P("output_dense/kernel"), dlogits,
                                             G("output_dense/kernel"), G("output_dense/bias"));

    const std::size_t flat = flatten_width();
    Tensor<T> dpooled({bsz, flat});
    if (model.variant == Variant::HCNN) {
        const std::size_t width = head_width(model.variant);
        Tensor<T> dfeat({bsz, kFeatureDenseWidth});
        for (std::size_t b = 0; b < bsz; ++b) {
            std::copy_n(dhead.data() + b * width, flat, dpooled.data() + b * flat);
            std::copy_n(dhead.data() + b * width + flat, kFeatureDenseWidth,
                        dfeat.data() + b * kFeatureDenseWidth);
        }
        if (relu) layers::relu_backward_inplace(trace.feature_pre, dfeat);
        layers::dense_backward(trace.features_in, P("feature_dense/kernel"), dfeat,
                               G("feature_dense/kernel"), G("feature_dense/bias"));
    } else {
        dpooled = std::move(dhead);
    }

    Tensor<T> d = layers::global_avgpool_backward(dpooled, trace.conv3_pre.shape());
    if (relu) layers::relu_backward_inplace(trace.conv3_pre, d);
    Tensor<T> dx;
    layers::conv1d_backward(trace.block3_in, P("conv3/kernel"), d, kConv3.stride,
                            G("conv3/kernel"), G("conv3/bias"), &dx);
    layers::dropout_backward_inplace(trace.mask_block3, dx);
    d = layers::batchnorm_backward(dx, P("bn2/gamma"), trace.bn2, G("bn2/gamma"), G("bn2/beta"));
    d = layers::avgpool_backward(d, trace.conv2_shape, kPoolWidth, kPoolStride);
    if (relu) layers::relu_backward_inplace(trace.conv2_pre, d);
    layers::conv1d_backward(trace.block2_in, P("conv2/kernel"), d, kConv2.stride,
                            G("conv2/kernel"), G("conv2/bias"), &dx);
    layers::dropout_backward_inplace(trace.mask_block2, dx);
    d = layers::batchnorm_backward(dx, P("bn1/gamma"), trace.bn1, G("bn1/gamma"), G("bn1/beta"));
    d = layers::avgpool_backward(d, trace.conv1_shape, kPoolWidth, kPoolStride);
    if (relu) layers::relu_backward_inplace(trace.conv1_pre, d);
    layers::conv1d_backward<T>(trace.input, P("conv1/kernel"), d, kConv1.stride,
                               G("conv1/kernel"), G("conv1/bias"), nullptr);
    return grads;
}

template <typename T>
void adam_step(ModelState<T>& model, const Gradients<T>& grads, const AdamConfig& config) {
    if (grads.size() != model.params.size()) {
        throw Error(Errc::Usage, "gradient list does not match parameter list");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (model.params[i].trainable && grads[i].shape() != model.params[i].value.shape()) {
            throw Error(Errc::Usage, "gradient shape mismatch for " + model.params[i].name);
        }
    }
    const auto t = static_cast<double>(model.step + 1);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = model.params[i];
        if (!p.trainable) continue;
        auto& m = model.adam_m[i];
        auto& v = model.adam_v[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = static_cast<double>(grads[i][k]);
            const double mk = config.beta1 * static_cast<double>(m[k]) + (1.0 - config.beta1) * g;
            const double vk =
                config.beta2 * static_cast<double>(v[k]) + (1.0 - config.beta2) * g * g;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double update = config.lr * (mk / c1) / (std::sqrt(vk / c2) + config.epsilon);
            p.value[k] = static_cast<T>(static_cast<double>(p.value[k]) - update);
        }
    }
    ++model.step;
}

GradientCheckResult gradient_check(const ModelState<double>& model, const Batch<double>& batch,
                                   std::span<const int> targets,
                                   std::span<const double> class_weights, std::size_t samples,
                                   std::uint64_t seed, double step) {
    ModelState<double> work = model;
    work.options = model.options.without_dropout();

    ForwardTrace<double> trace;
    forward<double>(work, batch, Mode::Train, nullptr, &trace);
    const auto analytic = backward(work, trace, targets, class_weights);

    std::vector<std::pair<std::size_t, std::size_t>> scalars;
    for (std::size_t i = 0; i < work.params.size(); ++i) {
        if (!work.params[i].trainable) continue;
        for (std::size_t k = 0; k < work.params[i].value.size(); ++k) scalars.emplace_back(i, k);
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(scalars.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(layers::uniform01(rng) * static_cast<double>(i));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    samples = std::min(samples, order.size());

    struct Probe {
        double loss;
        std::vector<bool> gates;
    };
    auto probe_at = [&](std::size_t pi, std::size_t k, double value) {
        ModelState<double> probe = work;
        probe.params[pi].value[k] = value;
        ForwardTrace<double> tr;
        const auto probs = forward<double>(probe, batch, Mode::Train, nullptr, &tr);
        Probe out{batch_loss(probs, targets, class_weights), {}};
        if (work.options.linear_activations) return out;
        for (const auto* pre : {&tr.conv1_pre, &tr.conv2_pre, &tr.conv3_pre, &tr.feature_pre}) {
            for (double v : pre->storage()) out.gates.push_back(v > 0.0);
        }
        return out;
    };

    GradientCheckResult result;
    for (std::size_t s = 0; s < samples; ++s) {
        const auto [pi, k] = scalars[order[s]];
        const double theta = work.params[pi].value[k];
        double h = step;
        Probe up = probe_at(pi, k, theta + h);
        Probe down = probe_at(pi, k, theta - h);
        if (up.gates != down.gates) ++result.kink_rechecked;
        while (up.gates != down.gates && h > 1e-8) {
            h /= 10.0;
            up = probe_at(pi, k, theta + h);
            down = probe_at(pi, k, theta - h);
        }
        const double numeric = (up.loss - down.loss) / (2.0 * h);
        const double exact = analytic[pi][k];
        const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-8});
        const double rel = std::abs(numeric - exact) / denom;
        if (rel > result.max_relative_error) {
            result.max_relative_error = rel;
            result.worst_parameter = work.params[pi].name + "[" + std::to_string(k) + "]";
        }
        ++result.checked;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'P', 'S', 'T', 'R', 'E', 'S', 'S', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::Format, "truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ModelState<float>& model, std::ostream& out) {
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    const char tag = model.variant == Variant::HCNN ? 'H' : 'C';
    out.write(&tag, 1);
    put_u32(out, static_cast<std::uint32_t>(model.n_classes));
    put_u32(out, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& p : model.params) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto e : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
        for (float v : p.value.values()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    if (!out) throw Error(Errc::Io, "checkpoint write failed");
}

void save_checkpoint(const ModelState<float>& model, const std::filesystem::path& path) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::Io, "cannot write " + tmp);
        save_checkpoint(model, out);
    }
    std::filesystem::rename(tmp, path);
}

ModelState<float> load_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw Error(Errc::Format, "not a checkpoint (bad magic)");
    }
    const auto version = get_u32(in);
    if (version != kCheckpointVersion) {
        throw Error(Errc::SchemaVersion,
                    "unsupported checkpoint version " + std::to_string(version));
    }
    char tag = 0;
    if (!in.read(&tag, 1) || (tag != 'H' && tag != 'C')) {
        throw Error(Errc::Format, "bad variant tag in checkpoint");
    }
    const auto variant = tag == 'H' ? Variant::HCNN : Variant::CNN;
    const auto n_classes = static_cast<int>(get_u32(in));
    auto model = build_model<float>(variant, n_classes, 0);
    const auto count = get_u32(in);
    if (count != model.params.size()) {
        throw Error(Errc::Format, "checkpoint parameter count does not match architecture");
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get_u32(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw Error(Errc::Format, "truncated checkpoint");
        auto& p = model.param(name);
        const auto rank = get_u32(in);
        Shape shape(rank);
        for (auto& e : shape) e = get_u32(in);
        if (shape != p.value.shape()) {
            throw Error(Errc::Format, "shape mismatch for " + name + " in checkpoint");
        }
        for (auto& v : p.value.values()) {
            const auto bits = get_u32(in);
            std::memcpy(&v, &bits, 4);
        }
    }
    return model;
}

ModelState<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path.string());
    return load_checkpoint(in);
}

#define PULSESTRESS_INSTANTIATE(T)                                                               \
    template struct ModelState<T>;                                                               \
    template ModelState<T> build_model<T>(Variant, int, std::uint64_t, NetworkOptions);          \
    template Tensor<T> forward<T>(ModelState<T>&, const Batch<T>&, Mode, std::mt19937_64*,       \
                                  ForwardTrace<T>*);                                             \
    template Tensor<T> predict<T>(const ModelState<T>&, const Batch<T>&);                        \
    template std::vector<std::pair<std::string, Tensor<T>>> forward_activations<T>(              \
        const ModelState<T>&, const Batch<T>&);                                                  \
    template double batch_loss<T>(const Tensor<T>&, std::span<const int>,                        \
                                  std::span<const double>);                                      \
    template Gradients<T> backward<T>(const ModelState<T>&, const ForwardTrace<T>&,              \
                                      std::span<const int>, std::span<const double>);            \
    template void adam_step<T>(ModelState<T>&, const Gradients<T>&, const AdamConfig&);

PULSESTRESS_INSTANTIATE(float)
PULSESTRESS_INSTANTIATE(double)
#undef PULSESTRESS_INSTANTIATE

template ModelState<double> convert<double, float>(const ModelState<float>&);
template ModelState<float> convert<float, double>(const ModelState<double>&);

}  // namespace pulsestress::nn
