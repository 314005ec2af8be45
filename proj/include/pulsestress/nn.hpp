#pragma once

#include "pulsestress/layers.hpp"
#include "pulsestress/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pulsestress::nn {

inline constexpr std::size_t kInputLength = 3840;
inline constexpr std::size_t kFeatureWidth = 19;

enum class Variant { HCNN, CNN };
enum class Mode { Train, Infer };

const char* variant_name(Variant v);          // "hcnn" / "cnn"
Variant parse_variant(const std::string& text);

struct NetworkOptions {
    double input_dropout = 0.2;
    double block_dropout = 0.5;
    double feature_dropout = 0.2;
    double bn_momentum = 0.99;
    double bn_epsilon = 1e-3;
    // Test rig only: replaces every ReLU with the identity.
    bool linear_activations = false;

    NetworkOptions without_dropout() const {
        auto o = *this;
        o.input_dropout = o.block_dropout = o.feature_dropout = 0.0;
        return o;
    }
};

template <typename T>
struct Parameter {
    std::string name;
    std::string layer;
    Tensor<T> value;
    bool trainable = true;
};

struct LayerInfo {
    std::string name;
    std::size_t kernel = 0;   // 0 when not applicable
    std::size_t stride = 0;
    std::string activation;
    Shape output_shape;       // per sample, no batch axis
    std::size_t parameters = 0;
};

template <typename T>
struct ModelState {
    Variant variant = Variant::HCNN;
    int n_classes = 3;
    NetworkOptions options;
    std::vector<Parameter<T>> params;

    // Adam moments mirror `params` (empty tensors for non-trainable ones).
    std::vector<Tensor<T>> adam_m;
    std::vector<Tensor<T>> adam_v;
    std::int64_t step = 0;

    std::size_t index_of(std::string_view name) const;
    Parameter<T>& param(std::string_view name) { return params[index_of(name)]; }
    const Parameter<T>& param(std::string_view name) const { return params[index_of(name)]; }

    std::size_t parameter_count() const;
    std::size_t layer_parameter_count(std::string_view layer) const;
};

template <typename T>
ModelState<T> build_model(Variant variant, int n_classes, std::uint64_t seed,
                          NetworkOptions options = {});

// Layer table for the given variant; output shapes follow the valid-padding
// arithmetic and parameter counts come from the built parameter tensors.
std::vector<LayerInfo> describe(Variant variant, int n_classes);
std::string summary(Variant variant, int n_classes);

template <typename To, typename From>
ModelState<To> convert(const ModelState<From>& src);

template <typename T>
struct Batch {
    Tensor<T> segments;  // [B, 3840, 1]
    Tensor<T> features;  // [B, 19]; empty for the CNN variant
    std::size_t size() const { return segments.rank() ? segments.dim(0) : 0; }
};

// Activations and dropout masks cached by a Train-mode forward for the
// backward pass. Only valid for the model step at which it was recorded.
template <typename T>
struct ForwardTrace {
    bool valid = false;
    std::int64_t model_step = -1;
    std::size_t batch = 0;

    Tensor<T> input;                 // after input dropout
    Tensor<T> conv1_pre;
    Shape conv1_shape;
    layers::BatchNormCache<T> bn1;
    std::vector<T> mask_block2;
    Tensor<T> block2_in;
    Tensor<T> conv2_pre;
    Shape conv2_shape;
    layers::BatchNormCache<T> bn2;
    std::vector<T> mask_block3;
    Tensor<T> block3_in;
    Tensor<T> conv3_pre;

    Tensor<T> features_in;           // after feature dropout
    Tensor<T> feature_pre;
    Tensor<T> concat;
    Tensor<T> probs;
};

// Returns [B, n_classes] probabilities. Train mode draws dropout masks from
// `rng`, fills the trace and updates batch-norm running statistics.
// Infer mode needs neither trace nor rng.
template <typename T>
Tensor<T> forward(ModelState<T>& model, const Batch<T>& batch, Mode mode,
                  std::mt19937_64* rng = nullptr, ForwardTrace<T>* trace = nullptr);

template <typename T>
Tensor<T> predict(const ModelState<T>& model, const Batch<T>& batch);

// Per-layer activations of an Infer-mode pass, keyed by layer name.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> forward_activations(const ModelState<T>& model,
                                                                   const Batch<T>& batch);

inline constexpr double kProbabilityClamp = 1e-7;

// -w[target] * log(clamp(p[target])).
double loss_weighted_cce(std::span<const double> probs, int target,
                         std::span<const double> class_weights);

template <typename T>
double batch_loss(const Tensor<T>& probs, std::span<const int> targets,
                  std::span<const double> class_weights);

template <typename T>
using Gradients = std::vector<Tensor<T>>;  // aligned with ModelState::params

// Gradients of the batch-mean weighted cross-entropy.
template <typename T>
Gradients<T> backward(const ModelState<T>& model, const ForwardTrace<T>& trace,
                      std::span<const int> targets, std::span<const double> class_weights);

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

template <typename T>
void adam_step(ModelState<T>& model, const Gradients<T>& grads, const AdamConfig& config = {});

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    // Scalars whose +/-step probes flipped a ReLU gate and were re-measured
    // with a smaller step.
    std::size_t kink_rechecked = 0;
    std::string worst_parameter;
};

// Central differences (step 1e-4) on `samples` random trainable scalars with
// dropout disabled. When the two probes straddle a ReLU kink the step is
// shrunk tenfold until no gate flips.
GradientCheckResult gradient_check(const ModelState<double>& model, const Batch<double>& batch,
                                   std::span<const int> targets,
                                   std::span<const double> class_weights, std::size_t samples,
                                   std::uint64_t seed, double step = 1e-4);

// Versioned little-endian checkpoint.
void save_checkpoint(const ModelState<float>& model, std::ostream& out);
void save_checkpoint(const ModelState<float>& model, const std::filesystem::path& path);
ModelState<float> load_checkpoint(std::istream& in);
ModelState<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace pulsestress::nn
