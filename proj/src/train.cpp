#include "pulsestress/train.hpp"

#include "pulsestress/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace pulsestress {

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(nn::layers::uniform01(rng) * static_cast<double>(i));
        j = std::min(j, i - 1);
        std::swap(idx[i - 1], idx[j]);
    }
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::vector<double> zscore_segment(std::span<const double> samples) {
    std::vector<double> out(samples.size(), 0.0);
    if (samples.empty()) return out;
    const double mean = mean_of(samples);
    double var = 0.0;
    for (double x : samples) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(samples.size()));
    if (sd == 0.0) return out;
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = (samples[i] - mean) / sd;
    return out;
}

FeatureScaler FeatureScaler::fit(std::span<const FeatureVector> rows) {
    FeatureScaler s;
    if (rows.empty()) throw Error(Errc::Config, "cannot fit a feature scaler on zero rows");
    const auto n = static_cast<double>(rows.size());
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        double sum = 0.0;
        for (const auto& r : rows) sum += r[f];
        const double mean = sum / n;
        double var = 0.0;
        for (const auto& r : rows) var += (r[f] - mean) * (r[f] - mean);
        s.mean[f] = mean;
        s.std[f] = std::sqrt(var / n);
    }
    return s;
}

FeatureVector FeatureScaler::apply(const FeatureVector& v) const {
    FeatureVector out = v;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        const double sd = std[f] > 0.0 ? std[f] : 1.0;
        out.values[f] = (v[f] - mean[f]) / sd;
    }
    return out;
}

std::vector<double> class_weights(std::span<const std::size_t> counts) {
    if (counts.empty()) throw Error(Errc::Config, "no classes");
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    const auto nc = static_cast<double>(counts.size());
    std::vector<double> w;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) {
            throw Error(Errc::Config,
                        "class " + std::to_string(i) + " has no segments in the training fold");
        }
        w.push_back(static_cast<double>(total) / (nc * static_cast<double>(counts[i])));
    }
    return w;
}

std::size_t Metrics::total() const {
    std::size_t n = 0;
    for (const auto& row : confusion) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return n;
}

Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
    Metrics m;
    m.n_classes = static_cast<int>(confusion.size());
    m.confusion = std::move(confusion);
    const auto nc = m.confusion.size();
    const std::size_t total = m.total();
    if (total == 0) throw Error(Errc::Usage, "metrics of an empty prediction set");

    std::size_t correct = 0;
    for (std::size_t i = 0; i < nc; ++i) correct += m.confusion[i][i];
    m.accuracy = static_cast<double>(correct) / static_cast<double>(total);

    for (std::size_t c = 0; c < nc; ++c) {
        const double tp = static_cast<double>(m.confusion[c][c]);
        double predicted = 0.0, actual = 0.0;
        for (std::size_t k = 0; k < nc; ++k) {
            predicted += static_cast<double>(m.confusion[k][c]);
            actual += static_cast<double>(m.confusion[c][k]);
        }
        const double p = predicted > 0.0 ? tp / predicted : 0.0;
        const double r = actual > 0.0 ? tp / actual : 0.0;
        m.precision.push_back(p);
        m.recall.push_back(r);
        m.f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
    }
    m.macro_f1 = mean_of(m.f1);
    m.macro_recall = mean_of(m.recall);
    return m;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                        int n_classes) {
    if (predictions.size() != labels.size()) {
        throw Error(Errc::Usage, "prediction and label counts differ");
    }
    if (labels.empty()) throw Error(Errc::Usage, "metrics of an empty prediction set");
    const auto nc = static_cast<std::size_t>(n_classes);
    std::vector<std::vector<std::size_t>> confusion(nc, std::vector<std::size_t>(nc, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes || predictions[i] < 0 ||
            predictions[i] >= n_classes) {
            throw Error(Errc::Usage, "label outside 0..n_classes-1");
        }
        ++confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
    }
    return metrics_from_confusion(std::move(confusion));
}

double present_class_macro_recall(const Metrics& m) {
    double sum = 0.0;
    int present = 0;
    for (std::size_t c = 0; c < m.confusion.size(); ++c) {
        const auto support = std::accumulate(m.confusion[c].begin(), m.confusion[c].end(),
                                             std::size_t{0});
        if (support == 0) continue;
        sum += m.recall[c];
        ++present;
    }
    return present ? sum / present : 0.0;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw Error(Errc::Config, "batch_size must be at least 1");
    if (max_epochs < 1) throw Error(Errc::Config, "max_epochs must be at least 1");
    if (patience < 1 || patience >= max_epochs) {
        throw Error(Errc::Config, "patience must be in [1, max_epochs)");
    }
    if (!(lr > 0.0)) throw Error(Errc::Config, "learning rate must be positive");
}

void ExampleSet::append(const ExampleSet& other) {
    segments.insert(segments.end(), other.segments.begin(), other.segments.end());
    features.insert(features.end(), other.features.begin(), other.features.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    subjects.insert(subjects.end(), other.subjects.begin(), other.subjects.end());
    start_indices.insert(start_indices.end(), other.start_indices.begin(),
                         other.start_indices.end());
}

std::vector<std::size_t> ExampleSet::class_counts(int n_classes) const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
    return counts;
}

nn::Batch<float> make_batch(const ExampleSet& set, std::span<const std::size_t> idx,
                            nn::Variant variant, const FeatureScaler& scaler) {
    nn::Batch<float> batch;
    const std::size_t len = nn::kInputLength;
    batch.segments = nn::Tensor<float>({idx.size(), len, 1});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        std::copy_n(set.segments.begin() + static_cast<std::ptrdiff_t>(idx[b] * len), len,
                    batch.segments.data() + b * len);
    }
    if (variant == nn::Variant::HCNN) {
        batch.features = nn::Tensor<float>({idx.size(), kFeatureCount});
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto scaled = scaler.apply(set.features[idx[b]]);
            for (std::size_t f = 0; f < kFeatureCount; ++f) {
                batch.features[b * kFeatureCount + f] = static_cast<float>(scaled[f]);
            }
        }
    }
    return batch;
}

std::vector<int> predict_labels(const nn::ModelState<float>& model, const ExampleSet& set,
                                const FeatureScaler& scaler, std::size_t batch_size) {
    std::vector<int> out;
    out.reserve(set.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) {
            idx.push_back(i);
        }
        const auto probs = nn::predict(model, make_batch(set, idx, model.variant, scaler));
        const auto nc = static_cast<std::size_t>(model.n_classes);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto* row = probs.data() + b * nc;
            out.push_back(static_cast<int>(std::max_element(row, row + nc) - row));
        }
    }
    return out;
}

TrainResult train_model(const TrainConfig& config, const ExampleSet& train, const ExampleSet& val,
                        const FeatureScaler& scaler, const EpochCallback& on_epoch) {
    config.validate();
    if (val.size() == 0) throw Error(Errc::Config, "empty validation set");
    if (train.size() == 0) throw Error(Errc::Config, "empty training set");
    const int nc = class_count(config.task);
    const auto weights = class_weights(train.class_counts(nc));

    auto model = nn::build_model<float>(config.variant, nc, config.seed, config.network);
    std::mt19937_64 rng(splitmix64(config.seed));
    const nn::AdamConfig adam{config.lr};

    TrainResult result;
    result.model = model;
    double best_recall = -1.0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<int> targets;
    nn::ForwardTrace<float> trace;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle_indices(order, rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const auto batch = make_batch(train, idx, config.variant, scaler);
            targets.clear();
            for (auto i : idx) targets.push_back(train.labels[i]);

            const auto probs = nn::forward(model, batch, nn::Mode::Train, &rng, &trace);
            loss_sum += nn::batch_loss(probs, targets, weights) * static_cast<double>(idx.size());
            const auto grads = nn::backward(model, trace, targets, weights);
            nn::adam_step(model, grads, adam);
        }

        const auto predictions = predict_labels(model, val, scaler, config.batch_size);
        const auto m = compute_metrics(predictions, val.labels, nc);
        EpochRecord record{epoch, loss_sum / static_cast<double>(train.size()),
                           present_class_macro_recall(m)};
        result.history.push_back(record);
        if (on_epoch) on_epoch(record);

        if (record.val_recall > best_recall) {
            best_recall = record.val_recall;
            result.best_epoch = epoch;
            result.model = model;
        } else if (epoch - result.best_epoch >= config.patience) {
            break;
        }
    }
    result.steps = model.step;
    return result;
}

std::uint64_t fold_seed(std::uint64_t global_seed, const std::string& subject_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : subject_id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(global_seed ^ splitmix64(h));
}

FoldSplit make_fold_split(const std::vector<std::string>& subjects, const std::string& held_out,
                          std::size_t validation_count, std::uint64_t global_seed) {
    FoldSplit split;
    split.test = held_out;
    std::vector<std::string> rest;
    for (const auto& s : subjects) {
        if (s != held_out) rest.push_back(s);
    }
    if (rest.size() == subjects.size()) {
        throw Error(Errc::Usage, "held-out subject " + held_out + " is not in the subject list");
    }
    if (rest.size() <= validation_count) {
        throw Error(Errc::Config, "not enough subjects for a validation split");
    }
    std::mt19937_64 rng(fold_seed(global_seed, held_out));
    std::vector<std::size_t> idx(rest.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle_indices(idx, rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (i < validation_count ? split.validation : split.train).push_back(rest[idx[i]]);
    }
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

void assert_no_leakage(const FoldSplit& split) {
    const auto in = [&](const std::vector<std::string>& v) {
        return std::find(v.begin(), v.end(), split.test) != v.end();
    };
    if (in(split.train) || in(split.validation)) {
        throw Error(Errc::Usage, "leakage: test subject " + split.test + " in train/validation");
    }
    for (const auto& v : split.validation) {
        if (std::find(split.train.begin(), split.train.end(), v) != split.train.end()) {
            throw Error(Errc::Usage, "leakage: validation subject " + v + " in train");
        }
    }
}

namespace {

ExampleSet gather(const std::vector<SubjectData>& subjects, const std::vector<std::string>& ids) {
    ExampleSet out;
    for (const auto& id : ids) {
        for (const auto& s : subjects) {
            if (s.subject_id == id) out.append(s.examples);
        }
    }
    return out;
}

void assert_rows_exclude(const ExampleSet& set, const std::string& subject) {
    if (std::find(set.subjects.begin(), set.subjects.end(), subject) != set.subjects.end()) {
        throw Error(Errc::Usage, "leakage: segments of " + subject + " reached train/validation");
    }
}

FoldResult run_fold(const std::vector<SubjectData>& subjects, const std::vector<std::string>& ids,
                    const std::string& held_out, const TrainConfig& config, bool keep_model) {
    const auto split =
        make_fold_split(ids, held_out, config.validation_subject_count, config.seed);
    assert_no_leakage(split);
    const auto train = gather(subjects, split.train);
    const auto val = gather(subjects, split.validation);
    const auto test = gather(subjects, {held_out});
    assert_rows_exclude(train, held_out);
    assert_rows_exclude(val, held_out);

    const auto scaler = FeatureScaler::fit(train.features);
    TrainConfig fold_config = config;
    fold_config.seed = fold_seed(config.seed, held_out);
    auto trained = train_model(fold_config, train, val, scaler);

    FoldResult fold;
    fold.held_out_subject = held_out;
    fold.validation_subjects = split.validation;
    fold.train_subjects = split.train;
    fold.predictions = predict_labels(trained.model, test, scaler, config.batch_size);
    fold.labels = test.labels;
    fold.metrics = compute_metrics(fold.predictions, fold.labels, class_count(config.task));
    fold.best_epoch = trained.best_epoch;
    fold.epochs_run = static_cast<int>(trained.history.size());
    if (keep_model) fold.model = std::move(trained.model);
    return fold;
}

}  // namespace

LosoResult run_loso(const std::vector<SubjectData>& subjects, const TrainConfig& config,
                    const LosoOptions& options) {
    config.validate();
    if (subjects.size() < 4) throw Error(Errc::Config, "LOSO needs at least 4 subjects");
    auto log = [&](const std::string& msg) {
        if (options.log) options.log(msg);
    };

    LosoResult result;
    std::vector<std::string> usable;
    for (const auto& s : subjects) {
        if (s.examples.size() == 0) {
            result.skipped.push_back({s.subject_id, "no accepted segments"});
            log("warning: skipping " + s.subject_id + " (no accepted segments)");
        } else {
            usable.push_back(s.subject_id);
        }
    }
    if (usable.size() < config.validation_subject_count + 2) {
        throw Error(Errc::Config, "too few subjects with accepted segments for LOSO");
    }

    std::vector<std::optional<FoldResult>> folds(usable.size());
    std::vector<std::optional<SkippedFold>> failures(usable.size());
    std::mutex log_mutex;
    auto work = [&](std::size_t i) {
        try {
            folds[i] = run_fold(subjects, usable, usable[i], config, options.keep_models);
            std::lock_guard lock(log_mutex);
            log("fold " + usable[i] + ": accuracy " + std::to_string(folds[i]->metrics.accuracy) +
                ", macro F1 " + std::to_string(folds[i]->metrics.macro_f1) + ", best epoch " +
                std::to_string(folds[i]->best_epoch));
        } catch (const Error& e) {
            if (e.code() != Errc::Config) throw;
            failures[i] = SkippedFold{usable[i], e.what()};
            std::lock_guard lock(log_mutex);
            log("warning: fold " + usable[i] + " skipped: " + e.what());
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, usable.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < usable.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < usable.size(); i = next++) {
                    try {
                        work(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    std::vector<int> all_pred, all_true;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        if (failures[i]) result.skipped.push_back(*failures[i]);
        if (!folds[i]) continue;
        all_pred.insert(all_pred.end(), folds[i]->predictions.begin(), folds[i]->predictions.end());
        all_true.insert(all_true.end(), folds[i]->labels.begin(), folds[i]->labels.end());
        result.folds.push_back(std::move(*folds[i]));
    }
    if (result.folds.empty()) throw Error(Errc::Config, "every LOSO fold was skipped");

    result.pooled = compute_metrics(all_pred, all_true, class_count(config.task));
    std::vector<double> acc, f1;
    for (const auto& f : result.folds) {
        acc.push_back(f.metrics.accuracy);
        f1.push_back(f.metrics.macro_f1);
    }
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = mean_of(v);
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        sd = std::sqrt(var / static_cast<double>(v.size()));
    };
    mean_std(acc, result.fold_mean_accuracy, result.fold_std_accuracy);
    mean_std(f1, result.fold_mean_macro_f1, result.fold_std_macro_f1);
    return result;
}

}  // namespace pulsestress
