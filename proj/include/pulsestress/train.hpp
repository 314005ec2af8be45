#pragma once

#include "pulsestress/features.hpp"
#include "pulsestress/ingest.hpp"
#include "pulsestress/nn.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pulsestress {

// Per-segment standardization; a constant segment maps to all zeros.
std::vector<double> zscore_segment(std::span<const double> samples);

// Per-feature z-score fitted on training rows only.
struct FeatureScaler {
    std::array<double, kFeatureCount> mean{};
    std::array<double, kFeatureCount> std{};

    static FeatureScaler fit(std::span<const FeatureVector> rows);
    FeatureVector apply(const FeatureVector& v) const;
};

// w_i = N / (n_c * N_i). Throws Errc::Config when a class is absent.
std::vector<double> class_weights(std::span<const std::size_t> counts);

struct Metrics {
    int n_classes = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    double accuracy = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double macro_f1 = 0.0;
    double macro_recall = 0.0;
    std::size_t total() const;
};

Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                        int n_classes);

// Mean recall over the classes that occur in `labels`; used to pick the
// best epoch on a validation set that may not contain every class.
double present_class_macro_recall(const Metrics& m);

struct TrainConfig {
    std::size_t batch_size = 500;
    int max_epochs = 200;
    int patience = 70;
    double lr = 0.001;
    std::uint64_t seed = 42;
    TaskKind task = TaskKind::ThreeClass;
    nn::Variant variant = nn::Variant::HCNN;
    std::size_t validation_subject_count = 2;
    nn::NetworkOptions network;

    void validate() const;
};

// Segments and features of any number of subjects, ready for batching.
// Segments are stored already standardized, features raw.
struct ExampleSet {
    std::vector<float> segments;          // n * 3840
    std::vector<FeatureVector> features;  // n
    std::vector<int> labels;              // n
    std::vector<std::string> subjects;    // n
    std::vector<std::size_t> start_indices;

    std::size_t size() const { return labels.size(); }
    void append(const ExampleSet& other);
    std::vector<std::size_t> class_counts(int n_classes) const;
};

// Builds an input batch from rows `idx`, scaling features with `scaler`.
nn::Batch<float> make_batch(const ExampleSet& set, std::span<const std::size_t> idx,
                            nn::Variant variant, const FeatureScaler& scaler);

std::vector<int> predict_labels(const nn::ModelState<float>& model, const ExampleSet& set,
                                const FeatureScaler& scaler, std::size_t batch_size = 500);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_recall = 0.0;
};

struct TrainResult {
    nn::ModelState<float> model;  // parameters of the best epoch
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    std::int64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Features of both sets are scaled with `scaler` (fit on train by the caller).
TrainResult train_model(const TrainConfig& config, const ExampleSet& train, const ExampleSet& val,
                        const FeatureScaler& scaler, const EpochCallback& on_epoch = {});

struct SubjectData {
    std::string subject_id;
    ExampleSet examples;
};

struct FoldResult {
    std::string held_out_subject;
    std::vector<std::string> validation_subjects;
    std::vector<std::string> train_subjects;
    Metrics metrics;
    std::vector<int> predictions;
    std::vector<int> labels;
    int best_epoch = 0;
    int epochs_run = 0;
    std::optional<nn::ModelState<float>> model;
};

struct SkippedFold {
    std::string subject_id;
    std::string reason;
};

struct LosoResult {
    std::vector<FoldResult> folds;
    std::vector<SkippedFold> skipped;
    Metrics pooled;
    double fold_mean_accuracy = 0.0, fold_std_accuracy = 0.0;
    double fold_mean_macro_f1 = 0.0, fold_std_macro_f1 = 0.0;
};

struct FoldSplit {
    std::string test;
    std::vector<std::string> validation;
    std::vector<std::string> train;
};

// Deterministic per-fold seed from (global seed, subject id).
std::uint64_t fold_seed(std::uint64_t global_seed, const std::string& subject_id);

// Test = `held_out`, validation drawn with the fold seed from the rest.
FoldSplit make_fold_split(const std::vector<std::string>& subjects, const std::string& held_out,
                          std::size_t validation_count, std::uint64_t global_seed);

// Throws Errc::Usage if the held-out subject leaks into train or validation.
void assert_no_leakage(const FoldSplit& split);

struct LosoOptions {
    std::size_t workers = 1;
    bool keep_models = false;
    std::function<void(const std::string&)> log;
};

LosoResult run_loso(const std::vector<SubjectData>& subjects, const TrainConfig& config,
                    const LosoOptions& options = {});

}  // namespace pulsestress
