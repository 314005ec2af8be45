#pragma once

#include "pulsestress/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pulsestress {

inline constexpr int kMetricsSchemaVersion = 1;

struct ReferenceScores {
    double accuracy_pct;
    double macro_f1_pct;
};

// Reference LOSO scores for this task/variant, when known.
std::optional<ReferenceScores> reference_scores(TaskKind task, nn::Variant variant);

// Serialized LOSO run (metrics.json). No timestamps: same inputs and seed
// produce identical bytes.
std::string metrics_json(const LosoResult& result, const TrainConfig& config);

// One-paragraph comparison of pooled metrics against the reference scores.
std::string loso_summary(const LosoResult& result, const TrainConfig& config);

struct ReportEntry {
    std::string source;  // file name
    std::string task;
    std::string variant;
    double accuracy = 0.0;   // pooled, fraction
    double macro_f1 = 0.0;
    double fold_mean_accuracy = 0.0;
    double fold_mean_macro_f1 = 0.0;
    std::size_t folds = 0;
};

// Throws Errc::Parse (with the file name) on malformed JSON and
// Errc::SchemaVersion on a version mismatch.
ReportEntry read_metrics_file(const std::filesystem::path& path);
ReportEntry parse_metrics(const std::string& text, const std::string& source);

std::string render_csv(const std::vector<ReportEntry>& entries);

// Grouped bar chart: one group per entry, accuracy and macro F1 bars.
std::string render_svg(const std::vector<ReportEntry>& entries, const std::string& title);

}  // namespace pulsestress
