#include "pulsestress/report.hpp"

#include "pulsestress/error.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pulsestress {

namespace {

using nlohmann::json;

json metrics_to_json(const Metrics& m) {
    return {{"n", m.total()},
            {"confusion", m.confusion},
            {"accuracy", m.accuracy},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"macro_f1", m.macro_f1}};
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

}  // namespace

std::optional<ReferenceScores> reference_scores(TaskKind task, nn::Variant variant) {
    if (task != TaskKind::ThreeClass) return std::nullopt;
    if (variant == nn::Variant::HCNN) return ReferenceScores{75.21, 64.15};
    return ReferenceScores{68.52, 57.67};
}

std::string metrics_json(const LosoResult& result, const TrainConfig& config) {
    json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["config"] = {{"task", task_name(config.task)},
                   {"variant", nn::variant_name(config.variant)},
                   {"seed", config.seed},
                   {"batch_size", config.batch_size},
                   {"max_epochs", config.max_epochs},
                   {"patience", config.patience},
                   {"lr", config.lr},
                   {"validation_subjects", config.validation_subject_count}};
    j["class_names"] = class_names(config.task);
    j["folds"] = json::array();
    for (const auto& f : result.folds) {
        auto rec = metrics_to_json(f.metrics);
        rec["subject"] = f.held_out_subject;
        rec["validation_subjects"] = f.validation_subjects;
        rec["best_epoch"] = f.best_epoch;
        rec["epochs_run"] = f.epochs_run;
        j["folds"].push_back(std::move(rec));
    }
    j["skipped"] = json::array();
    for (const auto& s : result.skipped) {
        j["skipped"].push_back({{"subject", s.subject_id}, {"reason", s.reason}});
    }
    j["pooled"] = metrics_to_json(result.pooled);
    j["fold_summary"] = {{"accuracy_mean", result.fold_mean_accuracy},
                         {"accuracy_std", result.fold_std_accuracy},
                         {"macro_f1_mean", result.fold_mean_macro_f1},
                         {"macro_f1_std", result.fold_std_macro_f1}};
    if (const auto ref = reference_scores(config.task, config.variant)) {
        j["reference"] = {{"accuracy_pct", ref->accuracy_pct},
                          {"macro_f1_pct", ref->macro_f1_pct}};
    }
    return j.dump(2) + "\n";
}

std::string loso_summary(const LosoResult& result, const TrainConfig& config) {
    std::ostringstream out;
    out << "LOSO " << task_name(config.task) << " " << nn::variant_name(config.variant) << ": "
        << result.folds.size() << " folds, " << result.pooled.total() << " test segments\n";
    out << "  pooled accuracy " << fixed(100.0 * result.pooled.accuracy, 2) << "%, macro F1 "
        << fixed(100.0 * result.pooled.macro_f1, 2) << "%\n";
    out << "  per-fold accuracy " << fixed(100.0 * result.fold_mean_accuracy, 2) << " +/- "
        << fixed(100.0 * result.fold_std_accuracy, 2) << "%, macro F1 "
        << fixed(100.0 * result.fold_mean_macro_f1, 2) << " +/- "
        << fixed(100.0 * result.fold_std_macro_f1, 2) << "%\n";
    if (const auto ref = reference_scores(config.task, config.variant)) {
        out << "  reference: accuracy " << fixed(ref->accuracy_pct, 2)
            << "%, macro F1 " << fixed(ref->macro_f1_pct, 2) << "% (delta "
            << fixed(100.0 * result.pooled.accuracy - ref->accuracy_pct, 2) << " / "
            << fixed(100.0 * result.pooled.macro_f1 - ref->macro_f1_pct, 2) << " points)\n";
    }
    if (!result.skipped.empty()) {
        out << "  skipped:";
        for (const auto& s : result.skipped) out << ' ' << s.subject_id << " (" << s.reason << ')';
        out << '\n';
    }
    return out.str();
}

ReportEntry parse_metrics(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(Errc::Parse, source + ": malformed JSON: " + e.what());
    }
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kMetricsSchemaVersion) {
            throw Error(Errc::SchemaVersion, source + ": schema_version " +
                                                 std::to_string(version) + ", expected " +
                                                 std::to_string(kMetricsSchemaVersion));
        }
        ReportEntry e;
        e.source = source;
        e.task = j.at("config").at("task").get<std::string>();
        e.variant = j.at("config").at("variant").get<std::string>();
        e.accuracy = j.at("pooled").at("accuracy").get<double>();
        e.macro_f1 = j.at("pooled").at("macro_f1").get<double>();
        e.fold_mean_accuracy = j.at("fold_summary").at("accuracy_mean").get<double>();
        e.fold_mean_macro_f1 = j.at("fold_summary").at("macro_f1_mean").get<double>();
        e.folds = j.at("folds").size();
        return e;
    } catch (const json::exception& ex) {
        throw Error(Errc::Parse, source + ": missing or mistyped field: " + ex.what());
    }
}

ReportEntry read_metrics_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_metrics(buffer.str(), path.filename().string());
}

std::string render_csv(const std::vector<ReportEntry>& entries) {
    std::string out =
        "source,task,variant,folds,accuracy,macro_f1,fold_mean_accuracy,fold_mean_macro_f1\n";
    for (const auto& e : entries) {
        out += e.source + ',' + e.task + ',' + e.variant + ',' + std::to_string(e.folds) + ',' +
               fixed(e.accuracy, 6) + ',' + fixed(e.macro_f1, 6) + ',' +
               fixed(e.fold_mean_accuracy, 6) + ',' + fixed(e.fold_mean_macro_f1, 6) + '\n';
    }
    return out;
}

std::string render_svg(const std::vector<ReportEntry>& entries, const std::string& title) {
    constexpr double kBarWidth = 36, kGap = 8, kGroupGap = 40, kPlotHeight = 240;
    constexpr double kLeft = 60, kTop = 40, kBottom = 60;
    const double group_width = 2 * kBarWidth + kGap;
    const double width = kLeft + static_cast<double>(entries.size()) * (group_width + kGroupGap) +
                         kGroupGap + 140;
    const double height = kTop + kPlotHeight + kBottom;
    const char* colors[2] = {"#4c72b0", "#dd8452"};

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0)
        << "\" height=\"" << fixed(height, 0) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "  <text x=\"" << fixed(width / 2, 1) << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-size=\"14\">" << xml_escape(title) << "</text>\n";

    for (int tick = 0; tick <= 100; tick += 20) {
        const double y = kTop + kPlotHeight * (1.0 - tick / 100.0);
        svg << "  <line x1=\"" << kLeft << "\" x2=\"" << fixed(width - 140, 1) << "\" y1=\""
            << fixed(y, 1) << "\" y2=\"" << fixed(y, 1) << "\" stroke=\"#ddd\"/>\n";
        svg << "  <text x=\"" << kLeft - 6 << "\" y=\"" << fixed(y + 4, 1)
            << "\" text-anchor=\"end\">" << tick << "%</text>\n";
    }

    for (std::size_t g = 0; g < entries.size(); ++g) {
        const auto& e = entries[g];
        const double x0 = kLeft + kGroupGap + static_cast<double>(g) * (group_width + kGroupGap);
        svg << "  <g class=\"group\" data-source=\"" << xml_escape(e.source) << "\">\n";
        const double values[2] = {e.accuracy, e.macro_f1};
        for (int b = 0; b < 2; ++b) {
            const double h = kPlotHeight * std::clamp(values[b], 0.0, 1.0);
            const double x = x0 + b * (kBarWidth + kGap);
            const double y = kTop + kPlotHeight - h;
            svg << "    <rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y, 1) << "\" width=\""
                << kBarWidth << "\" height=\"" << fixed(h, 1) << "\" fill=\"" << colors[b]
                << "\"/>\n";
            svg << "    <text x=\"" << fixed(x + kBarWidth / 2, 1) << "\" y=\""
                << fixed(y - 4, 1) << "\" text-anchor=\"middle\" font-size=\"10\">"
                << fixed(100.0 * values[b], 2) << "</text>\n";
        }
        svg << "    <text x=\"" << fixed(x0 + group_width / 2, 1) << "\" y=\""
            << fixed(kTop + kPlotHeight + 18, 1) << "\" text-anchor=\"middle\">"
            << xml_escape(e.variant + " (" + e.task + ")") << "</text>\n";
        svg << "  </g>\n";
    }

    const double lx = width - 130;
    const char* legend[2] = {"Accuracy", "Macro F1"};
    for (int b = 0; b < 2; ++b) {
        const double ly = kTop + 10 + b * 20;
        svg << "  <rect x=\"" << fixed(lx, 1) << "\" y=\"" << fixed(ly - 10, 1)
            << "\" width=\"12\" height=\"12\" fill=\"" << colors[b] << "\"/>\n";
        svg << "  <text x=\"" << fixed(lx + 18, 1) << "\" y=\"" << fixed(ly, 1) << "\">"
            << legend[b] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace pulsestress
