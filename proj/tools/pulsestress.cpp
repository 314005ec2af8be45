#include "pulsestress/dsp.hpp"
#include "pulsestress/error.hpp"
#include "pulsestress/ingest.hpp"
#include "pulsestress/nn.hpp"
#include "pulsestress/preprocess.hpp"
#include "pulsestress/report.hpp"
#include "pulsestress/train.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace pulsestress;

namespace {

constexpr const char* kDefaultCacheDir = "pulsestress-cache";

// Plain key=value lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot read config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int row = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++row;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(Errc::Parse, path.string() + ": line " + std::to_string(row) +
                                         " is not key=value");
        }
        auto key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

struct Settings {
    std::string config_path;
    std::string data_dir;
    std::string cache_dir;
    std::string task = "3class";
    std::string variant = "hcnn";
    std::uint64_t seed = 42;
    int epochs = 200;
    std::size_t batch_size = 500;
    int patience = 70;
    double lr = 0.001;
    std::size_t workers = 1;
    std::string out;
    std::vector<std::string> metrics_files;
};

// Fills options the user did not pass on the command line from the config
// file, so precedence is defaults < config file < flags.
void apply_config(CLI::App& app, const std::map<std::string, std::string>& config) {
    for (const auto& [key, value] : config) {
        CLI::Option* opt = nullptr;
        try {
            opt = app.get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            continue;  // keys for other subcommands
        }
        if (opt->count() == 0) {
            opt->clear();
            opt->add_result(value);
            opt->run_callback();
        }
    }
}

// An explicit --cache-dir flag beats PULSESTRESS_CACHE, which beats the
// config file value.
fs::path resolve_cache_dir(bool flag_given, const std::string& value) {
    if (flag_given) return value;
    if (const char* env = std::getenv("PULSESTRESS_CACHE"); env && *env) return env;
    return value.empty() ? fs::path(kDefaultCacheDir) : fs::path(value);
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

int cmd_validate(const Settings& s) {
    if (s.data_dir.empty() || !fs::is_directory(s.data_dir)) {
        std::cerr << "error: data directory '" << s.data_dir << "' does not exist\n";
        return 1;
    }
    const auto files = list_subject_files(s.data_dir);
    if (files.empty()) {
        std::cerr << "error: no subjects found in " << s.data_dir << '\n';
        return 1;
    }
    int status = 0;
    std::cout << std::left << std::setw(8) << "subject" << std::right << std::setw(10) << "samples"
              << std::setw(12) << "duration_s" << "  label_counts\n";
    for (const auto& f : files) {
        try {
            const auto rec = load_subject(f);
            std::map<int, std::size_t> counts;
            for (auto l : rec.labels) ++counts[l];
            std::cout << std::left << std::setw(8) << rec.subject_id << std::right << std::setw(10)
                      << rec.bvp.size() << std::setw(12) << std::fixed << std::setprecision(1)
                      << static_cast<double>(rec.bvp.size()) / rec.sample_rate << "  ";
            bool first = true;
            for (const auto& [label, n] : counts) {
                std::cout << (first ? "" : " ") << label << ':' << n;
                first = false;
            }
            std::cout << '\n';
        } catch (const Error& e) {
            std::cout << "error   " << f.filename().string() << ": " << e.what() << '\n';
            status = 1;
        }
    }
    return status;
}

int cmd_preprocess(const Settings& s, const fs::path& cache_root) {
    if (s.data_dir.empty() || !fs::is_directory(s.data_dir)) {
        std::cerr << "error: data directory '" << s.data_dir << "' does not exist\n";
        return 1;
    }
    const auto files = list_subject_files(s.data_dir);
    if (files.empty()) {
        std::cerr << "error: no subjects found in " << s.data_dir << '\n';
        return 1;
    }
    PreprocessConfig config;
    config.task = parse_task(s.task);
    const auto dir = cache_dir_for(cache_root, config.task);
    const auto key = cache_key(config, files);
    if (const auto manifest = read_manifest(dir); manifest && manifest->key == key) {
        std::cout << "cache hit: " << dir.string() << " (key " << key << "), nothing to do\n";
        return 0;
    }

    std::vector<SubjectData> subjects(files.size());
    std::vector<SubjectPrepStats> stats(files.size());
    std::vector<std::string> errors(files.size());
    parallel_for(files.size(), s.workers, [&](std::size_t i) {
        try {
            subjects[i] = prepare_subject(load_subject(files[i]), config, &stats[i]);
        } catch (const Error& e) {
            errors[i] = files[i].filename().string() + ": " + e.what();
        }
    });
    bool failed = false;
    for (const auto& e : errors) {
        if (!e.empty()) {
            std::cerr << "error: " << e << '\n';
            failed = true;
        }
    }
    if (failed) return 1;

    CacheManifest manifest{key, task_name(config.task), stats};
    write_cache(dir, manifest, subjects);
    std::size_t total = 0;
    for (const auto& st : stats) {
        std::cout << st.subject_id << ": " << st.labeled_windows << " labeled windows, "
                  << st.accepted << " accepted, " << st.quality_drops << " quality drops";
        if (st.ratio_flagged) std::cout << ", " << st.ratio_flagged << " with undefined LF/HF";
        std::cout << '\n';
        if (st.accepted == 0) std::cerr << "warning: " << st.subject_id << " has no usable segments\n";
        total += st.accepted;
    }
    std::cout << "cached " << total << " segments from " << stats.size() << " subjects in "
              << dir.string() << " (key " << key << ")\n";
    return 0;
}

int cmd_loso(const Settings& s, const fs::path& cache_root) {
    TrainConfig config;
    config.task = parse_task(s.task);
    config.variant = nn::parse_variant(s.variant);
    config.seed = s.seed;
    config.max_epochs = s.epochs;
    config.batch_size = s.batch_size;
    config.patience = s.patience;
    config.lr = s.lr;
    config.validate();

    const auto subjects = read_cache(cache_dir_for(cache_root, config.task));
    const fs::path out = s.out.empty() ? fs::path("runs") / (std::string(task_name(config.task)) +
                                                             "_" + nn::variant_name(config.variant))
                                       : fs::path(s.out);
    fs::create_directories(out / "checkpoints");

    std::cout << nn::summary(config.variant, class_count(config.task)) << '\n';
    LosoOptions options;
    options.workers = s.workers;
    options.keep_models = true;
    options.log = [](const std::string& msg) { std::cerr << msg << '\n'; };
    auto result = run_loso(subjects, config, options);

    for (auto& fold : result.folds) {
        if (fold.model) {
            nn::save_checkpoint(*fold.model, out / "checkpoints" / (fold.held_out_subject + ".pstress"));
        }
    }
    write_file_atomic(out / "metrics.json", metrics_json(result, config));
    std::cout << loso_summary(result, config) << '\n'
              << "wrote " << (out / "metrics.json").string() << '\n';
    return 0;
}

int cmd_report(const Settings& s) {
    std::vector<ReportEntry> entries;
    for (const auto& f : s.metrics_files) entries.push_back(read_metrics_file(f));
    const fs::path out = s.out.empty() ? fs::path("report") : fs::path(s.out);
    fs::create_directories(out);
    write_file_atomic(out / "report.csv", render_csv(entries));
    write_file_atomic(out / "report.svg", render_svg(entries, "LOSO accuracy and macro F1"));
    std::cout << render_csv(entries) << "wrote " << (out / "report.csv").string() << " and "
              << (out / "report.svg").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wrist BVP stress classification: preprocessing, LOSO training and reporting"};
    app.require_subcommand(0, 1);
    Settings s;
    bool dump_coeffs = false;
    app.add_flag("--dump-coeffs", dump_coeffs,
                 "Print the bandpass second-order sections as CSV and exit");
    app.add_option("--config", s.config_path, "key=value file; flags override it");

    auto* validate = app.add_subcommand("validate-data", "Check subject CSV files");
    validate->add_option("--data-dir", s.data_dir, "Directory of S<n>.csv files");

    auto add_task = [&](CLI::App* sub) {
        sub->add_option("--task", s.task, "2class or 3class")
            ->check(CLI::IsMember({"2class", "3class"}));
    };
    auto* prep = app.add_subcommand("preprocess", "Filter, segment and extract features");
    prep->add_option("--data-dir", s.data_dir, "Directory of S<n>.csv files");
    prep->add_option("--cache-dir", s.cache_dir, "Cache root (env PULSESTRESS_CACHE)");
    add_task(prep);
    prep->add_option("--workers", s.workers, "Parallel subjects");

    auto* loso = app.add_subcommand("loso", "Leave-one-subject-out training and evaluation");
    loso->add_option("--cache-dir", s.cache_dir, "Cache root (env PULSESTRESS_CACHE)");
    add_task(loso);
    loso->add_option("--variant", s.variant, "hcnn or cnn")->check(CLI::IsMember({"hcnn", "cnn"}));
    loso->add_option("--seed", s.seed, "Global seed");
    loso->add_option("--epochs", s.epochs, "Maximum epochs");
    loso->add_option("--batch-size", s.batch_size, "Mini-batch size");
    loso->add_option("--patience", s.patience, "Early-stopping patience");
    loso->add_option("--lr", s.lr, "Adam learning rate");
    loso->add_option("--workers", s.workers, "Parallel folds");
    loso->add_option("--out", s.out, "Output directory for metrics.json and checkpoints");

    auto* report = app.add_subcommand("report", "Render CSV and SVG from metrics files");
    report->add_option("metrics", s.metrics_files, "metrics.json files")->required();
    report->add_option("--out", s.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (dump_coeffs) {
            std::cout << format_sections_csv(
                design_bandpass(kSampleRateHz, kBandLowHz, kBandHighHz, kFilterOrder));
            return 0;
        }
        CLI::App* active = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
        const bool cache_flag = active && active->get_option_no_throw("--cache-dir") &&
                                active->count("--cache-dir") > 0;
        if (!s.config_path.empty() && active) apply_config(*active, read_config_file(s.config_path));
        const auto cache_root = resolve_cache_dir(cache_flag, s.cache_dir);

        if (active == validate) return cmd_validate(s);
        if (active == prep) return cmd_preprocess(s, cache_root);
        if (active == loso) return cmd_loso(s, cache_root);
        if (active == report) return cmd_report(s);
        std::cout << app.help();
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
