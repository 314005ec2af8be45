#include "pulsestress/ingest.hpp"

#include "pulsestress/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace pulsestress {

namespace {

constexpr std::string_view kHeader = "# fs=64";
constexpr std::string_view kHeaderPrefix = "# fs=";

std::string_view trim_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

bool parse_double(std::string_view text, double& out) {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_int(std::string_view text, int& out) {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

void check_header(std::string_view header, const std::string& subject_id) {
    if (header == kHeader) return;
    if (header.starts_with(kHeaderPrefix)) {
        double rate = 0.0;
        if (parse_double(header.substr(kHeaderPrefix.size()), rate)) {
            throw Error(Errc::UnsupportedRate,
                        subject_id + ": unsupported sample rate " +
                            std::string(header.substr(kHeaderPrefix.size())) +
                            " Hz (expected 64)");
        }
    }
    throw Error(Errc::Format, subject_id + ": missing or garbled header, expected '# fs=64'");
}

}  // namespace

int class_count(TaskKind task) { return task == TaskKind::ThreeClass ? 3 : 2; }

const char* task_name(TaskKind task) { return task == TaskKind::ThreeClass ? "3class" : "2class"; }

TaskKind parse_task(const std::string& text) {
    if (text == "3class") return TaskKind::ThreeClass;
    if (text == "2class") return TaskKind::TwoClass;
    throw Error(Errc::Usage, "unknown task '" + text + "' (expected 2class or 3class)");
}

std::vector<std::string> class_names(TaskKind task) {
    if (task == TaskKind::ThreeClass) return {"baseline", "stress", "amusement"};
    return {"non-stress", "stress"};
}

std::optional<TaskLabel> map_raw_label(int raw, TaskKind task) {
    switch (raw) {
    case 1: return 0;  // baseline / non-stress
    case 2: return 1;
    case 3: return task == TaskKind::ThreeClass ? 2 : 0;
    default: return std::nullopt;
    }
}

std::optional<TaskLabel> map_segment_label(std::span<const std::uint8_t> raw_labels,
                                           TaskKind task) {
    if (raw_labels.empty()) return std::nullopt;
    const auto first = raw_labels.front();
    if (!std::all_of(raw_labels.begin(), raw_labels.end(),
                     [first](std::uint8_t v) { return v == first; })) {
        return std::nullopt;
    }
    return map_raw_label(first, task);
}

SubjectRecord parse_subject(std::string_view text, std::string subject_id) {
    SubjectRecord record;
    record.subject_id = std::move(subject_id);

    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) return false;
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        line = trim_cr(text.substr(pos, end - pos));
        pos = end + 1;
        return true;
    };

    std::string_view line;
    if (!next_line(line)) {
        throw Error(Errc::Format, record.subject_id + ": missing header");
    }
    check_header(line, record.subject_id);

    std::size_t row = 0;
    while (next_line(line)) {
        if (line.empty()) continue;
        ++row;
        const auto comma = line.find(',');
        if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
            throw Error(Errc::Parse, record.subject_id + ": row " + std::to_string(row) +
                                         ": expected two comma-separated fields");
        }
        double bvp = 0.0;
        if (!parse_double(line.substr(0, comma), bvp)) {
            throw Error(Errc::Parse, record.subject_id + ": row " + std::to_string(row) +
                                         ": non-numeric bvp '" +
                                         std::string(line.substr(0, comma)) + "'");
        }
        int label = 0;
        if (!parse_int(line.substr(comma + 1), label)) {
            throw Error(Errc::Parse, record.subject_id + ": row " + std::to_string(row) +
                                         ": non-integer label '" +
                                         std::string(line.substr(comma + 1)) + "'");
        }
        if (label < 0 || label > kMaxRawLabel) {
            throw Error(Errc::Validation, record.subject_id + ": row " + std::to_string(row) +
                                              ": label " + std::to_string(label) +
                                              " outside 0..7");
        }
        record.bvp.push_back(bvp);
        record.labels.push_back(static_cast<std::uint8_t>(label));
    }
    if (record.bvp.empty()) {
        throw Error(Errc::EmptyData, record.subject_id + ": no data rows");
    }
    return record;
}

SubjectRecord load_subject(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_subject(buffer.str(), subject_id_from_path(path));
}

std::string format_subject(const SubjectRecord& record) {
    if (record.bvp.size() != record.labels.size()) {
        throw Error(Errc::Validation, record.subject_id + ": bvp/label length mismatch");
    }
    std::string out(kHeader);
    out += '\n';
    out.reserve(out.size() + record.bvp.size() * 24);
    char buf[64];
    for (std::size_t i = 0; i < record.bvp.size(); ++i) {
        // shortest round-trip representation
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, record.bvp[i]);
        out.append(buf, ptr);
        out += ',';
        out += std::to_string(record.labels[i]);
        out += '\n';
    }
    return out;
}

void write_subject(const std::filesystem::path& path, const SubjectRecord& record) {
    const auto text = format_subject(record);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + path.string());
    out << text;
}

std::string subject_id_from_path(const std::filesystem::path& path) {
    return path.stem().string();
}

std::vector<std::filesystem::path> list_subject_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir)) {
        throw Error(Errc::Io, "not a directory: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (name.size() > 5 && name.front() == 'S' && entry.path().extension() == ".csv") {
            files.push_back(entry.path());
        }
    }
    auto key = [](const std::filesystem::path& p) {
        const auto stem = p.stem().string();
        int n = 0;
        auto [ptr, ec] = std::from_chars(stem.data() + 1, stem.data() + stem.size(), n);
        const bool numeric = ec == std::errc() && ptr == stem.data() + stem.size();
        return std::make_pair(numeric ? n : 1 << 30, stem);
    };
    std::sort(files.begin(), files.end(),
              [&](const auto& a, const auto& b) { return key(a) < key(b); });
    return files;
}

}  // namespace pulsestress
