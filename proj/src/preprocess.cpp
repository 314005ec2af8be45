#include "pulsestress/preprocess.hpp"

#include "pulsestress/error.hpp"

#include <json.hpp>

#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace pulsestress {

namespace {

constexpr char kSegmentMagic[8] = {'P', 'S', 'S', 'E', 'G', '0', '0', '1'};

std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}
    std::uint64_t u(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw Error(Errc::Format, "truncated segment cache");
    }
    std::string data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

nlohmann::json stats_json(const SubjectPrepStats& s) {
    return {{"subject", s.subject_id},
            {"samples", s.samples},
            {"candidate_windows", s.candidate_windows},
            {"labeled_windows", s.labeled_windows},
            {"quality_drops", s.quality_drops},
            {"ratio_flagged", s.ratio_flagged},
            {"accepted", s.accepted}};
}

}  // namespace

std::string PreprocessConfig::canonical() const {
    std::ostringstream out;
    out << "fs=" << shortest(fs) << ";f1=" << shortest(f1) << ";f2=" << shortest(f2)
        << ";order=" << order << ";window=" << window << ";stride=" << stride
        << ";task=" << task_name(task) << ";code=" << kCodeVersion;
    return out.str();
}

SubjectData prepare_subject(const SubjectRecord& record, const PreprocessConfig& config,
                            SubjectPrepStats* stats) {
    SubjectPrepStats local;
    SubjectPrepStats& st = stats ? *stats : local;
    st = SubjectPrepStats{};
    st.subject_id = record.subject_id;
    st.samples = record.bvp.size();
    st.candidate_windows = candidate_window_count(record.bvp.size(), config.window, config.stride);

    SubjectData out;
    out.subject_id = record.subject_id;
    if (record.bvp.size() != record.labels.size()) {
        throw Error(Errc::Validation, record.subject_id + ": bvp/label length mismatch");
    }
    const auto coeffs = design_bandpass(config.fs, config.f1, config.f2, config.order);
    if (record.bvp.size() <= 6 * padding_length(coeffs)) return out;

    const auto filtered = filter_zero_phase(coeffs, record.bvp);
    const auto segments = segment_stream(filtered, record.labels, config.task, record.subject_id,
                                         config.window, config.stride);
    st.labeled_windows = segments.size();
    for (const auto& seg : segments) {
        FeatureVector fv;
        try {
            fv = extract_features(seg.samples, config.fs);
        } catch (const Error& e) {
            if (e.code() != Errc::QualityTooLow && e.code() != Errc::InsufficientBeats) throw;
            ++st.quality_drops;
            continue;
        }
        if (fv.ratio_undefined) ++st.ratio_flagged;
        const auto z = zscore_segment(seg.samples);
        out.examples.segments.insert(out.examples.segments.end(), z.begin(), z.end());
        out.examples.features.push_back(fv);
        out.examples.labels.push_back(seg.label);
        out.examples.subjects.push_back(record.subject_id);
        out.examples.start_indices.push_back(seg.start_index);
    }
    st.accepted = out.examples.size();
    return out;
}

std::string fnv1a_hex(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string cache_key(const PreprocessConfig& config,
                      const std::vector<std::filesystem::path>& inputs) {
    std::string material = config.canonical();
    for (const auto& p : inputs) {
        material += '\n';
        material += p.filename().string();
        material += ':';
        material += fnv1a_hex(read_file(p));
    }
    return fnv1a_hex(material);
}

std::filesystem::path cache_dir_for(const std::filesystem::path& root, TaskKind task) {
    return root / task_name(task);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error(Errc::Io, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::optional<CacheManifest> read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(read_file(path));
        CacheManifest m;
        m.key = j.at("key").get<std::string>();
        m.task = j.at("task").get<std::string>();
        for (const auto& s : j.at("subjects")) {
            SubjectPrepStats st;
            st.subject_id = s.at("subject").get<std::string>();
            st.samples = s.at("samples").get<std::size_t>();
            st.candidate_windows = s.at("candidate_windows").get<std::size_t>();
            st.labeled_windows = s.at("labeled_windows").get<std::size_t>();
            st.quality_drops = s.at("quality_drops").get<std::size_t>();
            st.ratio_flagged = s.at("ratio_flagged").get<std::size_t>();
            st.accepted = s.at("accepted").get<std::size_t>();
            m.subjects.push_back(st);
        }
        return m;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

void write_cache(const std::filesystem::path& dir, const CacheManifest& manifest,
                 const std::vector<SubjectData>& subjects) {
    std::filesystem::create_directories(dir);

    std::string bin(kSegmentMagic, sizeof kSegmentMagic);
    std::size_t total = 0;
    for (const auto& s : subjects) total += s.examples.size();
    put_u32(bin, static_cast<std::uint32_t>(total));

    std::string csv = "subject_id,start_index,label";
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        csv += ',';
        csv += feature_name(f);
    }
    csv += '\n';

    for (const auto& s : subjects) {
        const auto& ex = s.examples;
        for (std::size_t i = 0; i < ex.size(); ++i) {
            put_u32(bin, static_cast<std::uint32_t>(ex.subjects[i].size()));
            bin += ex.subjects[i];
            put_u64(bin, ex.start_indices[i]);
            put_u32(bin, static_cast<std::uint32_t>(ex.labels[i]));
            for (std::size_t k = 0; k < kSegmentLength; ++k) {
                std::uint32_t bits;
                const float v = ex.segments[i * kSegmentLength + k];
                std::memcpy(&bits, &v, 4);
                put_u32(bin, bits);
            }

            csv += ex.subjects[i] + ',' + std::to_string(ex.start_indices[i]) + ',' +
                   std::to_string(ex.labels[i]);
            for (double v : ex.features[i].values) {
                csv += ',';
                csv += shortest(v);
            }
            csv += '\n';
        }
    }

    nlohmann::json j;
    j["key"] = manifest.key;
    j["task"] = manifest.task;
    j["code_version"] = kCodeVersion;
    j["subjects"] = nlohmann::json::array();
    for (const auto& st : manifest.subjects) j["subjects"].push_back(stats_json(st));

    // Manifest last: its presence marks a complete cache.
    std::filesystem::remove(dir / "manifest.json");
    write_file_atomic(dir / "segments.bin", bin);
    write_file_atomic(dir / "features.csv", csv);
    write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

std::vector<SubjectData> read_cache(const std::filesystem::path& dir) {
    const auto manifest = read_manifest(dir);
    if (!manifest || !std::filesystem::exists(dir / "segments.bin") ||
        !std::filesystem::exists(dir / "features.csv")) {
        throw Error(Errc::MissingCache, "no preprocessed cache in " + dir.string() +
                                            "; run `pulsestress preprocess` first");
    }

    Reader bin(read_file(dir / "segments.bin"));
    if (bin.bytes(8) != std::string(kSegmentMagic, 8)) {
        throw Error(Errc::Format, "bad segment cache magic");
    }
    const auto count = bin.u(4);

    std::istringstream csv(read_file(dir / "features.csv"));
    std::string line;
    std::getline(csv, line);  // header

    std::vector<SubjectData> out;
    std::map<std::string, std::size_t> index;
    for (const auto& st : manifest->subjects) {
        index[st.subject_id] = out.size();
        out.push_back({st.subject_id, {}});
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = bin.u(4);
        const auto subject = bin.bytes(len);
        const auto start = bin.u(8);
        const auto label = static_cast<int>(bin.u(4));
        auto it = index.find(subject);
        if (it == index.end()) {
            index[subject] = out.size();
            out.push_back({subject, {}});
            it = index.find(subject);
        }
        auto& ex = out[it->second].examples;
        for (std::size_t k = 0; k < kSegmentLength; ++k) {
            const auto bits = static_cast<std::uint32_t>(bin.u(4));
            float v;
            std::memcpy(&v, &bits, 4);
            ex.segments.push_back(v);
        }

        if (!std::getline(csv, line)) throw Error(Errc::Format, "feature cache is short");
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto c = rest.find(',');
            fields.push_back(rest.substr(0, c));
            if (c == std::string_view::npos) break;
            rest.remove_prefix(c + 1);
        }
        if (fields.size() != 3 + kFeatureCount || fields[0] != subject ||
            fields[1] != std::to_string(start)) {
            throw Error(Errc::Format, "feature cache row " + std::to_string(i + 1) +
                                          " does not match the segment cache");
        }
        FeatureVector fv;
        for (std::size_t f = 0; f < kFeatureCount; ++f) {
            const auto field = fields[3 + f];
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), fv.values[f]);
            if (ec != std::errc()) throw Error(Errc::Parse, "bad number in feature cache");
        }
        ex.features.push_back(fv);
        ex.labels.push_back(label);
        ex.subjects.push_back(subject);
        ex.start_indices.push_back(static_cast<std::size_t>(start));
    }
    if (!bin.done()) throw Error(Errc::Format, "trailing bytes in segment cache");
    return out;
}

}  // namespace pulsestress
