#pragma once

#include "pulsestress/dsp.hpp"
#include "pulsestress/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pulsestress {

inline constexpr const char* kCodeVersion = "pulsestress-preprocess-1";

struct PreprocessConfig {
    double fs = kSampleRateHz;
    double f1 = kBandLowHz;
    double f2 = kBandHighHz;
    int order = kFilterOrder;
    std::size_t window = kSegmentLength;
    std::size_t stride = kSegmentStride;
    TaskKind task = TaskKind::ThreeClass;

    // Canonical text of every field that affects preprocessing output.
    std::string canonical() const;
};

struct SubjectPrepStats {
    std::string subject_id;
    std::size_t samples = 0;
    std::size_t candidate_windows = 0;
    std::size_t labeled_windows = 0;
    std::size_t quality_drops = 0;
    std::size_t ratio_flagged = 0;
    std::size_t accepted = 0;
};

// filter -> segment -> features; segments failing the beat quality gate
// are dropped. Accepted segments are stored standardized.
SubjectData prepare_subject(const SubjectRecord& record, const PreprocessConfig& config,
                            SubjectPrepStats* stats = nullptr);

std::string fnv1a_hex(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Hash of the canonical config together with the bytes of every input file.
std::string cache_key(const PreprocessConfig& config,
                      const std::vector<std::filesystem::path>& inputs);

struct CacheManifest {
    std::string key;
    std::string task;
    std::vector<SubjectPrepStats> subjects;
};

std::filesystem::path cache_dir_for(const std::filesystem::path& root, TaskKind task);

// nullopt when no (readable) manifest exists.
std::optional<CacheManifest> read_manifest(const std::filesystem::path& dir);

void write_cache(const std::filesystem::path& dir, const CacheManifest& manifest,
                 const std::vector<SubjectData>& subjects);

// Throws Errc::MissingCache when the cache has not been built.
std::vector<SubjectData> read_cache(const std::filesystem::path& dir);

// Writes `contents` to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace pulsestress
