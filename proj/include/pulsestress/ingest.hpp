#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pulsestress {

inline constexpr int kSampleRateHz = 64;
inline constexpr int kMaxRawLabel = 7;

// One subject's wrist BVP stream with the per-sample WESAD condition label.
struct SubjectRecord {
    std::string subject_id;
    int sample_rate = kSampleRateHz;
    std::vector<double> bvp;
    std::vector<std::uint8_t> labels;

    bool operator==(const SubjectRecord&) const = default;
};

enum class TaskKind { ThreeClass, TwoClass };

// Class indices as used by the network's output layer.
//   ThreeClass: 0 Baseline, 1 Stress, 2 Amusement
//   TwoClass:   0 NonStress, 1 Stress
using TaskLabel = int;

int class_count(TaskKind task);
const char* task_name(TaskKind task);            // "3class" / "2class"
TaskKind parse_task(const std::string& text);    // throws Errc::Usage
std::vector<std::string> class_names(TaskKind task);

// Maps one raw WESAD label to a task class; nullopt for non-task labels
// (0 transient, 4 meditation, 5-7 unused).
std::optional<TaskLabel> map_raw_label(int raw, TaskKind task);

// A window is kept only when every raw label is identical and maps to a
// task class. Mixed windows and non-task windows yield nullopt (discard).
std::optional<TaskLabel> map_segment_label(std::span<const std::uint8_t> raw_labels,
                                           TaskKind task);

// Neutral CSV format: first line "# fs=64", then "bvp,label" rows.
SubjectRecord load_subject(const std::filesystem::path& path);
SubjectRecord parse_subject(std::string_view text, std::string subject_id);
void write_subject(const std::filesystem::path& path, const SubjectRecord& record);
std::string format_subject(const SubjectRecord& record);

// "S7.csv" -> "S7"
std::string subject_id_from_path(const std::filesystem::path& path);

// All S*.csv files under `dir`, sorted by numeric subject suffix.
std::vector<std::filesystem::path> list_subject_files(const std::filesystem::path& dir);

}  // namespace pulsestress
