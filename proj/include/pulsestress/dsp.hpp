#pragma once

#include "pulsestress/ingest.hpp"

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pulsestress {

inline constexpr double kBandLowHz = 0.7;
inline constexpr double kBandHighHz = 3.7;
inline constexpr int kFilterOrder = 3;
inline constexpr int kWindowSeconds = 60;
inline constexpr int kStrideSeconds = 5;
inline constexpr std::size_t kSegmentLength = kWindowSeconds * kSampleRateHz;  // 3840
inline constexpr std::size_t kSegmentStride = kStrideSeconds * kSampleRateHz;  // 320

// One biquad in direct form II transposed; a0 is normalized to 1.
struct SecondOrderSection {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;
};

struct FilterCoefficients {
    std::vector<SecondOrderSection> sections;
    double fs = 0.0;
    double f1 = 0.0;
    double f2 = 0.0;
    int order = 0;

    std::size_t pole_count() const { return 2 * sections.size(); }
    std::size_t zero_count() const { return 2 * sections.size(); }
};

// Butterworth bandpass: analog lowpass prototype, lowpass-to-bandpass
// transform, bilinear transform with both edges prewarped.
FilterCoefficients design_bandpass(double fs, double f1, double f2, int order);

std::complex<double> frequency_response(const FilterCoefficients& coeffs, double f_hz);

// 3 * (poles + zeros) samples of odd reflection at each end.
std::size_t padding_length(const FilterCoefficients& coeffs);

// Single causal pass through every section, starting from zero state.
std::vector<double> filter_causal(const FilterCoefficients& coeffs, std::span<const double> signal);

// Forward-backward filtering. Output length equals input length.
std::vector<double> filter_zero_phase(const FilterCoefficients& coeffs,
                                      std::span<const double> signal);

std::string format_sections_csv(const FilterCoefficients& coeffs);

struct Segment {
    std::string subject_id;
    std::size_t start_index = 0;
    std::vector<double> samples;
    TaskLabel label = 0;
};

// Number of candidate windows before label filtering.
std::size_t candidate_window_count(std::size_t n, std::size_t window = kSegmentLength,
                                   std::size_t stride = kSegmentStride);

std::vector<Segment> segment_stream(std::span<const double> signal,
                                    std::span<const std::uint8_t> labels, TaskKind task,
                                    const std::string& subject_id = {},
                                    std::size_t window = kSegmentLength,
                                    std::size_t stride = kSegmentStride);

}  // namespace pulsestress
