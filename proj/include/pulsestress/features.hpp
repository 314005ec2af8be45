#pragma once

#include "pulsestress/dsp.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace pulsestress {

inline constexpr std::size_t kFeatureCount = 19;
inline constexpr std::size_t kMinPeaks = 10;
inline constexpr double kMaxHeartRateBpm = 220.0;
inline constexpr double kTachogramRateHz = 4.0;
inline constexpr double kPeakThresholdSigma = 0.5;

// floor(fs * 60 / 220) samples between accepted peaks.
std::size_t min_peak_distance(double fs);

struct BeatSeries {
    std::vector<std::size_t> peak_indices;
    std::vector<double> ibi_ms;  // ibi_ms[k] spans peak k -> peak k+1
    double fs = kSampleRateHz;
};

BeatSeries beats_from_peaks(std::vector<std::size_t> peak_indices, double fs);

// Fixed feature layout.
enum Feature : std::size_t {
    kMeanHr,
    kStdHr,
    kMeanHrv,
    kStdHrv,
    kNn50,
    kPnn50,
    kRmsHrv,
    kPowerUlf,
    kPowerLf,
    kPowerHf,
    kPowerUhf,
    kLfHfRatio,
    kPowerTotal,
    kRelUlf,
    kRelLf,
    kRelHf,
    kRelUhf,
    kLfNorm,
    kHfNorm,
};

std::string_view feature_name(std::size_t index);

struct FeatureVector {
    std::array<double, kFeatureCount> values{};
    // LF/HF was undefined (HF power zero) and reported as 0.
    bool ratio_undefined = false;

    double operator[](std::size_t i) const { return values[i]; }
    bool operator==(const FeatureVector&) const = default;
};

struct TimeDomainFeatures {
    double mean_hr = 0, std_hr = 0;
    double mean_hrv = 0, std_hrv = 0;
    double nn50 = 0, pnn50 = 0;
    double rms_hrv = 0;
};

struct FrequencyBand {
    double lo_hz;
    double hi_hz;
};

inline constexpr FrequencyBand kUlfBand{0.01, 0.04};
inline constexpr FrequencyBand kLfBand{0.04, 0.15};
inline constexpr FrequencyBand kHfBand{0.15, 0.4};
inline constexpr FrequencyBand kUhfBand{0.4, 1.0};

struct SpectralFeatures {
    double ulf = 0, lf = 0, hf = 0, uhf = 0;
    double lf_hf = 0;
    double total = 0;
    double rel_ulf = 0, rel_lf = 0, rel_hf = 0, rel_uhf = 0;
    double lf_norm = 0, hf_norm = 0;
    bool ratio_undefined = false;
};

// Thresholded local maxima with minimum-distance suppression.
// Throws Errc::QualityTooLow when fewer than kMinPeaks survive.
BeatSeries detect_peaks(std::span<const double> samples, double fs);

TimeDomainFeatures time_domain_features(const BeatSeries& beats);

struct Tachogram {
    std::vector<double> values_ms;  // evenly sampled, not mean-subtracted
    double rate_hz = kTachogramRateHz;
    double start_s = 0.0;
};

// IBIs placed at the timestamp of the beat that closes them and
// linearly interpolated onto a kTachogramRateHz grid.
Tachogram make_tachogram(const BeatSeries& beats);

struct Periodogram {
    std::vector<double> freqs_hz;
    std::vector<double> psd;  // one-sided density, ms^2/Hz
};

// Mean-subtracted, Hann-windowed one-sided periodogram.
Periodogram periodogram(std::span<const double> x, double rate_hz);

// Trapezoidal integral of the PSD over [lo, hi] with linearly
// interpolated values at the band edges.
double band_power(const Periodogram& p, FrequencyBand band);

SpectralFeatures spectral_features(const BeatSeries& beats);

FeatureVector extract_features(std::span<const double> segment_samples, double fs = kSampleRateHz);

}  // namespace pulsestress
