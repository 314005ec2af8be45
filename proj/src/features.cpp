#include "pulsestress/features.hpp"

#include "pulsestress/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <numeric>

namespace pulsestress {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kNames = {
    "mean_hr",  "std_hr",  "mean_hrv", "std_hrv", "nn50",    "pnn50",   "rms_hrv",
    "ulf",      "lf",      "hf",       "uhf",     "lf_hf",   "total_power",
    "rel_ulf",  "rel_lf",  "rel_hf",   "rel_uhf", "lf_norm", "hf_norm",
};

// fftw planning is not thread-safe; execution is.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

std::vector<std::complex<double>> real_fft(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> in(x.begin(), x.end());
    std::vector<std::complex<double>> out(x.size() / 2 + 1);
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                    FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    return out;
}

double population_mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v, double mean) {
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::string_view feature_name(std::size_t index) { return kNames.at(index); }

std::size_t min_peak_distance(double fs) {
    return static_cast<std::size_t>(std::floor(fs * 60.0 / kMaxHeartRateBpm));
}

BeatSeries beats_from_peaks(std::vector<std::size_t> peak_indices, double fs) {
    BeatSeries beats;
    beats.fs = fs;
    beats.peak_indices = std::move(peak_indices);
    for (std::size_t k = 1; k < beats.peak_indices.size(); ++k) {
        if (beats.peak_indices[k] <= beats.peak_indices[k - 1]) {
            throw Error(Errc::Validation, "peak indices must be strictly increasing");
        }
        beats.ibi_ms.push_back(1000.0 *
                               static_cast<double>(beats.peak_indices[k] - beats.peak_indices[k - 1]) /
                               fs);
    }
    return beats;
}

BeatSeries detect_peaks(std::span<const double> samples, double fs) {
    const std::size_t n = samples.size();
    std::vector<std::size_t> candidates;
    if (n >= 3) {
        const double mean = population_mean(samples);
        const double threshold = kPeakThresholdSigma * population_std(samples, mean);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (samples[i] > samples[i - 1] && samples[i] > samples[i + 1] &&
                samples[i] - mean > threshold) {
                candidates.push_back(i);
            }
        }
    }

    // Largest first; an earlier index wins a tie.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return samples[a] > samples[b]; });
    const std::size_t min_distance = min_peak_distance(fs);
    std::vector<std::size_t> kept;
    for (std::size_t c : candidates) {
        const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return (c > k ? c - k : k - c) < min_distance;
        });
        if (clear) kept.push_back(c);
    }
    std::sort(kept.begin(), kept.end());

    if (kept.size() < kMinPeaks) {
        throw Error(Errc::QualityTooLow, "only " + std::to_string(kept.size()) +
                                             " peaks detected (need " +
                                             std::to_string(kMinPeaks) + ")");
    }
    return beats_from_peaks(std::move(kept), fs);
}

TimeDomainFeatures time_domain_features(const BeatSeries& beats) {
    const auto& ibi = beats.ibi_ms;
    if (ibi.size() < 2) {
        throw Error(Errc::InsufficientBeats, "need at least 2 inter-beat intervals");
    }
    TimeDomainFeatures f;

    std::vector<double> hr(ibi.size());
    std::transform(ibi.begin(), ibi.end(), hr.begin(), [](double v) { return 60000.0 / v; });
    f.mean_hr = population_mean(hr);
    f.std_hr = population_std(hr, f.mean_hr);
    f.mean_hrv = population_mean(ibi);
    f.std_hrv = population_std(ibi, f.mean_hrv);

    double sum_sq = 0.0;
    std::size_t nn50 = 0;
    for (std::size_t k = 1; k < ibi.size(); ++k) {
        const double d = ibi[k] - ibi[k - 1];
        sum_sq += d * d;
        if (std::abs(d) > 50.0) ++nn50;
    }
    const auto diffs = static_cast<double>(ibi.size() - 1);
    f.nn50 = static_cast<double>(nn50);
    f.pnn50 = 100.0 * f.nn50 / diffs;
    f.rms_hrv = std::sqrt(sum_sq / diffs);
    return f;
}

Tachogram make_tachogram(const BeatSeries& beats) {
    if (beats.ibi_ms.size() < 2) {
        throw Error(Errc::InsufficientBeats, "tachogram needs at least 2 inter-beat intervals");
    }
    std::vector<double> times(beats.ibi_ms.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        times[k] = static_cast<double>(beats.peak_indices[k + 1]) / beats.fs;
    }

    Tachogram tach;
    tach.start_s = times.front();
    const double span = times.back() - times.front();
    const auto count = static_cast<std::size_t>(std::floor(span * kTachogramRateHz + 1e-9)) + 1;
    if (count < 4) {
        throw Error(Errc::InsufficientBeats, "beat span too short for a tachogram");
    }
    tach.values_ms.resize(count);
    std::size_t seg = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const double t = tach.start_s + static_cast<double>(i) / kTachogramRateHz;
        while (seg + 2 < times.size() && times[seg + 1] < t) ++seg;
        const double t0 = times[seg];
        const double t1 = times[seg + 1];
        const double a = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
        tach.values_ms[i] = beats.ibi_ms[seg] + a * (beats.ibi_ms[seg + 1] - beats.ibi_ms[seg]);
    }
    return tach;
}

Periodogram periodogram(std::span<const double> x, double rate_hz) {
    const std::size_t n = x.size();
    if (n < 2) throw Error(Errc::InsufficientBeats, "periodogram needs at least 2 samples");
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    // A flat series is exactly zero after mean removal.
    const double mean = (*lo == *hi) ? *lo : population_mean(x);
    std::vector<double> windowed(n);
    double window_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                               static_cast<double>(n));
        windowed[i] = (x[i] - mean) * w;
        window_energy += w * w;
    }
    const auto spectrum = real_fft(windowed);

    Periodogram p;
    const double scale = 1.0 / (rate_hz * window_energy);
    p.freqs_hz.resize(spectrum.size());
    p.psd.resize(spectrum.size());
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
        p.freqs_hz[k] = static_cast<double>(k) * rate_hz / static_cast<double>(n);
        double v = std::norm(spectrum[k]) * scale;
        const bool nyquist = (n % 2 == 0) && k == n / 2;
        if (k != 0 && !nyquist) v *= 2.0;
        p.psd[k] = v;
    }
    return p;
}

double band_power(const Periodogram& p, FrequencyBand band) {
    const auto& f = p.freqs_hz;
    const auto& s = p.psd;
    if (f.size() < 2) return 0.0;
    auto interp = [&](double x) {
        if (x <= f.front()) return s.front();
        if (x >= f.back()) return s.back();
        const auto it = std::upper_bound(f.begin(), f.end(), x);
        const auto k = static_cast<std::size_t>(it - f.begin());
        const double a = (x - f[k - 1]) / (f[k] - f[k - 1]);
        return s[k - 1] + a * (s[k] - s[k - 1]);
    };
    const double lo = std::max(band.lo_hz, f.front());
    const double hi = std::min(band.hi_hz, f.back());
    if (!(hi > lo)) return 0.0;

    double prev_f = lo;
    double prev_s = interp(lo);
    double area = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
        if (f[k] <= lo) continue;
        if (f[k] >= hi) break;
        area += 0.5 * (s[k] + prev_s) * (f[k] - prev_f);
        prev_f = f[k];
        prev_s = s[k];
    }
    area += 0.5 * (interp(hi) + prev_s) * (hi - prev_f);
    return area;
}

SpectralFeatures spectral_features(const BeatSeries& beats) {
    const auto tach = make_tachogram(beats);
    const auto p = periodogram(tach.values_ms, tach.rate_hz);

    SpectralFeatures f;
    f.ulf = band_power(p, kUlfBand);
    f.lf = band_power(p, kLfBand);
    f.hf = band_power(p, kHfBand);
    f.uhf = band_power(p, kUhfBand);
    f.total = f.ulf + f.lf + f.hf + f.uhf;
    if (f.total > 0.0) {
        f.rel_ulf = f.ulf / f.total;
        f.rel_lf = f.lf / f.total;
        f.rel_hf = f.hf / f.total;
        f.rel_uhf = f.uhf / f.total;
    }
    if (f.lf + f.hf > 0.0) {
        f.lf_norm = 100.0 * f.lf / (f.lf + f.hf);
        f.hf_norm = 100.0 * f.hf / (f.lf + f.hf);
    }
    if (f.hf > 0.0) {
        f.lf_hf = f.lf / f.hf;
    } else {
        f.lf_hf = 0.0;
        f.ratio_undefined = true;
    }
    return f;
}

FeatureVector extract_features(std::span<const double> segment_samples, double fs) {
    const auto beats = detect_peaks(segment_samples, fs);
    const auto t = time_domain_features(beats);
    const auto s = spectral_features(beats);

    FeatureVector v;
    v.values = {t.mean_hr, t.std_hr,  t.mean_hrv, t.std_hrv,   t.nn50,    t.pnn50,
                t.rms_hrv, s.ulf,     s.lf,       s.hf,        s.uhf,     s.lf_hf,
                s.total,   s.rel_ulf, s.rel_lf,   s.rel_hf,    s.rel_uhf, s.lf_norm,
                s.hf_norm};
    v.ratio_undefined = s.ratio_undefined;
    return v;
}

}  // namespace pulsestress
