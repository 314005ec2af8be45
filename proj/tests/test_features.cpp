#include "pulsestress/error.hpp"
#include "pulsestress/features.hpp"

#include "oracles.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace pulsestress;

namespace {

BeatSeries from_ibis(const std::vector<double>& ibi) {
    BeatSeries b;
    b.ibi_ms = ibi;
    b.peak_indices.resize(ibi.size() + 1);
    return b;
}

std::vector<std::size_t> peaks_at(const std::vector<double>& times, double fs = 64.0) {
    std::vector<std::size_t> out;
    for (double t : times) out.push_back(static_cast<std::size_t>(std::llround(t * fs)));
    return out;
}

double relative(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

}  // namespace

TEST(TimeDomain, ConstantSeries) {
    const auto f = time_domain_features(from_ibis({1000, 1000}));
    EXPECT_DOUBLE_EQ(f.mean_hr, 60.0);
    EXPECT_DOUBLE_EQ(f.std_hr, 0.0);
    EXPECT_DOUBLE_EQ(f.nn50, 0.0);
    EXPECT_DOUBLE_EQ(f.pnn50, 0.0);
    EXPECT_DOUBLE_EQ(f.rms_hrv, 0.0);
}

TEST(TimeDomain, WorkedExample) {
    const auto f = time_domain_features(from_ibis({800, 860, 870, 940}));
    EXPECT_EQ(f.nn50, 2.0);
    EXPECT_NEAR(f.pnn50, 200.0 / 3.0, 1e-12);
    EXPECT_NEAR(f.rms_hrv, std::sqrt((60.0 * 60 + 10 * 10 + 70 * 70) / 3.0), 1e-12);
    EXPECT_NEAR(f.rms_hrv, 53.54, 0.005);
    EXPECT_NEAR(f.mean_hrv, 867.5, 1e-12);
    EXPECT_NEAR(f.std_hrv, std::sqrt((67.5 * 67.5 + 7.5 * 7.5 + 2.5 * 2.5 + 72.5 * 72.5) / 4), 1e-12);
}

TEST(TimeDomain, SingleDifferenceJustOverFiftyMs) {
    const auto f = time_domain_features(from_ibis({1000, 1051}));
    EXPECT_EQ(f.nn50, 1.0);
    EXPECT_DOUBLE_EQ(f.pnn50, 100.0);
    const auto exactly = time_domain_features(from_ibis({1000, 1050}));
    EXPECT_EQ(exactly.nn50, 0.0);
}

TEST(TimeDomain, NeedsTwoIntervals) {
    try {
        time_domain_features(from_ibis({1000}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InsufficientBeats);
    }
}

TEST(TimeDomain, ShiftAndScaleProperties) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> normal(850.0, 60.0);
    std::uniform_real_distribution<double> shift(-200.0, 200.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> ibi(40);
        for (auto& v : ibi) v = std::max(350.0, normal(rng));
        const double c = shift(rng);
        auto shifted = ibi;
        auto doubled = ibi;
        for (auto& v : shifted) v += c;
        for (auto& v : doubled) v *= 2.0;
        const auto a = time_domain_features(from_ibis(ibi));
        const auto b = time_domain_features(from_ibis(shifted));
        const auto d = time_domain_features(from_ibis(doubled));
        EXPECT_NEAR(b.std_hrv, a.std_hrv, 1e-9);
        EXPECT_EQ(b.nn50, a.nn50);
        EXPECT_EQ(b.pnn50, a.pnn50);
        EXPECT_NEAR(b.rms_hrv, a.rms_hrv, 1e-9);
        EXPECT_NEAR(b.mean_hrv, a.mean_hrv + c, 1e-9);
        EXPECT_NEAR(d.mean_hr, a.mean_hr / 2.0, 1e-9);
        EXPECT_GE(a.pnn50, 0.0);
        EXPECT_LE(a.pnn50, 100.0);
    }
}

TEST(PeakDetection, SineAt72Bpm) {
    const auto x = synth::sine(1.2, 60.0);
    const auto beats = detect_peaks(x, 64.0);
    EXPECT_NEAR(static_cast<double>(beats.peak_indices.size()), 72.0, 1.0);
    for (double ibi : beats.ibi_ms) EXPECT_NEAR(ibi, 833.0, 20.0);
    for (std::size_t k = 1; k < beats.peak_indices.size(); ++k) {
        EXPECT_GE(beats.peak_indices[k] - beats.peak_indices[k - 1], min_peak_distance(64.0));
    }
}

TEST(PeakDetection, SineAt60BpmGivesSixtyBpm) {
    const auto beats = detect_peaks(synth::sine(1.0, 60.0), 64.0);
    EXPECT_NEAR(time_domain_features(beats).mean_hr, 60.0, 1.0);
}

TEST(PeakDetection, FlatSegmentIsRejected) {
    const std::vector<double> zeros(3840, 0.0);
    try {
        detect_peaks(zeros, 64.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::QualityTooLow);
    }
}

TEST(PeakDetection, MinimumDistanceIs17Samples) { EXPECT_EQ(min_peak_distance(64.0), 17u); }

TEST(PeakDetection, RecallAndPrecisionOnPulseTrains) {
    for (double bpm = 40.0; bpm <= 180.0; bpm += 5.0) {
        const auto truth = synth::regular_beats(bpm, 60.0, 0.37);
        const auto x = synth::pulse_train(truth, 60.0);
        const auto beats = detect_peaks(x, 64.0);
        std::size_t matched = 0;
        for (double t : truth) {
            const double idx = t * 64.0;
            for (auto p : beats.peak_indices) {
                if (std::abs(static_cast<double>(p) - idx) <= 2.0) {
                    ++matched;
                    break;
                }
            }
        }
        const double recall = static_cast<double>(matched) / static_cast<double>(truth.size());
        const double precision =
            static_cast<double>(matched) / static_cast<double>(beats.peak_indices.size());
        EXPECT_GE(recall, 0.98) << bpm;
        EXPECT_GE(precision, 0.98) << bpm;
        EXPECT_NEAR(time_domain_features(beats).mean_hr, bpm, 1.0) << bpm;
    }
}

TEST(Spectral, ConstantIntervalsGiveZeroPower) {
    std::vector<std::size_t> peaks;
    for (std::size_t i = 10; i < 3840; i += 64) peaks.push_back(i);
    const auto f = spectral_features(beats_from_peaks(peaks, 64.0));
    EXPECT_EQ(f.ulf, 0.0);
    EXPECT_EQ(f.lf, 0.0);
    EXPECT_EQ(f.hf, 0.0);
    EXPECT_EQ(f.uhf, 0.0);
    EXPECT_EQ(f.total, 0.0);
    EXPECT_EQ(f.rel_lf, 0.0);
    EXPECT_EQ(f.lf_norm, 0.0);
    EXPECT_EQ(f.hf_norm, 0.0);
    EXPECT_EQ(f.lf_hf, 0.0);
    EXPECT_TRUE(f.ratio_undefined);
}

TEST(Spectral, TenthHertzModulationLandsInLf) {
    const double pi = std::numbers::pi;
    const auto times = synth::modulated_beats(
        [&](double t) { return 1000.0 + 100.0 * std::sin(2.0 * pi * 0.1 * t); }, 60.0);
    const auto beats = beats_from_peaks(peaks_at(times), 64.0);
    const auto f = spectral_features(beats);
    EXPECT_GE(f.rel_lf, 0.8);

    // direct Fourier magnitude of the tachogram peaks near 0.1 Hz
    const auto tach = make_tachogram(beats);
    const std::size_t n = tach.values_ms.size();
    double mean = 0.0;
    for (double v : tach.values_ms) mean += v;
    mean /= static_cast<double>(n);
    double best_f = 0.0, best_mag = 0.0;
    for (double fr = 0.02; fr <= 1.0; fr += 0.005) {
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ang = 2.0 * pi * fr * static_cast<double>(i) / 4.0;
            re += (tach.values_ms[i] - mean) * std::cos(ang);
            im -= (tach.values_ms[i] - mean) * std::sin(ang);
        }
        if (std::hypot(re, im) > best_mag) {
            best_mag = std::hypot(re, im);
            best_f = fr;
        }
    }
    EXPECT_NEAR(best_f, 0.1, 0.02);
}

TEST(Spectral, BandPowersAgreeWithBruteForceDft) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double base = 600.0 + 60.0 * trial;
        const double a = 20.0 + 10.0 * std::abs(normal(rng));
        const double fm = 0.05 + 0.04 * trial;
        const auto times = synth::modulated_beats(
            [&](double t) {
                return base + a * std::sin(2.0 * std::numbers::pi * fm * t) + 15.0 * normal(rng);
            },
            60.0);
        const auto peaks = peaks_at(times);
        const auto beats = beats_from_peaks(peaks, 64.0);
        const auto f = spectral_features(beats);
        const auto o = oracle::brute_force_bands(peaks, 64.0);
        EXPECT_LT(relative(f.ulf, o.ulf), 0.05) << trial;
        EXPECT_LT(relative(f.lf, o.lf), 0.05) << trial;
        EXPECT_LT(relative(f.hf, o.hf), 0.05) << trial;
        EXPECT_LT(relative(f.uhf, o.uhf), 0.05) << trial;

        ASSERT_GT(f.total, 0.0);
        EXPECT_NEAR(f.rel_ulf + f.rel_lf + f.rel_hf + f.rel_uhf, 1.0, 1e-9);
        EXPECT_NEAR(f.lf_norm + f.hf_norm, 100.0, 1e-9);
        EXPECT_NEAR(f.lf_hf, f.lf / f.hf, 1e-12);
        EXPECT_NEAR(f.total, f.ulf + f.lf + f.hf + f.uhf, 1e-9 * f.total);
    }
}

TEST(ExtractFeatures, ConstantRate72Bpm) {
    const auto truth = synth::regular_beats(72.0, 60.0, 0.31);
    const auto x = synth::pulse_train(truth, 60.0);
    const auto f = extract_features(x);
    EXPECT_EQ(f.values.size(), 19u);
    EXPECT_NEAR(f[kMeanHr], 72.0, 1.0);
    EXPECT_LT(f[kStdHrv], 10.0);  // 15.6 ms sample quantization only
    EXPECT_EQ(f[kNn50], 0.0);
    EXPECT_EQ(extract_features(x), f);
}

TEST(ExtractFeatures, InvariantsOnJitteredTrains) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double bpm = 55.0 + 5.0 * trial;
        const auto times = synth::modulated_beats(
            [&](double) { return 60000.0 / bpm * (1.0 + 0.05 * normal(rng)); }, 60.0);
        const auto f = extract_features(synth::pulse_train(times, 60.0));
        EXPECT_GE(f[kStdHr], 0.0);
        EXPECT_GE(f[kStdHrv], 0.0);
        EXPECT_GE(f[kPnn50], 0.0);
        EXPECT_LE(f[kPnn50], 100.0);
        for (auto i : {kPowerUlf, kPowerLf, kPowerHf, kPowerUhf}) EXPECT_GE(f[i], 0.0);
        if (f[kPowerTotal] > 0) {
            EXPECT_NEAR(f[kRelUlf] + f[kRelLf] + f[kRelHf] + f[kRelUhf], 1.0, 1e-9);
        }
        if (f[kPowerLf] + f[kPowerHf] > 0) EXPECT_NEAR(f[kLfNorm] + f[kHfNorm], 100.0, 1e-9);
    }
}

TEST(ExtractFeatures, NamesCoverTheLayout) {
    EXPECT_EQ(feature_name(kMeanHr), "mean_hr");
    EXPECT_EQ(feature_name(kHfNorm), "hf_norm");
    EXPECT_THROW(feature_name(19), std::out_of_range);
}
