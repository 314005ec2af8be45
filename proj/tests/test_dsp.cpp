#include "pulsestress/dsp.hpp"
#include "pulsestress/error.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

using namespace pulsestress;

namespace {

const FilterCoefficients& band_filter() {
    static const auto c = design_bandpass(64.0, 0.7, 3.7, 3);
    return c;
}

// Textbook analog Butterworth bandpass magnitude at the prewarped frequency.
double analog_bandpass_magnitude(double f, double fs, double f1, double f2, int order) {
    const double pi = std::numbers::pi;
    auto warp = [&](double x) { return 2.0 * fs * std::tan(pi * x / fs); };
    const double w = warp(f), w1 = warp(f1), w2 = warp(f2);
    if (w == 0.0) return 0.0;
    const double q = (w * w - w1 * w2) / (w * (w2 - w1));
    return 1.0 / std::sqrt(1.0 + std::pow(q, 2 * order));
}

double rms(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

long xcorr_peak_lag(const std::vector<double>& a, const std::vector<double>& b, long max_lag) {
    long best = 0;
    double best_v = -1e300;
    const long n = static_cast<long>(a.size());
    for (long lag = -max_lag; lag <= max_lag; ++lag) {
        double s = 0.0;
        for (long i = 0; i < n; ++i) {
            const long j = i + lag;
            if (j >= 0 && j < n) s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(j)];
        }
        if (s > best_v) {
            best_v = s;
            best = lag;
        }
    }
    return best;
}

}  // namespace

TEST(BandpassDesign, ThreeStableSections) {
    const auto& c = band_filter();
    ASSERT_EQ(c.sections.size(), 3u);
    for (const auto& s : c.sections) {
        // roots of z^2 + a1 z + a2
        const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4 * s.a2));
        const auto r1 = (-s.a1 + disc) / 2.0;
        const auto r2 = (-s.a1 - disc) / 2.0;
        EXPECT_LT(std::abs(r1), 1.0);
        EXPECT_LT(std::abs(r2), 1.0);
    }
}

TEST(BandpassDesign, MagnitudeAtReferenceFrequencies) {
    const auto& c = band_filter();
    EXPECT_LE(std::abs(frequency_response(c, 0.0)), 1e-9);
    const double center = std::abs(frequency_response(c, std::sqrt(0.7 * 3.7)));
    EXPECT_GE(center, 0.99);
    EXPECT_LE(center, 1.0 + 1e-12);
    const double at_1609 = std::abs(frequency_response(c, 1.609));
    EXPECT_GE(at_1609, 0.99);
    EXPECT_LE(at_1609, 1.0 + 1e-12);
    const double at_10 = std::abs(frequency_response(c, 10.0));
    EXPECT_LE(at_10, 0.05);
    // scipy.signal.butter(3, [0.7, 3.7], 'band', fs=64) evaluated at 10 Hz
    EXPECT_NEAR(at_10, 0.023284215316864566, 1e-9);
}

TEST(BandpassDesign, MatchesAnalogPrototypeEverywhere) {
    for (const auto& [f1, f2, order] :
         {std::tuple{0.7, 3.7, 3}, std::tuple{0.5, 8.0, 2}, std::tuple{1.0, 5.0, 4}}) {
        const auto c = design_bandpass(64.0, f1, f2, order);
        EXPECT_EQ(c.sections.size(), static_cast<std::size_t>(order));
        for (double f = 0.05; f < 31.9; f += 0.37) {
            EXPECT_NEAR(std::abs(frequency_response(c, f)),
                        analog_bandpass_magnitude(f, 64.0, f1, f2, order), 1e-9)
                << "f=" << f << " order=" << order;
        }
    }
}

TEST(BandpassDesign, RejectsInvalidCutoffs) {
    EXPECT_THROW(design_bandpass(64, 0.7, 40, 3), Error);
    EXPECT_THROW(design_bandpass(64, 0.7, 32, 3), Error);
    EXPECT_THROW(design_bandpass(64, 0.0, 3.7, 3), Error);
    EXPECT_THROW(design_bandpass(64, 3.7, 0.7, 3), Error);
    EXPECT_THROW(design_bandpass(64, 0.7, 3.7, 0), Error);
    try {
        design_bandpass(64, 0.7, 40, 3);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::Design);
    }
}

TEST(ZeroPhaseFilter, ConstantSignalIsRejected) {
    for (double c : {1.0, -250.0, 1e4}) {
        const std::vector<double> x(3840, c);
        const auto y = filter_zero_phase(band_filter(), x);
        ASSERT_EQ(y.size(), x.size());
        for (double v : y) EXPECT_LE(std::abs(v), 1e-6 * std::abs(c));
    }
}

TEST(ZeroPhaseFilter, PassbandSineKeepsAmplitudeAndPhase) {
    const auto x = synth::sine(1.6, 60.0);
    const auto y = filter_zero_phase(band_filter(), x);
    ASSERT_EQ(y.size(), x.size());
    const std::span<const double> mid_x(x.data() + 640, x.size() - 1280);
    const std::span<const double> mid_y(y.data() + 640, y.size() - 1280);
    EXPECT_NEAR(rms(mid_y) / rms(mid_x), 1.0, 0.02);
    EXPECT_EQ(xcorr_peak_lag(x, y, 40), 0);
}

TEST(ZeroPhaseFilter, ZeroLagAcrossTheBand) {
    for (double f : {1.0, 1.609, 2.5, 3.2}) {
        const auto x = synth::sine(f, 60.0, 64.0, 1.0, 0.3);
        const auto y = filter_zero_phase(band_filter(), x);
        EXPECT_EQ(xcorr_peak_lag(x, y, 40), 0) << f;
    }
}

TEST(ZeroPhaseFilter, StopbandSineIsAttenuated) {
    const auto x = synth::sine(0.1, 60.0);
    const auto y = filter_zero_phase(band_filter(), x);
    EXPECT_LE(rms(y), 0.05 * rms(x));
}

TEST(ZeroPhaseFilter, MatchesScipyWithSamePadding) {
    std::vector<double> x(640);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = static_cast<double>(i) / 64.0;
        const double pi = std::numbers::pi;
        x[i] = std::sin(2 * pi * 1.3 * t) + 0.5 * std::sin(2 * pi * 0.2 * t) +
               0.3 * std::sin(2 * pi * 7 * t) + 0.25;
    }
    const auto y = filter_zero_phase(band_filter(), x);
    // scipy.signal.sosfiltfilt(sos, x, padlen=36)
    EXPECT_NEAR(y[0], 0.10884482781023613, 1e-9);
    EXPECT_NEAR(y[1], 0.24035355935880365, 1e-9);
    EXPECT_NEAR(y[100], 0.20489971655066058, 1e-9);
    EXPECT_NEAR(y[320], 4.1248315150843595e-05, 1e-9);
    EXPECT_NEAR(y[639], -0.31323433932441486, 1e-9);
}

TEST(ZeroPhaseFilter, IsLinear) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x(2000), y(2000), combo(2000);
        const double a = normal(rng), b = normal(rng);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = normal(rng);
            y[i] = normal(rng);
            combo[i] = a * x[i] + b * y[i];
        }
        const auto fx = filter_zero_phase(band_filter(), x);
        const auto fy = filter_zero_phase(band_filter(), y);
        const auto fc = filter_zero_phase(band_filter(), combo);
        double scale = 0.0;
        for (double v : fc) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_NEAR(fc[i], a * fx[i] + b * fy[i], 1e-8 * scale);
        }
    }
}

TEST(ZeroPhaseFilter, ShortSignalIsALengthError) {
    const std::vector<double> x(6 * padding_length(band_filter()), 1.0);
    try {
        filter_zero_phase(band_filter(), x);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::Length);
    }
}

TEST(Segmentation, BoundaryCounts) {
    auto run = [](std::size_t n, int raw) {
        const std::vector<double> x(n, 0.0);
        const std::vector<std::uint8_t> l(n, static_cast<std::uint8_t>(raw));
        return segment_stream(x, l, TaskKind::ThreeClass);
    };
    EXPECT_EQ(run(3840, 1).size(), 1u);
    EXPECT_TRUE(run(3839, 1).empty());
    const auto segs = run(4480, 2);
    ASSERT_EQ(segs.size(), 3u);
    EXPECT_EQ(segs[0].start_index, 0u);
    EXPECT_EQ(segs[1].start_index, 320u);
    EXPECT_EQ(segs[2].start_index, 640u);
    for (const auto& s : segs) {
        EXPECT_EQ(s.samples.size(), 3840u);
        EXPECT_EQ(s.label, 1);
    }
}

TEST(Segmentation, CountMatchesClosedForm) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> len(0, 1'000'000);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = len(rng);
        const std::size_t expected = n >= 3840 ? (n - 3840) / 320 + 1 : 0;
        EXPECT_EQ(candidate_window_count(n), expected) << n;
    }
    // full segmentation on a few long uniform streams
    for (std::size_t n : {3840u, 4159u, 4160u, 20000u}) {
        const std::vector<double> x(n, 0.0);
        const std::vector<std::uint8_t> l(n, 3);
        EXPECT_EQ(segment_stream(x, l, TaskKind::TwoClass).size(), candidate_window_count(n));
    }
}

TEST(Segmentation, WindowsAcrossConditionBoundariesAreDropped) {
    const std::size_t n = 3840 * 2;
    std::vector<double> x(n, 0.0);
    std::vector<std::uint8_t> l(n, 1);
    std::fill(l.begin() + 3840, l.end(), 2);
    const auto segs = segment_stream(x, l, TaskKind::ThreeClass, "S1");
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[0].start_index, 0u);
    EXPECT_EQ(segs[0].label, 0);
    EXPECT_EQ(segs[1].start_index, 3840u);
    EXPECT_EQ(segs[1].label, 1);
    EXPECT_EQ(segs[1].subject_id, "S1");
    for (const auto& s : segs) EXPECT_EQ(s.start_index % 320, 0u);
}
