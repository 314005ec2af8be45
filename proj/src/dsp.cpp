#include "pulsestress/dsp.hpp"

#include "pulsestress/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pulsestress {

namespace {

using cplx = std::complex<double>;

// Steady-state DF2T state of the cascade for a unit step input.
std::vector<std::array<double, 2>> steady_state(const FilterCoefficients& coeffs) {
    std::vector<std::array<double, 2>> zi(coeffs.sections.size());
    double input_level = 1.0;
    for (std::size_t k = 0; k < coeffs.sections.size(); ++k) {
        const auto& s = coeffs.sections[k];
        const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        const double x = input_level;
        const double y = gain * x;
        const double z2 = s.b2 * x - s.a2 * y;
        const double z1 = s.b1 * x - s.a1 * y + z2;
        zi[k] = {z1, z2};
        input_level = y;
    }
    return zi;
}

void run_cascade(const FilterCoefficients& coeffs, std::vector<double>& data,
                 std::vector<std::array<double, 2>> state) {
    for (std::size_t k = 0; k < coeffs.sections.size(); ++k) {
        const auto& s = coeffs.sections[k];
        double z1 = state[k][0];
        double z2 = state[k][1];
        for (double& v : data) {
            const double x = v;
            const double y = s.b0 * x + z1;
            z1 = s.b1 * x - s.a1 * y + z2;
            z2 = s.b2 * x - s.a2 * y;
            v = y;
        }
    }
}

}  // namespace

FilterCoefficients design_bandpass(double fs, double f1, double f2, int order) {
    if (!(fs > 0.0)) throw Error(Errc::Design, "sample rate must be positive");
    if (!(f1 > 0.0)) throw Error(Errc::Design, "lower cutoff must be positive");
    if (!(f2 < fs / 2.0)) throw Error(Errc::Design, "upper cutoff must be below Nyquist");
    if (!(f1 < f2)) throw Error(Errc::Design, "lower cutoff must be below upper cutoff");
    if (order < 1) throw Error(Errc::Design, "order must be at least 1");

    const double pi = std::numbers::pi;
    const double w1 = 2.0 * fs * std::tan(pi * f1 / fs);
    const double w2 = 2.0 * fs * std::tan(pi * f2 / fs);
    const double bw = w2 - w1;
    const double w0sq = w1 * w2;

    // Analog prototype poles on the unit circle, left half plane.
    std::vector<cplx> poles;
    for (int k = 0; k < order; ++k) {
        const double theta = pi * (2.0 * k + order + 1) / (2.0 * order);
        const cplx p = std::polar(1.0, theta);
        // s^2 - p*bw*s + w0^2 = 0
        const cplx half = p * bw / 2.0;
        const cplx disc = std::sqrt(half * half - w0sq);
        poles.push_back(half + disc);
        poles.push_back(half - disc);
    }

    // Bilinear transform; the bandpass has `order` zeros at s = 0 and
    // `order` at infinity, which land on z = +1 and z = -1.
    const double fs2 = 2.0 * fs;
    cplx gain_num = std::pow(bw, order);
    cplx denom = 1.0;
    for (int k = 0; k < order; ++k) gain_num *= fs2;  // (fs2 - 0) per zero at the origin
    std::vector<cplx> zpoles;
    for (const auto& p : poles) {
        denom *= (fs2 - p);
        zpoles.push_back((fs2 + p) / (fs2 - p));
    }
    const double gain = (gain_num / denom).real();

    // Pair conjugates into sections; real poles pair among themselves.
    std::vector<cplx> upper;
    std::vector<double> real;
    for (const auto& z : zpoles) {
        if (std::abs(z.imag()) < 1e-12 * std::max(1.0, std::abs(z))) {
            real.push_back(z.real());
        } else if (z.imag() > 0) {
            upper.push_back(z);
        }
    }
    std::sort(real.begin(), real.end());

    FilterCoefficients out;
    out.fs = fs;
    out.f1 = f1;
    out.f2 = f2;
    out.order = order;
    for (const auto& z : upper) {
        SecondOrderSection s;
        s.b0 = 1.0; s.b1 = 0.0; s.b2 = -1.0;
        s.a1 = -2.0 * z.real();
        s.a2 = std::norm(z);
        out.sections.push_back(s);
    }
    for (std::size_t i = 0; i + 1 < real.size(); i += 2) {
        SecondOrderSection s;
        s.b0 = 1.0; s.b1 = 0.0; s.b2 = -1.0;
        s.a1 = -(real[i] + real[i + 1]);
        s.a2 = real[i] * real[i + 1];
        out.sections.push_back(s);
    }
    if (out.sections.size() != static_cast<std::size_t>(order)) {
        throw Error(Errc::Design, "pole pairing failed");
    }
    std::sort(out.sections.begin(), out.sections.end(),
              [](const auto& a, const auto& b) { return a.a2 < b.a2; });
    out.sections.front().b0 *= gain;
    out.sections.front().b1 *= gain;
    out.sections.front().b2 *= gain;
    return out;
}

std::complex<double> frequency_response(const FilterCoefficients& coeffs, double f_hz) {
    const cplx z = std::polar(1.0, 2.0 * std::numbers::pi * f_hz / coeffs.fs);
    const cplx zi = 1.0 / z;
    cplx h = 1.0;
    for (const auto& s : coeffs.sections) {
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    }
    return h;
}

std::size_t padding_length(const FilterCoefficients& coeffs) {
    return 3 * (coeffs.pole_count() + coeffs.zero_count());
}

std::vector<double> filter_causal(const FilterCoefficients& coeffs,
                                  std::span<const double> signal) {
    std::vector<double> out(signal.begin(), signal.end());
    run_cascade(coeffs, out, std::vector<std::array<double, 2>>(coeffs.sections.size()));
    return out;
}

std::vector<double> filter_zero_phase(const FilterCoefficients& coeffs,
                                      std::span<const double> signal) {
    const std::size_t pad = padding_length(coeffs);
    const std::size_t n = signal.size();
    if (n <= 6 * pad) {
        throw Error(Errc::Length, "signal of " + std::to_string(n) +
                                      " samples too short for zero-phase filtering (need > " +
                                      std::to_string(6 * pad) + ")");
    }

    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    const double first = signal.front();
    const double last = signal.back();
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * first - signal[i]);
    ext.insert(ext.end(), signal.begin(), signal.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * last - signal[n - 1 - i]);

    const auto zi = steady_state(coeffs);
    auto scaled = [&](double level) {
        auto state = zi;
        for (auto& s : state) {
            s[0] *= level;
            s[1] *= level;
        }
        return state;
    };

    run_cascade(coeffs, ext, scaled(ext.front()));
    std::reverse(ext.begin(), ext.end());
    run_cascade(coeffs, ext, scaled(ext.front()));
    std::reverse(ext.begin(), ext.end());

    return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
            ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::string format_sections_csv(const FilterCoefficients& coeffs) {
    std::ostringstream out;
    out.precision(17);
    out << "b0,b1,b2,a1,a2\n";
    for (const auto& s : coeffs.sections) {
        out << s.b0 << ',' << s.b1 << ',' << s.b2 << ',' << s.a1 << ',' << s.a2 << '\n';
    }
    return out.str();
}

std::size_t candidate_window_count(std::size_t n, std::size_t window, std::size_t stride) {
    if (n < window) return 0;
    return (n - window) / stride + 1;
}

std::vector<Segment> segment_stream(std::span<const double> signal,
                                    std::span<const std::uint8_t> labels, TaskKind task,
                                    const std::string& subject_id, std::size_t window,
                                    std::size_t stride) {
    if (signal.size() != labels.size()) {
        throw Error(Errc::Length, "signal and label lengths differ");
    }
    std::vector<Segment> out;
    const auto count = candidate_window_count(signal.size(), window, stride);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = w * stride;
        const auto label = map_segment_label(labels.subspan(start, window), task);
        if (!label) continue;
        Segment seg;
        seg.subject_id = subject_id;
        seg.start_index = start;
        seg.samples.assign(signal.begin() + static_cast<std::ptrdiff_t>(start),
                           signal.begin() + static_cast<std::ptrdiff_t>(start + window));
        seg.label = *label;
        out.push_back(std::move(seg));
    }
    return out;
}

}  // namespace pulsestress
