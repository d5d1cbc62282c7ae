#include "aerosim/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>

namespace aerosim::dsp {

std::vector<cplx> fft_unitary(const std::vector<cplx>& x) {
    Eigen::FFT<double> fft;
    std::vector<cplx> out;
    fft.fwd(out, x);
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (cplx& v : out) v *= scale;
    return out;
}

std::vector<cplx> ifft_unitary(const std::vector<cplx>& x) {
    Eigen::FFT<double> fft;
    std::vector<cplx> out;
    fft.inv(out, x);  // Eigen scales by 1/N
    const double scale = std::sqrt(static_cast<double>(x.size()));
    for (cplx& v : out) v *= scale;
    return out;
}

SincInterpolator::SincInterpolator(int half_taps, double kaiser_beta)
    : half_taps_(half_taps), beta_(kaiser_beta), i0_beta_(std::cyl_bessel_i(0.0, kaiser_beta)) {}

double SincInterpolator::window(double frac) const {
    const double arg = 1.0 - frac * frac;
    if (arg <= 0.0) return 0.0;
    return std::cyl_bessel_i(0.0, beta_ * std::sqrt(arg)) / i0_beta_;
}

cplx SincInterpolator::sample(std::span<const cplx> x, double t) const {
    const double floor_t = std::floor(t);
    const long base = static_cast<long>(floor_t);
    const double mu = t - floor_t;
    cplx acc(0.0, 0.0);
    for (int k = -half_taps_ + 1; k <= half_taps_; ++k) {
        const long idx = base + k;
        if (idx < 0 || idx >= static_cast<long>(x.size())) continue;
        const double d = static_cast<double>(k) - mu;  // tap offset from the eval point
        double w;
        if (std::abs(d) < 1e-12) {
            w = 1.0;
        } else {
            w = std::sin(kPi * d) / (kPi * d) * window(d / static_cast<double>(half_taps_));
        }
        acc += x[static_cast<std::size_t>(idx)] * w;
    }
    return acc;
}

std::vector<double> SincInterpolator::kernel(double mu) const {
    std::vector<double> taps(static_cast<std::size_t>(2 * half_taps_));
    for (int k = -half_taps_ + 1; k <= half_taps_; ++k) {
        const double d = static_cast<double>(k) - mu;
        double w;
        if (std::abs(d) < 1e-12) {
            w = 1.0;
        } else {
            w = std::sin(kPi * d) / (kPi * d) * window(d / static_cast<double>(half_taps_));
        }
        taps[static_cast<std::size_t>(k + half_taps_ - 1)] = w;
    }
    return taps;
}

std::vector<cplx> resample_by_ratio(const std::vector<cplx>& x, double ratio,
                                    const SincInterpolator& interp) {
    std::vector<cplx> out(x.size());
    const std::span<const cplx> in(x);
    for (std::size_t n = 0; n < x.size(); ++n) {
        out[n] = interp.sample(in, static_cast<double>(n) * ratio);
    }
    return out;
}

cplx qpsk_map(int b0, int b1) {
    const double s = std::sqrt(0.5);
    return {b0 ? -s : s, b1 ? -s : s};
}

void qpsk_hard_decision(cplx symbol, int& b0, int& b1) {
    b0 = symbol.real() < 0.0 ? 1 : 0;
    b1 = symbol.imag() < 0.0 ? 1 : 0;
}

}  // namespace aerosim::dsp
