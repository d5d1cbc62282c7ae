#ifndef AEROSIM_DSP_HPP
#define AEROSIM_DSP_HPP

#include <span>
#include <vector>

#include "aerosim/signal.hpp"

namespace aerosim::dsp {

/// Unitary DFT (1/sqrt(N) scaling), any length.
std::vector<cplx> fft_unitary(const std::vector<cplx>& x);
/// Unitary inverse DFT; ifft_unitary(fft_unitary(x)) == x.
std::vector<cplx> ifft_unitary(const std::vector<cplx>& x);

/// Kaiser-windowed sinc interpolator for band-limited signals.
/// `sample(x, t)` evaluates x at the fractional index t; samples outside the
/// buffer are treated as zero. At integer t the kernel degenerates to a unit
/// impulse, so on-grid reads are exact.
class SincInterpolator {
  public:
    explicit SincInterpolator(int half_taps = 16, double kaiser_beta = 10.0);

    cplx sample(std::span<const cplx> x, double t) const;
    int half_taps() const { return half_taps_; }

    /// Taps for a fixed fractional offset mu in [0, 1): tap k (k = -half+1..half,
    /// stored at index k+half-1) weighs x[floor(t)+k] when t = floor(t)+mu.
    std::vector<double> kernel(double mu) const;

  private:
    double window(double frac_of_half_width) const;
    int half_taps_;
    double beta_;
    double i0_beta_;
};

/// y[n] = x(n * ratio), same length as input, zero-padded at the edges.
/// Used by the time-scale (dilation) bank and testable on its own.
std::vector<cplx> resample_by_ratio(const std::vector<cplx>& x, double ratio,
                                    const SincInterpolator& interp);

/// Gray-mapped QPSK, unit average power: 2 bits -> (+/-1 +/-1j)/sqrt(2).
cplx qpsk_map(int b0, int b1);
void qpsk_hard_decision(cplx symbol, int& b0, int& b1);

}  // namespace aerosim::dsp

#endif
