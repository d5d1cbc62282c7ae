#ifndef AEROSIM_SIGNAL_HPP
#define AEROSIM_SIGNAL_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace aerosim {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kSpeedOfLight = 299792458.0;

inline double db_from_ratio(double r) { return 10.0 * std::log10(r); }
inline double ratio_from_db(double db) { return std::pow(10.0, db / 10.0); }

/// Complex baseband sample sequence with sample-rate metadata. The common
/// currency between waveform, interference, channel and receiver stages.
struct SignalBuffer {
    std::vector<cplx> samples;
    double sample_rate = 0.0;  // Hz
    double t0 = 0.0;           // start time on the global clock, seconds

    SignalBuffer() = default;
    SignalBuffer(std::vector<cplx> s, double fs, double start = 0.0)
        : samples(std::move(s)), sample_rate(fs), t0(start) {}

    std::size_t size() const { return samples.size(); }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
    double time_of(std::size_t n) const { return t0 + static_cast<double>(n) / sample_rate; }

    double energy() const {
        double e = 0.0;
        for (const cplx& v : samples) e += std::norm(v);
        return e;
    }
    /// Mean |x|^2 over the buffer.
    double power() const { return samples.empty() ? 0.0 : energy() / static_cast<double>(samples.size()); }

    void check_valid(const std::string& who) const {
        if (samples.empty()) throw std::invalid_argument(who + ": empty signal buffer");
        if (!(sample_rate > 0.0)) throw std::invalid_argument(who + ": sample_rate must be positive");
        for (const cplx& v : samples) {
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                throw std::invalid_argument(who + ": non-finite sample");
        }
    }
};

}  // namespace aerosim

#endif
