#ifndef AEROSIM_DME_HPP
#define AEROSIM_DME_HPP

#include <cstdint>
#include <vector>

#include "aerosim/signal.hpp"

namespace aerosim::dme {

enum class Mode { X, Y };

/// One interfering DME channel: Gaussian pulse pairs arriving as a Poisson
/// stream, mixed to the channel offset relative to the receiver band center.
struct DmeParams {
    Mode mode = Mode::X;
    double pair_spacing = 12e-6;         // s; 12 us (X) or 30 us (Y)
    double pulse_half_amp_width = 3.5e-6;  // s, Gaussian half-amplitude width
    double arrival_rate = 1800.0;          // pulse pairs per second, per channel
    double channel_offset = 0.5e6;         // Hz relative to band center

    static DmeParams for_mode(Mode m, double offset_hz);
    void validate() const;
    double gaussian_sigma() const;  // envelope sigma in seconds
};

struct DmeRealization {
    std::vector<double> arrival_times;  // strictly increasing, seconds
    SignalBuffer buffer;                // at the link sample rate
    double achieved_sir_db = 0.0;
};

/// Homogeneous Poisson arrivals over [0, duration).
std::vector<double> sample_arrivals(double rate, double duration, std::uint64_t seed);

/// Deterministic synthesis of pulse-pair waveforms at `sample_rate`, one
/// Gaussian envelope pair per arrival, carrier at channel_offset referenced to
/// the global clock. A complex sampler folds offsets beyond Nyquist into the
/// band, which is exactly how an unfiltered front end captures an
/// adjacent-channel DME transmitter; callers wanting alias-free synthesis
/// must pick a covering sample_rate.
SignalBuffer synthesize(const DmeParams& params, const std::vector<double>& arrivals,
                        double duration, double sample_rate);

/// Scale dme so that 10*log10(P_signal / P_dme_scaled) equals target_sir_db,
/// powers measured as mean |sample|^2 over each full buffer.
struct CalibratedDme {
    SignalBuffer buffer;
    double scale = 1.0;  // amplitude factor applied
};
CalibratedDme calibrate_sir(const SignalBuffer& dme, const SignalBuffer& signal,
                            double target_sir_db);

/// Sum of the standard two-channel neighborhood (+/- offset) at the link
/// rate, calibrated against nothing; arrival streams drawn per channel.
SignalBuffer realize_two_channel(const DmeParams& base, double duration, double sample_rate,
                                 std::uint64_t seed, std::vector<double>* arrivals_out = nullptr);

}  // namespace aerosim::dme

#endif
