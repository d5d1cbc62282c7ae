#include "aerosim/dme.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aerosim/rng.hpp"

namespace aerosim::dme {

DmeParams DmeParams::for_mode(Mode m, double offset_hz) {
    DmeParams p;
    p.mode = m;
    p.pair_spacing = (m == Mode::X) ? 12e-6 : 30e-6;
    p.channel_offset = offset_hz;
    return p;
}

void DmeParams::validate() const {
    const double expected = (mode == Mode::X) ? 12e-6 : 30e-6;
    if (pair_spacing != expected)
        throw std::invalid_argument("dme: pair_spacing must match mode (12 us X, 30 us Y)");
    if (!(pulse_half_amp_width > 0.0))
        throw std::invalid_argument("dme: pulse width must be positive");
    if (arrival_rate < 0.0) throw std::invalid_argument("dme: arrival_rate must be >= 0");
}

double DmeParams::gaussian_sigma() const {
    // exp(-(w/2)^2 / (2 sigma^2)) = 1/2  =>  sigma = w / (2 sqrt(2 ln 2))
    return pulse_half_amp_width / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

std::vector<double> sample_arrivals(double rate, double duration, std::uint64_t seed) {
    if (!(duration > 0.0)) throw std::invalid_argument("sample_arrivals: duration must be > 0");
    std::vector<double> times;
    if (rate <= 0.0) return times;
    Rng rng(seed);
    double t = rng.exponential(rate);
    while (t < duration) {
        times.push_back(t);
        t += rng.exponential(rate);
    }
    return times;
}

SignalBuffer synthesize(const DmeParams& params, const std::vector<double>& arrivals,
                        double duration, double sample_rate) {
    params.validate();
    if (duration < 0.0) throw std::invalid_argument("synthesize: negative duration");
    const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
    std::vector<cplx> samples(n, cplx(0.0, 0.0));

    const double sigma = params.gaussian_sigma();
    const double cut = 5.0 * sigma;  // envelope below 3e-6 of peak outside
    for (double ta : arrivals) {
        for (int half = 0; half < 2; ++half) {
            const double center = ta + half * params.pair_spacing;
            const auto lo = static_cast<long>(std::floor((center - cut) * sample_rate));
            const auto hi = static_cast<long>(std::ceil((center + cut) * sample_rate));
            for (long i = std::max(0L, lo); i <= hi && i < static_cast<long>(n); ++i) {
                const double t = static_cast<double>(i) / sample_rate;
                const double d = t - center;
                samples[static_cast<std::size_t>(i)] +=
                    std::exp(-d * d / (2.0 * sigma * sigma));
            }
        }
    }
    // continuous carrier at the channel offset, phase tied to the global clock
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        const double phase = kTwoPi * params.channel_offset * t;
        samples[i] *= cplx(std::cos(phase), std::sin(phase));
    }
    return SignalBuffer(std::move(samples), sample_rate, 0.0);
}

CalibratedDme calibrate_sir(const SignalBuffer& dme, const SignalBuffer& signal,
                            double target_sir_db) {
    const double p_sig = signal.power();
    const double p_dme = dme.power();
    if (!(p_sig > 0.0) || !(p_dme > 0.0))
        throw std::invalid_argument("calibrate_sir: zero-power input");
    const double wanted_p_dme = p_sig / ratio_from_db(target_sir_db);
    const double scale = std::sqrt(wanted_p_dme / p_dme);
    CalibratedDme out;
    out.buffer = dme;
    for (cplx& v : out.buffer.samples) v *= scale;
    out.scale = scale;
    return out;
}

SignalBuffer realize_two_channel(const DmeParams& base, double duration, double sample_rate,
                                 std::uint64_t seed, std::vector<double>* arrivals_out) {
    DmeParams up = base;
    up.channel_offset = std::abs(base.channel_offset);
    DmeParams down = base;
    down.channel_offset = -std::abs(base.channel_offset);

    const std::vector<double> a0 = sample_arrivals(base.arrival_rate, duration, derive_seed(seed, 0));
    const std::vector<double> a1 = sample_arrivals(base.arrival_rate, duration, derive_seed(seed, 1));
    SignalBuffer s = synthesize(up, a0, duration, sample_rate);
    const SignalBuffer s2 = synthesize(down, a1, duration, sample_rate);
    for (std::size_t i = 0; i < s.samples.size(); ++i) s.samples[i] += s2.samples[i];
    if (arrivals_out) {
        *arrivals_out = a0;
        arrivals_out->insert(arrivals_out->end(), a1.begin(), a1.end());
        std::sort(arrivals_out->begin(), arrivals_out->end());
    }
    return s;
}

}  // namespace aerosim::dme
