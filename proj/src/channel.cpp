#include "aerosim/channel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aerosim/dsp.hpp"
#include "aerosim/rng.hpp"

namespace aerosim::chan {

namespace {
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
}  // namespace

void ArrayConfig::validate() const {
    if (n_gs < 1 || n_ac < 1) throw std::invalid_argument("arrays: antenna counts must be >= 1");
    if (n_rf_gs < 1 || n_rf_gs > n_gs)
        throw std::invalid_argument("arrays: n_rf_gs must be in [1, n_gs]");
    if (!(element_spacing > 0.0)) throw std::invalid_argument("arrays: spacing must be positive");
}

CVec steering(int n_elements, double spacing_wl, double angle) {
    CVec a(n_elements);
    const double step = kTwoPi * spacing_wl * std::cos(angle);
    for (int i = 0; i < n_elements; ++i)
        a(i) = cplx(std::cos(step * i), std::sin(step * i));
    return a;
}

Vec3 FlightTrack::position(double t) const {
    return {start[0] + velocity[0] * t, start[1] + velocity[1] * t, start[2] + velocity[2] * t};
}

double FlightTrack::speed() const { return norm(velocity); }

double doppler_of_path(double speed_mps, double carrier_hz, double angle_to_velocity) {
    if (speed_mps < 0.0) throw std::invalid_argument("doppler_of_path: negative speed");
    return speed_mps / kSpeedOfLight * carrier_hz * std::cos(angle_to_velocity);
}

PathSet generate_paths(const LinkGeometry& geom, const ArrayConfig& arrays, double rician_db,
                       int n_scatter, double beamwidth_rad, double max_excess_delay_s,
                       std::uint64_t seed) {
    arrays.validate();
    if (n_scatter < 0) throw std::invalid_argument("generate_paths: n_scatter must be >= 0");

    const Vec3 ac_pos = geom.track.position(geom.time);
    const Vec3 los = sub(ac_pos, geom.gs_position);  // propagation direction GS -> aircraft
    const double range = norm(los);
    if (!(range > 0.0)) throw std::invalid_argument("generate_paths: aircraft at GS position");
    const double speed = geom.track.speed();

    // AoD against the GS array axis (x); AoA against the aircraft array axis,
    // which is the velocity direction, measured for the incoming ray.
    const double aod_los = std::acos(std::clamp(los[0] / range, -1.0, 1.0));
    double aoa_los = kPi / 2.0;
    if (speed > 0.0) {
        const double c = -dot(los, geom.track.velocity) / (range * speed);
        aoa_los = std::acos(std::clamp(c, -1.0, 1.0));
    }

    PathSet set;
    Path p0;
    p0.delay = 0.0;  // frame timing is aligned to the LoS arrival
    p0.aod = aod_los;
    p0.aoa = aoa_los;
    p0.doppler = doppler_of_path(speed, geom.carrier_hz, aoa_los);
    // deterministic LoS phase from the absolute propagation length
    const double los_phase = -kTwoPi * geom.carrier_hz * range / kSpeedOfLight;
    p0.gain = cplx(std::cos(los_phase), std::sin(los_phase));
    set.paths.push_back(p0);

    if (n_scatter == 0) return set;

    Rng rng(seed);
    std::vector<cplx> raw(static_cast<std::size_t>(n_scatter));
    double scatter_energy = 0.0;
    for (auto& g : raw) {
        g = rng.cnormal();
        scatter_energy += std::norm(g);
    }
    // realized Rician factor |g0|^2 / sum |g_l|^2 is exact
    const double target = std::norm(p0.gain) / ratio_from_db(rician_db);
    const double scale = std::sqrt(target / scatter_energy);

    for (int l = 0; l < n_scatter; ++l) {
        Path p;
        p.gain = raw[static_cast<std::size_t>(l)] * scale;
        p.delay = rng.uniform(0.0, max_excess_delay_s);
        p.aod = aod_los + rng.uniform(-beamwidth_rad / 2.0, beamwidth_rad / 2.0);
        p.aoa = aoa_los + rng.uniform(-beamwidth_rad / 2.0, beamwidth_rad / 2.0);
        p.doppler = doppler_of_path(speed, geom.carrier_hz, p.aoa);
        set.paths.push_back(p);
    }
    return set;
}

std::vector<CMat> evaluate(const PathSet& paths, const ArrayConfig& arrays,
                           const ofdm::OfdmParams& params, double t) {
    const std::vector<int> ks = params.used_signed_indices();
    std::vector<CMat> out(ks.size(), CMat::Zero(arrays.n_ac, arrays.n_gs));

    for (const Path& p : paths.paths) {
        const CVec a_ac = steering(arrays.n_ac, arrays.element_spacing, p.aoa);
        const CVec a_gs = steering(arrays.n_gs, arrays.element_spacing, p.aod);
        const double dopp_phase = kTwoPi * p.doppler * t;
        const cplx g = p.gain * cplx(std::cos(dopp_phase), std::sin(dopp_phase));
        const CMat outer = a_ac * a_gs.adjoint();
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            const double ph = -kTwoPi * ks[ki] * params.subcarrier_spacing * p.delay;
            out[ki] += g * cplx(std::cos(ph), std::sin(ph)) * outer;
        }
    }
    return out;
}

std::vector<SignalBuffer> apply(const SignalBuffer& buf, const PathSet& paths,
                                const ArrayConfig& arrays, const CVec& tx_weights) {
    if (tx_weights.size() != arrays.n_gs)
        throw std::invalid_argument("channel apply: tx weight length mismatch");
    const std::size_t n = buf.samples.size();
    const double fs = buf.sample_rate;
    static const dsp::SincInterpolator interp;

    std::vector<SignalBuffer> out(static_cast<std::size_t>(arrays.n_ac),
                                  SignalBuffer(std::vector<cplx>(n, cplx(0, 0)), fs, buf.t0));

    for (const Path& p : paths.paths) {
        const CVec a_ac = steering(arrays.n_ac, arrays.element_spacing, p.aoa);
        const CVec a_gs = steering(arrays.n_gs, arrays.element_spacing, p.aod);
        const cplx launch = (a_gs.adjoint() * tx_weights)(0);
        const double delay_samples = p.delay * fs;

        // delayed copy once per path, then fan out over receive antennas
        std::vector<cplx> delayed(n);
        const bool integer_delay =
            std::abs(delay_samples - std::round(delay_samples)) < 1e-12;
        if (integer_delay) {
            const long d = std::lround(delay_samples);
            for (std::size_t i = 0; i < n; ++i) {
                const long src = static_cast<long>(i) - d;
                delayed[i] = (src >= 0 && src < static_cast<long>(n))
                                 ? buf.samples[static_cast<std::size_t>(src)]
                                 : cplx(0, 0);
            }
        } else {
            // the fractional part is fixed for the whole path: precompute taps
            const double t0f = -delay_samples;
            const long base0 = static_cast<long>(std::floor(t0f));
            const auto taps = interp.kernel(t0f - std::floor(t0f));
            const int half = interp.half_taps();
            for (std::size_t i = 0; i < n; ++i) {
                cplx acc(0.0, 0.0);
                const long base = static_cast<long>(i) + base0;
                for (int k = -half + 1; k <= half; ++k) {
                    const long src = base + k;
                    if (src < 0 || src >= static_cast<long>(n)) continue;
                    acc += buf.samples[static_cast<std::size_t>(src)] *
                           taps[static_cast<std::size_t>(k + half - 1)];
                }
                delayed[i] = acc;
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            const double t = buf.t0 + static_cast<double>(i) / fs;
            const double ph = kTwoPi * p.doppler * t;
            const cplx rot(std::cos(ph), std::sin(ph));
            const cplx v = p.gain * launch * rot * delayed[i];
            for (int a = 0; a < arrays.n_ac; ++a)
                out[static_cast<std::size_t>(a)].samples[i] += a_ac(a) * v;
        }
    }
    return out;
}

DopplerTrace overhead_pass_doppler(const FlightTrack& track, const Vec3& gs_position,
                                   double carrier_hz, double t_start, double t_end, int n_points) {
    if (n_points < 2) throw std::invalid_argument("overhead_pass_doppler: need >= 2 points");
    DopplerTrace trace;
    trace.t.reserve(static_cast<std::size_t>(n_points));
    const double speed = track.speed();
    for (int i = 0; i < n_points; ++i) {
        const double t = t_start + (t_end - t_start) * i / (n_points - 1);
        const Vec3 ac = track.position(t);
        const Vec3 los = sub(ac, gs_position);
        const double range = norm(los);
        // angle between velocity and the incoming ray direction (aircraft -> GS)
        double cosang = 0.0;
        if (speed > 0.0 && range > 0.0) cosang = -dot(los, track.velocity) / (range * speed);
        trace.t.push_back(t);
        trace.f_d.push_back(speed / kSpeedOfLight * carrier_hz * cosang);
        // distance projected onto the track direction
        double proj = 0.0;
        if (speed > 0.0)
            proj = dot(los, track.velocity) / speed;
        trace.projected_distance.push_back(proj);
    }
    return trace;
}

}  // namespace aerosim::chan
