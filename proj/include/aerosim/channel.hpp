#ifndef AEROSIM_CHANNEL_HPP
#define AEROSIM_CHANNEL_HPP

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

#include "aerosim/ofdm.hpp"
#include "aerosim/signal.hpp"

namespace aerosim::chan {

using Vec3 = std::array<double, 3>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

/// Uniform linear arrays at both ends; the ground station feeds n_rf_gs RF
/// chains into n_gs elements, the aircraft carries a small array mounted
/// along its velocity axis.
struct ArrayConfig {
    int n_gs = 32;
    int n_ac = 4;
    double element_spacing = 0.5;  // wavelengths
    int n_rf_gs = 4;

    void validate() const;
};

/// ULA steering vector with unit-modulus entries; `angle` is measured from
/// the array axis, so the inter-element phase is 2*pi*spacing*cos(angle).
CVec steering(int n_elements, double spacing_wl, double angle);

/// Straight-line track: position(t) = start + velocity * t.
struct FlightTrack {
    Vec3 start{0.0, 0.0, 0.0};
    Vec3 velocity{0.0, 0.0, 0.0};  // m/s

    Vec3 position(double t) const;
    double speed() const;
};

struct Path {
    cplx gain;
    double delay = 0.0;    // excess delay versus the LoS path, seconds
    double aod = 0.0;      // radians from the GS array axis
    double aoa = 0.0;      // radians from the aircraft array axis
    double doppler = 0.0;  // Hz
};

/// Path 0 is line-of-sight; scattered paths sit within a beamwidth of it.
struct PathSet {
    std::vector<Path> paths;

    const Path& los() const { return paths.front(); }
    std::size_t size() const { return paths.size(); }
};

/// Geometry feeding path generation: GS at the origin with its array along
/// the x axis; the aircraft array is aligned with the velocity vector.
struct LinkGeometry {
    Vec3 gs_position{0.0, 0.0, 0.0};
    FlightTrack track;
    double carrier_hz = 1.08e9;
    double time = 0.0;  // evaluation instant along the track
};

/// Doppler shift (speed/c) * carrier * cos(angle_to_velocity).
double doppler_of_path(double speed_mps, double carrier_hz, double angle_to_velocity);

/// LoS path from exact geometry plus n_scatter paths with angles uniform in
/// a beamwidth around the LoS angles; scatter gains are drawn circularly
/// symmetric and rescaled so the realized Rician factor is exact.
PathSet generate_paths(const LinkGeometry& geom, const ArrayConfig& arrays, double rician_db,
                       int n_scatter, double beamwidth_rad, double max_excess_delay_s,
                       std::uint64_t seed);

/// Per-subcarrier antenna-domain matrices
///   H[k] = sum_l g_l e^{j2pi f_l t} e^{-j2pi k_signed df tau_l} a_ac a_gs^H.
std::vector<CMat> evaluate(const PathSet& paths, const ArrayConfig& arrays,
                           const ofdm::OfdmParams& params, double t);

/// Time-domain channel action on a transmit stream: per-path fractional
/// delay (windowed-sinc), Doppler as a continuous phase rotation on the
/// global clock, steering across both arrays. tx_weights has n_gs entries.
std::vector<SignalBuffer> apply(const SignalBuffer& buf, const PathSet& paths,
                                const ArrayConfig& arrays, const CVec& tx_weights);

/// LoS Doppler trace along a straight pass; the sign flips at closest
/// approach and the Doppler rate peaks when the projected distance is zero.
struct DopplerTrace {
    std::vector<double> t;
    std::vector<double> f_d;
    std::vector<double> projected_distance;
};
DopplerTrace overhead_pass_doppler(const FlightTrack& track, const Vec3& gs_position,
                                   double carrier_hz, double t_start, double t_end, int n_points);

}  // namespace aerosim::chan

#endif
