#ifndef AEROSIM_SCENARIO_HPP
#define AEROSIM_SCENARIO_HPP

#include <cstdint>
#include <vector>

#include "aerosim/channel.hpp"
#include "aerosim/dme.hpp"
#include "aerosim/ofdm.hpp"
#include "aerosim/signal.hpp"

namespace aerosim::sim {

/// One A2G link under test: numerology, frame layout, arrays, geometry,
/// interference environment and operating point.
struct LinkScenario {
    ofdm::OfdmParams ofdm_params{};
    ofdm::FrameLayout layout{};
    chan::ArrayConfig arrays{};
    chan::LinkGeometry geometry{};
    double rician_db = 15.0;
    int n_scatter = 4;
    double beamwidth_rad = 3.5 * kPi / 180.0;
    double max_excess_delay_s = 5e-6;

    dme::DmeParams dme_base{};       // per-channel parameters; two channels at +/- offset
    bool dme_enabled = true;
    double sir_db = -3.8;
    double dme_aoa_rad = 2.2;        // arrival angle of the interference at the aircraft array
    double snr_db = 15.0;

    static LinkScenario standard();
};

/// A transmit frame cut into sections, each launched through its own GS beam.
struct TxSection {
    int offset = 0;               // sample offset within the frame
    int length = 0;
    chan::CVec beam;              // n_gs
};

struct TxFrame {
    SignalBuffer concatenated;    // sum of all sections in one buffer (unbeamed stream)
    std::vector<TxSection> sections;
};

/// Everything the receiver-side algorithms get to see for one frame, plus the
/// ground truth the tests compare against.
struct FrameRealization {
    chan::PathSet paths;
    std::vector<chan::CMat> h_truth;     // LoS-derotated channel at the pilot-section midpoint
    std::vector<chan::CVec> pilot_beams; // one per pilot symbol
    chan::CVec short_beam;               // beam during the short section
    chan::CVec data_beam;                // beam during the data section
    std::vector<SignalBuffer> rx;        // per aircraft antenna, DME + noise included
    std::vector<SignalBuffer> rx_clean;  // per antenna, before impairments
    SignalBuffer dme_waveform;           // calibrated common DME stream (empty if disabled)
    chan::CVec dme_signature;            // spatial signature at the aircraft
    double noise_var = 0.0;
    double cfo_true = 0.0;               // LoS Doppler, Hz
    std::vector<std::vector<cplx>> pilot_values;  // what modulate_frame was fed
    std::vector<std::vector<cplx>> data_values;
};

/// Realize a full estimation frame: short section + sounding pilots (each
/// pilot symbol through a fresh random unit-norm beam) + data section.
/// forced_paths overrides the geometry-derived path set (e.g. a drifted
/// continuation of an earlier draw); frame_start_time places the frame on the
/// global clock.
FrameRealization realize_estimation_frame(const LinkScenario& scn, std::uint64_t seed,
                                          const chan::PathSet* forced_paths = nullptr,
                                          double frame_start_time = 0.0);

/// Realize a frame where every section goes through one fixed transmit beam
/// (data transmission with a settled beam pair). payload_bits are QPSK-mapped
/// onto the data positions; bits.size() must be 2 * n_data_positions * n_data_syms.
FrameRealization realize_beamformed_frame(const LinkScenario& scn, const chan::CVec& tx_beam,
                                          const std::vector<int>& payload_bits,
                                          const chan::PathSet& paths, double frame_start_time,
                                          std::uint64_t seed);

/// Corridor-level covariance prior of vec(H_k): the ensemble randomizes the
/// LoS direction inside an angle sector plus the scatter law, pooled over
/// subcarriers. Used by the LMMSE baseline.
Eigen::MatrixXcd channel_prior_covariance(const LinkScenario& scn, int n_realizations,
                                          std::uint64_t seed,
                                          double angle_spread_rad = 0.35);

}  // namespace aerosim::sim

#endif
