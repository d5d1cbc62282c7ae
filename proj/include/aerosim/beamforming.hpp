#ifndef AEROSIM_BEAMFORMING_HPP
#define AEROSIM_BEAMFORMING_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "aerosim/channel.hpp"
#include "aerosim/scenario.hpp"

namespace aerosim::beams {

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

/// Hybrid transceiver state: GS analog network (unit-modulus entries), GS
/// digital weights (carrying the transmit power), aircraft combiner
/// (unit norm).
struct BeamformerSet {
    CMat analog;    // n_gs x n_rf
    CVec digital;   // n_rf
    CVec combiner;  // n_ac

    CVec tx_beam() const { return analog * digital; }
    void check_constant_modulus(double tol = 1e-12) const;
};

/// Aircraft-side interference-plus-noise covariance.
struct DmeCovariance {
    CMat r;       // n_ac x n_ac, Hermitian PSD
    int age = 0;  // frames since last refresh

    void check_valid(double tol = 1e-10) const;
};

/// Sample covariance of reconstructed interference snapshots plus the noise
/// floor on the diagonal.
DmeCovariance covariance_init(const std::vector<CVec>& snapshots, double noise_var, int n_ac);

/// Decision-feedback update: remodulate the decoded symbols through the
/// estimated per-antenna response, take the covariance of what is left and
/// blend it in. Erased observations (failed decisions) are skipped; an
/// all-erased frame leaves the covariance untouched and ages it.
///   rx_fd:    n_ac x n_obs received frequency-domain samples
///   decoded:  n_obs hard decisions
///   h_eff:    n_ac x n_obs per-antenna response for each observation
DmeCovariance covariance_feedback_update(const DmeCovariance& prev, const CMat& rx_fd,
                                         const CVec& decoded, const CMat& h_eff,
                                         const std::vector<bool>& erased, double forgetting);

/// w = R^-1 h / (h^H R^-1 h), with diagonal loading 1e-6 tr(R)/n on the
/// inversion.
CVec combiner_mvdr(const CVec& h_eff, const CMat& r);

/// Post-combining SINR of a beam set over the subcarrier channel list:
/// mean_k |w^H H_k f|^2 / (w^H R w), in dB. R includes the noise.
double sinr_db(const BeamformerSet& beams, const std::vector<CMat>& h, const CMat& r);

struct AoOptions {
    double power_budget = 1.0;
    int max_outer = 25;
    double tol = 1e-4;  // relative SINR gain per outer cycle
};

struct AoResult {
    BeamformerSet beams;
    std::vector<double> sinr_trace_db;  // one entry per outer cycle
    bool loaded = false;                // covariance needed loading to invert
};

/// Alternating optimization over the three blocks: GS digital weights
/// (generalized eigenproblem), GS analog phases (per-entry closed-form ratio
/// maximization, modulus projected to one), aircraft combiner (MVDR-type
/// generalized eigenvector). Monotone in the SINR objective by construction.
AoResult optimize_ao(const std::vector<CMat>& h, const CMat& r, const AoOptions& opt,
                     const BeamformerSet* warm_start = nullptr);

/// Projected gradient tracking warm-started at prev: Wirtinger ascent on the
/// SINR with per-iteration projection (unit modulus analog, power-scaled
/// digital); the step is halved whenever it would lower the SINR.
BeamformerSet beam_track_pgd(const BeamformerSet& prev, const std::vector<CMat>& h, const CMat& r,
                             double power_budget, double step_size, int n_iters);

/// Spatially sparse hybrid beamforming baseline: greedy steering-atom
/// selection against the unconstrained optimum with digital least squares on
/// top, matched (interference-agnostic) aircraft combining.
BeamformerSet ss_hb(const std::vector<CMat>& h, const CMat& gs_dictionary, int n_rf,
                    double power_budget);

// ---------------------------------------------------------------------------
// link-level BER comparison
// ---------------------------------------------------------------------------

enum class Scheme { AlternatingOpt, GradientTracking, SpatiallySparse };

struct BerOptions {
    std::vector<double> snr_grid_db{0, 2, 4, 6, 8, 10, 12};
    long min_bits_per_point = 20000;
    double drift_deg_per_frame = 0.1;  // GS-side angle rotation between frames
    int frames_per_estimation = 4;     // data frames per estimation frame
    bool genie_csi = false;            // perfect channel knowledge, no estimation stage
};

struct BerResult {
    std::vector<double> snr_db;
    std::vector<double> ber_ao;
    std::vector<double> ber_pgd;
    std::vector<double> ber_sshb;
    long bits_per_point = 0;
};

/// Monte-Carlo QPSK error rate through the full chain (channel, interference,
/// estimation, beamforming, combining, equalization) for the three schemes
/// under common randomness.
BerResult simulate_ber(const sim::LinkScenario& scenario, const BerOptions& opt,
                       std::uint64_t seed);

}  // namespace aerosim::beams

#endif
