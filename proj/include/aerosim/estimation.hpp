#ifndef AEROSIM_ESTIMATION_HPP
#define AEROSIM_ESTIMATION_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "aerosim/channel.hpp"
#include "aerosim/ofdm.hpp"
#include "aerosim/scenario.hpp"
#include "aerosim/signal.hpp"

namespace aerosim::est {

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

// ---------------------------------------------------------------------------
// frequency offset
// ---------------------------------------------------------------------------

struct CfoEstimate {
    double f_hat = 0.0;       // Hz
    double confidence = 0.0;  // normalized correlation magnitude in [0,1]
    bool low_confidence = false;
};

/// Unambiguous one-sided range of the short-section estimator: fs / (2 * short_fft).
double cfo_acquisition_range(const ofdm::OfdmParams& p, const ofdm::FrameLayout& f);

/// Correlation of adjacent short training blocks, summed coherently over the
/// given antenna buffers. The short section must start at frame_offset.
CfoEstimate estimate_cfo(const std::vector<SignalBuffer>& rx, const ofdm::OfdmParams& p,
                         const ofdm::FrameLayout& f, int frame_offset = 0,
                         double confidence_threshold = 0.2);

/// Multiply by exp(-j 2 pi f_hat t) with t on the buffer's global clock.
SignalBuffer compensate_cfo(const SignalBuffer& buf, double f_hat);

// ---------------------------------------------------------------------------
// DME reconstruction from null subcarriers
// ---------------------------------------------------------------------------

struct DmeReconstruction {
    std::vector<cplx> estimate;  // time-domain, one value per DFT-window sample
    double residual_rel = 0.0;   // ||y - F d||^2 / ||y||^2 on the null observations
    bool reliable = true;
};

/// Orthogonal matching pursuit over time-sample atoms:
///   y_null = F_null d, d sparse in time.
/// null_signed_idx are signed subcarrier indices of the observations relative
/// to an fft of size fft_size (unitary scaling).
DmeReconstruction reconstruct_dme(const std::vector<cplx>& null_obs,
                                  const std::vector<int>& null_signed_idx, int fft_size,
                                  int sparsity_budget, double residual_threshold = 0.5);

/// Time-domain subtraction of a reconstructed interference estimate.
std::vector<cplx> excise(const std::vector<cplx>& rx_window, const std::vector<cplx>& dme_estimate);

// ---------------------------------------------------------------------------
// angular-domain sparse channel estimation
// ---------------------------------------------------------------------------

/// Steering dictionaries on both sides; atoms are outer products
/// ac_atoms.col(i) * gs_atoms.col(j)^H, flattened as id = i * G_gs + j.
struct AngularDictionary {
    CMat gs_atoms;  // n_gs x G_gs
    CMat ac_atoms;  // n_ac x G_ac

    int n_atoms() const { return static_cast<int>(gs_atoms.cols() * ac_atoms.cols()); }
    int gs_of(int id) const { return id % static_cast<int>(gs_atoms.cols()); }
    int ac_of(int id) const { return id / static_cast<int>(gs_atoms.cols()); }
    CMat atom(int id) const { return ac_atoms.col(ac_of(id)) * gs_atoms.col(gs_of(id)).adjoint(); }
};

/// Oversampled DFT grids in the direction-cosine domain.
AngularDictionary build_dictionary(const chan::ArrayConfig& arrays, int oversample_gs = 2,
                                   int oversample_ac = 2);

/// Sensing matrix for sounding beams: row (p, a) of the measurement stacks
/// pilot symbol p and aircraft antenna a; column `id` holds
/// ac_atom(a, i) * (gs_atom_j^H beam_p).
CMat sensing_matrix(const AngularDictionary& dict, const std::vector<chan::CVec>& beams);

struct AngularChannelEstimate {
    std::vector<int> support;   // atom ids, shared across subcarriers
    CMat coefficients;          // support.size() x n_subcarriers
    std::vector<CMat> h_hat;    // reconstruction per subcarrier
    double residual_rel = 0.0;
    bool regularized = false;   // least-squares fell back to ridge
};

/// Joint-sparse recovery (simultaneous OMP): one support for all subcarriers,
/// per-subcarrier least-squares coefficients on that support.
AngularChannelEstimate estimate_channel_gmmv(const CMat& observations,  // n_meas x n_subcarriers
                                             const CMat& sensing,       // n_meas x n_atoms
                                             const AngularDictionary& dict, int max_support,
                                             double stop_tol);

/// Classical LMMSE on vec(H_k) given the prior covariance of the channel
/// ensemble; interference beyond `noise_var` is whatever the caller folds in.
std::vector<CMat> estimate_channel_lmmse(const CMat& observations,
                                         const std::vector<chan::CVec>& beams,
                                         const CMat& prior_cov, double noise_var, int n_ac,
                                         int n_gs);

/// 10*log10(sum ||est-truth||^2 / sum ||truth||^2); -300 dB when exact.
double nmse_db(const std::vector<CMat>& est, const std::vector<CMat>& truth);
double nmse_db(const CVec& est, const CVec& truth);

// ---------------------------------------------------------------------------
// flight-plan assisted tracking
// ---------------------------------------------------------------------------

/// Linear-Gaussian filter over (angle, angular rate). Measurements may be
/// missing (predict-only step).
class AngleKalman {
  public:
    AngleKalman(double angle0, double rate0, double p0, double process_noise,
                double measurement_noise);

    void predict(double dt);
    void update(double measured_angle);
    double angle() const { return x_(0); }
    double rate() const { return x_(1); }
    double angle_variance() const { return p_(0, 0); }

  private:
    Eigen::Vector2d x_;
    Eigen::Matrix2d p_;
    double q_;
    double r_;
};

struct AnglePrediction {
    double angle = 0.0;
    double rate = 0.0;
    double variance = 0.0;
};

/// Run the filter over a history of angle estimates (NaN = gap), seeded from
/// the planned track, and return the one-step-ahead prediction.
AnglePrediction predict_spatial_csi(double planned_angle0, double planned_rate, double dt,
                                    const std::vector<double>& measurements, double process_noise,
                                    double measurement_noise);

struct LowDimEstimate {
    std::vector<int> tap_delays;  // delay-domain taps, in samples
    CVec tap_coeffs;
    CVec h_hat;                   // effective scalar channel on every used subcarrier
};

/// Track the combined (post-beamforming) scalar channel from the comb pilots
/// of the data section; delay-domain matching pursuit extends the comb
/// estimate to all used subcarriers.
LowDimEstimate track_low_dim(const SignalBuffer& rx_combined, const ofdm::OfdmParams& p,
                             const ofdm::FrameLayout& f, int frame_offset, int max_taps);

enum class TrackingVerdict { Clean, Corrupted };

struct HighDimTrackResult {
    AngularChannelEstimate estimate;
    TrackingVerdict verdict = TrackingVerdict::Clean;
    double consistency_nmse_db = 0.0;
    bool window_fallback = false;  // empty prediction window, searched everything
};

/// Restricted-dictionary recovery inside the predicted angular window, then a
/// cross-check of w_ac^H H_hat w_gs against the low-dimensional track.
HighDimTrackResult track_high_dim(const CMat& observations, const std::vector<chan::CVec>& beams,
                                  const AngularDictionary& dict,
                                  const std::vector<int>& gs_window,
                                  const std::vector<int>& ac_window, int max_support,
                                  double stop_tol, const chan::CVec& w_gs, const chan::CVec& w_ac,
                                  const CVec& low_dim_h, double corruption_threshold_db = -18.0);

// ---------------------------------------------------------------------------
// the full receive pipeline on a realized frame
// ---------------------------------------------------------------------------

struct PipelineOptions {
    bool excise_dme = true;
    int omp_budget_long = 9;
    int omp_budget_short = 3;
    int dict_oversample_gs = 2;
    int dict_oversample_ac = 2;
    int max_support = 12;
    double stop_tol = 5e-3;
    /// After the null-only round, cancel the estimated signal, detect the
    /// interference on the full-band residual and re-estimate.
    int refine_rounds = 2;
    bool run_lmmse = true;
    const CMat* lmmse_prior = nullptr;  // borrowed; required when run_lmmse
};

struct PipelineResult {
    CfoEstimate cfo;
    AngularChannelEstimate gmmv;
    std::vector<CMat> h_gmmv;
    std::vector<CMat> h_lmmse;
    double nmse_gmmv_db = 0.0;
    double nmse_lmmse_db = 0.0;
    /// per-antenna reconstructed DME on each pilot symbol's DFT window,
    /// snapshots for interference covariance estimation
    std::vector<CVec> dme_snapshots;
    /// estimated per-bin noise floor (from the quiet null subcarriers)
    double noise_floor = 0.0;
};

/// Step one: excise DME on the short section, estimate the frequency offset.
/// Step two: derotate, excise DME per pilot symbol from the null subcarriers,
/// then joint-sparse recovery (and the LMMSE baseline on the raw pilots).
PipelineResult run_estimation_pipeline(const sim::LinkScenario& scn,
                                       const sim::FrameRealization& frame,
                                       const PipelineOptions& opt);

}  // namespace aerosim::est

#endif
