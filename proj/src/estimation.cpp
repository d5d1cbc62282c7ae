#include "aerosim/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aerosim/dsp.hpp"

namespace aerosim::est {

namespace {

/// Joint detection of the interference time support across antennas (the
/// pulses share one spatial signature, so one support), per-antenna refit.
/// Returns fft_size x n_ac time-domain estimates. stop_energy is the
/// per-antenna residual level considered "down at the noise floor".
CMat joint_reconstruct_dme(const CMat& null_obs, const CMat& f, int budget,
                           double stop_energy) {
    const int q = static_cast<int>(f.rows());
    const int n = static_cast<int>(f.cols());
    const int n_ac = static_cast<int>(null_obs.cols());
    CMat out = CMat::Zero(n, n_ac);
    const double y_energy = null_obs.squaredNorm();
    if (!(y_energy > 0.0)) return out;

    CMat residual = null_obs;
    std::vector<int> support;
    std::vector<bool> picked(static_cast<std::size_t>(n), false);
    CMat coeffs, sub;
    const int max_atoms = std::min(budget, q);
    for (int it = 0; it < max_atoms; ++it) {
        if (residual.squaredNorm() <= stop_energy * n_ac) break;
        const CMat scores = f.adjoint() * residual;  // n x n_ac
        int best = -1;
        double best_val = 0.0;
        for (int j = 0; j < n; ++j) {
            if (picked[static_cast<std::size_t>(j)]) continue;
            const double v = scores.row(j).squaredNorm();
            if (v > best_val) {
                best_val = v;
                best = j;
            }
        }
        if (best < 0 || best_val <= 1e-24 * y_energy) break;
        picked[static_cast<std::size_t>(best)] = true;
        support.push_back(best);

        sub.resize(q, static_cast<int>(support.size()));
        for (std::size_t s = 0; s < support.size(); ++s)
            sub.col(static_cast<int>(s)) = f.col(support[s]);
        coeffs = sub.colPivHouseholderQr().solve(null_obs);  // s x n_ac
        residual = null_obs - sub * coeffs;
    }
    for (std::size_t s = 0; s < support.size(); ++s)
        out.row(support[s]) = coeffs.row(static_cast<int>(s));
    return out;
}

CMat null_dft_rows(const std::vector<int>& null_signed_idx, int fft_size) {
    const int q = static_cast<int>(null_signed_idx.size());
    CMat f(q, fft_size);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fft_size));
    for (int r = 0; r < q; ++r) {
        for (int n = 0; n < fft_size; ++n) {
            const double ph = -kTwoPi * null_signed_idx[static_cast<std::size_t>(r)] * n / fft_size;
            f(r, n) = std::polar(scale, ph);
        }
    }
    return f;
}

}  // namespace

double cfo_acquisition_range(const ofdm::OfdmParams& p, const ofdm::FrameLayout& f) {
    return p.sample_rate / (2.0 * static_cast<double>(f.short_fft(p)));
}

CfoEstimate estimate_cfo(const std::vector<SignalBuffer>& rx, const ofdm::OfdmParams& p,
                         const ofdm::FrameLayout& f, int frame_offset,
                         double confidence_threshold) {
    const int nfft = f.short_fft(p);
    const double t_block = static_cast<double>(nfft) / p.sample_rate;

    // Blocks hit hard by impulsive interference wreck the correlation phases;
    // gate out blocks whose energy towers over the median.
    std::vector<double> block_energy(static_cast<std::size_t>(f.n_short_syms), 0.0);
    for (const SignalBuffer& buf : rx)
        for (int b = 0; b < f.n_short_syms; ++b) {
            const int off = frame_offset + f.short_block_offset(p, b);
            for (int n = 0; n < nfft; ++n)
                block_energy[static_cast<std::size_t>(b)] +=
                    std::norm(buf.samples[static_cast<std::size_t>(off + n)]);
        }
    std::vector<double> sorted_energy = block_energy;
    std::sort(sorted_energy.begin(), sorted_energy.end());
    const double med = sorted_energy[sorted_energy.size() / 2];
    std::vector<bool> block_ok(static_cast<std::size_t>(f.n_short_syms), true);
    int n_ok = 0;
    for (int b = 0; b < f.n_short_syms; ++b) {
        block_ok[static_cast<std::size_t>(b)] = block_energy[static_cast<std::size_t>(b)] <= 3.0 * med;
        n_ok += block_ok[static_cast<std::size_t>(b)] ? 1 : 0;
    }
    if (n_ok < 2) block_ok.assign(static_cast<std::size_t>(f.n_short_syms), true);

    // Block correlations at every lag. Lag 1 fixes the ambiguity
    // (range +/- fs / (2 nfft)); longer lags sharpen the estimate once their
    // phase is unwrapped against the running fit.
    auto lag_corr = [&](int m, double& denom) {
        cplx corr(0.0, 0.0);
        for (const SignalBuffer& buf : rx) {
            for (int b = 0; b + m < f.n_short_syms; ++b) {
                if (!block_ok[static_cast<std::size_t>(b)] ||
                    !block_ok[static_cast<std::size_t>(b + m)])
                    continue;
                const int off = frame_offset + f.short_block_offset(p, b);
                for (int n = 0; n < nfft; ++n) {
                    const cplx a = buf.samples[static_cast<std::size_t>(off + n)];
                    const cplx c = buf.samples[static_cast<std::size_t>(off + m * nfft + n)];
                    corr += std::conj(a) * c;
                    denom += std::abs(a) * std::abs(c);
                }
            }
        }
        return corr;
    };

    CfoEstimate out;
    double denom1 = 0.0;
    const cplx p1 = lag_corr(1, denom1);
    out.confidence = denom1 > 0.0 ? std::abs(p1) / denom1 : 0.0;
    out.low_confidence = out.confidence < confidence_threshold;

    double f_hat = std::arg(p1) / (kTwoPi * t_block);
    double wsum = 1.0 * (f.n_short_syms - 1);
    double wf = f_hat * wsum;
    for (int m = 2; m < f.n_short_syms; ++m) {
        double dn = 0.0;
        const cplx pm = lag_corr(m, dn);
        if (std::abs(pm) <= 0.0) continue;
        const double predicted = kTwoPi * f_hat * m * t_block;
        double phase = std::arg(pm);
        phase += kTwoPi * std::round((predicted - phase) / kTwoPi);
        const double fm = phase / (kTwoPi * m * t_block);
        // longer lags carry quadratically more frequency information
        const double w = static_cast<double>(m) * m * (f.n_short_syms - m);
        wf += w * fm;
        wsum += w;
        f_hat = wf / wsum;
    }
    out.f_hat = f_hat;
    return out;
}

SignalBuffer compensate_cfo(const SignalBuffer& buf, double f_hat) {
    SignalBuffer out = buf;
    for (std::size_t n = 0; n < out.samples.size(); ++n) {
        const double t = buf.t0 + static_cast<double>(n) / buf.sample_rate;
        out.samples[n] *= std::polar(1.0, -kTwoPi * f_hat * t);
    }
    return out;
}

DmeReconstruction reconstruct_dme(const std::vector<cplx>& null_obs,
                                  const std::vector<int>& null_signed_idx, int fft_size,
                                  int sparsity_budget, double residual_threshold) {
    if (null_obs.size() != null_signed_idx.size())
        throw std::invalid_argument("reconstruct_dme: observation/index count mismatch");
    const int q = static_cast<int>(null_obs.size());
    // more atoms than equations cannot be resolved by the least-squares refit
    const int budget = std::min(sparsity_budget, q);

    const CMat f = null_dft_rows(null_signed_idx, fft_size);
    const CVec y = Eigen::Map<const CVec>(null_obs.data(), q);
    const double col_norm2 = static_cast<double>(q) / static_cast<double>(fft_size);

    DmeReconstruction out;
    out.estimate.assign(static_cast<std::size_t>(fft_size), cplx(0, 0));
    const double y_energy = y.squaredNorm();
    if (!(y_energy > 0.0)) {
        out.residual_rel = 0.0;
        return out;
    }

    std::vector<int> support;
    std::vector<bool> picked(static_cast<std::size_t>(fft_size), false);
    CVec residual = y;
    CVec coeffs;
    for (int it = 0; it < budget; ++it) {
        const CVec scores = f.adjoint() * residual;
        int best = -1;
        double best_mag = 0.0;
        for (int n = 0; n < fft_size; ++n) {
            if (picked[static_cast<std::size_t>(n)]) continue;
            const double m = std::norm(scores(n));
            if (m > best_mag) {
                best_mag = m;
                best = n;
            }
        }
        if (best < 0 || best_mag <= 1e-24 * col_norm2 * y_energy) break;
        picked[static_cast<std::size_t>(best)] = true;
        support.push_back(best);

        CMat sub(q, static_cast<int>(support.size()));
        for (std::size_t s = 0; s < support.size(); ++s) sub.col(static_cast<int>(s)) = f.col(support[s]);
        coeffs = sub.colPivHouseholderQr().solve(y);
        residual = y - sub * coeffs;
        if (residual.squaredNorm() / y_energy < 1e-12) break;
    }
    for (std::size_t s = 0; s < support.size(); ++s)
        out.estimate[static_cast<std::size_t>(support[s])] = coeffs(static_cast<int>(s));
    out.residual_rel = residual.squaredNorm() / y_energy;
    out.reliable = out.residual_rel <= residual_threshold;
    return out;
}

std::vector<cplx> excise(const std::vector<cplx>& rx_window,
                         const std::vector<cplx>& dme_estimate) {
    if (rx_window.size() != dme_estimate.size())
        throw std::invalid_argument("excise: window/estimate size mismatch");
    std::vector<cplx> out(rx_window.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rx_window[i] - dme_estimate[i];
    return out;
}

AngularDictionary build_dictionary(const chan::ArrayConfig& arrays, int oversample_gs,
                                   int oversample_ac) {
    AngularDictionary d;
    const int g_gs = arrays.n_gs * oversample_gs;
    const int g_ac = arrays.n_ac * oversample_ac;
    d.gs_atoms.resize(arrays.n_gs, g_gs);
    d.ac_atoms.resize(arrays.n_ac, g_ac);
    for (int m = 0; m < g_gs; ++m) {
        const double u = -1.0 + 2.0 * m / g_gs;
        d.gs_atoms.col(m) = chan::steering(arrays.n_gs, arrays.element_spacing, std::acos(u));
    }
    for (int m = 0; m < g_ac; ++m) {
        const double u = -1.0 + 2.0 * m / g_ac;
        d.ac_atoms.col(m) = chan::steering(arrays.n_ac, arrays.element_spacing, std::acos(u));
    }
    return d;
}

CMat sensing_matrix(const AngularDictionary& dict, const std::vector<chan::CVec>& beams) {
    const int n_pilot = static_cast<int>(beams.size());
    const int n_ac = static_cast<int>(dict.ac_atoms.rows());
    const int g_gs = static_cast<int>(dict.gs_atoms.cols());
    const int g_ac = static_cast<int>(dict.ac_atoms.cols());

    CMat beam_proj(g_gs, n_pilot);  // gs_atom_j^H beam_p
    for (int p = 0; p < n_pilot; ++p) beam_proj.col(p) = dict.gs_atoms.adjoint() * beams[static_cast<std::size_t>(p)];

    CMat phi(n_pilot * n_ac, g_gs * g_ac);
    for (int i = 0; i < g_ac; ++i)
        for (int j = 0; j < g_gs; ++j) {
            const int id = i * g_gs + j;
            for (int p = 0; p < n_pilot; ++p)
                for (int a = 0; a < n_ac; ++a)
                    phi(p * n_ac + a, id) = dict.ac_atoms(a, i) * beam_proj(j, p);
        }
    return phi;
}

namespace {

struct SompResult {
    std::vector<int> support;
    CMat coeffs;
    double residual_rel = 1.0;
    bool regularized = false;
};

SompResult simultaneous_omp(const CMat& y, const CMat& phi, int max_support, double stop_tol) {
    const int n_atoms = static_cast<int>(phi.cols());
    Eigen::VectorXd col_norm2(n_atoms);
    for (int j = 0; j < n_atoms; ++j) col_norm2(j) = std::max(phi.col(j).squaredNorm(), 1e-30);

    SompResult res;
    const double y_energy = y.squaredNorm();
    if (!(y_energy > 0.0)) {
        res.residual_rel = 0.0;
        res.coeffs.resize(0, y.cols());
        return res;
    }

    CMat residual = y;
    std::vector<bool> picked(static_cast<std::size_t>(n_atoms), false);
    CMat sub;
    for (int it = 0; it < max_support; ++it) {
        const CMat scores = phi.adjoint() * residual;  // n_atoms x K
        int best = -1;
        double best_val = 0.0;
        for (int j = 0; j < n_atoms; ++j) {
            if (picked[static_cast<std::size_t>(j)]) continue;
            const double v = scores.row(j).squaredNorm() / col_norm2(j);
            if (v > best_val) {
                best_val = v;
                best = j;
            }
        }
        if (best < 0 || best_val <= 1e-20 * y_energy) break;
        picked[static_cast<std::size_t>(best)] = true;
        res.support.push_back(best);

        sub.resize(phi.rows(), static_cast<int>(res.support.size()));
        for (std::size_t s = 0; s < res.support.size(); ++s)
            sub.col(static_cast<int>(s)) = phi.col(res.support[s]);

        Eigen::ColPivHouseholderQR<CMat> qr(sub);
        if (qr.rank() < static_cast<Eigen::Index>(res.support.size())) {
            // degenerate atom subset: ridge fallback
            const int s = static_cast<int>(res.support.size());
            const CMat gram = sub.adjoint() * sub +
                              1e-8 * sub.squaredNorm() / s * CMat::Identity(s, s);
            res.coeffs = gram.ldlt().solve(sub.adjoint() * y);
            res.regularized = true;
        } else {
            res.coeffs = qr.solve(y);
        }
        residual = y - sub * res.coeffs;
        res.residual_rel = residual.squaredNorm() / y_energy;
        if (res.residual_rel < stop_tol) break;
    }
    return res;
}

}  // namespace

AngularChannelEstimate estimate_channel_gmmv(const CMat& observations, const CMat& sensing,
                                             const AngularDictionary& dict, int max_support,
                                             double stop_tol) {
    if (observations.rows() != sensing.rows())
        throw std::invalid_argument("estimate_channel_gmmv: measurement row mismatch");
    const SompResult somp = simultaneous_omp(observations, sensing, max_support, stop_tol);

    AngularChannelEstimate out;
    out.support = somp.support;
    out.coefficients = somp.coeffs;
    out.residual_rel = somp.residual_rel;
    out.regularized = somp.regularized;

    const int k = static_cast<int>(observations.cols());
    const int n_ac = static_cast<int>(dict.ac_atoms.rows());
    const int n_gs = static_cast<int>(dict.gs_atoms.rows());
    out.h_hat.assign(static_cast<std::size_t>(k), CMat::Zero(n_ac, n_gs));
    for (std::size_t s = 0; s < out.support.size(); ++s) {
        const CMat atom = dict.atom(out.support[s]);
        for (int ki = 0; ki < k; ++ki)
            out.h_hat[static_cast<std::size_t>(ki)] += out.coefficients(static_cast<int>(s), ki) * atom;
    }
    return out;
}

std::vector<CMat> estimate_channel_lmmse(const CMat& observations,
                                         const std::vector<chan::CVec>& beams,
                                         const CMat& prior_cov, double noise_var, int n_ac,
                                         int n_gs) {
    const int n_pilot = static_cast<int>(beams.size());
    const int n_meas = n_pilot * n_ac;
    const int dim = n_ac * n_gs;
    if (observations.rows() != n_meas)
        throw std::invalid_argument("estimate_channel_lmmse: measurement row mismatch");
    if (prior_cov.rows() != dim || prior_cov.cols() != dim)
        throw std::invalid_argument("estimate_channel_lmmse: prior covariance dimension mismatch");

    CMat psi = CMat::Zero(n_meas, dim);
    for (int p = 0; p < n_pilot; ++p)
        for (int a = 0; a < n_ac; ++a)
            for (int j = 0; j < n_gs; ++j)
                psi(p * n_ac + a, a + n_ac * j) = beams[static_cast<std::size_t>(p)](j);

    const CMat innov = psi * prior_cov * psi.adjoint() +
                       noise_var * CMat::Identity(n_meas, n_meas);
    const CMat gain = prior_cov * psi.adjoint() * innov.ldlt().solve(CMat::Identity(n_meas, n_meas));

    const int k = static_cast<int>(observations.cols());
    std::vector<CMat> out(static_cast<std::size_t>(k));
    for (int ki = 0; ki < k; ++ki) {
        const CVec x = gain * observations.col(ki);
        out[static_cast<std::size_t>(ki)] = Eigen::Map<const CMat>(x.data(), n_ac, n_gs);
    }
    return out;
}

double nmse_db(const std::vector<CMat>& est, const std::vector<CMat>& truth) {
    if (est.size() != truth.size()) throw std::invalid_argument("nmse: size mismatch");
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        err += (est[i] - truth[i]).squaredNorm();
        ref += truth[i].squaredNorm();
    }
    if (!(ref > 0.0)) throw std::invalid_argument("nmse: zero-power truth");
    if (err == 0.0) return -300.0;
    return db_from_ratio(err / ref);
}

double nmse_db(const CVec& est, const CVec& truth) {
    const double ref = truth.squaredNorm();
    if (!(ref > 0.0)) throw std::invalid_argument("nmse: zero-power truth");
    const double err = (est - truth).squaredNorm();
    if (err == 0.0) return -300.0;
    return db_from_ratio(err / ref);
}

AngleKalman::AngleKalman(double angle0, double rate0, double p0, double process_noise,
                         double measurement_noise)
    : q_(process_noise), r_(measurement_noise) {
    x_ << angle0, rate0;
    p_ = Eigen::Matrix2d::Identity() * p0;
}

void AngleKalman::predict(double dt) {
    Eigen::Matrix2d f;
    f << 1.0, dt, 0.0, 1.0;
    Eigen::Matrix2d q;
    q << dt * dt * dt / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt;
    x_ = f * x_;
    p_ = f * p_ * f.transpose() + q_ * q;
}

void AngleKalman::update(double measured_angle) {
    const double s = p_(0, 0) + r_;
    const Eigen::Vector2d k = p_.col(0) / s;
    x_ += k * (measured_angle - x_(0));
    p_ -= k * p_.row(0);
}

AnglePrediction predict_spatial_csi(double planned_angle0, double planned_rate, double dt,
                                    const std::vector<double>& measurements, double process_noise,
                                    double measurement_noise) {
    AngleKalman kf(planned_angle0, planned_rate, 1e-2, process_noise, measurement_noise);
    for (double z : measurements) {
        kf.predict(dt);
        if (std::isfinite(z)) kf.update(z);
    }
    kf.predict(dt);
    return {kf.angle(), kf.rate(), kf.angle_variance()};
}

LowDimEstimate track_low_dim(const SignalBuffer& rx_combined, const ofdm::OfdmParams& p,
                             const ofdm::FrameLayout& f, int frame_offset, int max_taps) {
    const std::vector<int> comb = f.comb_pilot_idx;
    if (comb.empty()) throw std::invalid_argument("track_low_dim: layout has no comb pilots");

    // average per-comb-subcarrier channel over the data section
    CVec h_comb = CVec::Zero(static_cast<int>(comb.size()));
    for (int s = 0; s < f.n_data_syms; ++s) {
        const auto fd = ofdm::demodulate_symbol(rx_combined, p,
                                                frame_offset + f.data_sym_offset(p, s));
        for (std::size_t c = 0; c < comb.size(); ++c)
            h_comb(static_cast<int>(c)) +=
                fd[static_cast<std::size_t>(comb[c])] / f.comb_pilot_value(s, static_cast<int>(c));
    }
    h_comb /= static_cast<double>(f.n_data_syms);

    // delay-domain matching pursuit on integer taps within the CP
    const int n_taps = p.cp_len + 1;
    CMat dict(static_cast<int>(comb.size()), n_taps);
    for (std::size_t c = 0; c < comb.size(); ++c) {
        const int ks = p.signed_index(comb[c]);
        for (int m = 0; m < n_taps; ++m)
            dict(static_cast<int>(c), m) = std::polar(1.0, -kTwoPi * ks * m / p.fft_size);
    }

    LowDimEstimate out;
    CVec residual = h_comb;
    std::vector<bool> picked(static_cast<std::size_t>(n_taps), false);
    CVec coeffs;
    const int budget = std::min<int>(max_taps, static_cast<int>(comb.size()));
    for (int it = 0; it < budget; ++it) {
        int best = -1;
        double best_mag = 0.0;
        for (int m = 0; m < n_taps; ++m) {
            if (picked[static_cast<std::size_t>(m)]) continue;
            const double v = std::norm(dict.col(m).dot(residual));
            if (v > best_mag) {
                best_mag = v;
                best = m;
            }
        }
        if (best < 0 || best_mag <= 1e-20 * h_comb.squaredNorm()) break;
        picked[static_cast<std::size_t>(best)] = true;
        out.tap_delays.push_back(best);

        CMat sub(static_cast<int>(comb.size()), static_cast<int>(out.tap_delays.size()));
        for (std::size_t s = 0; s < out.tap_delays.size(); ++s)
            sub.col(static_cast<int>(s)) = dict.col(out.tap_delays[s]);
        coeffs = sub.colPivHouseholderQr().solve(h_comb);
        residual = h_comb - sub * coeffs;
        if (residual.squaredNorm() / h_comb.squaredNorm() < 1e-6) break;
    }
    out.tap_coeffs = coeffs;

    out.h_hat = CVec::Zero(p.used_subcarriers);
    for (int pos = 0; pos < p.used_subcarriers; ++pos) {
        const int ks = p.signed_index(pos);
        cplx v(0, 0);
        for (std::size_t s = 0; s < out.tap_delays.size(); ++s)
            v += out.tap_coeffs(static_cast<int>(s)) *
                 std::polar(1.0, -kTwoPi * ks * out.tap_delays[s] / p.fft_size);
        out.h_hat(pos) = v;
    }
    return out;
}

HighDimTrackResult track_high_dim(const CMat& observations, const std::vector<chan::CVec>& beams,
                                  const AngularDictionary& dict,
                                  const std::vector<int>& gs_window,
                                  const std::vector<int>& ac_window, int max_support,
                                  double stop_tol, const chan::CVec& w_gs, const chan::CVec& w_ac,
                                  const CVec& low_dim_h, double corruption_threshold_db) {
    HighDimTrackResult out;
    const int g_gs = static_cast<int>(dict.gs_atoms.cols());

    std::vector<int> atom_ids;
    if (gs_window.empty() || ac_window.empty()) {
        out.window_fallback = true;
        atom_ids.resize(static_cast<std::size_t>(dict.n_atoms()));
        for (int id = 0; id < dict.n_atoms(); ++id) atom_ids[static_cast<std::size_t>(id)] = id;
    } else {
        for (int i : ac_window)
            for (int j : gs_window) atom_ids.push_back(i * g_gs + j);
    }

    const CMat phi_full = sensing_matrix(dict, beams);
    CMat phi(phi_full.rows(), static_cast<int>(atom_ids.size()));
    for (std::size_t s = 0; s < atom_ids.size(); ++s)
        phi.col(static_cast<int>(s)) = phi_full.col(atom_ids[s]);

    const SompResult somp = simultaneous_omp(observations, phi, max_support, stop_tol);
    out.estimate.support.clear();
    for (int local : somp.support) out.estimate.support.push_back(atom_ids[static_cast<std::size_t>(local)]);
    out.estimate.coefficients = somp.coeffs;
    out.estimate.residual_rel = somp.residual_rel;
    out.estimate.regularized = somp.regularized;

    const int k = static_cast<int>(observations.cols());
    const int n_ac = static_cast<int>(dict.ac_atoms.rows());
    const int n_gs = static_cast<int>(dict.gs_atoms.rows());
    out.estimate.h_hat.assign(static_cast<std::size_t>(k), CMat::Zero(n_ac, n_gs));
    for (std::size_t s = 0; s < out.estimate.support.size(); ++s) {
        const CMat atom = dict.atom(out.estimate.support[s]);
        for (int ki = 0; ki < k; ++ki)
            out.estimate.h_hat[static_cast<std::size_t>(ki)] +=
                out.estimate.coefficients(static_cast<int>(s), ki) * atom;
    }

    CVec projected(k);
    for (int ki = 0; ki < k; ++ki)
        projected(ki) = (w_ac.adjoint() * out.estimate.h_hat[static_cast<std::size_t>(ki)] * w_gs)(0);
    // align the best common complex factor first: corruption shows up as a
    // shape mismatch across subcarriers, not as a bulk gain
    const cplx align_num = projected.dot(low_dim_h);
    const double align_den = projected.squaredNorm();
    const CVec aligned = align_den > 0.0 ? (projected * (align_num / align_den)).eval() : projected;
    out.consistency_nmse_db = nmse_db(aligned, low_dim_h);
    out.verdict = out.consistency_nmse_db > corruption_threshold_db ? TrackingVerdict::Corrupted
                                                                    : TrackingVerdict::Clean;
    return out;
}

namespace {

/// Null-subcarrier noise floor (per bin): a low percentile of per-symbol null
/// powers is robust against the bursty interference occupying most symbols.
double null_noise_floor(const std::vector<SignalBuffer>& rx, const ofdm::OfdmParams& p,
                        const ofdm::FrameLayout& f) {
    std::vector<double> per_symbol;
    for (int s = 0; s < f.n_long_syms(); ++s) {
        double pw = 0.0;
        long cnt = 0;
        for (const auto& buf : rx) {
            const auto fd = ofdm::demodulate_symbol(buf, p, f.long_sym_offset(p, s));
            for (const cplx& v : ofdm::extract_nulls(fd, f)) {
                pw += std::norm(v);
                ++cnt;
            }
        }
        per_symbol.push_back(pw / static_cast<double>(cnt));
    }
    std::sort(per_symbol.begin(), per_symbol.end());
    return per_symbol[per_symbol.size() * 3 / 10];
}

/// Detect-and-subtract on one DFT window of every antenna; returns the
/// per-antenna time-domain estimate (fft_size x n_ac). Windows whose null
/// energy sits at the noise floor are left untouched.
CMat excise_window(std::vector<SignalBuffer>& rx, int window_offset, const CMat& f_null,
                   const std::vector<int>& null_pos_in_bins, int fft_size, int budget,
                   double floor_per_bin) {
    const int n_ac = static_cast<int>(rx.size());
    const int q = static_cast<int>(f_null.rows());
    CMat null_obs(q, n_ac);
    for (int a = 0; a < n_ac; ++a) {
        std::vector<cplx> window(rx[static_cast<std::size_t>(a)].samples.begin() + window_offset,
                                 rx[static_cast<std::size_t>(a)].samples.begin() + window_offset +
                                     fft_size);
        const auto bins = dsp::fft_unitary(window);
        for (int r = 0; r < q; ++r)
            null_obs(r, a) = bins[static_cast<std::size_t>(null_pos_in_bins[static_cast<std::size_t>(r)])];
    }
    const double detect_threshold = 2.0 * q * n_ac * floor_per_bin;
    if (null_obs.squaredNorm() <= detect_threshold) return CMat::Zero(fft_size, n_ac);

    const CMat est = joint_reconstruct_dme(null_obs, f_null, budget, 1.5 * q * floor_per_bin);
    for (int a = 0; a < n_ac; ++a)
        for (int n = 0; n < fft_size; ++n)
            rx[static_cast<std::size_t>(a)].samples[static_cast<std::size_t>(window_offset + n)] -=
                est(n, a);
    return est;
}

}  // namespace

PipelineResult run_estimation_pipeline(const sim::LinkScenario& scn,
                                       const sim::FrameRealization& frame,
                                       const PipelineOptions& opt) {
    const auto& p = scn.ofdm_params;
    const auto& f = scn.layout;
    const int n_ac = scn.arrays.n_ac;

    PipelineResult out;
    const double floor_per_bin = null_noise_floor(frame.rx, p, f);
    out.noise_floor = floor_per_bin;

    // null-row DFT matrices used both for short blocks and long symbols
    const std::vector<int> short_signed = f.short_used_signed(p);
    std::vector<int> short_null_signed, short_null_bins;
    for (int pos : f.short_null_positions(p)) {
        const int ks = short_signed[static_cast<std::size_t>(pos)];
        short_null_signed.push_back(ks);
        short_null_bins.push_back((ks + f.short_fft(p)) % f.short_fft(p));
    }
    const CMat f_null_short = null_dft_rows(short_null_signed, f.short_fft(p));

    std::vector<int> long_null_signed, long_null_bins;
    for (int pos : f.null_idx) {
        const int ks = p.signed_index(pos);
        long_null_signed.push_back(ks);
        long_null_bins.push_back(p.fft_bin(ks));
    }
    const CMat f_null_long = null_dft_rows(long_null_signed, p.fft_size);

    // ---- step 1: clean the short section, acquire the frequency offset ----
    std::vector<SignalBuffer> shorts(frame.rx.begin(), frame.rx.end());
    if (opt.excise_dme) {
        // excise only blocks whose hit is sparse enough to reconstruct; the
        // estimator's block gating covers the blasted ones
        const int q_short = static_cast<int>(short_null_bins.size());
        for (int b = 0; b < f.n_short_syms; ++b) {
            const int off = f.short_block_offset(p, b);
            double null_energy = 0.0;
            for (const auto& buf : shorts) {
                std::vector<cplx> win(buf.samples.begin() + off,
                                      buf.samples.begin() + off + f.short_fft(p));
                const auto bins = dsp::fft_unitary(win);
                for (int r = 0; r < q_short; ++r)
                    null_energy += std::norm(bins[static_cast<std::size_t>(
                        short_null_bins[static_cast<std::size_t>(r)])]);
            }
            if (null_energy > 12.0 * q_short * n_ac * floor_per_bin) continue;
            excise_window(shorts, off, f_null_short, short_null_bins, f.short_fft(p),
                          opt.omp_budget_short, floor_per_bin);
        }
    }
    out.cfo = estimate_cfo(shorts, p, f);
    const double f_shorts = out.cfo.f_hat;

    // Anchor stage: cyclic-prefix correlation over every long symbol, gated
    // against interference bursts. Reliable modulo fs/fft_size.
    const double cp_period = static_cast<double>(p.fft_size) / p.sample_rate;
    double f_cp = f_shorts;
    bool have_cp = false;
    if (p.cp_len > 0 && f.n_long_syms() > 0) {
        std::vector<double> sym_energy(static_cast<std::size_t>(f.n_long_syms()), 0.0);
        for (const auto& buf : frame.rx)
            for (int sy = 0; sy < f.n_long_syms(); ++sy) {
                const int off = f.long_sym_offset(p, sy);
                for (int n = 0; n < p.symbol_len(); ++n)
                    sym_energy[static_cast<std::size_t>(sy)] +=
                        std::norm(buf.samples[static_cast<std::size_t>(off + n)]);
            }
        std::vector<double> sorted_energy = sym_energy;
        std::sort(sorted_energy.begin(), sorted_energy.end());
        const double med = sorted_energy[sorted_energy.size() / 2];
        cplx corr(0.0, 0.0);
        for (const auto& buf : frame.rx)
            for (int sy = 0; sy < f.n_long_syms(); ++sy) {
                if (sym_energy[static_cast<std::size_t>(sy)] > 3.0 * med) continue;
                const int off = f.long_sym_offset(p, sy);
                for (int n = 0; n < p.cp_len; ++n)
                    corr += std::conj(buf.samples[static_cast<std::size_t>(off + n)]) *
                            buf.samples[static_cast<std::size_t>(off + n + p.fft_size)];
            }
        if (std::abs(corr) > 0.0) {
            f_cp = std::arg(corr) / (kTwoPi * cp_period);
            have_cp = true;
        }
    }

    // Residual stage: phase slope over the data-section comb, measured after
    // compensating with the anchor. Reliable modulo 1/T_sym.
    const double t_sym = p.symbol_duration();
    const double comb_period = 1.0 / t_sym;
    double r_comb = 0.0;
    bool have_comb = false;
    if (f.n_data_syms >= 2 && !f.comb_pilot_idx.empty()) {
        std::vector<SignalBuffer> coarse(static_cast<std::size_t>(n_ac));
        for (int a = 0; a < n_ac; ++a)
            coarse[static_cast<std::size_t>(a)] =
                compensate_cfo(frame.rx[static_cast<std::size_t>(a)], f_cp);

        // interference on the folded carrier advances an integer number of
        // cycles per symbol and would bias the products coherently: gate hit
        // symbols out on null energy
        const double gate =
            5.0 * static_cast<double>(long_null_bins.size()) * n_ac * floor_per_bin;
        const int n_comb = static_cast<int>(f.comb_pilot_idx.size());
        std::vector<CMat> z(static_cast<std::size_t>(f.n_data_syms));
        std::vector<bool> ok(static_cast<std::size_t>(f.n_data_syms), true);
        for (int sy = 0; sy < f.n_data_syms; ++sy) {
            z[static_cast<std::size_t>(sy)].resize(n_comb, n_ac);
            double null_energy = 0.0;
            for (int a = 0; a < n_ac; ++a) {
                const auto fd = ofdm::demodulate_symbol(coarse[static_cast<std::size_t>(a)], p,
                                                        f.data_sym_offset(p, sy));
                for (const cplx& v : ofdm::extract_nulls(fd, f)) null_energy += std::norm(v);
                for (int c = 0; c < n_comb; ++c)
                    z[static_cast<std::size_t>(sy)](c, a) =
                        fd[static_cast<std::size_t>(f.comb_pilot_idx[static_cast<std::size_t>(c)])] /
                        f.comb_pilot_value(sy, c);
            }
            if (opt.excise_dme && null_energy > gate) ok[static_cast<std::size_t>(sy)] = false;
        }
        std::vector<int> clean;
        for (int sy = 0; sy < f.n_data_syms; ++sy)
            if (ok[static_cast<std::size_t>(sy)]) clean.push_back(sy);
        if (clean.size() < 2) {
            clean.clear();
            for (int sy = 0; sy < f.n_data_syms; ++sy) clean.push_back(sy);
        }

        cplx pair_sum(0.0, 0.0);
        int gap_used = 0;
        for (int g = 1; g < f.n_data_syms && gap_used == 0; ++g) {
            for (std::size_t i = 0; i + 1 < clean.size(); ++i)
                for (std::size_t j = i + 1; j < clean.size(); ++j)
                    if (clean[j] - clean[i] == g)
                        pair_sum += (z[static_cast<std::size_t>(clean[j])].array() *
                                     z[static_cast<std::size_t>(clean[i])].conjugate().array())
                                        .sum();
            if (std::abs(pair_sum) > 0.0) gap_used = g;
        }
        if (gap_used > 0) {
            const double f_pass_a = std::arg(pair_sum) / (kTwoPi * gap_used * t_sym);
            double phase = 0.0;
            double sw = 1.0, swt = 0.0, swp = 0.0, swtt = 0.0, swtp = 0.0;
            const double t_ref = clean[0] * t_sym;
            for (std::size_t i = 1; i < clean.size(); ++i) {
                const int g = clean[i] - clean[i - 1];
                const cplx prod = (z[static_cast<std::size_t>(clean[i])].array() *
                                   z[static_cast<std::size_t>(clean[i - 1])].conjugate().array())
                                      .sum();
                if (std::abs(prod) <= 0.0) continue;
                const double predicted = kTwoPi * f_pass_a * g * t_sym;
                double inc = std::arg(prod);
                inc += kTwoPi * std::round((predicted - inc) / kTwoPi);
                phase += inc;
                const double t = clean[i] * t_sym - t_ref;
                sw += 1.0;
                swt += t;
                swp += phase;
                swtt += t * t;
                swtp += t * phase;
            }
            r_comb = f_pass_a;
            const double det = sw * swtt - swt * swt;
            if (det > 1e-30) {
                const double slope_fit = (sw * swtp - swt * swp) / det / kTwoPi;
                if (std::abs(slope_fit) < 0.5 / t_sym) r_comb = slope_fit;
            }
            have_comb = true;
        }
    }

    // Resolve the anchor ambiguity: the combination of the two moduli is
    // unique across the short-section acquisition range.
    double f_total = f_shorts;
    if (have_cp && have_comb) {
        const double beat = 1.0 / cp_period - comb_period;  // expected comb residual per wrap
        auto wrap = [](double x, double period) {
            return x - period * std::round(x / period);
        };
        int best_m = 0;
        double best_score = 1e300;
        for (int m = -2; m <= 2; ++m) {
            const double mismatch = std::abs(wrap(r_comb - beat * m, comb_period));
            // prefer hypotheses near the short-section estimate on near-ties
            const double prior = 1e-3 * std::abs(f_cp + m / cp_period - f_shorts);
            if (mismatch + prior < best_score) {
                best_score = mismatch + prior;
                best_m = m;
            }
        }
        f_total = f_cp + best_m / cp_period + wrap(r_comb - beat * best_m, comb_period);
    } else if (have_cp) {
        f_total = f_cp + std::round((f_shorts - f_cp) * cp_period) / cp_period;
    }

    out.cfo.f_hat = f_total;

    // ---- step 2: derotate everything, then clean and sound the pilots ----
    std::vector<SignalBuffer> comp(static_cast<std::size_t>(n_ac));
    for (int a = 0; a < n_ac; ++a)
        comp[static_cast<std::size_t>(a)] =
            compensate_cfo(frame.rx[static_cast<std::size_t>(a)], f_total);

    const std::vector<int> nonnull = f.nonnull_positions(p);
    const int n_meas = f.n_pilot_syms * n_ac;
    const int k_est = static_cast<int>(nonnull.size());
    CMat y_clean(n_meas, k_est);
    CMat y_raw(n_meas, k_est);
    double null_power = 0.0;
    long null_count = 0;

    std::vector<bool> symbol_usable(static_cast<std::size_t>(f.n_pilot_syms), true);
    const int q_long = static_cast<int>(long_null_bins.size());
    for (int s = 0; s < f.n_pilot_syms; ++s) {
        const int off = f.pilot_sym_offset(p, s);
        // raw observations first (the baseline never sees the excision)
        double sym_null_energy = 0.0;
        for (int a = 0; a < n_ac; ++a) {
            const auto fd = ofdm::demodulate_symbol(comp[static_cast<std::size_t>(a)], p, off);
            for (const cplx& v : ofdm::extract_nulls(fd, f)) {
                null_power += std::norm(v);
                sym_null_energy += std::norm(v);
                ++null_count;
            }
            const auto& pv = frame.pilot_values[static_cast<std::size_t>(s)];
            for (int ki = 0; ki < k_est; ++ki)
                y_raw(s * n_ac + a, ki) =
                    fd[static_cast<std::size_t>(nonnull[static_cast<std::size_t>(ki)])] /
                    pv[static_cast<std::size_t>(ki)];
        }
        if (opt.excise_dme) {
            // Hit symbols are excised for the later stages but stay out of
            // the first fit: a clean-only fit bootstraps the refinement.
            if (sym_null_energy > 3.0 * q_long * n_ac * floor_per_bin)
                symbol_usable[static_cast<std::size_t>(s)] = false;
            const CMat est = excise_window(comp, off + p.cp_len, f_null_long, long_null_bins,
                                           p.fft_size, opt.omp_budget_long, floor_per_bin);
            for (int n = 0; n < p.fft_size; ++n)
                if (est.row(n).squaredNorm() > 0.0)
                    out.dme_snapshots.push_back(est.row(n).transpose());
        }
        for (int a = 0; a < n_ac; ++a) {
            const auto fd = ofdm::demodulate_symbol(comp[static_cast<std::size_t>(a)], p, off);
            const auto& pv = frame.pilot_values[static_cast<std::size_t>(s)];
            for (int ki = 0; ki < k_est; ++ki)
                y_clean(s * n_ac + a, ki) =
                    fd[static_cast<std::size_t>(nonnull[static_cast<std::size_t>(ki)])] /
                    pv[static_cast<std::size_t>(ki)];
        }
    }

    const AngularDictionary dict =
        build_dictionary(scn.arrays, opt.dict_oversample_gs, opt.dict_oversample_ac);
    const CMat phi = sensing_matrix(dict, frame.pilot_beams);

    int n_usable = 0;
    for (bool u : symbol_usable) n_usable += u ? 1 : 0;
    if (!opt.excise_dme || n_usable < 2) {
        out.gmmv = estimate_channel_gmmv(opt.excise_dme ? y_clean : y_raw, phi, dict,
                                         opt.max_support, opt.stop_tol);
    } else {
        CMat y_sub(n_usable * n_ac, k_est);
        CMat phi_sub(n_usable * n_ac, phi.cols());
        std::vector<chan::CVec> beams_sub;
        int r = 0;
        for (int s = 0; s < f.n_pilot_syms; ++s) {
            if (!symbol_usable[static_cast<std::size_t>(s)]) continue;
            y_sub.middleRows(r * n_ac, n_ac) = y_clean.middleRows(s * n_ac, n_ac);
            phi_sub.middleRows(r * n_ac, n_ac) = phi.middleRows(s * n_ac, n_ac);
            ++r;
        }
        const int support_cap = std::min(opt.max_support, n_usable * n_ac - 2);
        out.gmmv = estimate_channel_gmmv(y_sub, phi_sub, dict, std::max(1, support_cap),
                                         opt.stop_tol);
    }

    // ---- refinement: cancel the fitted signal, detect pulses on the full
    // band, re-excise, re-estimate ----
    if (opt.excise_dme) {
        for (int round = 0; round < opt.refine_rounds; ++round) {
            std::vector<CVec> snapshots;
            CMat y2(n_meas, k_est);
            for (int s = 0; s < f.n_pilot_syms; ++s) {
                const int off = f.pilot_sym_offset(p, s) + p.cp_len;
                const auto& pv = frame.pilot_values[static_cast<std::size_t>(s)];
                const auto& beam = frame.pilot_beams[static_cast<std::size_t>(s)];

                // predicted per-antenna waveform from the current estimate
                CMat pred(p.fft_size, n_ac);
                {
                    std::vector<std::vector<cplx>> bins(
                        static_cast<std::size_t>(n_ac),
                        std::vector<cplx>(static_cast<std::size_t>(p.fft_size), cplx(0, 0)));
                    for (int ki = 0; ki < k_est; ++ki) {
                        const int pos = nonnull[static_cast<std::size_t>(ki)];
                        const CVec g = out.gmmv.h_hat[static_cast<std::size_t>(ki)] * beam;
                        for (int a = 0; a < n_ac; ++a)
                            bins[static_cast<std::size_t>(a)]
                                [static_cast<std::size_t>(p.fft_bin(p.signed_index(pos)))] =
                                    g(a) * pv[static_cast<std::size_t>(ki)];
                    }
                    for (int a = 0; a < n_ac; ++a) {
                        const auto td = dsp::ifft_unitary(bins[static_cast<std::size_t>(a)]);
                        for (int n = 0; n < p.fft_size; ++n) pred(n, a) = td[static_cast<std::size_t>(n)];
                    }
                }

                // residual = received - predicted signal; pulses stick out
                CMat residual(p.fft_size, n_ac);
                for (int a = 0; a < n_ac; ++a) {
                    const auto& buf = comp[static_cast<std::size_t>(a)].samples;
                    for (int n = 0; n < p.fft_size; ++n)
                        residual(n, a) = buf[static_cast<std::size_t>(off + n)] - pred(n, a);
                }
                std::vector<double> row_pw(static_cast<std::size_t>(p.fft_size));
                for (int n = 0; n < p.fft_size; ++n) row_pw[static_cast<std::size_t>(n)] = residual.row(n).squaredNorm();
                std::vector<double> sorted = row_pw;
                std::nth_element(sorted.begin(), sorted.begin() + p.fft_size / 2, sorted.end());
                const double med = sorted[static_cast<std::size_t>(p.fft_size / 2)];

                CMat window(p.fft_size, n_ac);
                for (int a = 0; a < n_ac; ++a)
                    for (int n = 0; n < p.fft_size; ++n)
                        window(n, a) =
                            comp[static_cast<std::size_t>(a)].samples[static_cast<std::size_t>(off + n)];
                CMat dme_est = CMat::Zero(p.fft_size, n_ac);
                for (int n = 0; n < p.fft_size; ++n) {
                    if (row_pw[static_cast<std::size_t>(n)] > 4.0 * med) {
                        dme_est.row(n) = residual.row(n);
                        window.row(n) -= residual.row(n);
                    }
                }
                for (int n = 0; n < p.fft_size; ++n)
                    if (dme_est.row(n).squaredNorm() > 0.0)
                        snapshots.push_back(dme_est.row(n).transpose());

                for (int a = 0; a < n_ac; ++a) {
                    std::vector<cplx> w(static_cast<std::size_t>(p.fft_size));
                    for (int n = 0; n < p.fft_size; ++n) w[static_cast<std::size_t>(n)] = window(n, a);
                    const auto bins = dsp::fft_unitary(w);
                    for (int ki = 0; ki < k_est; ++ki) {
                        const int pos = nonnull[static_cast<std::size_t>(ki)];
                        y2(s * n_ac + a, ki) =
                            bins[static_cast<std::size_t>(p.fft_bin(p.signed_index(pos)))] /
                            pv[static_cast<std::size_t>(ki)];
                    }
                }
            }
            out.gmmv = estimate_channel_gmmv(y2, phi, dict, opt.max_support, opt.stop_tol);
            out.dme_snapshots = std::move(snapshots);
        }
    }
    out.h_gmmv = out.gmmv.h_hat;

    std::vector<CMat> truth_nonnull;
    truth_nonnull.reserve(nonnull.size());
    for (int pos : nonnull) truth_nonnull.push_back(frame.h_truth[static_cast<std::size_t>(pos)]);
    out.nmse_gmmv_db = nmse_db(out.h_gmmv, truth_nonnull);

    if (opt.run_lmmse) {
        if (opt.lmmse_prior == nullptr)
            throw std::invalid_argument("pipeline: LMMSE requested without a prior covariance");
        // the baseline takes interference as noise, with its level read off
        // the null subcarriers
        const double sigma_eff = null_count > 0 ? null_power / static_cast<double>(null_count)
                                                : frame.noise_var;
        out.h_lmmse = estimate_channel_lmmse(y_raw, frame.pilot_beams, *opt.lmmse_prior, sigma_eff,
                                             n_ac, scn.arrays.n_gs);
        out.nmse_lmmse_db = nmse_db(out.h_lmmse, truth_nonnull);
    }
    return out;
}

}  // namespace aerosim::est
