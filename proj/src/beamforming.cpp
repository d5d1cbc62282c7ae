#include "aerosim/beamforming.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aerosim::beams {

namespace {

CMat loaded(const CMat& r) {
    const int n = static_cast<int>(r.rows());
    const double load = 1e-6 * r.trace().real() / n;
    return r + load * CMat::Identity(n, n);
}

/// SINR objective: mean_k |w^H H_k u|^2 * P / (w^H R w), u = F b / ||F b||.
double sinr_linear(const CMat& analog, const CVec& digital, const CVec& w,
                   const std::vector<CMat>& h, const CMat& r, double power) {
    const CVec f = analog * digital;
    const double g = f.squaredNorm();
    if (!(g > 0.0)) return 0.0;
    double num = 0.0;
    for (const CMat& hk : h) num += std::norm((w.adjoint() * hk * f)(0));
    num *= power / (g * static_cast<double>(h.size()));
    const double den = (w.adjoint() * r * w)(0).real();
    return num / den;
}

void project_constant_modulus(CMat& analog) {
    for (int i = 0; i < analog.rows(); ++i)
        for (int j = 0; j < analog.cols(); ++j) {
            const double m = std::abs(analog(i, j));
            analog(i, j) = m > 0.0 ? analog(i, j) / m : cplx(1.0, 0.0);
        }
}

/// Maximize (n0 + 2 Re(n1 e^{j phi})) / (d0 + 2 Re(d1 e^{j phi})) over phi.
/// The stationary condition reduces to P sin(phi) + Q cos(phi) + C = 0.
double best_phase(double n0, cplx n1, double d0, cplx d1, double current_phase,
                  double current_val) {
    const double a = std::arg(n1), b = std::arg(d1);
    const double amp_a = -2.0 * std::abs(n1) * d0;
    const double amp_b = 2.0 * n0 * std::abs(d1);
    const double c = 4.0 * std::abs(n1) * std::abs(d1) * std::sin(b - a);
    const double p = amp_a * std::cos(a) + amp_b * std::cos(b);
    const double q = amp_a * std::sin(a) + amp_b * std::sin(b);
    const double rr = std::hypot(p, q);

    auto value = [&](double phi) {
        const double num = n0 + 2.0 * (n1 * std::polar(1.0, phi)).real();
        const double den = d0 + 2.0 * (d1 * std::polar(1.0, phi)).real();
        return den > 0.0 ? num / den : -1.0;
    };

    double best_phi = current_phase;
    double best_val = current_val;
    if (rr > 0.0 && std::abs(c) <= rr) {
        const double psi = std::atan2(q, p);
        const double base = std::asin(std::clamp(-c / rr, -1.0, 1.0));
        for (double cand : {base - psi, kPi - base - psi}) {
            const double v = value(cand);
            if (v > best_val) {
                best_val = v;
                best_phi = cand;
            }
        }
    } else {
        // no stationary point found numerically: coarse scan fallback
        for (int k = 0; k < 64; ++k) {
            const double cand = kTwoPi * k / 64.0;
            const double v = value(cand);
            if (v > best_val) {
                best_val = v;
                best_phi = cand;
            }
        }
    }
    return best_phi;
}

}  // namespace

void BeamformerSet::check_constant_modulus(double tol) const {
    for (int i = 0; i < analog.rows(); ++i)
        for (int j = 0; j < analog.cols(); ++j)
            if (std::abs(std::abs(analog(i, j)) - 1.0) > tol)
                throw std::logic_error("beamformer: analog entry off the unit circle");
}

void DmeCovariance::check_valid(double tol) const {
    if ((r - r.adjoint()).norm() > 1e-12 * std::max(1.0, r.norm()))
        throw std::logic_error("covariance: not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMat> es(r);
    if (es.eigenvalues().minCoeff() < -tol) throw std::logic_error("covariance: not PSD");
}

DmeCovariance covariance_init(const std::vector<CVec>& snapshots, double noise_var, int n_ac) {
    DmeCovariance out;
    out.r = noise_var * CMat::Identity(n_ac, n_ac);
    if (snapshots.empty()) return out;
    CMat acc = CMat::Zero(n_ac, n_ac);
    for (const CVec& s : snapshots) {
        if (s.size() != n_ac) throw std::invalid_argument("covariance_init: snapshot size");
        acc.noalias() += s * s.adjoint();
    }
    out.r += acc / static_cast<double>(snapshots.size());
    out.r = (0.5 * (out.r + out.r.adjoint())).eval();
    return out;
}

DmeCovariance covariance_feedback_update(const DmeCovariance& prev, const CMat& rx_fd,
                                         const CVec& decoded, const CMat& h_eff,
                                         const std::vector<bool>& erased, double forgetting) {
    if (!(forgetting > 0.0) || forgetting > 1.0)
        throw std::invalid_argument("covariance update: forgetting must be in (0, 1]");
    const int n_ac = static_cast<int>(rx_fd.rows());
    const int n_obs = static_cast<int>(rx_fd.cols());
    if (decoded.size() != n_obs || h_eff.cols() != n_obs || h_eff.rows() != n_ac ||
        static_cast<int>(erased.size()) != n_obs)
        throw std::invalid_argument("covariance update: dimension mismatch");

    CMat acc = CMat::Zero(n_ac, n_ac);
    int used = 0;
    for (int i = 0; i < n_obs; ++i) {
        if (erased[static_cast<std::size_t>(i)]) continue;
        const CVec res = rx_fd.col(i) - h_eff.col(i) * decoded(i);
        acc.noalias() += res * res.adjoint();
        ++used;
    }
    DmeCovariance out = prev;
    if (used == 0) {
        ++out.age;  // nothing trustworthy this frame
        return out;
    }
    out.r = forgetting * prev.r + (1.0 - forgetting) * (acc / static_cast<double>(used));
    out.r = (0.5 * (out.r + out.r.adjoint())).eval();
    out.age = 0;
    return out;
}

CVec combiner_mvdr(const CVec& h_eff, const CMat& r) {
    const CMat rl = loaded(r);
    const CVec num = rl.ldlt().solve(h_eff);
    const cplx den = h_eff.dot(num);  // h^H R^-1 h, real positive
    if (!(den.real() > 0.0)) throw std::invalid_argument("mvdr: degenerate channel");
    return num / den.real();
}

double sinr_db(const BeamformerSet& beams, const std::vector<CMat>& h, const CMat& r) {
    const CVec f = beams.tx_beam();
    double num = 0.0;
    for (const CMat& hk : h) num += std::norm((beams.combiner.adjoint() * hk * f)(0));
    num /= static_cast<double>(h.size());
    const double den = (beams.combiner.adjoint() * r * beams.combiner)(0).real();
    return db_from_ratio(num / den);
}

namespace {

/// Combiner block: maximize w^H A w / w^H R w, A = sum_k v_k v_k^H.
CVec best_combiner(const std::vector<CMat>& h, const CVec& f, const CMat& r_loaded) {
    const int n_ac = static_cast<int>(h.front().rows());
    CMat a = CMat::Zero(n_ac, n_ac);
    for (const CMat& hk : h) {
        const CVec v = hk * f;
        a.noalias() += v * v.adjoint();
    }
    a = (0.5 * (a + a.adjoint())).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<CMat> ges(a, r_loaded);
    CVec w = ges.eigenvectors().col(n_ac - 1);
    w.normalize();
    return w;
}

/// Digital block: maximize f^H C f / f^H G f, C from the post-combining
/// channel, G = F^H F; principal generalized eigenvector, power-rescaled.
CVec best_digital(const std::vector<CMat>& h, const CMat& analog, const CVec& w, double power) {
    const int n_rf = static_cast<int>(analog.cols());
    CMat c = CMat::Zero(n_rf, n_rf);
    for (const CMat& hk : h) {
        const CVec ck = analog.adjoint() * (hk.adjoint() * w);
        c.noalias() += ck * ck.adjoint();
    }
    c = (0.5 * (c + c.adjoint())).eval();
    CMat g = analog.adjoint() * analog;
    g = (0.5 * (g + g.adjoint()) + 1e-12 * g.trace().real() / n_rf * CMat::Identity(n_rf, n_rf))
            .eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<CMat> ges(c, g);
    CVec b = ges.eigenvectors().col(n_rf - 1);
    const double norm = (analog * b).norm();
    return b * (std::sqrt(power) / norm);
}

/// Analog block: closed-form per-entry phase update of the ratio
/// sum_k |w^H H_k F b|^2 / ||F b||^2.
void update_analog(CMat& analog, const CVec& digital, const CVec& w, const std::vector<CMat>& h) {
    const int n_gs = static_cast<int>(analog.rows());
    const int n_rf = static_cast<int>(analog.cols());
    const std::size_t n_k = h.size();

    std::vector<Eigen::RowVectorXcd> rows(n_k);
    for (std::size_t k = 0; k < n_k; ++k) rows[k] = w.adjoint() * h[k];
    std::vector<cplx> s(n_k);
    CVec fb = analog * digital;
    for (std::size_t k = 0; k < n_k; ++k) s[k] = rows[k] * fb;
    double g = fb.squaredNorm();

    for (int i = 0; i < n_gs; ++i) {
        for (int j = 0; j < n_rf; ++j) {
            const cplx old = analog(i, j);
            double n0 = 0.0;
            cplx n1(0.0, 0.0);
            for (std::size_t k = 0; k < n_k; ++k) {
                const cplx beta = rows[k](i) * digital(j);
                const cplx alpha = s[k] - beta * old;
                n0 += std::norm(alpha) + std::norm(beta);
                n1 += std::conj(alpha) * beta;
            }
            // only stream element i of F b changes with this entry
            const cplx u_old = fb(i);
            const cplx bshare = digital(j);
            const cplx u_rest = u_old - bshare * old;
            const double d0 = g - std::norm(u_old) + std::norm(u_rest) + std::norm(bshare);
            const cplx d1 = std::conj(u_rest) * bshare;

            const double cur_val =
                (n0 + 2.0 * (n1 * old).real()) / (d0 + 2.0 * (d1 * old).real());
            const double phi = best_phase(n0, n1, d0, d1, std::arg(old), cur_val);
            const cplx next = std::polar(1.0, phi);
            if (next == old) continue;
            analog(i, j) = next;
            const cplx delta = next - old;
            for (std::size_t k = 0; k < n_k; ++k) s[k] += rows[k](i) * digital(j) * delta;
            const cplx u_new = u_rest + bshare * next;
            g += std::norm(u_new) - std::norm(u_old);
            fb(i) = u_new;
        }
    }
}

BeamformerSet matched_init(const std::vector<CMat>& h, const CMat& r_loaded, int n_rf,
                           double power) {
    const int n_gs = static_cast<int>(h.front().cols());
    CMat gram = CMat::Zero(n_gs, n_gs);
    for (const CMat& hk : h) gram.noalias() += hk.adjoint() * hk;
    gram = (0.5 * (gram + gram.adjoint())).eval();
    Eigen::SelfAdjointEigenSolver<CMat> es(gram);
    const CVec f_opt = es.eigenvectors().col(n_gs - 1);

    BeamformerSet set;
    set.analog.resize(n_gs, n_rf);
    for (int j = 0; j < n_rf; ++j)
        for (int i = 0; i < n_gs; ++i) {
            // phase-steered copies of the unconstrained optimum, decorrelated
            // per chain by a linear phase ramp
            const double ramp = kTwoPi * j * i / std::max(1, n_gs);
            set.analog(i, j) = std::polar(1.0, std::arg(f_opt(i)) + ramp);
        }
    set.digital = CVec::Zero(n_rf);
    set.digital(0) = 1.0;
    set.digital *= std::sqrt(power) / (set.analog * set.digital).norm();
    set.combiner = best_combiner(h, set.analog * set.digital, r_loaded);
    return set;
}

}  // namespace

AoResult optimize_ao(const std::vector<CMat>& h, const CMat& r, const AoOptions& opt,
                     const BeamformerSet* warm_start) {
    if (h.empty()) throw std::invalid_argument("optimize_ao: empty channel");
    if (!(h.front().squaredNorm() > 0.0)) throw std::invalid_argument("optimize_ao: zero channel");
    const int n_rf = warm_start ? static_cast<int>(warm_start->analog.cols())
                                : std::min<int>(static_cast<int>(h.front().cols()), 4);
    const CMat rl = loaded(r);

    std::vector<BeamformerSet> starts;
    starts.push_back(matched_init(h, rl, n_rf, opt.power_budget));
    if (warm_start) starts.push_back(*warm_start);

    AoResult best;
    double best_sinr = -1.0;
    for (BeamformerSet& set : starts) {
        std::vector<double> trace;
        double prev = sinr_linear(set.analog, set.digital, set.combiner, h, rl, opt.power_budget);
        for (int outer = 0; outer < opt.max_outer; ++outer) {
            set.digital = best_digital(h, set.analog, set.combiner, opt.power_budget);
            update_analog(set.analog, set.digital, set.combiner, h);
            set.digital *= std::sqrt(opt.power_budget) / (set.analog * set.digital).norm();
            set.combiner = best_combiner(h, set.analog * set.digital, rl);
            const double now =
                sinr_linear(set.analog, set.digital, set.combiner, h, rl, opt.power_budget);
            trace.push_back(db_from_ratio(now));
            if (now - prev < opt.tol * std::max(prev, 1e-30)) {
                prev = std::max(prev, now);
                break;
            }
            prev = now;
        }
        if (prev > best_sinr) {
            best_sinr = prev;
            best.beams = set;
            best.sinr_trace_db = trace;
        }
    }
    return best;
}

BeamformerSet beam_track_pgd(const BeamformerSet& prev, const std::vector<CMat>& h, const CMat& r,
                             double power_budget, double step_size, int n_iters) {
    if (step_size == 0.0 || n_iters <= 0) return prev;
    const CMat rl = loaded(r);
    BeamformerSet cur = prev;
    cur.combiner = best_combiner(h, cur.analog * cur.digital, rl);

    double step = step_size;
    double val = sinr_linear(cur.analog, cur.digital, cur.combiner, h, rl, power_budget);
    const double k_inv = 1.0 / static_cast<double>(h.size());
    const double wrw = (cur.combiner.adjoint() * rl * cur.combiner)(0).real();

    for (int it = 0; it < n_iters; ++it) {
        const CVec fb = cur.analog * cur.digital;
        const double g = fb.squaredNorm();
        CMat grad_f = CMat::Zero(cur.analog.rows(), cur.analog.cols());
        CVec grad_b = CVec::Zero(cur.digital.size());
        for (const CMat& hk : h) {
            const Eigen::RowVectorXcd row = cur.combiner.adjoint() * hk;
            const cplx s = row * fb;
            const CVec rh = row.adjoint();
            grad_f += (s / g) * (rh * cur.digital.adjoint()) -
                      (std::norm(s) / (g * g)) * (fb * cur.digital.adjoint());
            grad_b += (s / g) * (cur.analog.adjoint() * rh) -
                      (std::norm(s) / (g * g)) * (cur.analog.adjoint() * fb);
        }
        grad_f *= power_budget * k_inv / wrw;
        grad_b *= power_budget * k_inv / wrw;

        const double scale_f = cur.analog.norm() / std::max(grad_f.norm(), 1e-30);
        const double scale_b = cur.digital.norm() / std::max(grad_b.norm(), 1e-30);
        for (int attempt = 0; attempt < 6; ++attempt) {
            BeamformerSet trial = cur;
            trial.analog += step * scale_f * grad_f;
            project_constant_modulus(trial.analog);
            trial.digital += step * scale_b * grad_b;
            trial.digital *= std::sqrt(power_budget) / (trial.analog * trial.digital).norm();
            trial.combiner = best_combiner(h, trial.analog * trial.digital, rl);
            const double trial_val =
                sinr_linear(trial.analog, trial.digital, trial.combiner, h, rl, power_budget);
            if (trial_val >= val) {
                cur = trial;
                val = trial_val;
                break;
            }
            step *= 0.5;
        }
    }
    return cur;
}

BeamformerSet ss_hb(const std::vector<CMat>& h, const CMat& gs_dictionary, int n_rf,
                    double power_budget) {
    const int n_gs = static_cast<int>(h.front().cols());
    CMat gram = CMat::Zero(n_gs, n_gs);
    for (const CMat& hk : h) gram.noalias() += hk.adjoint() * hk;
    gram = (0.5 * (gram + gram.adjoint())).eval();
    Eigen::SelfAdjointEigenSolver<CMat> es(gram);
    const CVec f_opt = es.eigenvectors().col(n_gs - 1);

    BeamformerSet set;
    set.analog.resize(n_gs, n_rf);
    CVec residual = f_opt;
    std::vector<int> picked;
    for (int t = 0; t < n_rf; ++t) {
        int best = -1;
        double best_corr = -1.0;
        for (int c = 0; c < gs_dictionary.cols(); ++c) {
            if (std::find(picked.begin(), picked.end(), c) != picked.end()) continue;
            const double corr =
                std::abs(gs_dictionary.col(c).dot(residual)) / gs_dictionary.col(c).norm();
            if (corr > best_corr) {
                best_corr = corr;
                best = c;
            }
        }
        picked.push_back(best);
        set.analog.col(t) = gs_dictionary.col(best);
        CMat sub = set.analog.leftCols(t + 1);
        const CVec coef = sub.colPivHouseholderQr().solve(f_opt);
        residual = f_opt - sub * coef;
    }
    project_constant_modulus(set.analog);
    set.digital = set.analog.colPivHouseholderQr().solve(f_opt);
    set.digital *= std::sqrt(power_budget) / (set.analog * set.digital).norm();

    // matched combining on the beamformed channel: deliberately blind to the
    // interference statistics
    const CVec f = set.analog * set.digital;
    const int n_ac = static_cast<int>(h.front().rows());
    CMat a = CMat::Zero(n_ac, n_ac);
    for (const CMat& hk : h) {
        const CVec v = hk * f;
        a.noalias() += v * v.adjoint();
    }
    Eigen::SelfAdjointEigenSolver<CMat> esa((0.5 * (a + a.adjoint())).eval());
    set.combiner = esa.eigenvectors().col(n_ac - 1);
    set.combiner.normalize();
    return set;
}

}  // namespace aerosim::beams
