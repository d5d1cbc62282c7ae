#include "aerosim/beamforming.hpp"

#include <algorithm>
#include <cmath>

#include "aerosim/dsp.hpp"
#include "aerosim/estimation.hpp"
#include "aerosim/rng.hpp"

namespace aerosim::beams {

namespace {

chan::PathSet rotated(const chan::PathSet& base, double dtheta) {
    chan::PathSet out = base;
    for (auto& path : out.paths) path.aod += dtheta;
    return out;
}

CMat steering_dictionary(int n_gs, double spacing) {
    CMat dict(n_gs, 2 * n_gs);
    for (int m = 0; m < 2 * n_gs; ++m) {
        const double u = -1.0 + static_cast<double>(m) / n_gs;
        dict.col(m) = chan::steering(n_gs, spacing, std::acos(u));
    }
    return dict;
}

struct FrameDemodStats {
    long bit_errors = 0;
    long bits = 0;
    // feedback material
    CMat rx_fd;     // n_ac x n_obs
    CVec decided;   // n_obs
    CMat h_eff_ant; // n_ac x n_obs
    std::vector<bool> erased;
};

/// Combine, equalize against the estimated effective channel, track the
/// common phase on the comb, slice, count.
FrameDemodStats demodulate_frame(const sim::LinkScenario& scn, const sim::FrameRealization& fr,
                                 const CVec& w, const CVec& f, const std::vector<CMat>& h_est,
                                 const std::vector<int>& nonnull, double f_hat,
                                 const std::vector<int>& payload_bits, bool collect_feedback) {
    const auto& p = scn.ofdm_params;
    const auto& lay = scn.layout;
    const int n_ac = scn.arrays.n_ac;

    std::vector<int> pos_to_est(static_cast<std::size_t>(p.used_subcarriers), -1);
    for (std::size_t i = 0; i < nonnull.size(); ++i) pos_to_est[static_cast<std::size_t>(nonnull[i])] = static_cast<int>(i);

    CVec h_eff = CVec::Zero(p.used_subcarriers);
    std::vector<CVec> h_ant(static_cast<std::size_t>(p.used_subcarriers));
    for (int pos : nonnull) {
        const CMat& hk = h_est[static_cast<std::size_t>(pos_to_est[static_cast<std::size_t>(pos)])];
        h_ant[static_cast<std::size_t>(pos)] = hk * f;
        h_eff(pos) = (w.adjoint() * h_ant[static_cast<std::size_t>(pos)])(0);
    }

    std::vector<SignalBuffer> comp(static_cast<std::size_t>(n_ac));
    for (int a = 0; a < n_ac; ++a)
        comp[static_cast<std::size_t>(a)] = est::compensate_cfo(fr.rx[static_cast<std::size_t>(a)], f_hat);
    SignalBuffer combined(std::vector<cplx>(comp[0].size(), cplx(0, 0)), p.sample_rate, comp[0].t0);
    for (int a = 0; a < n_ac; ++a)
        for (std::size_t i = 0; i < combined.samples.size(); ++i)
            combined.samples[i] += std::conj(w(a)) * comp[static_cast<std::size_t>(a)].samples[i];

    const std::vector<int> data_pos = lay.data_positions(p);
    FrameDemodStats stats;
    const int n_obs = collect_feedback
                          ? static_cast<int>(data_pos.size()) * lay.n_data_syms
                          : 0;
    if (collect_feedback) {
        stats.rx_fd.resize(n_ac, n_obs);
        stats.decided.resize(n_obs);
        stats.h_eff_ant.resize(n_ac, n_obs);
        stats.erased.assign(static_cast<std::size_t>(n_obs), false);
    }

    std::size_t bit = 0;
    int obs = 0;
    for (int s = 0; s < lay.n_data_syms; ++s) {
        const int off = lay.data_sym_offset(p, s);
        const auto fd = ofdm::demodulate_symbol(combined, p, off);

        // common phase from the comb pilots
        cplx rot(0.0, 0.0);
        for (std::size_t c = 0; c < lay.comb_pilot_idx.size(); ++c) {
            const int pos = lay.comb_pilot_idx[c];
            rot += fd[static_cast<std::size_t>(pos)] *
                   std::conj(h_eff(pos) * lay.comb_pilot_value(s, static_cast<int>(c)));
        }
        const cplx cpe = std::abs(rot) > 0.0 ? rot / std::abs(rot) : cplx(1.0, 0.0);

        std::vector<std::vector<cplx>> fd_ant;
        if (collect_feedback) {
            fd_ant.resize(static_cast<std::size_t>(n_ac));
            for (int a = 0; a < n_ac; ++a)
                fd_ant[static_cast<std::size_t>(a)] =
                    ofdm::demodulate_symbol(comp[static_cast<std::size_t>(a)], p, off);
        }

        for (int pos : data_pos) {
            const cplx z = fd[static_cast<std::size_t>(pos)] * std::conj(cpe) / h_eff(pos);
            int b0 = 0, b1 = 0;
            dsp::qpsk_hard_decision(z, b0, b1);
            stats.bit_errors += (b0 != payload_bits[bit]) + (b1 != payload_bits[bit + 1]);
            bit += 2;
            stats.bits += 2;
            if (collect_feedback) {
                const cplx decided = dsp::qpsk_map(b0, b1) * cpe;
                for (int a = 0; a < n_ac; ++a)
                    stats.rx_fd(a, obs) = fd_ant[static_cast<std::size_t>(a)][static_cast<std::size_t>(pos)];
                stats.decided(obs) = decided;
                stats.h_eff_ant.col(obs) = h_ant[static_cast<std::size_t>(pos)];
                stats.erased[static_cast<std::size_t>(obs)] = std::abs(z - dsp::qpsk_map(b0, b1)) > 0.45;
                ++obs;
            }
        }
    }
    return stats;
}

}  // namespace

BerResult simulate_ber(const sim::LinkScenario& scenario, const BerOptions& opt,
                       std::uint64_t seed) {
    BerResult out;
    out.snr_db = opt.snr_grid_db;

    sim::LinkScenario scn = scenario;
    const auto& p = scn.ofdm_params;
    const std::vector<int> nonnull = scn.layout.nonnull_positions(p);
    const std::vector<int> data_pos = scn.layout.data_positions(p);
    const long bits_per_frame = 2L * static_cast<long>(data_pos.size()) * scn.layout.n_data_syms;
    const double frame_duration = static_cast<double>(scn.layout.frame_len(p)) / p.sample_rate;
    const CMat gs_dict = steering_dictionary(scn.arrays.n_gs, scn.arrays.element_spacing);
    const double drift = opt.drift_deg_per_frame * kPi / 180.0;

    std::vector<CMat> truth_nonnull;  // reused scratch in genie mode

    for (std::size_t si = 0; si < opt.snr_grid_db.size(); ++si) {
        scn.snr_db = opt.snr_grid_db[si];
        const std::uint64_t point_seed = derive_seed(seed, si);

        const chan::PathSet base = chan::generate_paths(
            scn.geometry, scn.arrays, scn.rician_db, scn.n_scatter, scn.beamwidth_rad,
            scn.max_excess_delay_s, derive_seed(point_seed, 0xC0DE));

        long errors_ao = 0, errors_pgd = 0, errors_ss = 0, bits_done = 0;
        BeamformerSet prev_ao, prev_pgd;
        bool have_prev = false;
        DmeCovariance r_ao, r_pgd;
        double t_now = 0.0;
        int frame_counter = 0;
        Rng bit_rng(derive_seed(point_seed, 0xB175));

        for (int block = 0; bits_done < opt.min_bits_per_point; ++block) {
            const chan::PathSet paths_est = rotated(base, drift * frame_counter);
            std::vector<CMat> h_est;
            double f_hat = 0.0;
            DmeCovariance r_init;

            if (opt.genie_csi) {
                const auto fr = sim::realize_estimation_frame(
                    scn, derive_seed(point_seed, 0xE000 + block), &paths_est, t_now);
                f_hat = fr.cfo_true;
                for (int pos : nonnull) h_est.push_back(fr.h_truth[static_cast<std::size_t>(pos)]);
                r_init = covariance_init({}, fr.noise_var, scn.arrays.n_ac);
            } else {
                const auto fr = sim::realize_estimation_frame(
                    scn, derive_seed(point_seed, 0xE000 + block), &paths_est, t_now);
                est::PipelineOptions popt;
                popt.run_lmmse = false;
                const auto res = est::run_estimation_pipeline(scn, fr, popt);
                f_hat = res.cfo.f_hat;
                h_est = res.h_gmmv;
                r_init = covariance_init(res.dme_snapshots, res.noise_floor, scn.arrays.n_ac);
            }
            t_now += frame_duration;
            ++frame_counter;

            // fresh statistics on every estimation frame, tracked in between
            if (block == 0) {
                r_ao = r_init;
                r_pgd = r_init;
            } else {
                r_ao.r = 0.5 * r_ao.r + 0.5 * r_init.r;
                r_pgd.r = 0.5 * r_pgd.r + 0.5 * r_init.r;
            }

            AoOptions ao_opt;
            AoResult ao = optimize_ao(h_est, r_ao.r, ao_opt, have_prev ? &prev_ao : nullptr);
            if (!have_prev) {
                prev_ao = ao.beams;
                prev_pgd = ao.beams;  // acquisition: tracking starts from a full solve
                have_prev = true;
            } else {
                prev_pgd = beam_track_pgd(prev_pgd, h_est, r_pgd.r, ao_opt.power_budget, 0.05, 5);
                // the tracker's beams are one more start for the full solve
                const AoResult ao2 = optimize_ao(h_est, r_ao.r, ao_opt, &prev_pgd);
                if (sinr_db(ao2.beams, h_est, r_ao.r) > sinr_db(ao.beams, h_est, r_ao.r)) ao = ao2;
                prev_ao = ao.beams;
            }
            const BeamformerSet ss = ss_hb(h_est, gs_dict, scn.arrays.n_rf_gs, ao_opt.power_budget);

            for (int df = 0; df < opt.frames_per_estimation; ++df) {
                const chan::PathSet paths_f = rotated(base, drift * frame_counter);
                std::vector<int> bits(static_cast<std::size_t>(bits_per_frame));
                for (auto& b : bits) b = static_cast<int>(bit_rng.uniform_index(2));
                const std::uint64_t frame_seed = derive_seed(point_seed, 0xD000 + frame_counter);

                std::vector<CMat> h_for_eq = h_est;
                if (opt.genie_csi) {
                    h_for_eq.clear();
                }

                auto run_scheme = [&](const BeamformerSet& beams, bool feedback,
                                      DmeCovariance* r_track) -> long {
                    const auto fr = sim::realize_beamformed_frame(scn, beams.tx_beam(), bits,
                                                                  paths_f, t_now, frame_seed);
                    const std::vector<CMat>* h_ptr = &h_est;
                    std::vector<CMat> genie;
                    if (opt.genie_csi) {
                        genie.reserve(nonnull.size());
                        for (int pos : nonnull) genie.push_back(fr.h_truth[static_cast<std::size_t>(pos)]);
                        h_ptr = &genie;
                    }
                    const auto stats = demodulate_frame(scn, fr, beams.combiner, beams.tx_beam(),
                                                        *h_ptr, nonnull,
                                                        opt.genie_csi ? fr.cfo_true : f_hat, bits,
                                                        feedback);
                    if (feedback && r_track)
                        *r_track = covariance_feedback_update(*r_track, stats.rx_fd, stats.decided,
                                                              stats.h_eff_ant, stats.erased, 0.9);
                    return stats.bit_errors;
                };

                errors_ao += run_scheme(prev_ao, !opt.genie_csi, &r_ao);
                errors_pgd += run_scheme(prev_pgd, !opt.genie_csi, &r_pgd);
                errors_ss += run_scheme(ss, false, nullptr);

                bits_done += bits_per_frame;
                t_now += frame_duration;
                ++frame_counter;
            }
        }
        out.ber_ao.push_back(static_cast<double>(errors_ao) / static_cast<double>(bits_done));
        out.ber_pgd.push_back(static_cast<double>(errors_pgd) / static_cast<double>(bits_done));
        out.ber_sshb.push_back(static_cast<double>(errors_ss) / static_cast<double>(bits_done));
        out.bits_per_point = bits_done;
    }
    return out;
}

}  // namespace aerosim::beams
