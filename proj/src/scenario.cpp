#include "aerosim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aerosim/dsp.hpp"
#include "aerosim/rng.hpp"

namespace aerosim::sim {

namespace {

chan::CVec random_unit_beam(Rng& rng, int n) {
    chan::CVec w(n);
    const double amp = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < n; ++i) {
        const double ph = rng.uniform(0.0, kTwoPi);
        w(i) = std::polar(amp, ph);
    }
    return w;
}

/// Apply the channel per beam section: each section's waveform (zero outside
/// its span) goes through `paths` with the section's beam, with margins so
/// delayed and interpolated tails land in the right place.
std::vector<SignalBuffer> apply_sectioned(const SignalBuffer& stream,
                                          const std::vector<TxSection>& sections,
                                          const chan::PathSet& paths,
                                          const chan::ArrayConfig& arrays,
                                          double frame_start_time) {
    const std::size_t n = stream.samples.size();
    const double fs = stream.sample_rate;
    int max_delay = 0;
    for (const auto& p : paths.paths)
        max_delay = std::max(max_delay, static_cast<int>(std::ceil(p.delay * fs)));
    const int margin = max_delay + 40;

    std::vector<SignalBuffer> rx(static_cast<std::size_t>(arrays.n_ac),
                                 SignalBuffer(std::vector<cplx>(n, cplx(0, 0)), fs,
                                              frame_start_time));

    for (const TxSection& sec : sections) {
        const int pre = std::min(sec.offset, 40);
        const int start = sec.offset - pre;
        const int stop = std::min<int>(static_cast<int>(n), sec.offset + sec.length + margin);
        std::vector<cplx> slice(static_cast<std::size_t>(stop - start), cplx(0, 0));
        for (int i = 0; i < sec.length; ++i)
            slice[static_cast<std::size_t>(sec.offset - start + i)] =
                stream.samples[static_cast<std::size_t>(sec.offset + i)];
        SignalBuffer sbuf(std::move(slice), fs, frame_start_time + start / fs);
        const auto out = chan::apply(sbuf, paths, arrays, sec.beam);
        for (int a = 0; a < arrays.n_ac; ++a)
            for (std::size_t i = 0; i < out[static_cast<std::size_t>(a)].samples.size(); ++i)
                rx[static_cast<std::size_t>(a)].samples[static_cast<std::size_t>(start) + i] +=
                    out[static_cast<std::size_t>(a)].samples[i];
    }
    return rx;
}

void add_impairments(const LinkScenario& scn, FrameRealization& fr, std::uint64_t seed) {
    const auto& p = scn.ofdm_params;
    double p_sig = 0.0;
    for (const auto& b : fr.rx_clean) p_sig += b.power();
    p_sig /= static_cast<double>(fr.rx_clean.size());

    fr.rx = fr.rx_clean;
    fr.noise_var = p_sig / ratio_from_db(scn.snr_db);

    if (scn.dme_enabled) {
        const double duration = static_cast<double>(fr.rx[0].size()) / p.sample_rate;
        SignalBuffer raw = dme::realize_two_channel(scn.dme_base, duration, p.sample_rate,
                                                    derive_seed(seed, 0xD0));
        if (raw.power() > 0.0) {
            SignalBuffer ref(std::vector<cplx>(16, cplx(std::sqrt(p_sig), 0.0)), p.sample_rate);
            const auto cal = dme::calibrate_sir(raw, ref, scn.sir_db);
            fr.dme_waveform = cal.buffer;
        } else {
            fr.dme_waveform = raw;  // an empty Poisson draw stays empty
        }
        fr.dme_signature = chan::steering(scn.arrays.n_ac, scn.arrays.element_spacing,
                                          scn.dme_aoa_rad);
        for (int a = 0; a < scn.arrays.n_ac; ++a)
            for (std::size_t i = 0; i < fr.rx[static_cast<std::size_t>(a)].samples.size(); ++i)
                fr.rx[static_cast<std::size_t>(a)].samples[i] +=
                    fr.dme_signature(a) * fr.dme_waveform.samples[i];
    }

    Rng noise_rng(derive_seed(seed, 0xAE));
    const double amp = std::sqrt(fr.noise_var);
    for (int a = 0; a < scn.arrays.n_ac; ++a)
        for (auto& v : fr.rx[static_cast<std::size_t>(a)].samples)
            v += amp * noise_rng.cnormal();
}

std::vector<chan::CMat> derotated_truth(const LinkScenario& scn, const chan::PathSet& paths,
                                        double t_mid) {
    chan::PathSet shifted = paths;
    const double f_los = paths.los().doppler;
    for (auto& p : shifted.paths) p.doppler -= f_los;
    return chan::evaluate(shifted, scn.arrays, scn.ofdm_params, t_mid);
}

}  // namespace

LinkScenario LinkScenario::standard() {
    LinkScenario s;
    s.layout = ofdm::FrameLayout::standard(s.ofdm_params, 4, 4, 14, 6, 10, 26, 4);
    s.geometry.track.start = {60000.0, 25000.0, 10000.0};
    s.geometry.track.velocity = {-261.0, -80.0, 0.0};
    s.geometry.carrier_hz = 1.08e9;
    return s;
}

FrameRealization realize_estimation_frame(const LinkScenario& scn, std::uint64_t seed,
                                          const chan::PathSet* forced_paths,
                                          double frame_start_time) {
    const auto& p = scn.ofdm_params;
    const auto& f = scn.layout;
    p.validate();
    f.validate(p);

    FrameRealization fr;
    if (forced_paths) {
        fr.paths = *forced_paths;
    } else {
        fr.paths = chan::generate_paths(scn.geometry, scn.arrays, scn.rician_db, scn.n_scatter,
                                        scn.beamwidth_rad, scn.max_excess_delay_s,
                                        derive_seed(seed, 0xC0));
    }
    fr.cfo_true = fr.paths.los().doppler;

    Rng rng(derive_seed(seed, 0xB0));
    fr.short_beam = random_unit_beam(rng, scn.arrays.n_gs);
    fr.pilot_beams.resize(static_cast<std::size_t>(f.n_pilot_syms));
    for (auto& w : fr.pilot_beams) w = random_unit_beam(rng, scn.arrays.n_gs);
    fr.data_beam = random_unit_beam(rng, scn.arrays.n_gs);

    const std::vector<int> nonnull = f.nonnull_positions(p);
    fr.pilot_values.resize(static_cast<std::size_t>(f.n_pilot_syms));
    for (int s = 0; s < f.n_pilot_syms; ++s)
        fr.pilot_values[static_cast<std::size_t>(s)] = f.default_pilot_values(p, s);
    fr.data_values.assign(static_cast<std::size_t>(f.n_data_syms),
                          std::vector<cplx>(nonnull.size(), cplx(0, 0)));
    for (int s = 0; s < f.n_data_syms; ++s) {
        auto& row = fr.data_values[static_cast<std::size_t>(s)];
        std::size_t comb_slot = 0;
        for (std::size_t i = 0; i < nonnull.size(); ++i) {
            const bool is_comb = std::find(f.comb_pilot_idx.begin(), f.comb_pilot_idx.end(),
                                           nonnull[i]) != f.comb_pilot_idx.end();
            if (is_comb) {
                row[i] = f.comb_pilot_value(s, static_cast<int>(comb_slot++));
            } else {
                const std::uint64_t b = rng.next_u64();
                row[i] = dsp::qpsk_map(b & 1, (b >> 1) & 1);
            }
        }
    }

    SignalBuffer stream = ofdm::modulate_frame(p, f, f.default_short_values(p), fr.pilot_values,
                                               fr.data_values);

    std::vector<TxSection> sections;
    sections.push_back({0, f.short_section_len(p), fr.short_beam});
    for (int s = 0; s < f.n_pilot_syms; ++s)
        sections.push_back({f.pilot_sym_offset(p, s), p.symbol_len(),
                            fr.pilot_beams[static_cast<std::size_t>(s)]});
    for (int s = 0; s < f.n_data_syms; ++s)
        sections.push_back({f.data_sym_offset(p, s), p.symbol_len(), fr.data_beam});

    fr.rx_clean = apply_sectioned(stream, sections, fr.paths, scn.arrays, frame_start_time);

    const double t_mid =
        frame_start_time +
        (f.pilot_sym_offset(p, 0) +
         0.5 * static_cast<double>(f.n_pilot_syms * p.symbol_len())) / p.sample_rate;
    fr.h_truth = derotated_truth(scn, fr.paths, t_mid);

    add_impairments(scn, fr, seed);
    return fr;
}

FrameRealization realize_beamformed_frame(const LinkScenario& scn, const chan::CVec& tx_beam,
                                          const std::vector<int>& payload_bits,
                                          const chan::PathSet& paths, double frame_start_time,
                                          std::uint64_t seed) {
    const auto& p = scn.ofdm_params;
    const auto& f = scn.layout;

    FrameRealization fr;
    fr.paths = paths;
    fr.cfo_true = paths.los().doppler;
    fr.short_beam = tx_beam;
    fr.data_beam = tx_beam;
    fr.pilot_beams.assign(static_cast<std::size_t>(f.n_pilot_syms), tx_beam);

    const std::vector<int> nonnull = f.nonnull_positions(p);
    const std::vector<int> data_pos = f.data_positions(p);
    const std::size_t bits_per_sym = 2 * data_pos.size();
    if (payload_bits.size() != bits_per_sym * static_cast<std::size_t>(f.n_data_syms))
        throw std::invalid_argument("realize_beamformed_frame: payload bit count mismatch");

    fr.pilot_values.resize(static_cast<std::size_t>(f.n_pilot_syms));
    for (int s = 0; s < f.n_pilot_syms; ++s)
        fr.pilot_values[static_cast<std::size_t>(s)] = f.default_pilot_values(p, s);
    fr.data_values.assign(static_cast<std::size_t>(f.n_data_syms),
                          std::vector<cplx>(nonnull.size(), cplx(0, 0)));
    std::size_t bit = 0;
    for (int s = 0; s < f.n_data_syms; ++s) {
        auto& row = fr.data_values[static_cast<std::size_t>(s)];
        std::size_t comb_slot = 0;
        for (std::size_t i = 0; i < nonnull.size(); ++i) {
            const bool is_comb = std::find(f.comb_pilot_idx.begin(), f.comb_pilot_idx.end(),
                                           nonnull[i]) != f.comb_pilot_idx.end();
            if (is_comb) {
                row[i] = f.comb_pilot_value(s, static_cast<int>(comb_slot++));
            } else {
                row[i] = dsp::qpsk_map(payload_bits[bit], payload_bits[bit + 1]);
                bit += 2;
            }
        }
    }

    SignalBuffer stream = ofdm::modulate_frame(p, f, f.default_short_values(p), fr.pilot_values,
                                               fr.data_values);
    std::vector<TxSection> sections{{0, f.frame_len(p), tx_beam}};
    fr.rx_clean = apply_sectioned(stream, sections, fr.paths, scn.arrays, frame_start_time);

    const double t_mid = frame_start_time + 0.5 * stream.duration();
    fr.h_truth = derotated_truth(scn, fr.paths, t_mid);

    add_impairments(scn, fr, seed);
    return fr;
}

Eigen::MatrixXcd channel_prior_covariance(const LinkScenario& scn, int n_realizations,
                                          std::uint64_t seed, double angle_spread_rad) {
    // Long-term statistics over the flight corridor: the receiver knows the
    // ensemble (angle sector, Rician factor, scatter law), not the
    // instantaneous geometry or the absolute carrier phase.
    const int dim = scn.arrays.n_ac * scn.arrays.n_gs;
    Eigen::MatrixXcd cov = Eigen::MatrixXcd::Zero(dim, dim);
    Rng rng(derive_seed(seed, 0xF0));

    const chan::Vec3 ac_pos = scn.geometry.track.position(scn.geometry.time);
    const chan::Vec3 rel{ac_pos[0] - scn.geometry.gs_position[0],
                         ac_pos[1] - scn.geometry.gs_position[1],
                         ac_pos[2] - scn.geometry.gs_position[2]};
    const double range = std::sqrt(rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]);
    const double aod_nom = std::acos(std::min(1.0, std::max(-1.0, rel[0] / range)));

    int pooled = 0;
    for (int r = 0; r < n_realizations; ++r) {
        chan::PathSet paths;
        chan::Path los;
        los.gain = std::polar(1.0, rng.uniform(0.0, kTwoPi));
        los.delay = 0.0;
        los.aod = aod_nom + rng.uniform(-angle_spread_rad, angle_spread_rad);
        los.aoa = rng.uniform(0.2, kPi - 0.2);
        paths.paths.push_back(los);

        double scatter_energy = 0.0;
        std::vector<cplx> raw(static_cast<std::size_t>(scn.n_scatter));
        for (auto& g : raw) {
            g = rng.cnormal();
            scatter_energy += std::norm(g);
        }
        const double target = 1.0 / ratio_from_db(scn.rician_db);
        const double scale = scn.n_scatter > 0 ? std::sqrt(target / scatter_energy) : 0.0;
        for (int l = 0; l < scn.n_scatter; ++l) {
            chan::Path sp;
            sp.gain = raw[static_cast<std::size_t>(l)] * scale;
            sp.delay = rng.uniform(0.0, scn.max_excess_delay_s);
            sp.aod = los.aod + rng.uniform(-scn.beamwidth_rad / 2.0, scn.beamwidth_rad / 2.0);
            sp.aoa = los.aoa + rng.uniform(-scn.beamwidth_rad / 2.0, scn.beamwidth_rad / 2.0);
            paths.paths.push_back(sp);
        }

        const auto h = chan::evaluate(paths, scn.arrays, scn.ofdm_params, 0.0);
        for (std::size_t ki = 0; ki < h.size(); ki += 16) {
            const Eigen::Map<const Eigen::VectorXcd> v(h[ki].data(), dim);
            cov.noalias() += v * v.adjoint();
            ++pooled;
        }
    }
    return cov / static_cast<double>(pooled);
}

}  // namespace aerosim::sim
