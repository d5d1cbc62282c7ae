#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "aerosim/dme.hpp"
#include "aerosim/dsp.hpp"
#include "aerosim/estimation.hpp"
#include "aerosim/rng.hpp"

using namespace aerosim;
using est::CMat;
using est::CVec;

namespace {

SignalBuffer add_awgn(const SignalBuffer& in, double snr_db, std::uint64_t seed) {
    SignalBuffer out = in;
    Rng rng(seed);
    const double amp = std::sqrt(in.power() / ratio_from_db(snr_db));
    for (auto& v : out.samples) v += amp * rng.cnormal();
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("estimation");

TEST_CASE("cfo: zero offset, noiseless") {
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 8, 4, 8, 6, 0, 0, 4);
    SignalBuffer tx = ofdm::modulate_frame(p, f, f.default_short_values(p), {}, {});
    const auto cfo = est::estimate_cfo({tx}, p, f);
    CHECK(std::abs(cfo.f_hat) <= 1e-6);
    CHECK(cfo.confidence > 0.99);
}

TEST_CASE("cfo: 1 kHz at 10 dB SNR within 20 Hz at the 95th percentile") {
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 32, 4, 8, 6, 0, 0, 4);
    std::vector<double> errs;
    for (int s = 0; s < 100; ++s) {
        SignalBuffer tx = ofdm::modulate_frame(p, f, f.default_short_values(p), {}, {});
        SignalBuffer rx = est::compensate_cfo(tx, -1000.0);  // inject +1 kHz
        rx = add_awgn(rx, 10.0, derive_seed(11, s));
        errs.push_back(std::abs(est::estimate_cfo({rx}, p, f).f_hat - 1000.0));
    }
    std::sort(errs.begin(), errs.end());
    CHECK(errs[94] <= 20.0);
}

TEST_CASE("cfo: edge of the acquisition range recovers, beyond aliases by one period") {
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 8, 4, 8, 6, 0, 0, 4);
    const double range = est::cfo_acquisition_range(p, f);
    CHECK(range == doctest::Approx(p.sample_rate / (2.0 * 16)));

    SignalBuffer tx = ofdm::modulate_frame(p, f, f.default_short_values(p), {}, {});
    const double eps = 200.0;

    SignalBuffer near_edge = est::compensate_cfo(tx, -(range - eps));
    CHECK(est::estimate_cfo({near_edge}, p, f).f_hat ==
          doctest::Approx(range - eps).epsilon(1e-6));

    SignalBuffer beyond = est::compensate_cfo(tx, -(range + eps));
    CHECK(est::estimate_cfo({beyond}, p, f).f_hat ==
          doctest::Approx(range + eps - 2.0 * range).epsilon(1e-6));
}

TEST_CASE("cfo compensation: identity at zero, exact inverse of an applied offset") {
    Rng rng(3);
    std::vector<cplx> x(256);
    for (auto& v : x) v = rng.cnormal();
    SignalBuffer buf(x, 625000.0, 0.25);

    const SignalBuffer same = est::compensate_cfo(buf, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.samples[i] == buf.samples[i]);

    const SignalBuffer shifted = est::compensate_cfo(buf, -700.0);
    const SignalBuffer back = est::compensate_cfo(shifted, 700.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(back.samples[i] - buf.samples[i]) <= 1e-9);
}

TEST_CASE("cfo compensation: residual subcarrier leakage after derotating 1 kHz") {
    ofdm::OfdmParams p;
    std::vector<cplx> used(static_cast<std::size_t>(p.used_subcarriers), cplx(0, 0));
    used[10] = cplx(1.0, 0.0);
    SignalBuffer sym(ofdm::modulate_symbol(p, used), p.sample_rate);
    SignalBuffer off = est::compensate_cfo(sym, -1000.0);
    SignalBuffer fixed = est::compensate_cfo(off, 1000.0);
    const auto fd = ofdm::demodulate_symbol(fixed, p, 0);
    for (int pos = 0; pos < p.used_subcarriers; ++pos) {
        if (pos == 10) continue;
        CHECK(db_from_ratio(std::norm(fd[static_cast<std::size_t>(pos)])) <= -30.0);
    }
}

TEST_CASE("dme reconstruction: interference-free symbol gives a zero estimate") {
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 4, 4, 14, 6, 1, 0, 4);
    Rng rng(5);
    std::vector<cplx> used(static_cast<std::size_t>(p.used_subcarriers), cplx(0, 0));
    for (int pos : f.nonnull_positions(p)) used[static_cast<std::size_t>(pos)] = rng.cnormal();
    SignalBuffer sym(ofdm::modulate_symbol(p, used), p.sample_rate);
    const auto fd = ofdm::demodulate_symbol(sym, p, 0);
    std::vector<int> null_signed;
    for (int pos : f.null_idx) null_signed.push_back(p.signed_index(pos));
    const auto rec = est::reconstruct_dme(ofdm::extract_nulls(fd, f), null_signed, p.fft_size, 10);
    double energy = 0.0;
    for (const auto& v : rec.estimate) energy += std::norm(v);
    CHECK(energy <= 1e-20);
}

TEST_CASE("dme reconstruction: noiseless pulse pair recovered from the null set") {
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 4, 4, 14, 6, 1, 0, 4);
    dme::DmeParams dp;
    std::vector<int> null_signed;
    for (int pos : f.null_idx) null_signed.push_back(p.signed_index(pos));
    for (double t0 : {8e-6, 12.8e-6, 17.31e-6}) {
        const auto buf = dme::synthesize(dp, {t0}, 102.4e-6, p.sample_rate);
        std::vector<cplx> win(buf.samples.begin(), buf.samples.begin() + p.fft_size);
        const auto bins = dsp::fft_unitary(win);
        std::vector<cplx> null_obs;
        for (int ks : null_signed) null_obs.push_back(bins[static_cast<std::size_t>(p.fft_bin(ks))]);
        const auto rec = est::reconstruct_dme(null_obs, null_signed, p.fft_size, 12);
        double err = 0.0, ref = 0.0;
        for (int n = 0; n < p.fft_size; ++n) {
            err += std::norm(rec.estimate[static_cast<std::size_t>(n)] - win[static_cast<std::size_t>(n)]);
            ref += std::norm(win[static_cast<std::size_t>(n)]);
        }
        CHECK(db_from_ratio(err / ref) <= -20.0);
        CHECK(rec.reliable);
    }
}

TEST_CASE("dme reconstruction: greedy matches exhaustive search on a 16-point toy") {
    // this observation set has coherence 0.306 < 1/3, so greedy pursuit
    // provably recovers any 2-sparse support exactly
    const int n = 16;
    const std::vector<int> null_signed{-8, -5, -4, -3, -2, 1, 5, 6};
    CMat f_rows(static_cast<int>(null_signed.size()), n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t r = 0; r < null_signed.size(); ++r)
        for (int c = 0; c < n; ++c)
            f_rows(static_cast<int>(r), c) = std::polar(scale, -kTwoPi * null_signed[r] * c / n);

    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int i = static_cast<int>(rng.uniform_index(n));
        int j = static_cast<int>(rng.uniform_index(n));
        if (j == i) j = (j + 5) % n;
        CVec d = CVec::Zero(n);
        d(i) = rng.cnormal() * 3.0;
        d(j) = rng.cnormal() * 2.0;
        const CVec y = f_rows * d;

        std::vector<cplx> y_obs(y.data(), y.data() + y.size());
        const auto rec = est::reconstruct_dme(y_obs, null_signed, n, 2);

        // exhaustive search over all supports of size <= 2
        double best = 1e300;
        std::pair<int, int> best_sup{-1, -1};
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b) {
                CMat sub(static_cast<int>(null_signed.size()), b == a ? 1 : 2);
                sub.col(0) = f_rows.col(a);
                if (b != a) sub.col(1) = f_rows.col(b);
                const CVec c = sub.colPivHouseholderQr().solve(y);
                const double res = (y - sub * c).squaredNorm();
                if (res < best - 1e-12) {
                    best = res;
                    best_sup = {a, b};
                }
            }
        std::vector<int> got;
        for (int k = 0; k < n; ++k)
            if (std::abs(rec.estimate[static_cast<std::size_t>(k)]) > 1e-9) got.push_back(k);
        std::sort(got.begin(), got.end());
        REQUIRE(got.size() == 2);
        CHECK(got[0] == std::min(best_sup.first, best_sup.second));
        CHECK(got[1] == std::max(best_sup.first, best_sup.second));
    }
}

TEST_CASE("excision: zero estimate is the identity, perfect estimate removes the pulse") {
    Rng rng(23);
    std::vector<cplx> window(64), d_true(64, cplx(0, 0));
    for (auto& v : window) v = rng.cnormal();
    for (int n = 20; n < 26; ++n) d_true[static_cast<std::size_t>(n)] = 4.0 * rng.cnormal();
    std::vector<cplx> corrupted(64);
    for (int n = 0; n < 64; ++n) corrupted[static_cast<std::size_t>(n)] = window[static_cast<std::size_t>(n)] + d_true[static_cast<std::size_t>(n)];

    const auto same = est::excise(corrupted, std::vector<cplx>(64, cplx(0, 0)));
    for (int n = 0; n < 64; ++n) CHECK(same[static_cast<std::size_t>(n)] == corrupted[static_cast<std::size_t>(n)]);

    const auto cleaned = est::excise(corrupted, d_true);
    double res_dme = 0.0, dme_energy = 0.0;
    for (int n = 0; n < 64; ++n) {
        res_dme += std::norm(cleaned[static_cast<std::size_t>(n)] - window[static_cast<std::size_t>(n)]);
        dme_energy += std::norm(d_true[static_cast<std::size_t>(n)]);
    }
    CHECK(db_from_ratio(std::max(res_dme, 1e-30) / dme_energy) <= -40.0);
}

TEST_CASE("excision never raises energy when the estimate tracks the interference") {
    // positively correlated estimates remove energy: checked over seeds
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 4, 4, 14, 6, 1, 0, 4);
    dme::DmeParams dp;
    std::vector<int> null_signed;
    for (int pos : f.null_idx) null_signed.push_back(p.signed_index(pos));
    int tested = 0;
    for (int s = 0; s < 100; ++s) {
        Rng rng(derive_seed(31, s));
        const double t0 = rng.uniform(0.0, 80e-6);
        auto buf = dme::synthesize(dp, {t0}, 102.4e-6, p.sample_rate);
        std::vector<cplx> win(buf.samples.begin(), buf.samples.begin() + p.fft_size);
        for (auto& v : win) v += 0.05 * rng.cnormal();
        const auto bins = dsp::fft_unitary(win);
        std::vector<cplx> null_obs;
        for (int ks : null_signed) null_obs.push_back(bins[static_cast<std::size_t>(p.fft_bin(ks))]);
        const auto rec = est::reconstruct_dme(null_obs, null_signed, p.fft_size, 12);

        double dot = 0.0, est_norm = 0.0, true_norm = 0.0;
        for (int n = 0; n < p.fft_size; ++n) {
            const cplx d_true = buf.samples[static_cast<std::size_t>(n)];
            dot += (std::conj(rec.estimate[static_cast<std::size_t>(n)]) * d_true).real();
            est_norm += std::norm(rec.estimate[static_cast<std::size_t>(n)]);
            true_norm += std::norm(d_true);
        }
        if (est_norm <= 0.0 || dot / std::sqrt(est_norm * true_norm) <= 0.7) continue;
        ++tested;
        const auto cleaned = est::excise(win, rec.estimate);
        double before = 0.0, after = 0.0;
        for (int n = 0; n < p.fft_size; ++n) {
            before += std::norm(win[static_cast<std::size_t>(n)]);
            after += std::norm(cleaned[static_cast<std::size_t>(n)]);
        }
        CHECK(after <= before * (1.0 + 1e-12));
    }
    CHECK(tested >= 80);
}

TEST_CASE("gmmv: single on-grid path is found exactly") {
    chan::ArrayConfig arrays;
    const auto dict = est::build_dictionary(arrays, 2, 2);
    Rng rng(41);
    std::vector<chan::CVec> beams(6);
    for (auto& w : beams) {
        w.resize(arrays.n_gs);
        for (int i = 0; i < arrays.n_gs; ++i) w(i) = rng.cnormal() / std::sqrt(32.0);
    }
    const int atom_id = 3 * 64 + 41;
    const CMat atom = dict.atom(atom_id);
    const int k = 10;
    CMat y(static_cast<int>(beams.size()) * arrays.n_ac, k);
    for (int ki = 0; ki < k; ++ki) {
        const cplx coeff = std::polar(1.0, 0.37 * ki);
        for (std::size_t pb = 0; pb < beams.size(); ++pb) {
            const chan::CVec v = atom * beams[pb] * coeff;
            for (int a = 0; a < arrays.n_ac; ++a) y(static_cast<int>(pb) * arrays.n_ac + a, ki) = v(a);
        }
    }
    const CMat phi = est::sensing_matrix(dict, beams);
    const auto res = est::estimate_channel_gmmv(y, phi, dict, 4, 1e-8);
    REQUIRE(res.support.size() == 1);
    CHECK(res.support[0] == atom_id);

    std::vector<CMat> truth(static_cast<std::size_t>(k));
    for (int ki = 0; ki < k; ++ki) truth[static_cast<std::size_t>(ki)] = atom * std::polar(1.0, 0.37 * ki);
    CHECK(est::nmse_db(res.h_hat, truth) <= -60.0);
}

TEST_CASE("gmmv: joint support matches exhaustive search on a 4-atom toy") {
    // 2 subcarriers, 4 orthogonal atoms (critically sampled grid) sounded by
    // basis beams: greedy and exhaustive search must agree
    chan::ArrayConfig arrays;
    arrays.n_gs = 4;
    arrays.n_ac = 1;
    arrays.n_rf_gs = 1;
    const auto dict = est::build_dictionary(arrays, 1, 1);
    REQUIRE(dict.n_atoms() == 4);
    Rng rng(47);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<chan::CVec> beams(8);
        for (std::size_t b = 0; b < beams.size(); ++b) {
            beams[b] = chan::CVec::Zero(4);
            beams[b](static_cast<int>(b % 4)) = cplx(1.0, 0.0);
        }
        const CMat phi = est::sensing_matrix(dict, beams);
        const int a0 = static_cast<int>(rng.uniform_index(4));
        int a1 = static_cast<int>(rng.uniform_index(4));
        if (a1 == a0) a1 = (a1 + 1) % 4;
        CMat y = CMat::Zero(static_cast<int>(beams.size()), 2);
        for (int ki = 0; ki < 2; ++ki)
            y.col(ki) = phi.col(a0) * rng.cnormal() + phi.col(a1) * rng.cnormal();

        const auto res = est::estimate_channel_gmmv(y, phi, dict, 2, 1e-10);

        double best = 1e300;
        std::pair<int, int> best_sup{0, 0};
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j) {
                CMat sub(static_cast<int>(beams.size()), 2);
                sub.col(0) = phi.col(i);
                sub.col(1) = phi.col(j);
                const CMat c = sub.colPivHouseholderQr().solve(y);
                const double r = (y - sub * c).squaredNorm();
                if (r < best - 1e-12) {
                    best = r;
                    best_sup = {i, j};
                }
            }
        std::vector<int> got = res.support;
        std::sort(got.begin(), got.end());
        REQUIRE(got.size() == 2);
        CHECK(got[0] == best_sup.first);
        CHECK(got[1] == best_sup.second);
    }
}

TEST_CASE("gmmv: one support shared across subcarriers helps against per-subcarrier recovery") {
    chan::ArrayConfig arrays;
    arrays.n_gs = 16;
    arrays.n_ac = 2;
    const auto dict = est::build_dictionary(arrays, 2, 1);
    Rng rng(53);
    int joint_wrong = 0, solo_wrong = 0, total = 0;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<chan::CVec> beams(4);
        for (auto& w : beams) {
            w.resize(16);
            for (int i = 0; i < 16; ++i) w(i) = rng.cnormal() / 4.0;
        }
        const CMat phi = est::sensing_matrix(dict, beams);
        std::vector<int> sup;
        while (sup.size() < 3) {
            const int c = static_cast<int>(rng.uniform_index(dict.n_atoms()));
            if (std::find(sup.begin(), sup.end(), c) == sup.end()) sup.push_back(c);
        }
        const int k = 8;
        CMat y = CMat::Zero(phi.rows(), k);
        for (int ki = 0; ki < k; ++ki)
            for (int s : sup) y.col(ki) += phi.col(s) * rng.cnormal();
        CMat noisy = y;
        for (int r = 0; r < noisy.rows(); ++r)
            for (int c = 0; c < noisy.cols(); ++c) noisy(r, c) += 0.15 * rng.cnormal();

        std::sort(sup.begin(), sup.end());
        auto wrong = [&](std::vector<int> got) {
            std::sort(got.begin(), got.end());
            return got != sup;
        };
        joint_wrong += wrong(est::estimate_channel_gmmv(noisy, phi, dict, 3, 1e-9).support) ? 1 : 0;
        for (int ki = 0; ki < k; ++ki) {
            solo_wrong +=
                wrong(est::estimate_channel_gmmv(noisy.col(ki), phi, dict, 3, 1e-9).support) ? 1 : 0;
            ++total;
        }
    }
    const double joint_rate = joint_wrong / 40.0;
    const double solo_rate = static_cast<double>(solo_wrong) / total;
    CHECK(joint_rate <= solo_rate + 1e-12);
}

TEST_CASE("lmmse: exact low-rank prior and no noise recovers the channel") {
    chan::ArrayConfig arrays;
    arrays.n_gs = 8;
    arrays.n_ac = 2;
    const int dim = 16;
    Rng rng(59);
    // ensemble with two fixed directions, random gains: rank-2 prior
    const chan::CVec a1 = chan::steering(2, 0.5, 1.1), g1 = chan::steering(8, 0.5, 0.7);
    const chan::CVec a2 = chan::steering(2, 0.5, 2.0), g2 = chan::steering(8, 0.5, 1.9);
    CMat m1 = a1 * g1.adjoint(), m2 = a2 * g2.adjoint();
    Eigen::Map<CVec> v1(m1.data(), dim), v2(m2.data(), dim);
    CMat prior = v1 * v1.adjoint() + 0.5 * v2 * v2.adjoint();

    std::vector<chan::CVec> beams(5);
    for (auto& w : beams) {
        w.resize(8);
        for (int i = 0; i < 8; ++i) w(i) = rng.cnormal();
    }
    const cplx c1 = rng.cnormal(), c2 = rng.cnormal();
    const CMat h_true = c1 * m1 + std::sqrt(0.5) * c2 * m2;
    CMat y(10, 1);
    for (int p = 0; p < 5; ++p) {
        const chan::CVec v = h_true * beams[static_cast<std::size_t>(p)];
        y(p * 2 + 0, 0) = v(0);
        y(p * 2 + 1, 0) = v(1);
    }
    const auto got = est::estimate_channel_lmmse(y, beams, prior, 1e-12, 2, 8);
    CHECK(est::nmse_db(got, {h_true}) <= -40.0);
}

TEST_CASE("lmmse: infinite noise shrinks to the zero prior mean") {
    chan::ArrayConfig arrays;
    std::vector<chan::CVec> beams(2, chan::CVec::Ones(4));
    CMat prior = CMat::Identity(8, 8);
    CMat y = CMat::Ones(4, 3);
    const auto got = est::estimate_channel_lmmse(y, beams, prior, 1e12, 2, 4);
    for (const auto& h : got) CHECK(h.norm() <= 1e-6);
}

TEST_CASE("lmmse: scalar toy against the hand-worked gain") {
    // one GS antenna pair, one aircraft antenna, beam [1,0]:
    // C = diag(2,1), noise 1  =>  x_hat = [2/(2+1) * y, 0]
    std::vector<chan::CVec> beams(1);
    beams[0].resize(2);
    beams[0] << cplx(1, 0), cplx(0, 0);
    CMat prior = CMat::Zero(2, 2);
    prior(0, 0) = 2.0;
    prior(1, 1) = 1.0;
    CMat y(1, 1);
    y(0, 0) = cplx(1.0, -0.5);
    const auto got = est::estimate_channel_lmmse(y, beams, prior, 1.0, 1, 2);
    CHECK(std::abs(got[0](0, 0) - cplx(2.0 / 3.0, -1.0 / 3.0)) <= 1e-9);
    CHECK(std::abs(got[0](0, 1)) <= 1e-9);
}

TEST_CASE("nmse sentinel and scale behavior") {
    CVec t(3);
    t << cplx(1, 0), cplx(0, 1), cplx(-1, 1);
    CHECK(est::nmse_db(t, t) == -300.0);
    CHECK(est::nmse_db(CVec::Zero(3).eval(), t) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(est::nmse_db((2.0 * t).eval(), t) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("angle tracking: noiseless linear trajectory converges") {
    const double dt = 0.1, rate = 0.02;
    std::vector<double> zs;
    for (int k = 1; k <= 20; ++k) zs.push_back(0.5 + rate * dt * k);
    const auto pred = est::predict_spatial_csi(0.5, 0.0, dt, zs, 1e-10, 1e-12);
    CHECK(std::abs(pred.angle - (0.5 + rate * dt * 21)) <= 1e-3);
}

TEST_CASE("angle tracking: zero process noise reaches the vanishing Riccati fixed point") {
    est::AngleKalman kf(0.3, 0.0, 1.0, 0.0, 1e-4);
    for (int k = 0; k < 20000; ++k) {
        kf.predict(0.01);
        kf.update(0.3);
    }
    CHECK(kf.angle_variance() <= 1e-6);
    CHECK(std::abs(kf.angle() - 0.3) <= 1e-4);
}

TEST_CASE("angle tracking: covariance grows through measurement gaps") {
    est::AngleKalman kf(0.3, 0.01, 0.1, 1e-6, 1e-4);
    for (int k = 0; k < 50; ++k) {
        kf.predict(0.1);
        kf.update(0.3 + 0.001 * k);
    }
    double prev = kf.angle_variance();
    for (int k = 0; k < 10; ++k) {
        kf.predict(0.1);
        CHECK(kf.angle_variance() > prev);
        prev = kf.angle_variance();
    }
}

TEST_CASE("low-dimensional tracking: single tap and two-tap channels") {
    ofdm::OfdmParams p;
    ofdm::FrameLayout f = ofdm::FrameLayout::standard(p, 2, 4, 14, 8, 0, 12, 4);
    chan::ArrayConfig one;
    one.n_gs = 1;
    one.n_ac = 1;
    one.n_rf_gs = 1;

    SUBCASE("line-of-sight only: one dominant tap") {
        chan::PathSet paths;
        chan::Path los;
        los.gain = cplx(0.9, -0.4);
        paths.paths.push_back(los);
        std::vector<int> bits(2 * f.data_positions(p).size() * f.n_data_syms, 0);
        Rng rng(61);
        for (auto& b : bits) b = static_cast<int>(rng.uniform_index(2));
        sim::LinkScenario scn;
        scn.arrays = one;
        scn.layout = f;
        scn.dme_enabled = false;
        scn.snr_db = 300.0;
        const auto fr = sim::realize_beamformed_frame(scn, chan::CVec::Ones(1), bits, paths, 0.0, 1);
        const auto low = est::track_low_dim(fr.rx[0], p, f, 0, 4);
        double total = low.tap_coeffs.squaredNorm();
        REQUIRE(!low.tap_delays.empty());
        CHECK(std::norm(low.tap_coeffs(0)) >= 0.99 * total);
        CHECK(low.tap_delays[0] == 0);
    }

    SUBCASE("known two-tap channel recovered") {
        chan::PathSet paths;
        chan::Path t0, t1;
        t0.gain = cplx(1.0, 0.2);
        t1.gain = cplx(-0.35, 0.5);
        t1.delay = 3.0 / p.sample_rate;
        paths.paths = {t0, t1};
        std::vector<int> bits(2 * f.data_positions(p).size() * f.n_data_syms, 1);
        sim::LinkScenario scn;
        scn.arrays = one;
        scn.layout = f;
        scn.dme_enabled = false;
        scn.snr_db = 300.0;
        const auto fr = sim::realize_beamformed_frame(scn, chan::CVec::Ones(1), bits, paths, 0.0, 2);
        const auto low = est::track_low_dim(fr.rx[0], p, f, 0, 4);
        std::vector<std::pair<int, cplx>> got;
        for (std::size_t i = 0; i < low.tap_delays.size(); ++i)
            if (std::abs(low.tap_coeffs(static_cast<int>(i))) > 1e-3)
                got.emplace_back(low.tap_delays[i], low.tap_coeffs(static_cast<int>(i)));
        std::sort(got.begin(), got.end(), [](auto& a, auto& b) { return a.first < b.first; });
        REQUIRE(got.size() == 2);
        CHECK(got[0].first == 0);
        CHECK(got[1].first == 3);
        CHECK(std::abs(got[0].second - t0.gain) <= 1e-6);
        CHECK(std::abs(got[1].second - t1.gain) <= 1e-6);
    }
}

TEST_CASE("high-dimensional tracking: verdicts separate clean from corrupted frames") {
    sim::LinkScenario scn = sim::LinkScenario::standard();
    scn.layout = ofdm::FrameLayout::standard(scn.ofdm_params, 4, 4, 14, 8, 6, 12, 4);
    scn.snr_db = 25.0;
    scn.rician_db = 25.0;  // tracking happens on strong line-of-sight legs
    const auto& p = scn.ofdm_params;
    const auto& f = scn.layout;
    const auto dict = est::build_dictionary(scn.arrays, 2, 2);

    int clean_ok = 0, clean_tight = 0, corrupted_flagged = 0;
    const int n_seeds = 25;
    for (int s = 0; s < n_seeds; ++s) {
        for (bool with_dme : {false, true}) {
            scn.dme_enabled = with_dme;
            scn.sir_db = -3.8;
            scn.dme_base.arrival_rate = 5000.0;  // pulses in every tracking frame
            const auto fr = sim::realize_estimation_frame(scn, derive_seed(71, s));

            // combiner that nulls the interference signature while keeping gain
            const chan::CVec sig = chan::steering(scn.arrays.n_ac, 0.5, scn.dme_aoa_rad);
            chan::CVec h0 = fr.h_truth[10] * fr.data_beam;
            chan::CVec w_ac = h0 - sig * (sig.adjoint() * h0)(0) / static_cast<double>(scn.arrays.n_ac);
            w_ac.normalize();

            SignalBuffer combined(std::vector<cplx>(fr.rx[0].size(), cplx(0, 0)), p.sample_rate);
            for (int a = 0; a < scn.arrays.n_ac; ++a)
                for (std::size_t i = 0; i < combined.samples.size(); ++i)
                    combined.samples[i] += std::conj(w_ac(a)) * fr.rx[static_cast<std::size_t>(a)].samples[i];
            combined = est::compensate_cfo(combined, fr.cfo_true);
            const auto low = est::track_low_dim(combined, p, f, 0, 6);

            // per-antenna pilot observations, no excision: the tracking stage
            std::vector<SignalBuffer> comp(static_cast<std::size_t>(scn.arrays.n_ac));
            for (int a = 0; a < scn.arrays.n_ac; ++a)
                comp[static_cast<std::size_t>(a)] = est::compensate_cfo(fr.rx[static_cast<std::size_t>(a)], fr.cfo_true);
            const auto nonnull = f.nonnull_positions(p);
            CMat y(f.n_pilot_syms * scn.arrays.n_ac, static_cast<int>(nonnull.size()));
            for (int sy = 0; sy < f.n_pilot_syms; ++sy)
                for (int a = 0; a < scn.arrays.n_ac; ++a) {
                    const auto fd = ofdm::demodulate_symbol(comp[static_cast<std::size_t>(a)], p,
                                                            f.pilot_sym_offset(p, sy));
                    for (std::size_t ki = 0; ki < nonnull.size(); ++ki)
                        y(sy * scn.arrays.n_ac + a, static_cast<int>(ki)) =
                            fd[static_cast<std::size_t>(nonnull[ki])] /
                            fr.pilot_values[static_cast<std::size_t>(sy)][ki];
                }

            CVec low_nonnull(static_cast<int>(nonnull.size()));
            for (std::size_t ki = 0; ki < nonnull.size(); ++ki)
                low_nonnull(static_cast<int>(ki)) = low.h_hat(nonnull[ki]);

            // prediction window around the planned-track angles
            const double u_gs = std::cos(fr.paths.los().aod);
            const double u_ac = std::cos(fr.paths.los().aoa);
            const int g_gs = static_cast<int>(dict.gs_atoms.cols());
            const int g_ac = static_cast<int>(dict.ac_atoms.cols());
            const int c_gs = static_cast<int>(std::lround((u_gs + 1.0) * g_gs / 2.0));
            const int c_ac = static_cast<int>(std::lround((u_ac + 1.0) * g_ac / 2.0));
            std::vector<int> gs_win, ac_win;
            for (int j = std::max(0, c_gs - 6); j <= std::min(g_gs - 1, c_gs + 6); ++j)
                gs_win.push_back(j);
            for (int i = std::max(0, c_ac - 2); i <= std::min(g_ac - 1, c_ac + 2); ++i)
                ac_win.push_back(i);

            const auto res = est::track_high_dim(y, fr.pilot_beams, dict, gs_win, ac_win, 8,
                                                 5e-3, fr.data_beam, w_ac, low_nonnull);
            if (!with_dme) {
                if (res.verdict == est::TrackingVerdict::Clean) ++clean_ok;
                if (res.consistency_nmse_db <= -20.0) ++clean_tight;
            }
            if (with_dme && res.verdict == est::TrackingVerdict::Corrupted) ++corrupted_flagged;
        }
    }
    CHECK(clean_ok >= n_seeds - 2);
    CHECK(clean_tight >= static_cast<int>(0.9 * n_seeds));
    CHECK(corrupted_flagged >= static_cast<int>(0.95 * n_seeds));
}

TEST_CASE("tracking window containing the optimum matches the full search") {
    chan::ArrayConfig arrays;
    const auto dict = est::build_dictionary(arrays, 2, 2);
    Rng rng(83);
    std::vector<chan::CVec> beams(5);
    for (auto& w : beams) {
        w.resize(arrays.n_gs);
        for (int i = 0; i < arrays.n_gs; ++i) w(i) = rng.cnormal() / std::sqrt(32.0);
    }
    const CMat phi = est::sensing_matrix(dict, beams);
    const int id = 2 * 64 + 17;
    CMat y(phi.rows(), 4);
    for (int ki = 0; ki < 4; ++ki) y.col(ki) = phi.col(id) * rng.cnormal();

    const CVec dummy_low = CVec::Ones(4);
    const chan::CVec w_gs = chan::CVec::Ones(arrays.n_gs);
    const chan::CVec w_ac = chan::CVec::Ones(arrays.n_ac);

    std::vector<int> gs_all, ac_all;
    for (int j = 0; j < 128; ++j) gs_all.push_back(j);
    for (int i = 0; i < 8; ++i) ac_all.push_back(i);
    const auto full = est::track_high_dim(y, beams, dict, gs_all, ac_all, 3, 1e-9, w_gs, w_ac,
                                          dummy_low);

    std::vector<int> gs_win;
    for (int j = 12; j <= 22; ++j) gs_win.push_back(j);
    std::vector<int> ac_win{1, 2, 3};
    const auto win = est::track_high_dim(y, beams, dict, gs_win, ac_win, 3, 1e-9, w_gs, w_ac,
                                         dummy_low);
    CHECK(!win.window_fallback);
    REQUIRE(win.estimate.support.size() == 1);
    REQUIRE(full.estimate.support.size() == 1);
    CHECK(win.estimate.support[0] == full.estimate.support[0]);
    CHECK(win.estimate.support[0] == id);

    const auto fb = est::track_high_dim(y, beams, dict, {}, {}, 3, 1e-9, w_gs, w_ac, dummy_low);
    CHECK(fb.window_fallback);
}

TEST_CASE("pipeline: excision beats the same pipeline without excision") {
    sim::LinkScenario scn = sim::LinkScenario::standard();
    scn.snr_db = 15.0;
    scn.sir_db = -3.8;
    int wins = 0;
    const int n_seeds = 15;
    for (int s = 0; s < n_seeds; ++s) {
        const auto fr = sim::realize_estimation_frame(scn, derive_seed(97, s));
        est::PipelineOptions on;
        on.run_lmmse = false;
        est::PipelineOptions off = on;
        off.excise_dme = false;
        const double with_exc = est::run_estimation_pipeline(scn, fr, on).nmse_gmmv_db;
        const double without = est::run_estimation_pipeline(scn, fr, off).nmse_gmmv_db;
        if (with_exc < without) ++wins;
    }
    CHECK(wins >= n_seeds - 1);
}

TEST_CASE("pipeline: estimators are deterministic given the frame") {
    sim::LinkScenario scn = sim::LinkScenario::standard();
    const auto fr = sim::realize_estimation_frame(scn, 12345);
    est::PipelineOptions opt;
    opt.run_lmmse = false;
    const auto r1 = est::run_estimation_pipeline(scn, fr, opt);
    const auto r2 = est::run_estimation_pipeline(scn, fr, opt);
    CHECK(r1.cfo.f_hat == r2.cfo.f_hat);
    CHECK(r1.nmse_gmmv_db == r2.nmse_gmmv_db);
    CHECK(r1.gmmv.support == r2.gmmv.support);
}

TEST_SUITE_END();
