#include "aerosim/ofdm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aerosim/dsp.hpp"
#include "aerosim/rng.hpp"

namespace aerosim::ofdm {

namespace {
constexpr std::uint64_t kTrainingSeed = 0x414252435F545253ULL;

std::vector<cplx> qpsk_sequence(std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<cplx> out(n);
    const double s = std::sqrt(0.5);
    for (int i = 0; i < n; ++i) {
        const std::uint64_t bits = rng.next_u64();
        out[i] = cplx((bits & 1) ? s : -s, (bits & 2) ? s : -s);
    }
    return out;
}
}  // namespace

void OfdmParams::validate() const {
    if (fft_size < 2) throw std::invalid_argument("ofdm: fft_size must be >= 2");
    if (used_subcarriers < 1 || used_subcarriers > fft_size - 1)
        throw std::invalid_argument("ofdm: used_subcarriers must be in [1, fft_size-1]");
    if (cp_len < 0 || cp_len >= fft_size)
        throw std::invalid_argument("ofdm: cp_len must be in [0, fft_size)");
    if (!(subcarrier_spacing > 0.0)) throw std::invalid_argument("ofdm: spacing must be positive");
    if (sample_rate != subcarrier_spacing * static_cast<double>(fft_size))
        throw std::invalid_argument("ofdm: sample_rate must equal spacing * fft_size exactly");
}

int OfdmParams::signed_index(int position) const {
    if (position < 0 || position >= used_subcarriers)
        throw std::out_of_range("ofdm: used-subcarrier position out of range");
    const int half_neg = (used_subcarriers + 1) / 2;  // count of negative indices
    if (position < half_neg) return position - half_neg;
    return position - half_neg + 1;  // skip DC
}

std::vector<int> OfdmParams::used_signed_indices() const {
    std::vector<int> out(used_subcarriers);
    for (int i = 0; i < used_subcarriers; ++i) out[i] = signed_index(i);
    return out;
}

int FrameLayout::short_cp(const OfdmParams& p) const {
    return static_cast<int>(std::lround(static_cast<double>(p.cp_len) /
                                        static_cast<double>(short_decimation)));
}

int FrameLayout::short_used(const OfdmParams& p) const {
    int n = p.used_subcarriers / short_decimation;
    if (n % 2 != 0) --n;  // keep the short band symmetric around DC
    const int cap = short_fft(p) - 2;
    return std::min(n, cap);
}

std::vector<int> FrameLayout::short_used_signed(const OfdmParams& p) const {
    const int n = short_used(p);
    std::vector<int> out;
    out.reserve(n);
    for (int k = -n / 2; k <= n / 2; ++k)
        if (k != 0) out.push_back(k);
    return out;
}

std::vector<int> FrameLayout::short_null_positions(const OfdmParams& p) const {
    return spread_positions(short_used(p), n_short_nulls);
}

void FrameLayout::validate(const OfdmParams& p) const {
    if (n_short_syms < 2)
        throw std::invalid_argument("frame: n_short_syms must be >= 2 (adjacent-block correlation)");
    if (short_decimation < 1 || p.fft_size % short_decimation != 0)
        throw std::invalid_argument("frame: short_decimation must divide fft_size");
    if (n_pilot_syms < 0 || n_data_syms < 0)
        throw std::invalid_argument("frame: negative symbol count");
    if (n_short_nulls < 0 || n_short_nulls > short_used(p))
        throw std::invalid_argument("frame: n_short_nulls out of range");
    std::vector<bool> seen(p.used_subcarriers, false);
    for (int i : null_idx) {
        if (i < 0 || i >= p.used_subcarriers)
            throw std::invalid_argument("frame: null index outside used subcarriers");
        if (seen[i]) throw std::invalid_argument("frame: duplicate null index");
        seen[i] = true;
    }
    for (int i : comb_pilot_idx) {
        if (i < 0 || i >= p.used_subcarriers)
            throw std::invalid_argument("frame: comb pilot index outside used subcarriers");
        if (seen[i]) throw std::invalid_argument("frame: comb pilot collides with null set");
        seen[i] = true;
    }
}

FrameLayout FrameLayout::standard(const OfdmParams& p, int n_short, int decim, int n_nulls,
                                  int n_comb, int n_pilot, int n_data, int n_short_nulls) {
    FrameLayout f;
    f.n_short_syms = n_short;
    f.short_decimation = decim;
    f.n_pilot_syms = n_pilot;
    f.n_data_syms = n_data;
    f.n_short_nulls = n_short_nulls;
    // One null per band segment at a jittered offset. A strictly periodic
    // null comb makes the partial-Fourier system coherently aliased in time
    // (periodic Gram), which breaks sparse pulse recovery; the jitter keeps
    // the nulls spread across the band without that alias structure.
    f.null_idx = jittered_positions(p.used_subcarriers, n_nulls, 0x4E554C4Cu);
    std::vector<int> rest;
    std::vector<bool> is_null(p.used_subcarriers, false);
    for (int i : f.null_idx) is_null[i] = true;
    for (int i = 0; i < p.used_subcarriers; ++i)
        if (!is_null[i]) rest.push_back(i);
    for (int s : jittered_positions(static_cast<int>(rest.size()), n_comb, 0x434F4D42u))
        f.comb_pilot_idx.push_back(rest[s]);
    f.validate(p);
    return f;
}

std::vector<int> FrameLayout::nonnull_positions(const OfdmParams& p) const {
    std::vector<bool> is_null(p.used_subcarriers, false);
    for (int i : null_idx) is_null[i] = true;
    std::vector<int> out;
    for (int i = 0; i < p.used_subcarriers; ++i)
        if (!is_null[i]) out.push_back(i);
    return out;
}

std::vector<int> FrameLayout::data_positions(const OfdmParams& p) const {
    std::vector<bool> blocked(p.used_subcarriers, false);
    for (int i : null_idx) blocked[i] = true;
    for (int i : comb_pilot_idx) blocked[i] = true;
    std::vector<int> out;
    for (int i = 0; i < p.used_subcarriers; ++i)
        if (!blocked[i]) out.push_back(i);
    return out;
}

std::vector<cplx> FrameLayout::default_short_values(const OfdmParams& p) const {
    const int n = short_used(p) - n_short_nulls;
    return qpsk_sequence(derive_seed(kTrainingSeed, 0), n);
}

std::vector<cplx> FrameLayout::default_pilot_values(const OfdmParams& p, int pilot_sym) const {
    const int n = static_cast<int>(nonnull_positions(p).size());
    return qpsk_sequence(derive_seed(kTrainingSeed, 100 + pilot_sym), n);
}

cplx FrameLayout::comb_pilot_value(int data_sym, int comb_slot) const {
    Rng rng(derive_seed(kTrainingSeed, 100000 + data_sym * 4096 + comb_slot));
    const double s = std::sqrt(0.5);
    const std::uint64_t bits = rng.next_u64();
    return {(bits & 1) ? s : -s, (bits & 2) ? s : -s};
}

std::vector<cplx> modulate_symbol(const OfdmParams& p, const std::vector<cplx>& used_values) {
    if (static_cast<int>(used_values.size()) != p.used_subcarriers)
        throw std::invalid_argument("modulate_symbol: value count mismatch");
    std::vector<cplx> bins(p.fft_size, cplx(0.0, 0.0));
    for (int pos = 0; pos < p.used_subcarriers; ++pos)
        bins[static_cast<std::size_t>(p.fft_bin(p.signed_index(pos)))] = used_values[pos];
    std::vector<cplx> useful = dsp::ifft_unitary(bins);
    std::vector<cplx> out;
    out.reserve(p.symbol_len());
    out.insert(out.end(), useful.end() - p.cp_len, useful.end());
    out.insert(out.end(), useful.begin(), useful.end());
    return out;
}

namespace {
/// Time-domain samples of one short training block (no CP).
std::vector<cplx> short_block_td(const OfdmParams& p, const FrameLayout& f,
                                 const std::vector<cplx>& short_values) {
    const int nfft = f.short_fft(p);
    const std::vector<int> signed_idx = f.short_used_signed(p);
    const std::vector<int> nulls = f.short_null_positions(p);
    std::vector<bool> is_null(signed_idx.size(), false);
    for (int n : nulls) is_null[static_cast<std::size_t>(n)] = true;

    std::vector<cplx> bins(nfft, cplx(0.0, 0.0));
    std::size_t v = 0;
    for (std::size_t pos = 0; pos < signed_idx.size(); ++pos) {
        if (is_null[pos]) continue;
        if (v >= short_values.size())
            throw std::invalid_argument("modulate_frame: short value count mismatch");
        bins[static_cast<std::size_t>((signed_idx[pos] + nfft) % nfft)] = short_values[v++];
    }
    if (v != short_values.size())
        throw std::invalid_argument("modulate_frame: short value count mismatch");
    return dsp::ifft_unitary(bins);
}
}  // namespace

SignalBuffer modulate_frame(const OfdmParams& p, const FrameLayout& layout,
                            const std::vector<cplx>& short_values,
                            const std::vector<std::vector<cplx>>& pilot_values,
                            const std::vector<std::vector<cplx>>& data_values) {
    p.validate();
    layout.validate(p);
    if (static_cast<int>(pilot_values.size()) != layout.n_pilot_syms)
        throw std::invalid_argument("modulate_frame: pilot symbol count mismatch");
    if (static_cast<int>(data_values.size()) != layout.n_data_syms)
        throw std::invalid_argument("modulate_frame: data symbol count mismatch");

    std::vector<cplx> frame(static_cast<std::size_t>(layout.frame_len(p)), cplx(0.0, 0.0));

    // Short section: aggregated guard = cyclic prefix of the repeated block.
    const std::vector<cplx> block = short_block_td(p, layout, short_values);
    const int guard = layout.short_guard_len(p);
    const int nfft_s = layout.short_fft(p);
    for (int g = 0; g < guard; ++g) {
        const int src = (nfft_s - guard % nfft_s + g) % nfft_s;
        frame[static_cast<std::size_t>(g)] = block[static_cast<std::size_t>(src)];
    }
    for (int b = 0; b < layout.n_short_syms; ++b) {
        const int off = layout.short_block_offset(p, b);
        std::copy(block.begin(), block.end(), frame.begin() + off);
    }

    const std::vector<int> nonnull = layout.nonnull_positions(p);
    auto place_long_symbol = [&](int offset, const std::vector<cplx>& values) {
        if (values.size() != nonnull.size())
            throw std::invalid_argument("modulate_frame: symbol value count mismatch");
        std::vector<cplx> used(static_cast<std::size_t>(p.used_subcarriers), cplx(0.0, 0.0));
        for (std::size_t i = 0; i < nonnull.size(); ++i)
            used[static_cast<std::size_t>(nonnull[i])] = values[i];
        const std::vector<cplx> sym = modulate_symbol(p, used);
        std::copy(sym.begin(), sym.end(), frame.begin() + offset);
    };
    for (int s = 0; s < layout.n_pilot_syms; ++s)
        place_long_symbol(layout.pilot_sym_offset(p, s), pilot_values[static_cast<std::size_t>(s)]);
    for (int s = 0; s < layout.n_data_syms; ++s)
        place_long_symbol(layout.data_sym_offset(p, s), data_values[static_cast<std::size_t>(s)]);

    return SignalBuffer(std::move(frame), p.sample_rate, 0.0);
}

std::vector<cplx> demodulate_symbol(const SignalBuffer& buf, const OfdmParams& p,
                                    int symbol_offset) {
    if (symbol_offset < 0 ||
        symbol_offset + p.symbol_len() > static_cast<int>(buf.samples.size()))
        throw std::out_of_range("demodulate_symbol: offset outside buffer");
    std::vector<cplx> useful(buf.samples.begin() + symbol_offset + p.cp_len,
                             buf.samples.begin() + symbol_offset + p.symbol_len());
    const std::vector<cplx> bins = dsp::fft_unitary(useful);
    std::vector<cplx> out(static_cast<std::size_t>(p.used_subcarriers));
    for (int pos = 0; pos < p.used_subcarriers; ++pos)
        out[static_cast<std::size_t>(pos)] = bins[static_cast<std::size_t>(p.fft_bin(p.signed_index(pos)))];
    return out;
}

std::vector<cplx> demodulate_short_block(const SignalBuffer& buf, const OfdmParams& p,
                                         const FrameLayout& layout, int frame_offset, int block) {
    const int nfft = layout.short_fft(p);
    const int off = frame_offset + layout.short_block_offset(p, block);
    if (block < 0 || block >= layout.n_short_syms)
        throw std::out_of_range("demodulate_short_block: block index");
    if (off < 0 || off + nfft > static_cast<int>(buf.samples.size()))
        throw std::out_of_range("demodulate_short_block: offset outside buffer");
    std::vector<cplx> useful(buf.samples.begin() + off, buf.samples.begin() + off + nfft);
    const std::vector<cplx> bins = dsp::fft_unitary(useful);
    const std::vector<int> signed_idx = layout.short_used_signed(p);
    std::vector<cplx> out(signed_idx.size());
    for (std::size_t i = 0; i < signed_idx.size(); ++i)
        out[i] = bins[static_cast<std::size_t>((signed_idx[i] + nfft) % nfft)];
    return out;
}

std::vector<cplx> extract_nulls(const std::vector<cplx>& fd_symbol, const FrameLayout& layout) {
    std::vector<cplx> out;
    out.reserve(layout.null_idx.size());
    for (int i : layout.null_idx) {
        if (i < 0 || i >= static_cast<int>(fd_symbol.size()))
            throw std::out_of_range("extract_nulls: null index outside symbol");
        out.push_back(fd_symbol[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<int> spread_positions(int n_slots, int n_pick) {
    if (n_pick < 0 || n_pick > n_slots)
        throw std::invalid_argument("spread_positions: n_pick out of range");
    std::vector<int> out(static_cast<std::size_t>(n_pick));
    for (int i = 0; i < n_pick; ++i)
        out[static_cast<std::size_t>(i)] =
            static_cast<int>((static_cast<double>(i) + 0.5) * n_slots / n_pick);
    return out;
}

std::vector<int> jittered_positions(int n_slots, int n_pick, std::uint64_t seed) {
    if (n_pick < 0 || n_pick > n_slots)
        throw std::invalid_argument("jittered_positions: n_pick out of range");
    Rng rng(derive_seed(kTrainingSeed, seed));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n_pick));
    for (int i = 0; i < n_pick; ++i) {
        const double lo = static_cast<double>(i) * n_slots / n_pick;
        const double hi = static_cast<double>(i + 1) * n_slots / n_pick;
        int pos = static_cast<int>(rng.uniform(lo, hi));
        pos = std::min(pos, n_slots - 1);
        if (!out.empty() && pos <= out.back()) pos = out.back() + 1;
        out.push_back(std::min(pos, n_slots - 1));
    }
    return out;
}

}  // namespace aerosim::ofdm
