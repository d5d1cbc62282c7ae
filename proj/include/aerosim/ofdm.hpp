#ifndef AEROSIM_OFDM_HPP
#define AEROSIM_OFDM_HPP

#include <cstdint>
#include <vector>

#include "aerosim/signal.hpp"

namespace aerosim::ofdm {

/// OFDM numerology. sample_rate must equal subcarrier_spacing * fft_size
/// exactly; with the default 9765.625 Hz spacing and 64-point FFT the useful
/// symbol is 102.4 us at 625 kHz.
struct OfdmParams {
    double subcarrier_spacing = 9765.625;  // Hz
    int fft_size = 64;
    int cp_len = 11;           // samples
    int used_subcarriers = 50; // centered, DC excluded
    double sample_rate = 625000.0;  // Hz

    void validate() const;

    int symbol_len() const { return fft_size + cp_len; }
    double useful_duration() const { return static_cast<double>(fft_size) / sample_rate; }
    double symbol_duration() const { return static_cast<double>(symbol_len()) / sample_rate; }

    /// Signed subcarrier index (DC excluded) of used position p in
    /// [0, used_subcarriers). Positions run in ascending signed order,
    /// e.g. used=50 maps to -25..-1, +1..+25.
    int signed_index(int position) const;
    /// FFT bin of a signed subcarrier index.
    int fft_bin(int signed_idx) const { return (signed_idx + fft_size) % fft_size; }
    std::vector<int> used_signed_indices() const;
};

/// Estimation frame: a guarded periodic section of short training blocks for
/// frequency-offset acquisition, then full-length pilot symbols for channel
/// sounding, then data symbols carrying a comb of known pilots for tracking.
/// All index sets hold positions into the used-subcarrier enumeration.
struct FrameLayout {
    int n_short_syms = 4;
    int short_decimation = 4;
    std::vector<int> null_idx;        // null subcarriers, present in every long symbol
    std::vector<int> comb_pilot_idx;  // known comb inside data symbols
    int n_pilot_syms = 10;
    int n_data_syms = 26;
    int n_short_nulls = 4;            // nulls inside the short-block spectrum

    void validate(const OfdmParams& p) const;

    /// Evenly spread layout with the given set sizes.
    static FrameLayout standard(const OfdmParams& p, int n_short = 4, int decim = 4,
                                int n_nulls = 8, int n_comb = 6, int n_pilot = 10,
                                int n_data = 26, int n_short_nulls = 4);

    // -- short section geometry -------------------------------------------
    int short_fft(const OfdmParams& p) const { return p.fft_size / short_decimation; }
    int short_cp(const OfdmParams& p) const;
    /// One aggregated guard (cyclic prefix of the repeated block) followed by
    /// n_short_syms identical blocks; total length matches
    /// n_short_syms * (short_fft + short_cp).
    int short_guard_len(const OfdmParams& p) const { return n_short_syms * short_cp(p); }
    int short_section_len(const OfdmParams& p) const {
        return short_guard_len(p) + n_short_syms * short_fft(p);
    }
    int short_block_offset(const OfdmParams& p, int block) const {
        return short_guard_len(p) + block * short_fft(p);
    }
    int short_used(const OfdmParams& p) const;
    std::vector<int> short_used_signed(const OfdmParams& p) const;
    std::vector<int> short_null_positions(const OfdmParams& p) const;

    // -- long symbol geometry ----------------------------------------------
    int n_long_syms() const { return n_pilot_syms + n_data_syms; }
    int long_sym_offset(const OfdmParams& p, int sym) const {
        return short_section_len(p) + sym * p.symbol_len();
    }
    int pilot_sym_offset(const OfdmParams& p, int i) const { return long_sym_offset(p, i); }
    int data_sym_offset(const OfdmParams& p, int i) const {
        return long_sym_offset(p, n_pilot_syms + i);
    }
    int frame_len(const OfdmParams& p) const {
        return short_section_len(p) + n_long_syms() * p.symbol_len();
    }

    /// Positions carrying values in pilot symbols and in data symbols
    /// (everything used except nulls; data additionally excludes the comb).
    std::vector<int> nonnull_positions(const OfdmParams& p) const;
    std::vector<int> data_positions(const OfdmParams& p) const;

    /// Deterministic unit-power QPSK training content (independent of any
    /// run seed): short training block, pilot symbols, comb values.
    std::vector<cplx> default_short_values(const OfdmParams& p) const;
    std::vector<cplx> default_pilot_values(const OfdmParams& p, int pilot_sym) const;
    cplx comb_pilot_value(int data_sym, int comb_slot) const;
};

/// Frequency-domain symbol on the used subcarriers -> time-domain symbol with
/// cyclic prefix. Unitary DFT scaling throughout, so the noiseless round trip
/// is the identity and Parseval holds exactly on the useful part.
std::vector<cplx> modulate_symbol(const OfdmParams& p, const std::vector<cplx>& used_values);

/// Assemble a full estimation frame. Values are indexed as:
///   short_values: one per short-used non-null bin;
///   pilot_values: [n_pilot_syms][nonnull positions];
///   data_values:  [n_data_syms][nonnull positions] (comb slots included, the
///                 caller places known comb values there).
/// The frame is linear in all three inputs; null subcarriers carry exactly 0.
SignalBuffer modulate_frame(const OfdmParams& p, const FrameLayout& layout,
                            const std::vector<cplx>& short_values,
                            const std::vector<std::vector<cplx>>& pilot_values,
                            const std::vector<std::vector<cplx>>& data_values);

/// CP-strip + unitary DFT + used-subcarrier extraction. symbol_offset points
/// at the start of the cyclic prefix within the buffer.
std::vector<cplx> demodulate_symbol(const SignalBuffer& buf, const OfdmParams& p,
                                    int symbol_offset);

/// Demodulate short training block `block` (no per-block CP; the section is
/// periodic after the aggregated guard). Returns short-used bin values.
std::vector<cplx> demodulate_short_block(const SignalBuffer& buf, const OfdmParams& p,
                                         const FrameLayout& layout, int frame_offset, int block);

/// Select the null-subcarrier observations out of a demodulated symbol.
std::vector<cplx> extract_nulls(const std::vector<cplx>& fd_symbol, const FrameLayout& layout);

/// Evenly spread n_pick positions over [0, n_slots).
std::vector<int> spread_positions(int n_slots, int n_pick);

/// Stratified placement with a deterministic jitter inside each segment.
std::vector<int> jittered_positions(int n_slots, int n_pick, std::uint64_t seed);

}  // namespace aerosim::ofdm

#endif
