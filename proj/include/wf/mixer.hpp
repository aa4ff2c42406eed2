#ifndef WF_MIXER_HPP
#define WF_MIXER_HPP

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "wf/autodiff.hpp"
#include "wf/errors.hpp"
#include "wf/fft.hpp"
#include "wf/field.hpp"
#include "wf/rng.hpp"

namespace wf {

enum class MixerMode { afno, pafno, fno };
enum class Nonlinearity { identity, relu_split };
enum class MixerDomain { spatial, temporal };

inline std::string to_string(MixerMode m) {
    switch (m) {
        case MixerMode::afno: return "afno";
        case MixerMode::pafno: return "pafno";
        case MixerMode::fno: return "fno";
    }
    return "?";
}

inline MixerMode mixer_mode_from_string(const std::string& s) {
    if (s == "afno") return MixerMode::afno;
    if (s == "pafno") return MixerMode::pafno;
    if (s == "fno") return MixerMode::fno;
    throw ArgumentError("unknown mixer mode: " + s);
}

/// Where a mixer operates: spatial mixers transform the two token-grid axes
/// (h, w); temporal mixers transform the single t axis.
struct MixerConfig {
    MixerDomain domain = MixerDomain::spatial;
    std::size_t embed_dim = 0;   // D
    std::size_t blocks = 1;      // k, block-diagonal blocks of the shared MLP
    MixerMode mode = MixerMode::pafno;
    Nonlinearity nonlinearity = Nonlinearity::relu_split;

    std::size_t grid_rank() const { return domain == MixerDomain::spatial ? 2 : 1; }
};

/// Learnable state of one frequency-domain token mixer.
///
/// AFNO/PAFNO share one complex two-layer MLP across all bins, stored
/// block-diagonally: w1, w2 are (k, D/k, D/k, 2) and b1, b2 are (D, 2), with
/// the trailing axis packing (re, im). PAFNO adds one real coefficient per
/// retained frequency bin. FNO instead carries an independent complex D x D
/// matrix per bin: (bins, D, D, 2).
struct SpectralFilter {
    MixerMode mode = MixerMode::pafno;
    Nonlinearity nonlinearity = Nonlinearity::relu_split;
    Field lambda;    // (bins)          PAFNO only
    Field w1, b1;    // AFNO/PAFNO
    Field w2, b2;    // AFNO/PAFNO
    Field per_freq;  // (bins, D, D, 2) FNO only

    std::size_t embed_dim() const {
        return mode == MixerMode::fno ? per_freq.extent(1) : b1.extent(0);
    }
    std::size_t block_count() const { return mode == MixerMode::fno ? 1 : w1.extent(0); }
};

/// Exact learnable scalar count of a filter; complex scalars count as 2.
inline std::size_t param_count(const SpectralFilter& f) {
    if (f.mode == MixerMode::fno) return f.per_freq.size();
    std::size_t n = f.w1.size() + f.b1.size() + f.w2.size() + f.b2.size();
    if (f.mode == MixerMode::pafno) n += f.lambda.size();
    return n;
}

/// Builds a filter for a token grid with the given per-axis extents.
/// lambda starts at exactly 1 so a fresh PAFNO filter coincides with AFNO;
/// w2 starts near zero so the mixer perturbs the residual stream gently.
inline SpectralFilter make_filter(const MixerConfig& cfg,
                                  const std::vector<std::size_t>& grid_extents, Rng& rng,
                                  double init_std = 0.02) {
    if (grid_extents.size() != cfg.grid_rank())
        throw ShapeError("make_filter: grid rank does not match mixer domain");
    const std::size_t D = cfg.embed_dim;
    const std::size_t k = cfg.blocks;
    if (k == 0 || D % k != 0) throw ArgumentError("make_filter: D must be divisible by k");
    const std::size_t bins = retained_bins(grid_extents);

    SpectralFilter f;
    f.mode = cfg.mode;
    f.nonlinearity = cfg.nonlinearity;
    if (cfg.mode == MixerMode::fno) {
        f.per_freq = Field(Shape{bins, D, D, 2});
        for (std::size_t i = 0; i < f.per_freq.size(); ++i)
            f.per_freq[i] = rng.normal(0.0, init_std);
        return f;
    }
    const std::size_t m = D / k;
    f.w1 = Field(Shape{k, m, m, 2});
    f.b1 = Field(Shape{D, 2});
    f.w2 = Field(Shape{k, m, m, 2});
    f.b2 = Field(Shape{D, 2});
    for (std::size_t i = 0; i < f.w1.size(); ++i) f.w1[i] = rng.normal(0.0, init_std);
    for (std::size_t i = 0; i < f.w2.size(); ++i) f.w2[i] = rng.normal(0.0, init_std * 0.1);
    if (cfg.mode == MixerMode::pafno) f.lambda = Field(Shape{bins}, 1.0);
    return f;
}

/// A filter whose MLP is the identity map (unit block-diagonal w1/w2, zero
/// biases). With lambda = 1 this makes the whole mixer the identity
/// operator; used by the linear-regime equivalence tests.
inline SpectralFilter make_identity_filter(const MixerConfig& cfg,
                                           const std::vector<std::size_t>& grid_extents) {
    const std::size_t D = cfg.embed_dim;
    const std::size_t k = cfg.blocks;
    const std::size_t m = D / k;
    const std::size_t bins = retained_bins(grid_extents);
    SpectralFilter f;
    f.mode = cfg.mode;
    f.nonlinearity = Nonlinearity::identity;
    f.w1 = Field(Shape{k, m, m, 2});
    f.w2 = Field(Shape{k, m, m, 2});
    f.b1 = Field(Shape{D, 2});
    f.b2 = Field(Shape{D, 2});
    for (std::size_t b = 0; b < k; ++b)
        for (std::size_t i = 0; i < m; ++i) {
            f.w1[((b * m + i) * m + i) * 2] = 1.0;
            f.w2[((b * m + i) * m + i) * 2] = 1.0;
        }
    if (cfg.mode == MixerMode::pafno) f.lambda = Field(Shape{bins}, 1.0);
    if (cfg.mode == MixerMode::fno) {
        f.per_freq = Field(Shape{bins, D, D, 2});
        for (std::size_t n = 0; n < bins; ++n)
            for (std::size_t i = 0; i < D; ++i) f.per_freq[((n * D + i) * D + i) * 2] = 1.0;
    }
    return f;
}

/// Tape handles to a filter's learnable fields.
struct FilterVars {
    ad::Var lambda, w1, b1, w2, b2, per_freq;
};

inline FilterVars filter_leaves(ad::Tape& tape, const SpectralFilter& f, bool requires_grad) {
    FilterVars v;
    if (f.mode == MixerMode::fno) {
        v.per_freq = tape.leaf(f.per_freq, requires_grad);
        return v;
    }
    v.w1 = tape.leaf(f.w1, requires_grad);
    v.b1 = tape.leaf(f.b1, requires_grad);
    v.w2 = tape.leaf(f.w2, requires_grad);
    v.b2 = tape.leaf(f.b2, requires_grad);
    if (f.mode == MixerMode::pafno) v.lambda = tape.leaf(f.lambda, requires_grad);
    return v;
}

/// Frequency-domain token mixing (Fourier transform -> per-bin filter ->
/// inverse transform). `tokens` must be shaped (batch..., grid..., D) with
/// `n_batch_axes` leading batch axes; the grid axes are the cfg.grid_rank()
/// axes just before D. The filter acts per retained bin n:
///   AFNO:  MLP(z_n)         PAFNO: lambda_n * MLP(z_n)     FNO: W_n z_n
/// where MLP(z) = W2 sigma(W1 z + b1) + b2 and sigma acts independently on
/// real and imaginary parts.
inline ad::Var mix_on_tape(ad::Tape& tape, ad::Var tokens, const FilterVars& fv,
                           const MixerConfig& cfg, std::size_t n_batch_axes) {
    const Shape s = tape.val(tokens).shape(); // copied: node storage may reallocate
    const std::size_t gr = cfg.grid_rank();
    if (s.size() != n_batch_axes + gr + 1)
        throw ShapeError("mix: token rank does not match mixer domain");
    if (s.back() != cfg.embed_dim) throw ShapeError("mix: embed dim mismatch");

    std::vector<std::size_t> axes(gr);
    for (std::size_t i = 0; i < gr; ++i) axes[i] = n_batch_axes + i;

    ad::CVar z = tape.rdft(tokens, axes);
    ad::CVar filtered;
    if (cfg.mode == MixerMode::fno) {
        filtered = tape.cmul_perbin(z, fv.per_freq, n_batch_axes);
    } else {
        ad::CVar h = tape.cbias(tape.cmul_blockdiag(z, fv.w1), fv.b1);
        if (cfg.nonlinearity == Nonlinearity::relu_split) h = tape.crelu(h);
        filtered = tape.cbias(tape.cmul_blockdiag(h, fv.w2), fv.b2);
        if (cfg.mode == MixerMode::pafno) filtered = tape.clambda(filtered, fv.lambda, n_batch_axes);
    }
    return tape.irdft(filtered, axes, s);
}

/// Pure functional mixer evaluation (records and discards a local tape).
inline Field mix(const Field& tokens, const SpectralFilter& filter, const MixerConfig& cfg,
                 std::size_t n_batch_axes = 0) {
    if (filter.mode != cfg.mode) throw ArgumentError("mix: filter/config mode mismatch");
    ad::Tape tape;
    ad::Var in = tape.leaf(tokens, false);
    FilterVars fv = filter_leaves(tape, filter, false);
    ad::Var out = mix_on_tape(tape, in, fv, cfg, n_batch_axes);
    return tape.val(out);
}

/// The real grid-shaped kernel whose circular convolution equals the linear
/// part of PAFNO: the inverse transform of the lambda coefficients
/// (Hermitian-extended over the omitted half-spectrum).
inline Field effective_kernel(const Field& lambda, const std::vector<std::size_t>& grid_extents) {
    if (lambda.rank() != 1) throw ArgumentError("effective_kernel: lambda must be rank 1");
    const std::size_t bins = retained_bins(grid_extents);
    if (lambda.size() != bins)
        throw ArgumentError("effective_kernel: lambda length " + std::to_string(lambda.size()) +
                            " != retained bin count " + std::to_string(bins));
    Shape bin_shape(grid_extents.begin(), grid_extents.end());
    bin_shape.back() = grid_extents.back() / 2 + 1;
    ComplexField spec(bin_shape);
    for (std::size_t i = 0; i < bins; ++i) spec[i] = {lambda[i], 0.0};
    std::vector<std::size_t> axes(grid_extents.size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    return irdft(spec, axes, Shape(grid_extents.begin(), grid_extents.end()));
}

/// Writes an effective kernel as CSV: one row per grid index, a column per
/// axis index plus the kernel value.
inline void write_kernel_csv(const Field& kernel, std::ostream& os) {
    const std::size_t rank = kernel.rank();
    for (std::size_t a = 0; a < rank; ++a) os << "i" << a << ",";
    os << "value\n";
    std::vector<std::size_t> idx(rank, 0);
    os.precision(17);
    for (std::size_t i = 0; i < kernel.size(); ++i) {
        for (std::size_t a = 0; a < rank; ++a) os << idx[a] << ",";
        os << kernel[i] << "\n";
        for (std::size_t a = rank; a-- > 0;) {
            if (++idx[a] < kernel.extent(a)) break;
            idx[a] = 0;
        }
    }
}

} // namespace wf

#endif // WF_MIXER_HPP
