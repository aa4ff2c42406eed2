#ifndef WF_FFT_HPP
#define WF_FFT_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "wf/errors.hpp"
#include "wf/field.hpp"

namespace wf {

// Project-wide transform convention, fixed once:
//   forward  X_n = sum_k x_k * exp(-2*pi*i*k*n/N)   (unnormalized)
//   inverse  x_k = (1/N) * sum_n X_n * exp(+2*pi*i*k*n/N)
// Real-input transforms store the last transformed axis as a half-spectrum
// of extent floor(N/2)+1; the omitted bins are implied by conjugate symmetry.

namespace fftdetail {

using cplx = std::complex<double>;

/// Precomputed roots of unity e^{-2*pi*i*k/N}, k = 0..N-1.
inline std::vector<cplx> twiddle_table(std::size_t n) {
    std::vector<cplx> w(n);
    const double step = -6.283185307179586476925286766559 / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) w[k] = cplx(std::cos(step * k), std::sin(step * k));
    return w;
}

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 transform. dir = -1 forward, +1 inverse kernel
/// (no normalization here). `tw` holds forward twiddles for this N.
inline void fft_pow2(cplx* a, std::size_t n, int dir, const std::vector<cplx>& tw) {
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                cplx w = tw[k * stride];
                if (dir > 0) w = std::conj(w);
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

/// Direct O(N^2) summation for the sizes radix-2 cannot take (all small here).
inline void dft_naive(const cplx* in, cplx* out, std::size_t n, int dir,
                      const std::vector<cplx>& tw) {
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            cplx w = tw[(k * j) % n];
            if (dir > 0) w = std::conj(w);
            acc += in[j] * w;
        }
        out[k] = acc;
    }
}

/// Transforms every line along `axis` of a complex array.
/// dir = -1: unnormalized forward. dir = +1: inverse including the 1/N factor.
inline void transform_axis(ComplexField& a, std::size_t axis, int dir) {
    const std::size_t n = a.extent(axis);
    if (n <= 1) {
        if (dir > 0 && n == 1) return; // 1/1 normalization is a no-op
        return;
    }
    const auto strides = detail::row_major_strides(a.shape());
    const std::size_t stride = strides[axis];
    const std::size_t outer = a.size() / (n * stride);
    const auto tw = twiddle_table(n);
    const bool pow2 = is_pow2(n);
    const double norm = dir > 0 ? 1.0 / static_cast<double>(n) : 1.0;
    const std::size_t n_lines = outer * stride;

    // lines are disjoint, so threading them is bit-stable
#ifdef _OPENMP
#pragma omp parallel if (n_lines * n > 4096)
#endif
    {
        std::vector<cplx> line(n), scratch(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (long long li = 0; li < static_cast<long long>(n_lines); ++li) {
            const std::size_t o = static_cast<std::size_t>(li) / stride;
            const std::size_t inner = static_cast<std::size_t>(li) % stride;
            cplx* base = a.data() + o * n * stride + inner;
            for (std::size_t i = 0; i < n; ++i) line[i] = base[i * stride];
            if (pow2) {
                fft_pow2(line.data(), n, dir, tw);
                for (std::size_t i = 0; i < n; ++i) base[i * stride] = line[i] * norm;
            } else {
                dft_naive(line.data(), scratch.data(), n, dir, tw);
                for (std::size_t i = 0; i < n; ++i) base[i * stride] = scratch[i] * norm;
            }
        }
    }
}

inline void validate_axes(const Shape& shape, const std::vector<std::size_t>& axes,
                          const char* op) {
    if (axes.empty()) throw ArgumentError(std::string(op) + ": empty axis set");
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= shape.size()) throw ArgumentError(std::string(op) + ": axis out of range");
        for (std::size_t j = 0; j < i; ++j)
            if (axes[j] == axes[i]) throw ArgumentError(std::string(op) + ": duplicate axis");
    }
}

} // namespace fftdetail

/// Widens a real field to complex (imaginary parts zero).
inline ComplexField to_complex(const Field& f) {
    ComplexField out(f.shape());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = {f[i], 0.0};
    return out;
}

inline Field real_part(const ComplexField& c) {
    Field out(c.shape());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
    return out;
}

/// Full complex DFT along a set of axes. dir = -1 forward (unnormalized),
/// dir = +1 inverse (1/N per axis).
inline ComplexField dft(const ComplexField& f, const std::vector<std::size_t>& axes, int dir) {
    fftdetail::validate_axes(f.shape(), axes, "dft");
    ComplexField out = f;
    for (std::size_t a : axes) fftdetail::transform_axis(out, a, dir);
    return out;
}

/// Real-input forward transform over `axes`. The last listed axis is stored
/// as a half-spectrum of extent floor(N/2)+1; other listed axes are full
/// complex spectra.
inline ComplexField rdft(const Field& f, const std::vector<std::size_t>& axes) {
    fftdetail::validate_axes(f.shape(), axes, "rdft");
    const std::size_t last = axes.back();
    const std::size_t n = f.extent(last);
    const std::size_t half = n / 2 + 1;

    // full transform on the last axis, then truncate to the stored half
    ComplexField full = to_complex(f);
    fftdetail::transform_axis(full, last, -1);

    Shape out_shape = f.shape();
    out_shape[last] = half;
    ComplexField out(out_shape);
    {
        const auto fs = detail::row_major_strides(full.shape());
        const std::size_t stride = fs[last];
        const std::size_t outer = full.size() / (n * stride);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t b = 0; b < half; ++b)
                for (std::size_t inner = 0; inner < stride; ++inner)
                    out[(o * half + b) * stride + inner] = full[(o * n + b) * stride + inner];
    }
    for (std::size_t i = 0; i + 1 < axes.size(); ++i) fftdetail::transform_axis(out, axes[i], -1);
    return out;
}

/// Inverse of rdft. `original_shape` is the shape of the field rdft was
/// applied to (it disambiguates even/odd extents on the half axis).
/// Applies the 1/N normalization on every transformed axis. If the input is
/// not Hermitian-consistent, the result is the real part of the symmetric
/// completion (endpoint bins contribute their real components only).
inline Field irdft(const ComplexField& cf, const std::vector<std::size_t>& axes,
                   const Shape& original_shape) {
    fftdetail::validate_axes(original_shape, axes, "irdft");
    if (cf.rank() != original_shape.size()) throw ShapeError("irdft: rank mismatch");
    const std::size_t last = axes.back();
    const std::size_t n = original_shape[last];
    const std::size_t half = n / 2 + 1;
    for (std::size_t a = 0; a < cf.rank(); ++a) {
        const std::size_t want = (a == last) ? half : original_shape[a];
        if (cf.extent(a) != want)
            throw ShapeError("irdft: input is not an rdft half-spectrum for the given shape");
    }

    ComplexField work = cf;
    for (std::size_t i = 0; i + 1 < axes.size(); ++i) fftdetail::transform_axis(work, axes[i], +1);

    // After the leading-axis inversions each line along `last` is an
    // ordinary half-spectrum of a real signal: conjugate-extend per line,
    // inverse-transform, keep real parts.
    ComplexField full(original_shape);
    {
        const auto fs = detail::row_major_strides(original_shape);
        const std::size_t stride = fs[last];
        const std::size_t outer = full.size() / (n * stride);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t inner = 0; inner < stride; ++inner) {
                const std::complex<double>* src = work.data() + o * half * stride + inner;
                std::complex<double>* dst = full.data() + o * n * stride + inner;
                for (std::size_t b = 0; b < half; ++b) dst[b * stride] = src[b * stride];
                for (std::size_t b = half; b < n; ++b)
                    dst[b * stride] = std::conj(src[(n - b) * stride]);
            }
        }
    }
    fftdetail::transform_axis(full, last, +1);
    return real_part(full);
}

// ---------------------------------------------------------------------------
// Adjoints (exact transposes of the packed linear maps; used by the tape)
// ---------------------------------------------------------------------------

/// Adjoint of rdft as a real-linear map R^N -> R^{2*half}: pulls a cotangent
/// on the half-spectrum back to the input domain.
inline Field rdft_adjoint(const ComplexField& ct, const std::vector<std::size_t>& axes,
                          const Shape& original_shape) {
    fftdetail::validate_axes(original_shape, axes, "rdft_adjoint");
    const std::size_t last = axes.back();
    const std::size_t n = original_shape[last];
    const std::size_t half = n / 2 + 1;

    // adjoint of the leading complex forward transforms: unnormalized e^{+} sum
    ComplexField work = ct;
    for (std::size_t i = 0; i + 1 < axes.size(); ++i) {
        fftdetail::transform_axis(work, axes[i], +1); // 1/N * e^{+}
        // undo the normalization: adjoint is the unnormalized kernel
        const double n_axis = static_cast<double>(original_shape[axes[i]]);
        for (std::size_t k = 0; k < work.size(); ++k) work[k] *= n_axis;
    }

    // adjoint of the half-spectrum packing: zero-pad to full, unnormalized
    // e^{+} transform, take the real part.
    ComplexField full(original_shape);
    {
        const auto fs = detail::row_major_strides(original_shape);
        const std::size_t stride = fs[last];
        const std::size_t outer = full.size() / (n * stride);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t b = 0; b < half; ++b)
                for (std::size_t inner = 0; inner < stride; ++inner)
                    full[(o * n + b) * stride + inner] = work[(o * half + b) * stride + inner];
    }
    fftdetail::transform_axis(full, last, +1);
    const double n_axis = static_cast<double>(n);
    Field out(original_shape);
    for (std::size_t i = 0; i < full.size(); ++i) out[i] = full[i].real() * n_axis;
    return out;
}

/// Adjoint of irdft: pulls a real cotangent back to the half-spectrum.
inline ComplexField irdft_adjoint(const Field& ct, const std::vector<std::size_t>& axes,
                                  const Shape& original_shape) {
    fftdetail::validate_axes(original_shape, axes, "irdft_adjoint");
    const std::size_t last = axes.back();
    const std::size_t n = original_shape[last];
    const std::size_t half = n / 2 + 1;

    // adjoint of the half->real stage: forward transform of the cotangent,
    // truncated, with DC/Nyquist weighted 1/N and interior bins 2/N.
    ComplexField spec = rdft(ct, {last});
    {
        const auto ss = detail::row_major_strides(spec.shape());
        const std::size_t stride = ss[last];
        const std::size_t outer = spec.size() / (half * stride);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t b = 0; b < half; ++b) {
                const bool endpoint = (b == 0) || (n % 2 == 0 && b == n / 2);
                const double w = (endpoint ? 1.0 : 2.0) * inv_n;
                for (std::size_t inner = 0; inner < stride; ++inner)
                    spec[(o * half + b) * stride + inner] *= w;
            }
        }
    }

    // adjoint of each leading inverse transform: forward kernel scaled by 1/N
    for (std::size_t i = 0; i + 1 < axes.size(); ++i) {
        fftdetail::transform_axis(spec, axes[i], -1);
        const double inv = 1.0 / static_cast<double>(original_shape[axes[i]]);
        for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= inv;
    }
    return spec;
}

/// Retained (half-spectrum) bin count for a transformed grid.
inline std::size_t retained_bins(const std::vector<std::size_t>& grid_extents) {
    if (grid_extents.empty()) throw ArgumentError("retained_bins: empty grid");
    std::size_t bins = 1;
    for (std::size_t i = 0; i + 1 < grid_extents.size(); ++i) bins *= grid_extents[i];
    return bins * (grid_extents.back() / 2 + 1);
}

} // namespace wf

#endif // WF_FFT_HPP
