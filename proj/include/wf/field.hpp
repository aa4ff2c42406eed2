#ifndef WF_FIELD_HPP
#define WF_FIELD_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "wf/errors.hpp"

namespace wf {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t shape_product(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

} // namespace detail

/// Dense real-valued multi-axis array, row-major, double precision.
/// The universal carrier of weather states, tokens, parameters and gradients.
class Field {
public:
    Field() = default;

    explicit Field(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(detail::shape_product(shape_), fill) {}

    Field(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != detail::shape_product(shape_))
            throw ShapeError("Field: data size " + std::to_string(data_.size()) +
                             " does not match shape " + detail::shape_str(shape_));
    }

    static Field scalar(double v) { return Field(Shape{}, std::vector<double>{v}); }

    std::size_t rank() const { return shape_.size(); }
    const Shape& shape() const { return shape_; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    template <typename... Ix>
    double& at(Ix... ix) { return data_[offset_of(ix...)]; }
    template <typename... Ix>
    double at(Ix... ix) const { return data_[offset_of(ix...)]; }

    /// Optional axis labels (time/lat/lon/channel). Purely descriptive;
    /// operations do not propagate them.
    const std::vector<std::string>& axis_names() const { return axis_names_; }
    void set_axis_names(std::vector<std::string> names) { axis_names_ = std::move(names); }

    bool same_shape(const Field& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    template <typename... Ix>
    std::size_t offset_of(Ix... ix) const {
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(ix); ++a) off = off * shape_[a] + idx[a];
        return off;
    }

    Shape shape_;
    std::vector<double> data_;
    std::vector<std::string> axis_names_;
};

/// Dense complex-valued array. std::complex storage keeps (real, imag)
/// interleaved in memory, row-major over the shape.
class ComplexField {
public:
    ComplexField() = default;

    explicit ComplexField(Shape shape, std::complex<double> fill = {0.0, 0.0})
        : shape_(std::move(shape)), data_(detail::shape_product(shape_), fill) {}

    ComplexField(Shape shape, std::vector<std::complex<double>> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != detail::shape_product(shape_))
            throw ShapeError("ComplexField: data size does not match shape " + detail::shape_str(shape_));
    }

    std::size_t rank() const { return shape_.size(); }
    const Shape& shape() const { return shape_; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::complex<double>* data() { return data_.data(); }
    const std::complex<double>* data() const { return data_.data(); }

    std::complex<double>& operator[](std::size_t i) { return data_[i]; }
    const std::complex<double>& operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const ComplexField& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<std::complex<double>> data_;
};

namespace detail {

inline void require_same_shape(const Field& a, const Field& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_same_shape(const ComplexField& a, const ComplexField& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

inline Field add(const Field& a, const Field& b) {
    detail::require_same_shape(a, b, "add");
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Field sub(const Field& a, const Field& b) {
    detail::require_same_shape(a, b, "sub");
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Field mul(const Field& a, const Field& b) {
    detail::require_same_shape(a, b, "mul");
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline Field scale(const Field& a, double c) {
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

inline void axpy(double c, const Field& x, Field& y) {
    detail::require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline double dot(const Field& a, const Field& b) {
    detail::require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Field relu(const Field& a) {
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return out;
}

/// Exact (erf-based) GELU.
inline Field gelu(const Field& a) {
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * 0.7071067811865475244));
    return out;
}

inline double gelu_grad_scalar(double x) {
    const double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt2pi = 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

// ---------------------------------------------------------------------------
// Matrix multiply over the trailing axis
// ---------------------------------------------------------------------------

/// out[..., m] = sum_k a[..., k] * w[k][m].  a: (..., K), w: (K, M).
/// Rows are independent, so the row loop may run in parallel without
/// changing any result bit.
inline Field matmul(const Field& a, const Field& w) {
    if (a.rank() < 1 || w.rank() != 2)
        throw ShapeError("matmul: need a rank>=1 input and a rank-2 weight");
    const std::size_t K = a.extent(a.rank() - 1);
    if (w.extent(0) != K)
        throw ShapeError("matmul: inner extents differ: " + std::to_string(K) + " vs " +
                         std::to_string(w.extent(0)));
    const std::size_t M = w.extent(1);
    const std::size_t rows = a.size() / std::max<std::size_t>(K, 1);

    Shape out_shape(a.shape());
    out_shape.back() = M;
    Field out(out_shape);

    const double* ap = a.data();
    const double* wp = w.data();
    double* op = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * K * M > 16384)
#endif
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const double* arow = ap + static_cast<std::size_t>(r) * K;
        double* orow = op + static_cast<std::size_t>(r) * M;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = arow[k];
            const double* wrow = wp + k * M;
            for (std::size_t m = 0; m < M; ++m) orow[m] += av * wrow[m];
        }
    }
    return out;
}

/// Adds a length-M bias along the trailing axis.
inline Field bias_add(const Field& a, const Field& b) {
    if (b.rank() != 1 || a.rank() < 1 || a.extent(a.rank() - 1) != b.extent(0))
        throw ShapeError("bias_add: trailing extent mismatch");
    const std::size_t M = b.extent(0);
    Field out(a.shape());
    for (std::size_t r = 0; r < a.size() / M; ++r)
        for (std::size_t m = 0; m < M; ++m) out[r * M + m] = a[r * M + m] + b[m];
    return out;
}

// ---------------------------------------------------------------------------
// Layer norm over the trailing (channel) axis
// ---------------------------------------------------------------------------

struct LayerNormCache {
    Field xhat;              // normalized activations
    std::vector<double> inv_std; // one per row
};

inline Field layer_norm(const Field& x, const Field& gain, const Field& bias, double eps = 1e-5,
                        LayerNormCache* cache = nullptr) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t D = x.extent(x.rank() - 1);
    if (gain.shape() != Shape{D} || bias.shape() != Shape{D})
        throw ShapeError("layer_norm: gain/bias must have shape (D)");
    const std::size_t rows = x.size() / D;

    Field out(x.shape());
    if (cache) {
        cache->xhat = Field(x.shape());
        cache->inv_std.assign(rows, 0.0);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * D;
        double mean = 0.0;
        for (std::size_t d = 0; d < D; ++d) mean += xr[d];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            const double c = xr[d] - mean;
            var += c * c;
        }
        var /= static_cast<double>(D);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t d = 0; d < D; ++d) {
            const double xh = (xr[d] - mean) * inv;
            out[r * D + d] = xh * gain[d] + bias[d];
            if (cache) cache->xhat[r * D + d] = xh;
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Axis regrouping, transposition, rolling, slicing
// ---------------------------------------------------------------------------

/// Pure row-major reinterpretation. Element order is unchanged.
inline Field reshape(const Field& f, Shape new_shape) {
    if (detail::shape_product(new_shape) != f.size())
        throw ShapeError("reshape: element count mismatch for " + detail::shape_str(new_shape));
    return Field(std::move(new_shape), f.raw());
}

inline ComplexField reshape(const ComplexField& f, Shape new_shape) {
    if (detail::shape_product(new_shape) != f.size())
        throw ShapeError("reshape: element count mismatch");
    std::vector<std::complex<double>> d(f.data(), f.data() + f.size());
    return ComplexField(std::move(new_shape), std::move(d));
}

/// General axis permutation (data movement).
inline Field transpose(const Field& f, const std::vector<std::size_t>& perm) {
    if (perm.size() != f.rank()) throw ShapeError("transpose: permutation rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw ArgumentError("transpose: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = f.extent(perm[i]);
    Field out(out_shape);
    if (f.size() == 0) return out;

    const auto in_strides = detail::row_major_strides(f.shape());
    std::vector<std::size_t> stride_for_out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) stride_for_out[i] = in_strides[perm[i]];

    std::vector<std::size_t> idx(perm.size(), 0);
    const std::size_t n = f.size();
    std::size_t in_off = 0;
    for (std::size_t o = 0; o < n; ++o) {
        out[o] = f[in_off];
        // advance the out-ordered multi-index
        for (std::size_t a = perm.size(); a-- > 0;) {
            ++idx[a];
            in_off += stride_for_out[a];
            if (idx[a] < out_shape[a]) break;
            in_off -= stride_for_out[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    return out;
}

/// Axis-regrouping descriptor: each output axis is an ordered list of input
/// axes, which are brought together (transposing if needed) and merged.
/// Every input axis must appear exactly once.
using AxisGroups = std::vector<std::vector<std::size_t>>;

inline Field regroup(const Field& f, const AxisGroups& groups) {
    std::vector<std::size_t> perm;
    for (const auto& g : groups) perm.insert(perm.end(), g.begin(), g.end());
    if (perm.size() != f.rank()) throw ShapeError("regroup: groups must cover every axis once");

    bool identity = true;
    for (std::size_t i = 0; i < perm.size(); ++i)
        if (perm[i] != i) { identity = false; break; }

    Shape merged;
    merged.reserve(groups.size());
    for (const auto& g : groups) {
        std::size_t e = 1;
        for (std::size_t a : g) e *= f.extent(a); // extent() validates the axis id
        merged.push_back(e);
    }

    if (identity) return Field(std::move(merged), f.raw());
    Field t = transpose(f, perm);
    return Field(std::move(merged), std::move(t.raw()));
}

/// Circular shift by `shift` along one axis: out[i] = in[(i - shift) mod N].
inline Field roll(const Field& f, std::size_t axis, long long shift) {
    if (axis >= f.rank()) throw ArgumentError("roll: axis out of range");
    const long long N = static_cast<long long>(f.extent(axis));
    if (N == 0) return f;
    long long s = shift % N;
    if (s < 0) s += N;
    if (s == 0) return f;

    const auto strides = detail::row_major_strides(f.shape());
    const std::size_t stride = strides[axis];
    const std::size_t block = stride;                       // contiguous run per axis index
    const std::size_t axis_extent = f.extent(axis);
    const std::size_t outer = f.size() / (axis_extent * block);

    Field out(f.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * axis_extent * block;
        for (std::size_t i = 0; i < axis_extent; ++i) {
            const std::size_t src = (i + axis_extent - static_cast<std::size_t>(s)) % axis_extent;
            std::copy_n(f.data() + base + src * block, block, out.data() + base + i * block);
        }
    }
    return out;
}

/// Extracts [start, start+len) along an axis.
inline Field slice_axis(const Field& f, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= f.rank()) throw ArgumentError("slice_axis: axis out of range");
    if (start + len > f.extent(axis)) throw ShapeError("slice_axis: range exceeds extent");
    const auto strides = detail::row_major_strides(f.shape());
    const std::size_t block = strides[axis];
    const std::size_t axis_extent = f.extent(axis);
    const std::size_t outer = f.size() / (axis_extent * block);

    Shape out_shape = f.shape();
    out_shape[axis] = len;
    Field out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = f.data() + (o * axis_extent + start) * block;
        double* dst = out.data() + o * len * block;
        std::copy_n(src, len * block, dst);
    }
    return out;
}

/// Scatters `part` back into a zero field of shape `full_shape` at [start, start+len).
inline Field slice_axis_adjoint(const Field& part, std::size_t axis, std::size_t start,
                                const Shape& full_shape) {
    Field out(full_shape);
    const std::size_t len = part.extent(axis);
    const auto strides = detail::row_major_strides(full_shape);
    const std::size_t block = strides[axis];
    const std::size_t axis_extent = full_shape[axis];
    const std::size_t outer = out.size() / (axis_extent * block);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = part.data() + o * len * block;
        double* dst = out.data() + (o * axis_extent + start) * block;
        std::copy_n(src, len * block, dst);
    }
    return out;
}

/// Concatenates along an axis. All other extents must agree.
inline Field concat_axis(const std::vector<const Field*>& parts, std::size_t axis) {
    if (parts.empty()) throw ArgumentError("concat_axis: no inputs");
    Shape out_shape = parts[0]->shape();
    if (axis >= out_shape.size()) throw ArgumentError("concat_axis: axis out of range");
    std::size_t total = 0;
    for (const Field* p : parts) {
        if (p->rank() != out_shape.size()) throw ShapeError("concat_axis: rank mismatch");
        for (std::size_t a = 0; a < out_shape.size(); ++a)
            if (a != axis && p->extent(a) != out_shape[a])
                throw ShapeError("concat_axis: extent mismatch off the concat axis");
        total += p->extent(axis);
    }
    out_shape[axis] = total;
    Field out(out_shape);

    const auto strides = detail::row_major_strides(out_shape);
    const std::size_t block = strides[axis];
    const std::size_t outer = out.size() / (total * block);
    std::size_t offset = 0;
    for (const Field* p : parts) {
        const std::size_t len = p->extent(axis);
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = p->data() + o * len * block;
            double* dst = out.data() + (o * total + offset) * block;
            std::copy_n(src, len * block, dst);
        }
        offset += len;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Brute-force circular convolution (the spectral path's independent twin)
// ---------------------------------------------------------------------------

/// Direct-summation circular convolution over the given axes:
///   out[i] = sum_j f[j] * kernel[(i - j) mod N]  per convolved axis.
/// Deliberately NOT implemented via FFT; it is the reference the spectral
/// mixing path is checked against. Axes not in `axes` are carried along.
inline Field circular_convolve_oracle(const Field& f, const Field& kernel,
                                      const std::vector<std::size_t>& axes) {
    if (axes.empty()) throw ArgumentError("circular_convolve_oracle: empty axis set");
    if (kernel.rank() != axes.size())
        throw ShapeError("circular_convolve_oracle: kernel rank must equal axis count");
    for (std::size_t a = 0; a < axes.size(); ++a) {
        if (axes[a] >= f.rank()) throw ArgumentError("circular_convolve_oracle: axis out of range");
        if (a > 0 && axes[a] <= axes[a - 1])
            throw ArgumentError("circular_convolve_oracle: axes must be strictly increasing");
        if (kernel.extent(a) != f.extent(axes[a]))
            throw ShapeError("circular_convolve_oracle: kernel extent mismatch on axis " +
                             std::to_string(axes[a]));
    }

    const auto strides = detail::row_major_strides(f.shape());
    Field out(f.shape());

    // iterate over every output element; sum over the convolved sub-grid
    const std::size_t n = f.size();
    std::vector<std::size_t> idx(f.rank(), 0);
    std::vector<std::size_t> j(axes.size(), 0);
    for (std::size_t o = 0; o < n; ++o) {
        double acc = 0.0;
        std::fill(j.begin(), j.end(), 0);
        while (true) {
            // source offset: replace convolved coordinates by j
            std::size_t src = 0;
            std::size_t kidx = 0;
            std::size_t ai = 0;
            for (std::size_t a = 0; a < f.rank(); ++a) {
                std::size_t coord = idx[a];
                if (ai < axes.size() && axes[ai] == a) {
                    coord = j[ai];
                    const std::size_t N = f.extent(a);
                    const std::size_t rel = (idx[a] + N - j[ai]) % N;
                    kidx = kidx * N + rel;
                    ++ai;
                }
                src += coord * strides[a];
            }
            acc += f[src] * kernel[kidx];
            // advance j
            std::size_t a = axes.size();
            while (a-- > 0) {
                if (++j[a] < f.extent(axes[a])) break;
                j[a] = 0;
                if (a == 0) goto done;
            }
        }
    done:
        out[o] = acc;
        for (std::size_t a = f.rank(); a-- > 0;) {
            if (++idx[a] < f.extent(a)) break;
            idx[a] = 0;
        }
    }
    return out;
}

} // namespace wf

#endif // WF_FIELD_HPP
