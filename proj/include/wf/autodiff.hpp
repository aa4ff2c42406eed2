#ifndef WF_AUTODIFF_HPP
#define WF_AUTODIFF_HPP

#include <complex>
#include <functional>
#include <memory>
#include <utility>
#include <variant>
#include <vector>

#include "wf/errors.hpp"
#include "wf/fft.hpp"
#include "wf/field.hpp"

namespace wf::ad {

/// Handle to a real-valued node on a Tape.
struct Var {
    int id = -1;
};

/// Handle to a complex-valued node on a Tape.
struct CVar {
    int id = -1;
};

/// Recorded operation graph for one forward pass. Nodes own their forward
/// values; reverse-mode gradients are accumulated per node by walking the
/// nodes in reverse creation order (a valid topological order by
/// construction). Gradients of complex nodes pack (dL/dRe, dL/dIm) as the
/// real and imaginary parts of a ComplexField.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves -----------------------------------------------------------

    Var leaf(Field v, bool requires_grad = false) {
        return Var{push(std::move(v), requires_grad, nullptr)};
    }

    // ---- access -----------------------------------------------------------

    const Field& val(Var v) const { return std::get<Field>(nodes_[check(v.id)].value); }
    const ComplexField& cval(CVar v) const {
        return std::get<ComplexField>(nodes_[check(v.id)].value);
    }

    bool needs_grad(int id) const { return nodes_[check(id)].requires_grad; }

    /// Accumulated gradient of a real node (zero if it never received one).
    Field grad_of(Var v) {
        Node& n = nodes_[check(v.id)];
        if (!n.grad_alloc) return Field(std::get<Field>(n.value).shape());
        return std::get<Field>(n.grad);
    }

    // ---- reverse pass -----------------------------------------------------

    /// Seeds d(root)/d(root) = 1 and propagates to all leaves.
    /// `root` must hold a single scalar.
    void backward(Var root) {
        if (ran_backward_) throw StateError("Tape::backward: reverse pass already run");
        Node& rn = nodes_[check(root.id)];
        if (std::get<Field>(rn.value).size() != 1)
            throw StateError("Tape::backward: root must be scalar");
        grad(root.id) = Field(std::get<Field>(rn.value).shape(), 1.0);
        rn.grad_alloc = true;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backprop && n.grad_alloc && n.requires_grad) n.backprop();
        }
        ran_backward_ = true;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- real ops ---------------------------------------------------------

    Var add(Var a, Var b) {
        Field out = wf::add(val(a), val(b));
        const int ia = a.id, ib = b.id;
        return Var{push(std::move(out), needs_grad(ia) || needs_grad(ib), [this, ia, ib](int self) {
            const Field& g = grad_field(self);
            if (needs_grad(ia)) accumulate(ia, g);
            if (needs_grad(ib)) accumulate(ib, g);
        })};
    }

    Var sub(Var a, Var b) {
        Field out = wf::sub(val(a), val(b));
        const int ia = a.id, ib = b.id;
        return Var{push(std::move(out), needs_grad(ia) || needs_grad(ib), [this, ia, ib](int self) {
            const Field& g = grad_field(self);
            if (needs_grad(ia)) accumulate(ia, g);
            if (needs_grad(ib)) {
                Field neg = wf::scale(g, -1.0);
                accumulate(ib, neg);
            }
        })};
    }

    Var mul(Var a, Var b) {
        Field out = wf::mul(val(a), val(b));
        const int ia = a.id, ib = b.id;
        return Var{push(std::move(out), needs_grad(ia) || needs_grad(ib), [this, ia, ib](int self) {
            const Field& g = grad_field(self);
            if (needs_grad(ia)) {
                Field ga = wf::mul(g, std::get<Field>(nodes_[ib].value));
                accumulate(ia, ga);
            }
            if (needs_grad(ib)) {
                Field gb = wf::mul(g, std::get<Field>(nodes_[ia].value));
                accumulate(ib, gb);
            }
        })};
    }

    Var scale(Var a, double c) {
        Field out = wf::scale(val(a), c);
        const int ia = a.id;
        return Var{push(std::move(out), needs_grad(ia), [this, ia, c](int self) {
            if (!needs_grad(ia)) return;
            Field ga = wf::scale(grad_field(self), c);
            accumulate(ia, ga);
        })};
    }

    /// out[..., m] = sum_k a[..., k] w[k, m]
    Var matmul(Var a, Var w) {
        Field out = wf::matmul(val(a), val(w));
        const int ia = a.id, iw = w.id;
        return Var{push(std::move(out), needs_grad(ia) || needs_grad(iw), [this, ia, iw](int self) {
            const Field& g = grad_field(self);
            const Field& av = std::get<Field>(nodes_[ia].value);
            const Field& wv = std::get<Field>(nodes_[iw].value);
            const std::size_t K = wv.extent(0), M = wv.extent(1);
            const std::size_t rows = av.size() / K;
            if (needs_grad(ia)) {
                // g * W^T through the forward kernel (axpy form vectorizes;
                // a naive dot-product loop would serialize on the FP adder)
                Field wt = wf::transpose(wv, {1, 0});
                Field gr = wf::reshape(g, Shape{rows, M});
                Field ga = wf::matmul(gr, wt);
                accumulate(ia, wf::reshape(ga, av.shape()));
            }
            if (needs_grad(iw)) {
                Field gw(wv.shape());
                // r-major keeps gw resident in cache while g streams once
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* arow = av.data() + r * K;
                    const double* grow = g.data() + r * M;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double avv = arow[k];
                        double* gwrow = gw.data() + k * M;
                        for (std::size_t m = 0; m < M; ++m) gwrow[m] += avv * grow[m];
                    }
                }
                accumulate(iw, gw);
            }
        })};
    }

    Var bias_add(Var a, Var b) {
        Field out = wf::bias_add(val(a), val(b));
        const int ia = a.id, ib = b.id;
        return Var{push(std::move(out), needs_grad(ia) || needs_grad(ib), [this, ia, ib](int self) {
            const Field& g = grad_field(self);
            if (needs_grad(ia)) accumulate(ia, g);
            if (needs_grad(ib)) {
                const Field& bv = std::get<Field>(nodes_[ib].value);
                const std::size_t M = bv.extent(0);
                Field gb(bv.shape());
                for (std::size_t r = 0; r < g.size() / M; ++r)
                    for (std::size_t m = 0; m < M; ++m) gb[m] += g[r * M + m];
                accumulate(ib, gb);
            }
        })};
    }

    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        auto cache = std::make_shared<LayerNormCache>();
        Field out = wf::layer_norm(val(x), val(gain), val(bias), eps, cache.get());
        const int ix = x.id, ig = gain.id, ib = bias.id;
        return Var{push(std::move(out), needs_grad(ix) || needs_grad(ig) || needs_grad(ib),
                        [this, ix, ig, ib, cache](int self) {
            const Field& g = grad_field(self);
            const Field& gainv = std::get<Field>(nodes_[ig].value);
            const std::size_t D = gainv.extent(0);
            const std::size_t rows = g.size() / D;
            if (needs_grad(ig) || needs_grad(ib)) {
                Field ggain(gainv.shape()), gbias(gainv.shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t d = 0; d < D; ++d) {
                        ggain[d] += g[r * D + d] * cache->xhat[r * D + d];
                        gbias[d] += g[r * D + d];
                    }
                if (needs_grad(ig)) accumulate(ig, ggain);
                if (needs_grad(ib)) accumulate(ib, gbias);
            }
            if (needs_grad(ix)) {
                Field gx(cache->xhat.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (std::size_t d = 0; d < D; ++d) {
                        const double gh = g[r * D + d] * gainv[d];
                        mean_gh += gh;
                        mean_ghx += gh * cache->xhat[r * D + d];
                    }
                    mean_gh /= static_cast<double>(D);
                    mean_ghx /= static_cast<double>(D);
                    const double inv = cache->inv_std[r];
                    for (std::size_t d = 0; d < D; ++d) {
                        const double gh = g[r * D + d] * gainv[d];
                        gx[r * D + d] = inv * (gh - mean_gh - cache->xhat[r * D + d] * mean_ghx);
                    }
                }
                accumulate(ix, gx);
            }
        })};
    }

    Var relu(Var x) {
        Field out = wf::relu(val(x));
        const int ix = x.id;
        return Var{push(std::move(out), needs_grad(ix), [this, ix](int self) {
            if (!needs_grad(ix)) return;
            const Field& g = grad_field(self);
            const Field& xv = std::get<Field>(nodes_[ix].value);
            Field gx(xv.shape());
            for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
            accumulate(ix, gx);
        })};
    }

    Var gelu(Var x) {
        // derivative computed alongside the value: erf/exp are the costly
        // part and the inputs are already in registers here
        const Field& xv = val(x);
        Field out(xv.shape());
        auto deriv = std::make_shared<Field>(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
            out[i] = v * cdf;
            (*deriv)[i] = cdf + v * 0.3989422804014326779 * std::exp(-0.5 * v * v);
        }
        const int ix = x.id;
        return Var{push(std::move(out), needs_grad(ix), [this, ix, deriv](int self) {
            if (!needs_grad(ix)) return;
            const Field& g = grad_field(self);
            Field gx(deriv->shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * (*deriv)[i];
            accumulate(ix, gx);
        })};
    }

    Var reshape(Var x, Shape new_shape) {
        Shape old_shape = val(x).shape();
        Field out = wf::reshape(val(x), new_shape);
        const int ix = x.id;
        return Var{push(std::move(out), needs_grad(ix), [this, ix, old_shape](int self) {
            if (!needs_grad(ix)) return;
            Field gx = wf::reshape(grad_field(self), old_shape);
            accumulate(ix, gx);
        })};
    }

    Var transpose(Var x, std::vector<std::size_t> perm) {
        Field out = wf::transpose(val(x), perm);
        std::vector<std::size_t> inv(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
        const int ix = x.id;
        return Var{push(std::move(out), needs_grad(ix), [this, ix, inv](int self) {
            if (!needs_grad(ix)) return;
            Field gx = wf::transpose(grad_field(self), inv);
            accumulate(ix, gx);
        })};
    }

    Var roll(Var x, std::size_t axis, long long shift) {
        Field out = wf::roll(val(x), axis, shift);
        const int ix = x.id;
        return Var{push(std::move(out), needs_grad(ix), [this, ix, axis, shift](int self) {
            if (!needs_grad(ix)) return;
            Field gx = wf::roll(grad_field(self), axis, -shift);
            accumulate(ix, gx);
        })};
    }

    Var slice(Var x, std::size_t axis, std::size_t start, std::size_t len) {
        Shape full = val(x).shape();
        Field out = wf::slice_axis(val(x), axis, start, len);
        const int ix = x.id;
        return Var{push(std::move(out), needs_grad(ix), [this, ix, axis, start, full](int self) {
            if (!needs_grad(ix)) return;
            Field gx = wf::slice_axis_adjoint(grad_field(self), axis, start, full);
            accumulate(ix, gx);
        })};
    }

    /// Extracts index `i` along `axis` and drops that axis.
    Var take_index(Var x, std::size_t axis, std::size_t i) {
        Var s = slice(x, axis, i, 1);
        Shape sq = val(s).shape();
        sq.erase(sq.begin() + static_cast<std::ptrdiff_t>(axis));
        return reshape(s, sq);
    }

    Var concat(const std::vector<Var>& parts, std::size_t axis) {
        std::vector<const Field*> vs;
        vs.reserve(parts.size());
        for (Var p : parts) vs.push_back(&val(p));
        Field out = wf::concat_axis(vs, axis);
        std::vector<int> ids;
        bool rg = false;
        std::vector<std::size_t> lens;
        for (Var p : parts) {
            ids.push_back(p.id);
            lens.push_back(val(p).extent(axis));
            rg = rg || needs_grad(p.id);
        }
        return Var{push(std::move(out), rg, [this, ids, lens, axis](int self) {
            const Field& g = grad_field(self);
            std::size_t off = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                if (needs_grad(ids[p])) {
                    Field gp = wf::slice_axis(g, axis, off, lens[p]);
                    accumulate(ids[p], gp);
                }
                off += lens[p];
            }
        })};
    }

    // ---- spectral ops ------------------------------------------------------

    CVar rdft(Var x, std::vector<std::size_t> axes) {
        Shape orig = val(x).shape();
        ComplexField out = wf::rdft(val(x), axes);
        const int ix = x.id;
        return CVar{push(std::move(out), needs_grad(ix), [this, ix, axes, orig](int self) {
            if (!needs_grad(ix)) return;
            Field gx = wf::rdft_adjoint(grad_cfield(self), axes, orig);
            accumulate(ix, gx);
        })};
    }

    Var irdft(CVar c, std::vector<std::size_t> axes, Shape original_shape) {
        Field out = wf::irdft(cval(c), axes, original_shape);
        const int ic = c.id;
        return Var{push(std::move(out), needs_grad(ic), [this, ic, axes, original_shape](int self) {
            if (!needs_grad(ic)) return;
            ComplexField gc = wf::irdft_adjoint(grad_field(self), axes, original_shape);
            caccumulate(ic, gc);
        })};
    }

    /// Block-diagonal complex matrix multiply along the trailing axis.
    /// w is a real Field of shape (k, m, m, 2) packing complex entries;
    /// D = k*m must equal the trailing extent of z.
    CVar cmul_blockdiag(CVar z, Var w) {
        const ComplexField& zv = cval(z);
        const Field& wv = val(w);
        if (wv.rank() != 4 || wv.extent(1) != wv.extent(2) || wv.extent(3) != 2)
            throw ShapeError("cmul_blockdiag: weight must be (k, m, m, 2)");
        const std::size_t k = wv.extent(0), m = wv.extent(1);
        const std::size_t D = zv.extent(zv.rank() - 1);
        if (k * m != D) throw ShapeError("cmul_blockdiag: k*m != D");

        ComplexField out(zv.shape());
        const std::size_t rows = zv.size() / D;
        forward_blockdiag(zv, wv, out, rows, k, m);

        const int iz = z.id, iw = w.id;
        return CVar{push(std::move(out), needs_grad(iz) || needs_grad(iw),
                         [this, iz, iw, k, m](int self) {
            const ComplexField& g = grad_cfield(self);
            const ComplexField& zv2 = std::get<ComplexField>(nodes_[iz].value);
            const Field& wv2 = std::get<Field>(nodes_[iw].value);
            const std::size_t D = k * m;
            const std::size_t rows = zv2.size() / D;
            if (needs_grad(iz)) {
                // g_z = W^H g_y: reuse the forward kernel with the
                // conjugate-transposed blocks
                Field wh(wv2.shape());
                for (std::size_t b = 0; b < k; ++b)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < m; ++j) {
                            wh[((b * m + j) * m + i) * 2] = wv2[((b * m + i) * m + j) * 2];
                            wh[((b * m + j) * m + i) * 2 + 1] =
                                -wv2[((b * m + i) * m + j) * 2 + 1];
                        }
                ComplexField gz(zv2.shape());
                forward_blockdiag(g, wh, gz, rows, k, m);
                caccumulate(iz, gz);
            }
            if (needs_grad(iw)) {
                Field gw(wv2.shape());
                // block-outer so each weight entry sums over rows in order
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * D * m > 8192)
#endif
                for (long long bb = 0; bb < static_cast<long long>(k); ++bb) {
                    const std::size_t b = static_cast<std::size_t>(bb);
                    double* gwb = gw.data() + b * m * m * 2;
                    for (std::size_t r = 0; r < rows; ++r) {
                        const std::complex<double>* gr = g.data() + r * D;
                        const std::complex<double>* zr = zv2.data() + r * D;
                        for (std::size_t i = 0; i < m; ++i) {
                            const std::complex<double> gy = gr[b * m + i];
                            for (std::size_t j = 0; j < m; ++j) {
                                const std::complex<double> c = gy * std::conj(zr[b * m + j]);
                                gwb[(i * m + j) * 2] += c.real();
                                gwb[(i * m + j) * 2 + 1] += c.imag();
                            }
                        }
                    }
                }
                accumulate(iw, gw);
            }
        })};
    }

    /// Adds a complex bias (real Field of shape (D, 2)) along the trailing axis.
    CVar cbias(CVar z, Var b) {
        const ComplexField& zv = cval(z);
        const Field& bv = val(b);
        if (bv.rank() != 2 || bv.extent(1) != 2 || bv.extent(0) != zv.extent(zv.rank() - 1))
            throw ShapeError("cbias: bias must be (D, 2)");
        const std::size_t D = bv.extent(0);
        ComplexField out(zv.shape());
        for (std::size_t r = 0; r < zv.size() / D; ++r)
            for (std::size_t d = 0; d < D; ++d)
                out[r * D + d] = zv[r * D + d] + std::complex<double>(bv[d * 2], bv[d * 2 + 1]);
        const int iz = z.id, ib = b.id;
        return CVar{push(std::move(out), needs_grad(iz) || needs_grad(ib), [this, iz, ib, D](int self) {
            const ComplexField& g = grad_cfield(self);
            if (needs_grad(iz)) caccumulate(iz, g);
            if (needs_grad(ib)) {
                Field gb(Shape{D, 2});
                for (std::size_t r = 0; r < g.size() / D; ++r)
                    for (std::size_t d = 0; d < D; ++d) {
                        gb[d * 2] += g[r * D + d].real();
                        gb[d * 2 + 1] += g[r * D + d].imag();
                    }
                accumulate(ib, gb);
            }
        })};
    }

    /// ReLU applied independently to real and imaginary parts.
    CVar crelu(CVar z) {
        const ComplexField& zv = cval(z);
        ComplexField out(zv.shape());
        for (std::size_t i = 0; i < zv.size(); ++i)
            out[i] = {zv[i].real() > 0.0 ? zv[i].real() : 0.0,
                      zv[i].imag() > 0.0 ? zv[i].imag() : 0.0};
        const int iz = z.id;
        return CVar{push(std::move(out), needs_grad(iz), [this, iz](int self) {
            if (!needs_grad(iz)) return;
            const ComplexField& g = grad_cfield(self);
            const ComplexField& zv2 = std::get<ComplexField>(nodes_[iz].value);
            ComplexField gz(zv2.shape());
            for (std::size_t i = 0; i < zv2.size(); ++i)
                gz[i] = {zv2[i].real() > 0.0 ? g[i].real() : 0.0,
                         zv2[i].imag() > 0.0 ? g[i].imag() : 0.0};
            caccumulate(iz, gz);
        })};
    }

    /// Scales each frequency bin by a real learnable coefficient.
    /// z has shape (batch..., bins..., D) with `n_batch_axes` leading batch
    /// axes; lambda is flat over the bin grid (row-major).
    CVar clambda(CVar z, Var lambda, std::size_t n_batch_axes) {
        const ComplexField& zv = cval(z);
        const Field& lv = val(lambda);
        const auto [batch, bins, D] = split_extents(zv.shape(), n_batch_axes);
        if (lv.size() != bins)
            throw ShapeError("clambda: lambda length " + std::to_string(lv.size()) +
                             " != retained bin count " + std::to_string(bins));
        ComplexField out(zv.shape());
        for (std::size_t bt = 0; bt < batch; ++bt)
            for (std::size_t n = 0; n < bins; ++n) {
                const double l = lv[n];
                const std::size_t base = (bt * bins + n) * D;
                for (std::size_t d = 0; d < D; ++d) out[base + d] = zv[base + d] * l;
            }
        const int iz = z.id, il = lambda.id;
        return CVar{push(std::move(out), needs_grad(iz) || needs_grad(il),
                         [this, iz, il, batch = batch, bins = bins, D = D](int self) {
            const ComplexField& g = grad_cfield(self);
            const ComplexField& zv2 = std::get<ComplexField>(nodes_[iz].value);
            const Field& lv2 = std::get<Field>(nodes_[il].value);
            if (needs_grad(iz)) {
                ComplexField gz(zv2.shape());
                for (std::size_t bt = 0; bt < batch; ++bt)
                    for (std::size_t n = 0; n < bins; ++n) {
                        const double l = lv2[n];
                        const std::size_t base = (bt * bins + n) * D;
                        for (std::size_t d = 0; d < D; ++d) gz[base + d] = g[base + d] * l;
                    }
                caccumulate(iz, gz);
            }
            if (needs_grad(il)) {
                Field gl(lv2.shape());
                for (std::size_t bt = 0; bt < batch; ++bt)
                    for (std::size_t n = 0; n < bins; ++n) {
                        const std::size_t base = (bt * bins + n) * D;
                        double acc = 0.0;
                        for (std::size_t d = 0; d < D; ++d)
                            acc += g[base + d].real() * zv2[base + d].real() +
                                   g[base + d].imag() * zv2[base + d].imag();
                        gl[n] += acc;
                    }
                accumulate(il, gl);
            }
        })};
    }

    /// Independent complex D x D matrix per frequency bin (FNO mode).
    /// w is a real Field (bins, D, D, 2).
    CVar cmul_perbin(CVar z, Var w, std::size_t n_batch_axes) {
        const ComplexField& zv = cval(z);
        const Field& wv = val(w);
        const auto [batch, bins, D] = split_extents(zv.shape(), n_batch_axes);
        if (wv.rank() != 4 || wv.extent(0) != bins || wv.extent(1) != D || wv.extent(2) != D ||
            wv.extent(3) != 2)
            throw ShapeError("cmul_perbin: weight must be (bins, D, D, 2)");

        ComplexField out(zv.shape());
        for (std::size_t bt = 0; bt < batch; ++bt)
            for (std::size_t n = 0; n < bins; ++n) {
                const double* wn = wv.data() + n * D * D * 2;
                const std::complex<double>* zn = zv.data() + (bt * bins + n) * D;
                std::complex<double>* on = out.data() + (bt * bins + n) * D;
                for (std::size_t i = 0; i < D; ++i) {
                    std::complex<double> acc(0.0, 0.0);
                    for (std::size_t j = 0; j < D; ++j)
                        acc += std::complex<double>(wn[(i * D + j) * 2], wn[(i * D + j) * 2 + 1]) *
                               zn[j];
                    on[i] = acc;
                }
            }
        const int iz = z.id, iw = w.id;
        return CVar{push(std::move(out), needs_grad(iz) || needs_grad(iw),
                         [this, iz, iw, batch = batch, bins = bins, D = D](int self) {
            const ComplexField& g = grad_cfield(self);
            const ComplexField& zv2 = std::get<ComplexField>(nodes_[iz].value);
            const Field& wv2 = std::get<Field>(nodes_[iw].value);
            if (needs_grad(iz)) {
                ComplexField gz(zv2.shape());
                for (std::size_t bt = 0; bt < batch; ++bt)
                    for (std::size_t n = 0; n < bins; ++n) {
                        const double* wn = wv2.data() + n * D * D * 2;
                        const std::complex<double>* gn = g.data() + (bt * bins + n) * D;
                        std::complex<double>* gzn = gz.data() + (bt * bins + n) * D;
                        for (std::size_t j = 0; j < D; ++j) {
                            std::complex<double> acc(0.0, 0.0);
                            for (std::size_t i = 0; i < D; ++i)
                                acc += std::conj(std::complex<double>(wn[(i * D + j) * 2],
                                                                      wn[(i * D + j) * 2 + 1])) *
                                       gn[i];
                            gzn[j] = acc;
                        }
                    }
                caccumulate(iz, gz);
            }
            if (needs_grad(iw)) {
                Field gw(wv2.shape());
                for (std::size_t bt = 0; bt < batch; ++bt)
                    for (std::size_t n = 0; n < bins; ++n) {
                        double* gwn = gw.data() + n * D * D * 2;
                        const std::complex<double>* gn = g.data() + (bt * bins + n) * D;
                        const std::complex<double>* zn = zv2.data() + (bt * bins + n) * D;
                        for (std::size_t i = 0; i < D; ++i)
                            for (std::size_t j = 0; j < D; ++j) {
                                const std::complex<double> c = gn[i] * std::conj(zn[j]);
                                gwn[(i * D + j) * 2] += c.real();
                                gwn[(i * D + j) * 2 + 1] += c.imag();
                            }
                    }
                accumulate(iw, gw);
            }
        })};
    }

    // ---- patch ops ---------------------------------------------------------

    /// (T, H, W, C) -> (t, h, w, P) with P = pt*ph*pw*C; patch-interior order
    /// is (dt, dh, dw, c), row-major.
    Var extract_patches(Var x, std::size_t pt, std::size_t ph, std::size_t pw) {
        const Field& xv = val(x);
        if (xv.rank() != 4) throw ShapeError("extract_patches: input must be (T, H, W, C)");
        const std::size_t T = xv.extent(0), H = xv.extent(1), W = xv.extent(2), C = xv.extent(3);
        if (pt == 0 || ph == 0 || pw == 0 || T % pt || H % ph || W % pw)
            throw ShapeError("extract_patches: extents not divisible by patch size");
        const std::size_t t = T / pt, h = H / ph, w = W / pw, P = pt * ph * pw * C;
        Field out(Shape{t, h, w, P});
        patch_gather(xv, out, pt, ph, pw, false);
        const int ix = x.id;
        Shape orig = xv.shape();
        return Var{push(std::move(out), needs_grad(ix), [this, ix, pt, ph, pw, orig](int self) {
            if (!needs_grad(ix)) return;
            Field gx(orig);
            patch_gather(gx, std::get<Field>(nodes_[self].grad), pt, ph, pw, true);
            accumulate(ix, gx);
        })};
    }

    /// (h, w, ph*pw*C) -> (h*ph, w*pw, C); interior order (dh, dw, c).
    Var depatchify(Var y, std::size_t ph, std::size_t pw, std::size_t C) {
        const Field& yv = val(y);
        if (yv.rank() != 3 || yv.extent(2) != ph * pw * C)
            throw ShapeError("depatchify: input must be (h, w, ph*pw*C)");
        const std::size_t h = yv.extent(0), w = yv.extent(1);
        Field out(Shape{h * ph, w * pw, C});
        depatch_scatter(yv, out, ph, pw, C, false);
        const int iy = y.id;
        Shape orig = yv.shape();
        return Var{push(std::move(out), needs_grad(iy), [this, iy, ph, pw, C, orig](int self) {
            if (!needs_grad(iy)) return;
            Field gy(orig);
            depatch_scatter(gy, std::get<Field>(nodes_[self].grad), ph, pw, C, true);
            accumulate(iy, gy);
        })};
    }

    /// 3x3 convolution over an (h, w, Cin) grid with circular padding along
    /// the second (longitude) axis and replicate padding along the first
    /// (latitude) axis. kernel: (3, 3, Cin, Cout); bias: (Cout).
    Var conv3x3(Var x, Var kernel, Var bias) {
        const Field& xv = val(x);
        const Field& kv = val(kernel);
        const Field& bv = val(bias);
        if (xv.rank() != 3 || kv.rank() != 4 || kv.extent(0) != 3 || kv.extent(1) != 3)
            throw ShapeError("conv3x3: bad ranks");
        const std::size_t h = xv.extent(0), w = xv.extent(1), Cin = xv.extent(2);
        const std::size_t Cout = kv.extent(3);
        if (kv.extent(2) != Cin || bv.shape() != Shape{Cout})
            throw ShapeError("conv3x3: channel mismatch");

        Field out(Shape{h, w, Cout});
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (h * w * Cin * Cout > 4096)
#endif
        for (long long jj = 0; jj < static_cast<long long>(h); ++jj) {
            const std::size_t j = static_cast<std::size_t>(jj);
            for (std::size_t k = 0; k < w; ++k) {
                double* orow = out.data() + (j * w + k) * Cout;
                for (std::size_t co = 0; co < Cout; ++co) orow[co] = bv[co];
                for (int dj = -1; dj <= 1; ++dj) {
                    const std::size_t sj = clamp_row(j, dj, h);
                    for (int dk = -1; dk <= 1; ++dk) {
                        const std::size_t sk = wrap_col(k, dk, w);
                        const double* xrow = xv.data() + (sj * w + sk) * Cin;
                        const double* krow = kv.data() + ((dj + 1) * 3 + (dk + 1)) * Cin * Cout;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            const double xvv = xrow[ci];
                            for (std::size_t co = 0; co < Cout; ++co)
                                orow[co] += xvv * krow[ci * Cout + co];
                        }
                    }
                }
            }
        }
        const int ix = x.id, ik = kernel.id, ib = bias.id;
        return Var{push(std::move(out), needs_grad(ix) || needs_grad(ik) || needs_grad(ib),
                        [this, ix, ik, ib, h, w, Cin, Cout](int self) {
            const Field& g = grad_field(self);
            const Field& xv2 = std::get<Field>(nodes_[ix].value);
            const Field& kv2 = std::get<Field>(nodes_[ik].value);
            if (needs_grad(ib)) {
                Field gb(Shape{Cout});
                for (std::size_t i = 0; i < h * w; ++i)
                    for (std::size_t co = 0; co < Cout; ++co) gb[co] += g[i * Cout + co];
                accumulate(ib, gb);
            }
            if (needs_grad(ik)) {
                Field gk(kv2.shape());
                // tap-outer so each 3x3 slice of gk stays cache-resident
                // while the grid streams once per tap
                for (int dj = -1; dj <= 1; ++dj)
                    for (int dk = -1; dk <= 1; ++dk) {
                        double* krow = gk.data() + ((dj + 1) * 3 + (dk + 1)) * Cin * Cout;
                        for (std::size_t j = 0; j < h; ++j) {
                            const std::size_t sj = clamp_row(j, dj, h);
                            for (std::size_t k = 0; k < w; ++k) {
                                const std::size_t sk = wrap_col(k, dk, w);
                                const double* grow = g.data() + (j * w + k) * Cout;
                                const double* xrow = xv2.data() + (sj * w + sk) * Cin;
                                for (std::size_t ci = 0; ci < Cin; ++ci) {
                                    const double xvv = xrow[ci];
                                    double* kslot = krow + ci * Cout;
                                    for (std::size_t co = 0; co < Cout; ++co)
                                        kslot[co] += xvv * grow[co];
                                }
                            }
                        }
                    }
                accumulate(ik, gk);
            }
            if (needs_grad(ix)) {
                Field gx(xv2.shape());
                for (std::size_t j = 0; j < h; ++j)
                    for (std::size_t k = 0; k < w; ++k) {
                        const double* grow = g.data() + (j * w + k) * Cout;
                        for (int dj = -1; dj <= 1; ++dj) {
                            const std::size_t sj = clamp_row(j, dj, h);
                            for (int dk = -1; dk <= 1; ++dk) {
                                const std::size_t sk = wrap_col(k, dk, w);
                                double* gxrow = gx.data() + (sj * w + sk) * Cin;
                                const double* krow =
                                    kv2.data() + ((dj + 1) * 3 + (dk + 1)) * Cin * Cout;
                                for (std::size_t ci = 0; ci < Cin; ++ci)
                                    for (std::size_t co = 0; co < Cout; ++co)
                                        gxrow[ci] += krow[ci * Cout + co] * grow[co];
                            }
                        }
                    }
                accumulate(ix, gx);
            }
        })};
    }

    // ---- loss --------------------------------------------------------------

    /// Mean over channels of the latitude-weighted MSE:
    /// (1/(H*W*C)) * sum_{j,k,c} L(j) * (pred - target)^2.
    Var weighted_mse(Var pred, const Field& target, const std::vector<double>& row_weights) {
        const Field& pv = val(pred);
        if (!pv.same_shape(target)) throw ShapeError("weighted_mse: pred/target shape mismatch");
        if (pv.rank() != 3 || row_weights.size() != pv.extent(0))
            throw ShapeError("weighted_mse: expected (H, W, C) and one weight per row");
        const std::size_t H = pv.extent(0), W = pv.extent(1), C = pv.extent(2);
        const double norm = 1.0 / static_cast<double>(H * W * C);
        double acc = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
            const double lw = row_weights[j];
            for (std::size_t i = j * W * C; i < (j + 1) * W * C; ++i) {
                const double e = pv[i] - target[i];
                acc += lw * e * e;
            }
        }
        Field out = Field::scalar(acc * norm);
        const int ip = pred.id;
        auto tgt = std::make_shared<Field>(target);
        auto wts = std::make_shared<std::vector<double>>(row_weights);
        return Var{push(std::move(out), needs_grad(ip), [this, ip, tgt, wts, H, W, C, norm](int self) {
            if (!needs_grad(ip)) return;
            const double gscale = grad_field(self)[0] * 2.0 * norm;
            const Field& pv2 = std::get<Field>(nodes_[ip].value);
            Field gp(pv2.shape());
            for (std::size_t j = 0; j < H; ++j) {
                const double lw = (*wts)[j] * gscale;
                for (std::size_t i = j * W * C; i < (j + 1) * W * C; ++i)
                    gp[i] = lw * (pv2[i] - (*tgt)[i]);
            }
            accumulate(ip, gp);
        })};
    }

private:
    struct Node {
        std::variant<Field, ComplexField> value;
        std::variant<Field, ComplexField> grad;
        bool requires_grad = false;
        bool grad_alloc = false;
        std::function<void()> backprop;
    };

    int check(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw StateError("Tape: invalid node handle");
        return id;
    }

    template <typename V, typename Fn>
    int push(V value, bool rg, Fn&& back) {
        const int id = static_cast<int>(nodes_.size());
        Node n;
        n.value = std::move(value);
        n.requires_grad = rg;
        if constexpr (!std::is_same_v<std::decay_t<Fn>, std::nullptr_t>) {
            n.backprop = [this, id, fn = std::forward<Fn>(back)]() { fn(id); };
        }
        nodes_.push_back(std::move(n));
        return id;
    }

    int push(Field value, bool rg, std::nullptr_t) {
        const int id = static_cast<int>(nodes_.size());
        Node n;
        n.value = std::move(value);
        n.requires_grad = rg;
        nodes_.push_back(std::move(n));
        return id;
    }

    Field& grad(int id) {
        Node& n = nodes_[check(id)];
        if (!n.grad_alloc) {
            n.grad = Field(std::get<Field>(n.value).shape());
            n.grad_alloc = true;
        }
        return std::get<Field>(n.grad);
    }

    ComplexField& cgrad(int id) {
        Node& n = nodes_[check(id)];
        if (!n.grad_alloc) {
            n.grad = ComplexField(std::get<ComplexField>(n.value).shape());
            n.grad_alloc = true;
        }
        return std::get<ComplexField>(n.grad);
    }

    const Field& grad_field(int id) const { return std::get<Field>(nodes_[id].grad); }
    const ComplexField& grad_cfield(int id) const { return std::get<ComplexField>(nodes_[id].grad); }

    void accumulate(int id, const Field& g) {
        Field& dst = grad(id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    void caccumulate(int id, const ComplexField& g) {
        ComplexField& dst = cgrad(id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    static std::tuple<std::size_t, std::size_t, std::size_t> split_extents(const Shape& s,
                                                                           std::size_t n_batch) {
        if (s.size() < n_batch + 2) throw ShapeError("spectral op: need (batch..., bins..., D)");
        std::size_t batch = 1, bins = 1;
        for (std::size_t a = 0; a < n_batch; ++a) batch *= s[a];
        for (std::size_t a = n_batch; a + 1 < s.size(); ++a) bins *= s[a];
        return {batch, bins, s.back()};
    }

    static void forward_blockdiag(const ComplexField& zv, const Field& wv, ComplexField& out,
                                  std::size_t rows, std::size_t k, std::size_t m) {
        const std::size_t D = k * m;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * D * m > 8192)
#endif
        for (long long rr = 0; rr < static_cast<long long>(rows); ++rr) {
            const std::size_t r = static_cast<std::size_t>(rr);
            const std::complex<double>* zr = zv.data() + r * D;
            std::complex<double>* orow = out.data() + r * D;
            for (std::size_t b = 0; b < k; ++b) {
                const double* wb = wv.data() + b * m * m * 2;
                for (std::size_t i = 0; i < m; ++i) {
                    std::complex<double> acc(0.0, 0.0);
                    for (std::size_t j = 0; j < m; ++j)
                        acc += std::complex<double>(wb[(i * m + j) * 2], wb[(i * m + j) * 2 + 1]) *
                               zr[b * m + j];
                    orow[b * m + i] = acc;
                }
            }
        }
    }

    /// Moves data between (T,H,W,C) and its patch layout. The two directions
    /// are exact inverses (every grid element belongs to one patch).
    /// reverse=false: patches <- x. reverse=true: x <- patches.
    static void patch_gather(const Field& cx, const Field& cpatches, std::size_t pt, std::size_t ph,
                             std::size_t pw, bool reverse) {
        Field& x = const_cast<Field&>(cx);
        Field& patches = const_cast<Field&>(cpatches);
        const std::size_t T = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
        const std::size_t t = T / pt, h = H / ph, w = W / pw;
        const std::size_t P = pt * ph * pw * C;
        for (std::size_t it = 0; it < t; ++it)
            for (std::size_t ih = 0; ih < h; ++ih)
                for (std::size_t iw = 0; iw < w; ++iw) {
                    double* prow = patches.data() + ((it * h + ih) * w + iw) * P;
                    std::size_t q = 0;
                    for (std::size_t dt = 0; dt < pt; ++dt)
                        for (std::size_t dh = 0; dh < ph; ++dh)
                            for (std::size_t dw = 0; dw < pw; ++dw) {
                                double* xrow =
                                    x.data() +
                                    (((it * pt + dt) * H + ih * ph + dh) * W + iw * pw + dw) * C;
                                if (reverse)
                                    for (std::size_t c = 0; c < C; ++c) xrow[c] = prow[q++];
                                else
                                    for (std::size_t c = 0; c < C; ++c) prow[q++] = xrow[c];
                            }
                }
    }

    /// Moves data between (h,w,ph*pw*C) and (h*ph, w*pw, C); a bijection.
    /// reverse=false: full <- y. reverse=true: y <- full.
    static void depatch_scatter(const Field& cy, const Field& cfull, std::size_t ph, std::size_t pw,
                                std::size_t C, bool reverse) {
        Field& y = const_cast<Field&>(cy);
        Field& full = const_cast<Field&>(cfull);
        const std::size_t h = y.extent(0), w = y.extent(1);
        const std::size_t W = w * pw;
        for (std::size_t ih = 0; ih < h; ++ih)
            for (std::size_t iw = 0; iw < w; ++iw) {
                double* yrow = y.data() + (ih * w + iw) * ph * pw * C;
                std::size_t q = 0;
                for (std::size_t dh = 0; dh < ph; ++dh)
                    for (std::size_t dw = 0; dw < pw; ++dw) {
                        double* frow =
                            full.data() + ((ih * ph + dh) * W + iw * pw + dw) * C;
                        if (reverse)
                            for (std::size_t c = 0; c < C; ++c) yrow[q++] = frow[c];
                        else
                            for (std::size_t c = 0; c < C; ++c) frow[c] = yrow[q++];
                    }
            }
    }

    static std::size_t clamp_row(std::size_t j, int dj, std::size_t h) {
        const long long v = static_cast<long long>(j) + dj;
        if (v < 0) return 0;
        if (v >= static_cast<long long>(h)) return h - 1;
        return static_cast<std::size_t>(v);
    }

    static std::size_t wrap_col(std::size_t k, int dk, std::size_t w) {
        const long long v = static_cast<long long>(k) + dk + static_cast<long long>(w);
        return static_cast<std::size_t>(v) % w;
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

} // namespace wf::ad

#endif // WF_AUTODIFF_HPP
