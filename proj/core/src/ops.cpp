#include "ursct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ursct {

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (T v : t.data()) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
    }
}

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
    if (!GradTape<T>::active()) return false;
    for (auto* t : inputs) {
        if (t->on_grad_path()) return true;
    }
    return false;
}

template <typename T>
void mark_and_record(Tensor<T>& out, std::function<void()> bwd) {
    out.payload()->on_grad_path = true;
    GradTape<T>::active()->record(out, std::move(bwd));
}

// Returns the grad buffer to accumulate into, or nullptr when the tensor is
// off the gradient path (constants). Allocates lazily.
template <typename T>
std::vector<T>* grad_buf(const std::shared_ptr<detail::Payload<T>>& p) {
    if (!p->on_grad_path && !p->requires_grad) return nullptr;
    if (p->grad.empty()) p->grad.assign(p->values.size(), T(0));
    return &p->grad;
}

template <typename T>
std::vector<T>& out_grad(const std::shared_ptr<detail::Payload<T>>& p) {
    if (p->grad.empty()) p->grad.assign(p->values.size(), T(0));
    return p->grad;
}

// --- broadcasting -----------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const int nd = static_cast<int>(std::max(a.size(), b.size()));
    Shape out(static_cast<std::size_t>(nd), 1);
    for (int i = 0; i < nd; ++i) {
        const std::int64_t da = i < static_cast<int>(a.size()) ? a[a.size() - 1 - i] : 1;
        const std::int64_t db = i < static_cast<int>(b.size()) ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                                 " with " + shape_str(b));
        }
        out[static_cast<std::size_t>(nd - 1 - i)] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed through `out` (right-aligned); 0 where broadcast.
std::vector<std::int64_t> effective_strides(const Shape& in, const Shape& out) {
    const auto in_strides = row_major_strides(in);
    std::vector<std::int64_t> eff(out.size(), 0);
    const int shift = static_cast<int>(out.size() - in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        eff[static_cast<std::size_t>(shift) + i] = in[i] == 1 ? 0 : in_strides[i];
    }
    return eff;
}

// Odometer walk over `shape` driving two mapped offsets.
template <class F>
void for_each_pair(const Shape& shape, const std::vector<std::int64_t>& sa,
                   const std::vector<std::int64_t>& sb, F&& f) {
    const int nd = static_cast<int>(shape.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
    std::int64_t ao = 0, bo = 0;
    for (std::int64_t i = 0;; ++i) {
        f(i, ao, bo);
        int d = nd - 1;
        for (; d >= 0; --d) {
            ++idx[static_cast<std::size_t>(d)];
            ao += sa[static_cast<std::size_t>(d)];
            bo += sb[static_cast<std::size_t>(d)];
            if (idx[static_cast<std::size_t>(d)] < shape[static_cast<std::size_t>(d)]) break;
            idx[static_cast<std::size_t>(d)] = 0;
            ao -= sa[static_cast<std::size_t>(d)] * shape[static_cast<std::size_t>(d)];
            bo -= sb[static_cast<std::size_t>(d)] * shape[static_cast<std::size_t>(d)];
        }
        if (d < 0) break;
    }
}

template <class F>
void for_each_mapped(const Shape& shape, const std::vector<std::int64_t>& s, F&& f) {
    static const std::vector<std::int64_t> kNone;
    std::vector<std::int64_t> zero(shape.size(), 0);
    for_each_pair(shape, s, zero, [&](std::int64_t i, std::int64_t off, std::int64_t) { f(i, off); });
}

// Elementwise binary op with broadcasting. fwd(a,b) -> out value;
// da(a,b,g) / db(a,b,g) -> grad contributions.
template <typename T, class F, class DA, class DB>
Tensor<T> binary_ew(const Tensor<T>& a, const Tensor<T>& b, const char* op, F fwd, DA da, DB db) {
    const Shape os = broadcast_shape(a.shape(), b.shape(), op);
    const auto sa = effective_strides(a.shape(), os);
    const auto sb = effective_strides(b.shape(), os);
    auto out = Tensor<T>::zeros(os);
    {
        auto* ov = out.payload()->values.data();
        const T* av = a.data().data();
        const T* bv = b.data().data();
        for_each_pair(os, sa, sb, [&](std::int64_t i, std::int64_t ao, std::int64_t bo) {
            ov[i] = fwd(av[ao], bv[bo]);
        });
    }
    check_finite(out, op);
    if (should_record<T>({&a, &b})) {
        auto ap = a.payload();
        auto bp = b.payload();
        auto opay = out.payload();
        mark_and_record(out, [ap, bp, opay, os, sa, sb, da, db]() {
            const auto& g = out_grad(opay);
            auto* ga = grad_buf(ap);
            auto* gb = grad_buf(bp);
            if (!ga && !gb) return;
            const T* av = ap->values.data();
            const T* bv = bp->values.data();
            for_each_pair(os, sa, sb, [&](std::int64_t i, std::int64_t ao, std::int64_t bo) {
                if (ga) (*ga)[static_cast<std::size_t>(ao)] += da(av[ao], bv[bo], g[static_cast<std::size_t>(i)]);
                if (gb) (*gb)[static_cast<std::size_t>(bo)] += db(av[ao], bv[bo], g[static_cast<std::size_t>(i)]);
            });
        });
    }
    return out;
}

// Elementwise unary op. fwd(x) -> value; dx(x,y,g) -> grad contribution.
template <typename T, class F, class DX>
Tensor<T> unary_ew(const Tensor<T>& x, const char* op, F fwd, DX dx) {
    auto out = Tensor<T>::zeros(x.shape());
    {
        auto* ov = out.payload()->values.data();
        const T* xv = x.data().data();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
    }
    check_finite(out, op);
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, dx]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            const T* xv = xp->values.data();
            const T* yv = opay->values.data();
            for (std::size_t i = 0; i < xp->values.size(); ++i) {
                (*gx)[i] += dx(xv[i], yv[i], g[i]);
            }
        });
    }
    return out;
}

int normalize_axis(int axis, int ndim, const char* op) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) {
        throw DimensionError(std::string(op) + ": axis out of range (rank " + std::to_string(ndim) + ")");
    }
    return axis;
}

// Splits shape into [outer, d, inner] around `axis`.
struct AxisSplit {
    std::int64_t outer = 1, d = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    s.d = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

// --- arithmetic --------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
        [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
        [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
        [](T x, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (T v : b.data()) {
        if (v == T(0)) throw NumericError("div: zero divisor");
    }
    return binary_ew(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
        [](T x, T y, T g) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary_ew(
        a, "add_scalar", [s](T x) { return x + s; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return unary_ew(
        a, "scale", [s](T x) { return x * s; }, [s](T, T, T g) { return g * s; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return unary_ew(
        x, "sqrt", [](T v) { return std::sqrt(v); },
        [](T, T y, T g) { return g / (T(2) * y); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary_ew(
        x, "abs", [](T v) { return std::abs(v); },
        [](T v, T, T g) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, OptScalar<T> lo, OptScalar<T> hi) {
    if (lo && hi && *lo > *hi) throw ConfigError("clamp: lower bound exceeds upper bound");
    return unary_ew(
        x, "clamp",
        [lo, hi](T v) {
            if (lo && v < *lo) v = *lo;
            if (hi && v > *hi) v = *hi;
            return v;
        },
        [lo, hi](T v, T, T g) {
            const bool inside = (!lo || v > *lo) && (!hi || v < *hi);
            return inside ? g : T(0);
        });
}

template <typename T>
Tensor<T> pow_nonneg(const Tensor<T>& x, T p) {
    for (T v : x.data()) {
        if (v < T(0)) throw NumericError("pow_nonneg: negative base");
    }
    return unary_ew(
        x, "pow_nonneg", [p](T v) { return std::pow(v, p); },
        [p](T v, T, T g) { return v == T(0) ? T(0) : g * p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_ew(
        x, "gelu",
        [](T v) {
            const double d = static_cast<double>(v);
            return static_cast<T>(d * 0.5 * (1.0 + std::erf(d * inv_sqrt2)));
        },
        [](T v, T, T g) {
            const double d = static_cast<double>(v);
            const double phi = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
            return static_cast<T>(static_cast<double>(g) * (phi + d * pdf));
        });
}

// --- matmul ------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw DimensionError("matmul: operands need at least 2 dims, got " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(-2), k = a.dim(-1);
    const std::int64_t k2 = b.dim(-2), n = b.dim(-1);
    if (k != k2) {
        throw DimensionError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const Shape abatch(a.shape().begin(), a.shape().end() - 2);
    const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    const Shape batch = broadcast_shape(abatch, bbatch, "matmul");
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    auto out = Tensor<T>::zeros(os);

    // Effective batch strides, in units of whole matrices.
    auto mat_strides = [](const Shape& bshape, const Shape& batch) {
        Shape padded = bshape;
        auto s = effective_strides(padded, batch);
        return s;
    };
    const auto sa = mat_strides(abatch, batch);
    const auto sb = mat_strides(bbatch, batch);
    const std::int64_t nbatch =
        std::accumulate(batch.begin(), batch.end(), std::int64_t{1}, std::multiplies<>());

    const T* A = a.data().data();
    const T* B = b.data().data();
    T* C = out.payload()->values.data();
    for_each_pair(batch, sa, sb, [&](std::int64_t bi, std::int64_t ai_, std::int64_t bi_) {
        const T* Ab = A + ai_ * m * k;
        const T* Bb = B + bi_ * k * n;
        T* Cb = C + bi * m * n;
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = Ab[i * k + p];
                if (av == T(0)) continue;
                const T* Brow = Bb + p * n;
                T* Crow = Cb + i * n;
                for (std::int64_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
            }
        }
    });
    (void)nbatch;
    check_finite(out, "matmul");

    if (should_record<T>({&a, &b})) {
        auto ap = a.payload();
        auto bp = b.payload();
        auto opay = out.payload();
        mark_and_record(out, [ap, bp, opay, batch, sa, sb, m, n, k]() {
            const auto& g = out_grad(opay);
            auto* ga = grad_buf(ap);
            auto* gb = grad_buf(bp);
            if (!ga && !gb) return;
            const T* A = ap->values.data();
            const T* B = bp->values.data();
            for_each_pair(batch, sa, sb, [&](std::int64_t bi, std::int64_t ai_, std::int64_t bi_) {
                const T* Ab = A + ai_ * m * k;
                const T* Bb = B + bi_ * k * n;
                const T* Gb = g.data() + bi * m * n;
                if (ga) {
                    T* dA = ga->data() + ai_ * m * k;
                    for (std::int64_t i = 0; i < m; ++i) {
                        for (std::int64_t p = 0; p < k; ++p) {
                            const T* Grow = Gb + i * n;
                            const T* Brow = Bb + p * n;
                            T acc = 0;
                            for (std::int64_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
                            dA[i * k + p] += acc;
                        }
                    }
                }
                if (gb) {
                    T* dB = gb->data() + bi_ * k * n;
                    for (std::int64_t i = 0; i < m; ++i) {
                        for (std::int64_t p = 0; p < k; ++p) {
                            const T av = Ab[i * k + p];
                            if (av == T(0)) continue;
                            const T* Grow = Gb + i * n;
                            T* dBrow = dB + p * n;
                            for (std::int64_t j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
                        }
                    }
                }
            });
        });
    }
    return out;
}

// --- conv2d ------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const OptTensor<T>& bias,
                 int stride, int padding, int groups) {
    if (x.ndim() != 4 || w.ndim() != 4) {
        throw DimensionError("conv2d: expected NCHW input and OIHW weight, got " +
                             shape_str(x.shape()) + " / " + shape_str(w.shape()));
    }
    if (stride < 1 || padding < 0 || groups < 1) throw ConfigError("conv2d: bad stride/padding/groups");
    const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Cout = w.dim(0), Cik = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (Cin % groups != 0 || Cout % groups != 0 || Cik != Cin / groups) {
        throw DimensionError("conv2d: channel/group mismatch, " + shape_str(x.shape()) + " / " +
                             shape_str(w.shape()) + " groups=" + std::to_string(groups));
    }
    if (bias && (bias->ndim() != 1 || bias->dim(0) != Cout)) {
        throw DimensionError("conv2d: bias must be [Cout]");
    }
    const std::int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw DimensionError("conv2d: kernel larger than padded input");

    auto out = Tensor<T>::zeros({N, Cout, Ho, Wo});
    const T* X = x.data().data();
    const T* K = w.data().data();
    T* Y = out.payload()->values.data();
    const std::int64_t cpg_in = Cin / groups, cpg_out = Cout / groups;

    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t oc = 0; oc < Cout; ++oc) {
            const std::int64_t gidx = oc / cpg_out;
            const T bval = bias ? bias->data()[static_cast<std::size_t>(oc)] : T(0);
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    T acc = bval;
                    for (std::int64_t ic = 0; ic < cpg_in; ++ic) {
                        const std::int64_t xc = gidx * cpg_in + ic;
                        const T* Xc = X + ((n * Cin + xc) * H) * W;
                        const T* Kc = K + ((oc * cpg_in + ic) * kh) * kw;
                        for (std::int64_t r = 0; r < kh; ++r) {
                            const std::int64_t ih = oh * stride - padding + r;
                            if (ih < 0 || ih >= H) continue;
                            for (std::int64_t c = 0; c < kw; ++c) {
                                const std::int64_t iw = ow * stride - padding + c;
                                if (iw < 0 || iw >= W) continue;
                                acc += Xc[ih * W + iw] * Kc[r * kw + c];
                            }
                        }
                    }
                    Y[((n * Cout + oc) * Ho + oh) * Wo + ow] = acc;
                }
            }
        }
    }
    check_finite(out, "conv2d");

    const bool rec = bias ? should_record<T>({&x, &w, &*bias}) : should_record<T>({&x, &w});
    if (rec) {
        auto xp = x.payload();
        auto wp = w.payload();
        auto bp = bias ? bias->payload() : nullptr;
        auto opay = out.payload();
        mark_and_record(out, [xp, wp, bp, opay, N, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, padding,
                              cpg_in, cpg_out]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            auto* gw = grad_buf(wp);
            std::vector<T>* gb = bp ? grad_buf(bp) : nullptr;
            if (!gx && !gw && !gb) return;
            const T* X = xp->values.data();
            const T* K = wp->values.data();
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t oc = 0; oc < Cout; ++oc) {
                    const std::int64_t gidx = oc / cpg_out;
                    for (std::int64_t oh = 0; oh < Ho; ++oh) {
                        for (std::int64_t ow = 0; ow < Wo; ++ow) {
                            const T go = g[static_cast<std::size_t>(((n * Cout + oc) * Ho + oh) * Wo + ow)];
                            if (go == T(0)) continue;
                            if (gb) (*gb)[static_cast<std::size_t>(oc)] += go;
                            for (std::int64_t ic = 0; ic < cpg_in; ++ic) {
                                const std::int64_t xc = gidx * cpg_in + ic;
                                const std::int64_t xbase = ((n * Cin + xc) * H) * W;
                                const std::int64_t kbase = ((oc * cpg_in + ic) * kh) * kw;
                                for (std::int64_t r = 0; r < kh; ++r) {
                                    const std::int64_t ih = oh * stride - padding + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (std::int64_t c = 0; c < kw; ++c) {
                                        const std::int64_t iw = ow * stride - padding + c;
                                        if (iw < 0 || iw >= W) continue;
                                        if (gx) (*gx)[static_cast<std::size_t>(xbase + ih * W + iw)] +=
                                            go * K[kbase + r * kw + c];
                                        if (gw) (*gw)[static_cast<std::size_t>(kbase + r * kw + c)] +=
                                            go * X[xbase + ih * W + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// --- softmax / layer_norm ----------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    axis = normalize_axis(axis, x.ndim(), "softmax");
    const auto sp = split_at(x.shape(), axis);
    auto out = Tensor<T>::zeros(x.shape());
    const T* X = x.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.d * sp.inner + in;
            T mx = X[base];
            for (std::int64_t l = 1; l < sp.d; ++l) mx = std::max(mx, X[base + l * sp.inner]);
            T sum = 0;
            for (std::int64_t l = 0; l < sp.d; ++l) {
                const T e = std::exp(X[base + l * sp.inner] - mx);
                Y[base + l * sp.inner] = e;
                sum += e;
            }
            for (std::int64_t l = 0; l < sp.d; ++l) Y[base + l * sp.inner] /= sum;
        }
    }
    check_finite(out, "softmax");
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, sp]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            const T* Y = opay->values.data();
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    const std::int64_t base = o * sp.d * sp.inner + in;
                    T dot = 0;
                    for (std::int64_t l = 0; l < sp.d; ++l) {
                        const std::int64_t i = base + l * sp.inner;
                        dot += g[static_cast<std::size_t>(i)] * Y[i];
                    }
                    for (std::int64_t l = 0; l < sp.d; ++l) {
                        const std::int64_t i = base + l * sp.inner;
                        (*gx)[static_cast<std::size_t>(i)] +=
                            Y[i] * (g[static_cast<std::size_t>(i)] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::int64_t C = x.dim(-1);
    if (gamma.numel() != C || beta.numel() != C) {
        throw DimensionError("layer_norm: affine params must match last axis " + std::to_string(C));
    }
    if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
    const std::int64_t rows = x.numel() / C;
    auto out = Tensor<T>::zeros(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    std::vector<T> mean(static_cast<std::size_t>(rows));
    const T* X = x.data().data();
    const T* G = gamma.data().data();
    const T* B = beta.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = X + r * C;
        T mu = 0;
        for (std::int64_t c = 0; c < C; ++c) mu += row[c];
        mu /= static_cast<T>(C);
        T var = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            const T d = row[c] - mu;
            var += d * d;
        }
        var /= static_cast<T>(C);
        const T inv = T(1) / std::sqrt(var + eps);
        mean[static_cast<std::size_t>(r)] = mu;
        inv_std[static_cast<std::size_t>(r)] = inv;
        T* yrow = Y + r * C;
        for (std::int64_t c = 0; c < C; ++c) yrow[c] = (row[c] - mu) * inv * G[c] + B[c];
    }
    check_finite(out, "layer_norm");
    if (should_record<T>({&x, &gamma, &beta})) {
        auto xp = x.payload();
        auto gp = gamma.payload();
        auto bp = beta.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, gp, bp, opay, rows, C, mean, inv_std]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            auto* gg = grad_buf(gp);
            auto* gb = grad_buf(bp);
            if (!gx && !gg && !gb) return;
            const T* X = xp->values.data();
            const T* G = gp->values.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* row = X + r * C;
                const T* grow = g.data() + r * C;
                const T mu = mean[static_cast<std::size_t>(r)];
                const T inv = inv_std[static_cast<std::size_t>(r)];
                if (gg || gb) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T xhat = (row[c] - mu) * inv;
                        if (gg) (*gg)[static_cast<std::size_t>(c)] += grow[c] * xhat;
                        if (gb) (*gb)[static_cast<std::size_t>(c)] += grow[c];
                    }
                }
                if (gx) {
                    T sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T dxhat = grow[c] * G[c];
                        const T xhat = (row[c] - mu) * inv;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const T invC = T(1) / static_cast<T>(C);
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T dxhat = grow[c] * G[c];
                        const T xhat = (row[c] - mu) * inv;
                        (*gx)[static_cast<std::size_t>(r * C + c)] +=
                            inv * (dxhat - sum_dxhat * invC - xhat * sum_dxhat_xhat * invC);
                    }
                }
            }
        });
    }
    return out;
}

// --- shape ops ----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    }
    auto out = Tensor<T>::from(new_shape, std::vector<T>(x.data().begin(), x.data().end()));
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order) {
    const int nd = x.ndim();
    if (static_cast<int>(order.size()) != nd) {
        throw DimensionError("permute: order rank mismatch for " + shape_str(x.shape()));
    }
    std::vector<bool> seen(static_cast<std::size_t>(nd), false);
    for (int a : order) {
        if (a < 0 || a >= nd || seen[static_cast<std::size_t>(a)]) {
            throw DimensionError("permute: order is not a permutation");
        }
        seen[static_cast<std::size_t>(a)] = true;
    }
    Shape os(static_cast<std::size_t>(nd));
    const auto xs = row_major_strides(x.shape());
    std::vector<std::int64_t> mapped(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        os[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(order[i])];
        mapped[static_cast<std::size_t>(i)] = xs[static_cast<std::size_t>(order[i])];
    }
    auto out = Tensor<T>::zeros(os);
    const T* X = x.data().data();
    T* Y = out.payload()->values.data();
    for_each_mapped(os, mapped, [&](std::int64_t i, std::int64_t off) { Y[i] = X[off]; });
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, os, mapped]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for_each_mapped(os, mapped, [&](std::int64_t i, std::int64_t off) {
                (*gx)[static_cast<std::size_t>(off)] += g[static_cast<std::size_t>(i)];
            });
        });
    }
    return out;
}

// --- reductions ----------------------------------------------------------------

template <typename T>
Tensor<T> reduce_mean_all(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    T acc = 0;
    for (T v : x.data()) acc += v;
    auto out = Tensor<T>::scalar(acc / static_cast<T>(n));
    check_finite(out, "reduce_mean_all");
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, n]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            const T gv = g[0] / static_cast<T>(n);
            for (auto& v : *gx) v += gv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_sum_all(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    auto out = Tensor<T>::scalar(acc);
    check_finite(out, "reduce_sum_all");
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for (auto& v : *gx) v += g[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<int> axes, bool keepdims) {
    const int nd = x.ndim();
    std::vector<bool> reduced(static_cast<std::size_t>(nd), false);
    for (int& a : axes) {
        a = normalize_axis(a, nd, "reduce_mean");
        if (reduced[static_cast<std::size_t>(a)]) throw DimensionError("reduce_mean: duplicate axis");
        reduced[static_cast<std::size_t>(a)] = true;
    }
    if (axes.empty()) throw DimensionError("reduce_mean: no axes given");
    Shape kept = x.shape();
    std::int64_t count = 1;
    for (int i = 0; i < nd; ++i) {
        if (reduced[static_cast<std::size_t>(i)]) {
            count *= kept[static_cast<std::size_t>(i)];
            kept[static_cast<std::size_t>(i)] = 1;
        }
    }
    // Map each input element to its slot in the kept-dims (keepdims) view.
    const auto ostrides = row_major_strides(kept);
    std::vector<std::int64_t> map_strides(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        map_strides[static_cast<std::size_t>(i)] =
            reduced[static_cast<std::size_t>(i)] ? 0 : ostrides[static_cast<std::size_t>(i)];
    }
    auto acc = Tensor<T>::zeros(kept);
    T* A = acc.payload()->values.data();
    const T* X = x.data().data();
    for_each_mapped(x.shape(), map_strides, [&](std::int64_t i, std::int64_t off) {
        // `i` walks the input here because the walked shape is the input's.
        A[off] += X[i];
    });
    const T invc = T(1) / static_cast<T>(count);
    for (std::int64_t i = 0; i < acc.numel(); ++i) A[i] *= invc;

    Shape fs;
    if (keepdims) {
        fs = kept;
    } else {
        for (int i = 0; i < nd; ++i) {
            if (!reduced[static_cast<std::size_t>(i)]) fs.push_back(x.shape()[static_cast<std::size_t>(i)]);
        }
        if (fs.empty()) fs = {1};
    }
    auto out = Tensor<T>::from(fs, std::vector<T>(acc.data().begin(), acc.data().end()));
    check_finite(out, "reduce_mean");
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        auto xshape = x.shape();
        mark_and_record(out, [xp, opay, xshape, map_strides, invc]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for_each_mapped(xshape, map_strides, [&](std::int64_t i, std::int64_t off) {
                (*gx)[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(off)] * invc;
            });
        });
    }
    return out;
}

// --- slicing / padding / concat -------------------------------------------------

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len) {
    axis = normalize_axis(axis, x.ndim(), "slice");
    const std::int64_t d = x.dim(axis);
    if (start < 0 || len < 1 || start + len > d) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") outside axis of size " + std::to_string(d));
    }
    const auto sp = split_at(x.shape(), axis);
    Shape os = x.shape();
    os[static_cast<std::size_t>(axis)] = len;
    auto out = Tensor<T>::zeros(os);
    const T* X = x.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        const T* src = X + (o * sp.d + start) * sp.inner;
        T* dst = Y + o * len * sp.inner;
        std::copy(src, src + len * sp.inner, dst);
    }
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, sp, start, len]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                T* dst = gx->data() + (o * sp.d + start) * sp.inner;
                const T* src = g.data() + o * len * sp.inner;
                for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> pad_zero(const Tensor<T>& x, int axis, std::int64_t before, std::int64_t after) {
    axis = normalize_axis(axis, x.ndim(), "pad_zero");
    if (before < 0 || after < 0) throw DimensionError("pad_zero: negative padding");
    const auto sp = split_at(x.shape(), axis);
    const std::int64_t od = sp.d + before + after;
    Shape os = x.shape();
    os[static_cast<std::size_t>(axis)] = od;
    auto out = Tensor<T>::zeros(os);
    const T* X = x.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        const T* src = X + o * sp.d * sp.inner;
        T* dst = Y + (o * od + before) * sp.inner;
        std::copy(src, src + sp.d * sp.inner, dst);
    }
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, sp, od, before]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                T* dst = gx->data() + o * sp.d * sp.inner;
                const T* src = g.data() + (o * od + before) * sp.inner;
                for (std::int64_t i = 0; i < sp.d * sp.inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
    if (a.ndim() != b.ndim()) {
        throw DimensionError("concat: rank mismatch " + shape_str(a.shape()) + " / " + shape_str(b.shape()));
    }
    axis = normalize_axis(axis, a.ndim(), "concat");
    for (int i = 0; i < a.ndim(); ++i) {
        if (i != axis && a.dim(i) != b.dim(i)) {
            throw DimensionError("concat: shapes differ off-axis, " + shape_str(a.shape()) + " / " +
                                 shape_str(b.shape()));
        }
    }
    const auto spa = split_at(a.shape(), axis);
    const std::int64_t db = b.dim(axis);
    const std::int64_t od = spa.d + db;
    Shape os = a.shape();
    os[static_cast<std::size_t>(axis)] = od;
    auto out = Tensor<T>::zeros(os);
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t o = 0; o < spa.outer; ++o) {
        std::copy(A + o * spa.d * spa.inner, A + (o + 1) * spa.d * spa.inner,
                  Y + o * od * spa.inner);
        std::copy(B + o * db * spa.inner, B + (o + 1) * db * spa.inner,
                  Y + (o * od + spa.d) * spa.inner);
    }
    if (should_record<T>({&a, &b})) {
        auto ap = a.payload();
        auto bp = b.payload();
        auto opay = out.payload();
        mark_and_record(out, [ap, bp, opay, spa, db, od]() {
            const auto& g = out_grad(opay);
            auto* ga = grad_buf(ap);
            auto* gb = grad_buf(bp);
            if (!ga && !gb) return;
            for (std::int64_t o = 0; o < spa.outer; ++o) {
                if (ga) {
                    T* dst = ga->data() + o * spa.d * spa.inner;
                    const T* src = g.data() + o * od * spa.inner;
                    for (std::int64_t i = 0; i < spa.d * spa.inner; ++i) dst[i] += src[i];
                }
                if (gb) {
                    T* dst = gb->data() + o * db * spa.inner;
                    const T* src = g.data() + (o * od + spa.d) * spa.inner;
                    for (std::int64_t i = 0; i < db * spa.inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

// --- roll / gather ----------------------------------------------------------------

template <typename T>
Tensor<T> roll2(const Tensor<T>& x, std::int64_t shift0, std::int64_t shift1, int axis0, int axis1) {
    axis0 = normalize_axis(axis0, x.ndim(), "roll2");
    axis1 = normalize_axis(axis1, x.ndim(), "roll2");
    if (axis0 == axis1) throw DimensionError("roll2: axes must differ");
    if (axis0 > axis1) {
        std::swap(axis0, axis1);
        std::swap(shift0, shift1);
    }
    const auto& sh = x.shape();
    std::int64_t outer = 1, mid = 1, inner = 1;
    for (int i = 0; i < axis0; ++i) outer *= sh[static_cast<std::size_t>(i)];
    for (int i = axis0 + 1; i < axis1; ++i) mid *= sh[static_cast<std::size_t>(i)];
    for (int i = axis1 + 1; i < x.ndim(); ++i) inner *= sh[static_cast<std::size_t>(i)];
    const std::int64_t n0 = sh[static_cast<std::size_t>(axis0)];
    const std::int64_t n1 = sh[static_cast<std::size_t>(axis1)];
    auto src_of = [](std::int64_t i, std::int64_t s, std::int64_t n) {
        return ((i - s) % n + n) % n;
    };
    std::vector<std::int64_t> src0(static_cast<std::size_t>(n0)), src1(static_cast<std::size_t>(n1));
    for (std::int64_t i = 0; i < n0; ++i) src0[static_cast<std::size_t>(i)] = src_of(i, shift0, n0);
    for (std::int64_t i = 0; i < n1; ++i) src1[static_cast<std::size_t>(i)] = src_of(i, shift1, n1);

    auto out = Tensor<T>::zeros(sh);
    const T* X = x.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i0 = 0; i0 < n0; ++i0) {
            for (std::int64_t m = 0; m < mid; ++m) {
                for (std::int64_t i1 = 0; i1 < n1; ++i1) {
                    const std::int64_t dst = (((o * n0 + i0) * mid + m) * n1 + i1) * inner;
                    const std::int64_t srcoff =
                        (((o * n0 + src0[static_cast<std::size_t>(i0)]) * mid + m) * n1 +
                         src1[static_cast<std::size_t>(i1)]) * inner;
                    std::copy(X + srcoff, X + srcoff + inner, Y + dst);
                }
            }
        }
    }
    if (should_record<T>({&x})) {
        auto xp = x.payload();
        auto opay = out.payload();
        mark_and_record(out, [xp, opay, outer, mid, inner, n0, n1, src0, src1]() {
            const auto& g = out_grad(opay);
            auto* gx = grad_buf(xp);
            if (!gx) return;
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t i0 = 0; i0 < n0; ++i0) {
                    for (std::int64_t m = 0; m < mid; ++m) {
                        for (std::int64_t i1 = 0; i1 < n1; ++i1) {
                            const std::int64_t dst = (((o * n0 + i0) * mid + m) * n1 + i1) * inner;
                            const std::int64_t srcoff =
                                (((o * n0 + src0[static_cast<std::size_t>(i0)]) * mid + m) * n1 +
                                 src1[static_cast<std::size_t>(i1)]) * inner;
                            for (std::int64_t t = 0; t < inner; ++t) {
                                (*gx)[static_cast<std::size_t>(srcoff + t)] +=
                                    g[static_cast<std::size_t>(dst + t)];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::int64_t>& index) {
    if (table.ndim() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const std::int64_t R = table.dim(0), C = table.dim(1);
    for (auto i : index) {
        if (i < 0 || i >= R) throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range");
    }
    const std::int64_t M = static_cast<std::int64_t>(index.size());
    if (M == 0) throw DimensionError("gather_rows: empty index");
    auto out = Tensor<T>::zeros({M, C});
    const T* Tb = table.data().data();
    T* Y = out.payload()->values.data();
    for (std::int64_t i = 0; i < M; ++i) {
        const T* src = Tb + index[static_cast<std::size_t>(i)] * C;
        std::copy(src, src + C, Y + i * C);
    }
    if (should_record<T>({&table})) {
        auto tp = table.payload();
        auto opay = out.payload();
        mark_and_record(out, [tp, opay, index, C]() {
            const auto& g = out_grad(opay);
            auto* gt = grad_buf(tp);
            if (!gt) return;
            for (std::size_t i = 0; i < index.size(); ++i) {
                T* dst = gt->data() + index[i] * C;
                const T* src = g.data() + static_cast<std::int64_t>(i) * C;
                for (std::int64_t c = 0; c < C; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

// --- instantiations -----------------------------------------------------------

#define URSCT_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                    \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                         \
    template Tensor<T> sqrt<T>(const Tensor<T>&);                                             \
    template Tensor<T> abs<T>(const Tensor<T>&);                                              \
    template Tensor<T> clamp<T>(const Tensor<T>&, std::optional<T>, std::optional<T>);        \
    template Tensor<T> pow_nonneg<T>(const Tensor<T>&, T);                                    \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                             \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,                          \
                                 const std::optional<Tensor<T>>&, int, int, int);             \
    template Tensor<T> softmax<T>(const Tensor<T>&, int);                                     \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                   \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                 \
    template Tensor<T> reduce_mean_all<T>(const Tensor<T>&);                                  \
    template Tensor<T> reduce_sum_all<T>(const Tensor<T>&);                                   \
    template Tensor<T> reduce_mean<T>(const Tensor<T>&, std::vector<int>, bool);              \
    template Tensor<T> slice<T>(const Tensor<T>&, int, std::int64_t, std::int64_t);           \
    template Tensor<T> pad_zero<T>(const Tensor<T>&, int, std::int64_t, std::int64_t);        \
    template Tensor<T> concat<T>(const Tensor<T>&, const Tensor<T>&, int);                    \
    template Tensor<T> roll2<T>(const Tensor<T>&, std::int64_t, std::int64_t, int, int);      \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<std::int64_t>&);

URSCT_INSTANTIATE_OPS(float)
URSCT_INSTANTIATE_OPS(double)

#undef URSCT_INSTANTIATE_OPS

}  // namespace ursct
