#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "ct/gemm.hpp"
#include "ct/tape.hpp"
#include "ct/tensor.hpp"

namespace ct {

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` viewed in the (right-aligned) coordinate system of `out`,
// zero on broadcast dimensions.
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    const auto own = strides_of(s);
    const size_t off = out.size() - s.size();
    for (size_t i = 0; i < s.size(); ++i)
        if (s[i] != 1) st[off + i] = own[i];
    return st;
}

// Calls f(flat_out_index, offset_a, offset_b) for every element of `out`.
// The innermost dimension runs in a tight loop with constant strides; the
// odometer only advances once per inner run.
template <typename F>
inline void broadcast_iterate(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const int64_t n = numel_of(out);
    if (n == 0) return;
    const auto sta = broadcast_strides(sa, out);
    const auto stb = broadcast_strides(sb, out);
    const int r = (int)out.size();
    const int64_t inner = out[(size_t)r - 1];
    const int64_t ia = sta[(size_t)r - 1], ib = stb[(size_t)r - 1];
    std::vector<int64_t> idx(r, 0);
    int64_t offa = 0, offb = 0;
    for (int64_t base = 0; base < n; base += inner) {
        int64_t oa = offa, ob = offb;
        for (int64_t j = 0; j < inner; ++j, oa += ia, ob += ib) f(base + j, oa, ob);
        for (int d = r - 2; d >= 0; --d) {
            offa += sta[(size_t)d];
            offb += stb[(size_t)d];
            if (++idx[(size_t)d] < out[(size_t)d]) break;
            offa -= sta[(size_t)d] * out[(size_t)d];
            offb -= stb[(size_t)d] * out[(size_t)d];
            idx[(size_t)d] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise binary ops (NumPy-style broadcasting)
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind) {
    const Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    auto apply = [kind](T x, T y) {
        switch (kind) {
            case BinKind::Add: return x + y;
            case BinKind::Sub: return x - y;
            case BinKind::Mul: return x * y;
            default: return x / y;
        }
    };
    if (a.shape() == b.shape()) {
        const int64_t n = a.numel();
        switch (kind) {
            case BinKind::Add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
            case BinKind::Sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
            case BinKind::Mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
            case BinKind::Div: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
        }
    } else {
        broadcast_iterate(os, a.shape(), b.shape(),
                          [&](int64_t i, int64_t ia, int64_t ib) { po[i] = apply(pa[ia], pb[ib]); });
    }

    if (taping<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, bi, oi, os, kind]() {
            const T* g = oi->grad.data();
            const T* xa = ai->data.data();
            const T* xb = bi->data.data();
            T* ga = nullptr;
            T* gb = nullptr;
            if (ai->requires_grad) { ai->ensure_grad(); ga = ai->grad.data(); }
            if (bi->requires_grad) { bi->ensure_grad(); gb = bi->grad.data(); }
            broadcast_iterate(os, ai->shape, bi->shape, [&](int64_t i, int64_t ia, int64_t ib) {
                switch (kind) {
                    case BinKind::Add:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] += g[i];
                        break;
                    case BinKind::Sub:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] -= g[i];
                        break;
                    case BinKind::Mul:
                        if (ga) ga[ia] += g[i] * xb[ib];
                        if (gb) gb[ib] += g[i] * xa[ia];
                        break;
                    case BinKind::Div:
                        if (ga) ga[ia] += g[i] / xb[ib];
                        if (gb) gb[ib] -= g[i] * xa[ia] / (xb[ib] * xb[ib]);
                        break;
                }
            });
        });
    }
    return out;
}

}  // namespace detail

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary_op(a, b, detail::BinKind::Add); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary_op(a, b, detail::BinKind::Sub); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary_op(a, b, detail::BinKind::Mul); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary_op(a, b, detail::BinKind::Div); }

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// scalar and unary ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi, c]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
        });
    }
    return out;
}

namespace detail {

// dfn(x, y) = dy/dx evaluated per element, where y = fn(x).
template <typename T, typename Fn, typename Dfn>
Tensor<T> unary_op(const Tensor<T>& a, Fn fn, Dfn dfn) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = fn(pa[i]);
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi, dfn]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i)
                ai->grad[i] += oi->grad[i] * dfn(ai->data[i], oi->data[i]);
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                            [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::sqrt(x); },
                            [](T, T y) { return T(0.5) / y; });
}

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::unary_op(
        a, [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            return cdf + x * pdf;
        });
}

// max(x, c); gradient passes only where x > c.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T c) {
    return detail::unary_op(a, [c](T x) { return x > c ? x : c; },
                            [c](T x, T) { return x > c ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {
inline Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdim) {
    std::vector<bool> red(in.size(), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= (int)in.size())
            throw ShapeError("reduce axis " + std::to_string(ax) + " out of range for " + shape_str(in));
        red[(size_t)ax] = true;
    }
    Shape out;
    for (size_t i = 0; i < in.size(); ++i) {
        if (red[i]) {
            if (keepdim) out.push_back(1);
        } else {
            out.push_back(in[i]);
        }
    }
    if (out.empty()) out.push_back(1);
    return out;
}

inline Shape keepdim_shape(const Shape& in, const std::vector<int>& axes) {
    Shape out = in;
    for (int ax : axes) out[(size_t)ax] = 1;
    return out;
}
}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false) {
    const Shape kd = detail::keepdim_shape(a.shape(), axes);
    Tensor<T> out = Tensor<T>::zeros(detail::reduced_shape(a.shape(), axes, keepdim));
    const T* pa = a.ptr();
    T* po = out.ptr();
    broadcast_iterate(a.shape(), a.shape(), kd,
                      [&](int64_t i, int64_t, int64_t io) { po[io] += pa[i]; });
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi, kd]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            const T* g = oi->grad.data();
            T* ga = ai->grad.data();
            broadcast_iterate(ai->shape, ai->shape, kd,
                              [&](int64_t i, int64_t, int64_t io) { ga[i] += g[io]; });
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    std::vector<int> axes(a.rank());
    for (int i = 0; i < a.rank(); ++i) axes[(size_t)i] = i;
    return sum(a, axes, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, const std::vector<int>& axes, bool keepdim = false) {
    int64_t count = 1;
    for (int ax : axes) count *= a.dim(ax);
    return mul_scalar(sum(a, axes, keepdim), T(1) / T(count));
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return mul_scalar(sum_all(a), T(1) / T(a.numel()));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    // one -1 entry is inferred
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < new_shape.size(); ++i) {
        if (new_shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one -1 dimension");
            infer = (int)i;
        } else {
            known *= new_shape[i];
        }
    }
    if (infer >= 0) new_shape[(size_t)infer] = a.numel() / known;
    if (numel_of(new_shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
    Tensor<T> out = Tensor<T>::from(new_shape, a.data());
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, const std::vector<int>& perm) {
    if ((int)perm.size() != a.rank()) throw ShapeError("transpose: permutation rank mismatch");
    Shape os(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) os[i] = a.dim(perm[i]);
    const auto ist = strides_of(a.shape());
    std::vector<int64_t> pst(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) pst[i] = ist[(size_t)perm[i]];

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.ptr();
    T* po = out.ptr();
    const int r = (int)os.size();
    std::vector<int64_t> idx(os.size(), 0);
    int64_t off = 0;
    for (int64_t i = 0; i < out.numel(); ++i) {
        po[i] = pa[off];
        for (int d = r - 1; d >= 0; --d) {
            off += pst[(size_t)d];
            if (++idx[(size_t)d] < os[(size_t)d]) break;
            off -= pst[(size_t)d] * os[(size_t)d];
            idx[(size_t)d] = 0;
        }
    }
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi, os, pst]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            const T* g = oi->grad.data();
            T* ga = ai->grad.data();
            const int rr = (int)os.size();
            std::vector<int64_t> ix(os.size(), 0);
            int64_t aoff = 0;
            const int64_t n = (int64_t)oi->grad.size();
            for (int64_t i = 0; i < n; ++i) {
                ga[aoff] += g[i];
                for (int d = rr - 1; d >= 0; --d) {
                    aoff += pst[(size_t)d];
                    if (++ix[(size_t)d] < os[(size_t)d]) break;
                    aoff -= pst[(size_t)d] * os[(size_t)d];
                    ix[(size_t)d] = 0;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    if (axis < 0 || axis >= a.rank()) throw ShapeError("narrow: bad axis");
    if (start < 0 || start + len > a.dim(axis))
        throw ShapeError("narrow: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
    Shape os = a.shape();
    os[(size_t)axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const int64_t in_ax = a.dim(axis);

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(pa + (o * in_ax + start) * inner, pa + (o * in_ax + start + len) * inner,
                  po + o * len * inner);

    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi, outer, inner, in_ax, start, len]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            const T* g = oi->grad.data();
            T* ga = ai->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                const T* gs = g + o * len * inner;
                T* gd = ga + (o * in_ax + start) * inner;
                for (int64_t i = 0; i < len * inner; ++i) gd[i] += gs[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int r = parts[0].rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: bad axis");
    Shape os = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && p.dim(d) != os[(size_t)d])
                throw ShapeError("concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        total += p.dim(axis);
    }
    os[(size_t)axis] = total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[(size_t)i];
    for (int i = axis + 1; i < r; ++i) inner *= os[(size_t)i];

    Tensor<T> out = Tensor<T>::zeros(os);
    T* po = out.ptr();
    int64_t ax_off = 0;
    for (const auto& p : parts) {
        const int64_t lax = p.dim(axis);
        const T* pp = p.ptr();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(pp + o * lax * inner, pp + (o + 1) * lax * inner,
                      po + (o * total + ax_off) * inner);
        ax_off += lax;
    }

    bool any_rg = false;
    for (const auto& p : parts)
        if (p.requires_grad()) any_rg = true;
    if (GradTape<T>::active() && any_rg) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        std::vector<int64_t> lens;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            lens.push_back(p.dim(axis));
        }
        auto oi = out.impl();
        GradTape<T>::active()->record(oi, [impls, lens, oi, outer, inner, total]() {
            const T* g = oi->grad.data();
            int64_t ax = 0;
            for (size_t k = 0; k < impls.size(); ++k) {
                auto& pi = impls[k];
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    T* gp = pi->grad.data();
                    for (int64_t o = 0; o < outer; ++o) {
                        const T* gs = g + (o * total + ax) * inner;
                        T* gd = gp + o * lens[k] * inner;
                        for (int64_t i = 0; i < lens[k] * inner; ++i) gd[i] += gs[i];
                    }
                }
                ax += lens[k];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax (fused, stable)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    if (axis < 0) axis += a.rank();
    if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax: bad axis");
    const int64_t L = a.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);

    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* px = a.ptr();
    T* po = out.ptr();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * L * inner + in;
            T mx = px[base];
            for (int64_t l = 1; l < L; ++l) mx = std::max(mx, px[base + l * inner]);
            T z = T(0);
            for (int64_t l = 0; l < L; ++l) {
                const T e = std::exp(px[base + l * inner] - mx);
                po[base + l * inner] = e;
                z += e;
            }
            const T inv = T(1) / z;
            for (int64_t l = 0; l < L; ++l) po[base + l * inner] *= inv;
        }
    }

    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi, outer, inner, L]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            const T* p = oi->data.data();
            const T* g = oi->grad.data();
            T* ga = ai->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * L * inner + in;
                    T dot = T(0);
                    for (int64_t l = 0; l < L; ++l) dot += p[base + l * inner] * g[base + l * inner];
                    for (int64_t l = 0; l < L; ++l)
                        ga[base + l * inner] += p[base + l * inner] * (g[base + l * inner] - dot);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

// a: [batch..., M, K] @ b: [batch..., K, N]; batch dims must match exactly.
// 2-d inputs are the plain matmul case.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() != a.rank())
        throw ShapeError("matmul: ranks " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int r = a.rank();
    int64_t batch = 1;
    for (int i = 0; i < r - 2; ++i) {
        if (a.dim(i) != b.dim(i)) throw ShapeError("matmul: batch dims differ");
        batch *= a.dim(i);
    }
    const int64_t M = a.dim(r - 2), K = a.dim(r - 1), K2 = b.dim(r - 2), N = b.dim(r - 1);
    if (K != K2)
        throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
    Shape os = a.shape();
    os[(size_t)r - 1] = N;
    Tensor<T> out = Tensor<T>::zeros(os);
    for (int64_t bi = 0; bi < batch; ++bi)
        gemm_nn(M, N, K, a.ptr() + bi * M * K, b.ptr() + bi * K * N, out.ptr() + bi * M * N);

    if (taping<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bimp = b.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, bimp, oi, batch, M, N, K]() {
            const T* g = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi)
                    gemm_nt(M, K, N, g + bi * M * N, bimp->data.data() + bi * K * N,
                            ai->grad.data() + bi * M * K);
            }
            if (bimp->requires_grad) {
                bimp->ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi)
                    gemm_tn(K, N, M, ai->data.data() + bi * M * K, g + bi * M * N,
                            bimp->grad.data() + bi * K * N);
            }
        });
    }
    return out;
}

// x: [..., D] @ w: [D, E] + bias[E]; the leading dims are flattened.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be 2-d");
    const int64_t D = w.dim(0), E = w.dim(1);
    if (x.dim(x.rank() - 1) != D)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const int64_t rows = x.numel() / D;
    Shape os = x.shape();
    os.back() = E;
    Tensor<T> out = Tensor<T>::zeros(os);
    gemm_nn(rows, E, D, x.ptr(), w.ptr(), out.ptr());
    if (bias.defined()) {
        if (bias.numel() != E) throw ShapeError("linear: bias size");
        T* po = out.ptr();
        const T* pb = bias.ptr();
        for (int64_t rI = 0; rI < rows; ++rI)
            for (int64_t e = 0; e < E; ++e) po[rI * E + e] += pb[e];
    }

    const bool with_bias = bias.defined();
    bool rg = x.requires_grad() || w.requires_grad() || (with_bias && bias.requires_grad());
    if (GradTape<T>::active() && rg) {
        out.set_requires_grad(true);
        auto xi = x.impl(), wi = w.impl(), oi = out.impl();
        auto bi2 = with_bias ? bias.impl() : nullptr;
        GradTape<T>::active()->record(oi, [xi, wi, bi2, oi, rows, D, E]() {
            const T* g = oi->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                gemm_nt(rows, D, E, g, wi->data.data(), xi->grad.data());
            }
            if (wi->requires_grad) {
                wi->ensure_grad();
                gemm_tn(D, E, rows, xi->data.data(), g, wi->grad.data());
            }
            if (bi2 && bi2->requires_grad) {
                bi2->ensure_grad();
                T* gb = bi2->grad.data();
                for (int64_t rI = 0; rI < rows; ++rI)
                    for (int64_t e = 0; e < E; ++e) gb[e] += g[rI * E + e];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// detach and plain (non-differentiable) helpers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
    return a.detach();
}

// Per-lane argmax along `axis`; ties resolve to the lowest index.
template <typename T>
std::vector<int64_t> argmax_axis(const Tensor<T>& a, int axis) {
    if (axis < 0) axis += a.rank();
    const int64_t L = a.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::vector<int64_t> out((size_t)(outer * inner));
    const T* px = a.ptr();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * L * inner + in;
            T best = px[base];
            int64_t bi = 0;
            for (int64_t l = 1; l < L; ++l) {
                if (px[base + l * inner] > best) {
                    best = px[base + l * inner];
                    bi = l;
                }
            }
            out[(size_t)(o * inner + in)] = bi;
        }
    }
    return out;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
    for (T v : a.data())
        if (!std::isfinite((double)v)) return false;
    return true;
}

}  // namespace ct
