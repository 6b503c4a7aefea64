#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "ct/ops.hpp"

namespace ct {

// ---------------------------------------------------------------------------
// conv2d, NCHW x OIHW -> NOHW, via im2col + GEMM
// ---------------------------------------------------------------------------

namespace detail {

// col: [C*kh*kw, OH*OW]
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* col) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                T* dst = col + ((c * kh + ky) * kw + kx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        for (int64_t ox = 0; ox < OW; ++ox) dst[oy * OW + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * stride + kx - pad;
                        dst[oy * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* x) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                const T* src = col + ((c * kh + ky) * kw + kx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * OW + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {},
                 int64_t stride = 1, int64_t padding = 0) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw ShapeError("conv2d: expected NCHW input and OIHW kernel, got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t O = kernel.dim(0), I = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (C != I)
        throw ShapeError("conv2d: input channels " + std::to_string(C) + " != kernel channels " +
                         std::to_string(I));
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >=1, padding >=0");
    const int64_t OH = (H + 2 * padding - kh) / stride + 1;
    const int64_t OW = (W + 2 * padding - kw) / stride + 1;
    if (OH <= 0 || OW <= 0)
        throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " too large for input " +
                         shape_str(input.shape()));
    if (bias.defined() && bias.numel() != O) throw ShapeError("conv2d: bias size != out channels");

    const int64_t CKK = C * kh * kw;
    const int64_t SP = OH * OW;
    // columns are kept alive for the backward GEMMs
    auto cols = std::make_shared<std::vector<T>>((size_t)(N * CKK * SP));
    Tensor<T> out = Tensor<T>::zeros({N, O, OH, OW});
    const T* px = input.ptr();
    const T* pw = kernel.ptr();
    T* po = out.ptr();
    for (int64_t n = 0; n < N; ++n) {
        T* col = cols->data() + n * CKK * SP;
        detail::im2col(px + n * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW, col);
        gemm_nn(O, SP, CKK, pw, col, po + n * O * SP);
    }
    if (bias.defined()) {
        const T* pb = bias.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t o = 0; o < O; ++o) {
                T* row = po + (n * O + o) * SP;
                for (int64_t s = 0; s < SP; ++s) row[s] += pb[o];
            }
    }

    const bool with_bias = bias.defined();
    bool rg = input.requires_grad() || kernel.requires_grad() || (with_bias && bias.requires_grad());
    if (GradTape<T>::active() && rg) {
        out.set_requires_grad(true);
        auto xi = input.impl(), wi = kernel.impl(), oi = out.impl();
        auto bi = with_bias ? bias.impl() : nullptr;
        GradTape<T>::active()->record(oi, [xi, wi, bi, oi, cols, N, C, H, W, O, kh, kw, stride,
                                           padding, OH, OW, CKK, SP]() {
            const T* g = oi->grad.data();
            if (wi->requires_grad) {
                wi->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    gemm_nt(O, CKK, SP, g + n * O * SP, cols->data() + n * CKK * SP,
                            wi->grad.data());
            }
            if (bi && bi->requires_grad) {
                bi->ensure_grad();
                T* gb = bi->grad.data();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t o = 0; o < O; ++o) {
                        const T* row = g + (n * O + o) * SP;
                        T acc = T(0);
                        for (int64_t s = 0; s < SP; ++s) acc += row[s];
                        gb[o] += acc;
                    }
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                std::vector<T> dcol((size_t)(CKK * SP));
                for (int64_t n = 0; n < N; ++n) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    gemm_tn(CKK, SP, O, wi->data.data(), g + n * O * SP, dcol.data());
                    detail::col2im_accumulate(dcol.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                              xi->grad.data() + n * C * H * W);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling (stride 2) and nearest-neighbour 2x upsampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& input) {
    if (input.rank() != 4) throw ShapeError("max_pool2x2: expected NCHW");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("max_pool2x2: spatial dims must be even, got " + shape_str(input.shape()));
    const int64_t OH = H / 2, OW = W / 2;
    Tensor<T> out = Tensor<T>::zeros({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>((size_t)out.numel());
    const T* px = input.ptr();
    T* po = out.ptr();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* plane = px + nc * H * W;
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
                int64_t best = (2 * oy) * W + 2 * ox;
                T bv = plane[best];
                const int64_t cand[3] = {(2 * oy) * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
                                         (2 * oy + 1) * W + 2 * ox + 1};
                for (int64_t idx : cand) {
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                const int64_t oidx = nc * OH * OW + oy * OW + ox;
                po[oidx] = bv;
                (*argmax)[(size_t)oidx] = nc * H * W + best;
            }
        }
    }
    if (taping<T>({&input})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [xi, oi, argmax]() {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[(size_t)(*argmax)[i]] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& input) {
    if (input.rank() != 4) throw ShapeError("nearest_upsample2x: expected NCHW");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor<T> out = Tensor<T>::zeros({N, C, 2 * H, 2 * W});
    const T* px = input.ptr();
    T* po = out.ptr();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = px + nc * H * W;
        T* dst = po + nc * 4 * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const T v = src[y * W + x];
                dst[(2 * y) * 2 * W + 2 * x] = v;
                dst[(2 * y) * 2 * W + 2 * x + 1] = v;
                dst[(2 * y + 1) * 2 * W + 2 * x] = v;
                dst[(2 * y + 1) * 2 * W + 2 * x + 1] = v;
            }
    }
    if (taping<T>({&input})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [xi, oi, N, C, H, W]() {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const T* g = oi->grad.data();
            T* gx = xi->grad.data();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* gs = g + nc * 4 * H * W;
                T* gd = gx + nc * H * W;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x)
                        gd[y * W + x] += gs[(2 * y) * 2 * W + 2 * x] +
                                         gs[(2 * y) * 2 * W + 2 * x + 1] +
                                         gs[(2 * y + 1) * 2 * W + 2 * x] +
                                         gs[(2 * y + 1) * 2 * W + 2 * x + 1];
            }
        });
    }
    return out;
}

// (N, r*r*C, H, W) -> (N, C, r*H, r*W), PixelShuffle layout.
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& input, int64_t r) {
    if (input.rank() != 4) throw ShapeError("depth_to_space: expected NCHW");
    const int64_t N = input.dim(0), CR = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (CR % (r * r) != 0)
        throw ShapeError("depth_to_space: channels " + std::to_string(CR) +
                         " not divisible by r^2=" + std::to_string(r * r));
    const int64_t C = CR / (r * r);
    Tensor<T> out = Tensor<T>::zeros({N, C, r * H, r * W});
    const T* px = input.ptr();
    T* po = out.ptr();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < r; ++dy)
                for (int64_t dx = 0; dx < r; ++dx) {
                    const T* src = px + ((n * CR + c * r * r + dy * r + dx) * H) * W;
                    for (int64_t y = 0; y < H; ++y)
                        for (int64_t x = 0; x < W; ++x)
                            po[((n * C + c) * r * H + (y * r + dy)) * r * W + x * r + dx] =
                                src[y * W + x];
                }
    if (taping<T>({&input})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [xi, oi, N, C, CR, H, W, r]() {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const T* g = oi->grad.data();
            T* gx = xi->grad.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t dy = 0; dy < r; ++dy)
                        for (int64_t dx = 0; dx < r; ++dx) {
                            T* dst = gx + ((n * CR + c * r * r + dy * r + dx) * H) * W;
                            for (int64_t y = 0; y < H; ++y)
                                for (int64_t x = 0; x < W; ++x)
                                    dst[y * W + x] +=
                                        g[((n * C + c) * r * H + (y * r + dy)) * r * W + x * r + dx];
                        }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization layers (composed from primitives, so backward is automatic)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       bool update_running_stats = true, T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.rank() != 4) throw ShapeError("batch_norm2d: expected NCHW");
    const int64_t C = x.dim(1);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
        running_var.numel() != C)
        throw ShapeError("batch_norm2d: channel dims disagree with input " + shape_str(x.shape()));
    const Shape cshape{1, C, 1, 1};
    Tensor<T> g4 = reshape(gamma, cshape);
    Tensor<T> b4 = reshape(beta, cshape);

    if (training) {
        Tensor<T> mu = mean(x, {0, 2, 3}, true);
        Tensor<T> xc = sub(x, mu);
        Tensor<T> var = mean(mul(xc, xc), {0, 2, 3}, true);  // biased, used for normalization
        Tensor<T> inv = div(Tensor<T>::full(cshape, T(1)), sqrt(add_scalar(var, eps)));
        Tensor<T> y = add(mul(mul(xc, inv), g4), b4);
        if (update_running_stats) {
            const int64_t m = x.dim(0) * x.dim(2) * x.dim(3);
            const T unbias = m > 1 ? T(m) / T(m - 1) : T(1);
            auto& rm = running_mean.data();
            auto& rv = running_var.data();
            const auto& md = mu.data();
            const auto& vd = var.data();
            for (int64_t c = 0; c < C; ++c) {
                rm[(size_t)c] = (T(1) - momentum) * rm[(size_t)c] + momentum * md[(size_t)c];
                rv[(size_t)c] = (T(1) - momentum) * rv[(size_t)c] + momentum * vd[(size_t)c] * unbias;
            }
        }
        return y;
    }
    Tensor<T> rm = reshape(running_mean.detach(), cshape);
    Tensor<T> rv = reshape(running_var.detach(), cshape);
    Tensor<T> inv = div(Tensor<T>::full(cshape, T(1)), sqrt(add_scalar(rv, eps)));
    return add(mul(mul(sub(x, rm), inv), g4), b4);
}

// Normalizes over the last (feature) axis of each token.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const int ax = x.rank() - 1;
    const int64_t D = x.dim(ax);
    if (gamma.numel() != D || beta.numel() != D)
        throw ShapeError("layer_norm: affine params size " + std::to_string(gamma.numel()) +
                         " vs feature dim " + std::to_string(D));
    Tensor<T> mu = mean(x, {ax}, true);
    Tensor<T> xc = sub(x, mu);
    Tensor<T> var = mean(mul(xc, xc), {ax}, true);
    Tensor<T> inv = div(Tensor<T>::full(var.shape(), T(1)), sqrt(add_scalar(var, eps)));
    return add(mul(mul(xc, inv), gamma), beta);
}

// ---------------------------------------------------------------------------
// window attention (plain non-shifted windows)
// ---------------------------------------------------------------------------

// tokens: [B, N, D] where each consecutive run of window*window tokens forms
// one window. Attention is computed independently per window; rows of the
// attention matrix are stochastic. When attn_probs is non-null it receives a
// detached copy of the attention tensor [B*nw, heads, w2, w2].
template <typename T>
Tensor<T> window_attention(const Tensor<T>& tokens, const Tensor<T>& w_qkv, const Tensor<T>& b_qkv,
                           const Tensor<T>& w_proj, const Tensor<T>& b_proj, int64_t num_heads,
                           int64_t window, Tensor<T>* attn_probs = nullptr) {
    if (tokens.rank() != 3) throw ShapeError("window_attention: expected [B,N,D] tokens");
    const int64_t B = tokens.dim(0), N = tokens.dim(1), D = tokens.dim(2);
    const int64_t w2 = window * window;
    if (N % w2 != 0)
        throw ShapeError("window_attention: N=" + std::to_string(N) +
                         " not a multiple of window^2=" + std::to_string(w2));
    if (D % num_heads != 0)
        throw ShapeError("window_attention: D=" + std::to_string(D) + " not divisible by heads=" +
                         std::to_string(num_heads));
    const int64_t nw = N / w2;
    const int64_t hd = D / num_heads;

    Tensor<T> x = reshape(tokens, {B * nw, w2, D});
    Tensor<T> qkv = linear(x, w_qkv, b_qkv);                       // [B*nw, w2, 3D]
    qkv = reshape(qkv, {B * nw, w2, 3, num_heads, hd});
    qkv = transpose(qkv, {2, 0, 3, 1, 4});                         // [3, B*nw, h, w2, hd]
    Tensor<T> q = reshape(narrow(qkv, 0, 0, 1), {B * nw, num_heads, w2, hd});
    Tensor<T> k = reshape(narrow(qkv, 0, 1, 1), {B * nw, num_heads, w2, hd});
    Tensor<T> v = reshape(narrow(qkv, 0, 2, 1), {B * nw, num_heads, w2, hd});

    q = mul_scalar(q, T(1) / std::sqrt(T(hd)));
    Tensor<T> scores = matmul(q, transpose(k, {0, 1, 3, 2}));      // [B*nw, h, w2, w2]
    Tensor<T> attn = softmax(scores, 3);
    if (attn_probs) *attn_probs = attn.detach();
    Tensor<T> ctx = matmul(attn, v);                               // [B*nw, h, w2, hd]
    ctx = reshape(transpose(ctx, {0, 2, 1, 3}), {B * nw, w2, D});
    Tensor<T> out = linear(ctx, w_proj, b_proj);
    return reshape(out, {B, N, D});
}

}  // namespace ct
