#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "advgen/tape.hpp"

namespace advgen {

// ---------------------------------------------------------------------------
// Dense kernels. All matmuls accumulate into c, so gradient buffers can be
// written without a temporary.
// ---------------------------------------------------------------------------

// c[M,N] += a[M,K] * b[K,N]
inline void mm_nn(const float* a, const float* b, float* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        float* __restrict crow = c + static_cast<int64_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const float av = a[static_cast<int64_t>(i) * K + k];
            if (av == 0.0f) continue;
            const float* __restrict brow = b + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[M,N] += a[M,K] * b[N,K]^T
inline void mm_nt(const float* a, const float* b, float* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const float* __restrict arow = a + static_cast<int64_t>(i) * K;
        for (int j = 0; j < N; ++j) {
            const float* __restrict brow = b + static_cast<int64_t>(j) * K;
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += static_cast<double>(arow[k]) * brow[k];
            c[static_cast<int64_t>(i) * N + j] += static_cast<float>(acc);
        }
    }
}

// c[M,N] += a[K,M]^T * b[K,N]
inline void mm_tn(const float* a, const float* b, float* c, int M, int K, int N) {
    for (int k = 0; k < K; ++k) {
        const float* __restrict arow = a + static_cast<int64_t>(k) * M;
        const float* __restrict brow = b + static_cast<int64_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const float av = arow[i];
            if (av == 0.0f) continue;
            float* __restrict crow = c + static_cast<int64_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    for (float v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in output of ") + op);
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Finalizes an op: NaN policy check, grad propagation, tape recording.
inline Tensor finish(Tensor out, const char* op, std::initializer_list<const Tensor*> ins,
                     std::function<void()> backward) {
    check_finite(out, op);
    if (recording() && any_requires_grad(ins)) {
        out.set_requires_grad(true);
        Tape::active()->record(out, op, std::move(backward));
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / broadcast
// ---------------------------------------------------------------------------

// b may either match a's shape or be a suffix of it (bias-style broadcast).
inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = same_shape(a, b);
    int64_t bn = b.numel();
    if (!same) {
        int ar = a.rank(), br = b.rank();
        bool suffix = br <= ar;
        for (int i = 0; suffix && i < br; ++i) suffix = a.dim(ar - br + i) == b.dim(i);
        if (!suffix)
            throw ShapeError("add: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    const float* pa = a.ptr();
    const float* pb = b.ptr();
    float* po = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[same ? i : i % bn];
    return detail::finish(out, "add", {&a, &b}, [a, b, out, same, bn]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            if (same)
                for (int64_t i = 0; i < b.numel(); ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
            else
                for (int64_t i = 0; i < a.numel(); ++i) gb[static_cast<size_t>(i % bn)] += g[static_cast<size_t>(i)];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ShapeError("sub: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
    return detail::finish(out, "sub", {&a, &b}, [a, b, out]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ShapeError("mul: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
    return detail::finish(out, "mul", {&a, &b}, [a, b, out]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.ptr()[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.ptr()[i];
        }
    });
}

inline Tensor scale(const Tensor& a, float c) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * c;
    return detail::finish(out, "scale", {&a}, [a, out, c]() mutable {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
}

inline Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] > 0.0f ? a.ptr()[i] : 0.0f;
    return detail::finish(out, "relu", {&a}, [a, out]() mutable {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i)
            if (a.ptr()[i] > 0.0f) ga[i] += g[i];
    });
}

inline Tensor tanh(const Tensor& a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = std::tanh(a.ptr()[i]);
    return detail::finish(out, "tanh", {&a}, [a, out]() mutable {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) {
            float y = out.ptr()[i];
            ga[i] += g[i] * (1.0f - y * y);
        }
    });
}

// Exact gelu: x * Phi(x).
inline Tensor gelu(const Tensor& a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        float x = a.ptr()[i];
        out.ptr()[i] = 0.5f * x * (1.0f + std::erf(x * 0.70710678f));
    }
    return detail::finish(out, "gelu", {&a}, [a, out]() mutable {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) {
            float x = a.ptr()[i];
            float phi = 0.5f * (1.0f + std::erf(x * 0.70710678f));
            float pdf = 0.39894228f * std::exp(-0.5f * x * x);
            ga[i] += g[i] * (phi + x * pdf);
        }
    });
}

// Valid-pixel projection. Subgradient is pass-through strictly inside (0,1).
inline Tensor clamp01(const Tensor& a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = std::min(1.0f, std::max(0.0f, a.ptr()[i]));
    return detail::finish(out, "clamp01", {&a}, [a, out]() mutable {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) {
            float x = a.ptr()[i];
            if (x > 0.0f && x < 1.0f) ga[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out({M, N});
    mm_nn(a.ptr(), b.ptr(), out.ptr(), M, K, N);
    return detail::finish(out, "matmul", {&a, &b}, [a, b, out, M, K, N]() mutable {
        const float* g = out.grad().data();
        if (a.requires_grad()) mm_nt(g, b.ptr(), a.grad().data(), M, N, K);  // dA = dC * B^T
        if (b.requires_grad()) mm_tn(a.ptr(), g, b.grad().data(), K, M, N);  // dB = A^T * dC
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expects rank-2, got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    Tensor out({N, M});
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out.ptr()[static_cast<int64_t>(j) * M + i] = a.ptr()[static_cast<int64_t>(i) * N + j];
    return detail::finish(out, "transpose", {&a}, [a, out, M, N]() mutable {
        if (!a.requires_grad()) return;
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (int j = 0; j < N; ++j)
            for (int i = 0; i < M; ++i)
                ga[static_cast<size_t>(i) * N + j] += g[static_cast<size_t>(j) * M + i];
    });
}

// ---------------------------------------------------------------------------
// Convolution (NCHW x OIHW), im2col + matmul. The column buffer is rebuilt
// in backward rather than kept alive on the tape.
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const float* x, int C, int H, int W, int KH, int KW, int stride, int pad,
                   int Ho, int Wo, float* col) {
    for (int c = 0; c < C; ++c)
        for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
                float* __restrict dst = col + static_cast<int64_t>((c * KH + kh) * KW + kw) * Ho * Wo;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < Wo; ++ow) dst[oh * Wo + ow] = 0.0f;
                        continue;
                    }
                    const float* __restrict src = x + static_cast<int64_t>(c) * H * W + static_cast<int64_t>(ih) * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        dst[oh * Wo + ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
                    }
                }
            }
}

inline void col2im_accum(const float* col, int C, int H, int W, int KH, int KW, int stride, int pad,
                         int Ho, int Wo, float* dx) {
    for (int c = 0; c < C; ++c)
        for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
                const float* __restrict src = col + static_cast<int64_t>((c * KH + kh) * KW + kw) * Ho * Wo;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    float* __restrict dst = dx + static_cast<int64_t>(c) * H * W + static_cast<int64_t>(ih) * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) dst[iw] += src[oh * Wo + ow];
                    }
                }
            }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (b.defined() && (b.rank() != 1 || b.dim(0) != Cout))
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " for " + std::to_string(Cout) + " filters");
    const int Ho = (H + 2 * pad - KH) / stride + 1;
    const int Wo = (W + 2 * pad - KW) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: kernel does not fit input " + shape_str(x.shape()));
    const int ck = C * KH * KW;

    Tensor out({N, Cout, Ho, Wo});
    std::vector<float> col(static_cast<size_t>(ck) * Ho * Wo);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, KH, KW, stride, pad, Ho, Wo,
                       col.data());
        float* y = out.ptr() + static_cast<int64_t>(n) * Cout * Ho * Wo;
        if (b.defined())
            for (int co = 0; co < Cout; ++co)
                std::fill(y + static_cast<int64_t>(co) * Ho * Wo, y + static_cast<int64_t>(co + 1) * Ho * Wo,
                          b.ptr()[co]);
        mm_nn(w.ptr(), col.data(), y, Cout, ck, Ho * Wo);
    }
    return detail::finish(out, "conv2d", {&x, &w, &b},
                          [x, w, b, out, N, C, H, W, Cout, KH, KW, stride, pad, Ho, Wo, ck]() mutable {
        const float* g = out.grad().data();
        std::vector<float> col(static_cast<size_t>(ck) * Ho * Wo);
        std::vector<float> dcol;
        if (x.requires_grad()) dcol.resize(col.size());
        for (int n = 0; n < N; ++n) {
            const float* gn = g + static_cast<int64_t>(n) * Cout * Ho * Wo;
            if (w.requires_grad()) {
                detail::im2col(x.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, KH, KW, stride, pad,
                               Ho, Wo, col.data());
                mm_nt(gn, col.data(), w.grad().data(), Cout, Ho * Wo, ck);
            }
            if (b.defined() && b.requires_grad()) {
                auto& gb = b.grad();
                for (int co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (int i = 0; i < Ho * Wo; ++i) acc += gn[static_cast<int64_t>(co) * Ho * Wo + i];
                    gb[static_cast<size_t>(co)] += static_cast<float>(acc);
                }
            }
            if (x.requires_grad()) {
                std::fill(dcol.begin(), dcol.end(), 0.0f);
                mm_tn(w.ptr(), gn, dcol.data(), ck, Cout, Ho * Wo);
                detail::col2im_accum(dcol.data(), C, H, W, KH, KW, stride, pad, Ho, Wo,
                                     x.grad().data() + static_cast<int64_t>(n) * C * H * W);
            }
        }
    });
}

inline Tensor nearest_upsample2x(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("nearest_upsample2x: expects NCHW, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
        const float* src = x.ptr() + static_cast<int64_t>(nc) * H * W;
        float* dst = out.ptr() + static_cast<int64_t>(nc) * 4 * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const float v = src[h * W + w];
                float* d = dst + static_cast<int64_t>(2 * h) * 2 * W + 2 * w;
                d[0] = v;
                d[1] = v;
                d[2 * W] = v;
                d[2 * W + 1] = v;
            }
    }
    return detail::finish(out, "nearest_upsample2x", {&x}, [x, out, N, C, H, W]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int nc = 0; nc < N * C; ++nc) {
            const float* gs = g.data() + static_cast<int64_t>(nc) * 4 * H * W;
            float* gd = gx.data() + static_cast<int64_t>(nc) * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const float* s = gs + static_cast<int64_t>(2 * h) * 2 * W + 2 * w;
                    gd[h * W + w] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
                }
        }
    });
}

inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: expects NCHW, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out({N, C});
    for (int nc = 0; nc < N * C; ++nc) {
        const float* src = x.ptr() + static_cast<int64_t>(nc) * HW;
        double acc = 0.0;
        for (int i = 0; i < HW; ++i) acc += src[i];
        out.ptr()[nc] = static_cast<float>(acc / HW);
    }
    return detail::finish(out, "global_avg_pool", {&x}, [x, out, N, C, HW]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        const float inv = 1.0f / static_cast<float>(HW);
        for (int nc = 0; nc < N * C; ++nc) {
            const float gv = g[static_cast<size_t>(nc)] * inv;
            float* dst = gx.data() + static_cast<int64_t>(nc) * HW;
            for (int i = 0; i < HW; ++i) dst[i] += gv;
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization / attention pieces. Row-wise over the last dim of rank-2.
// ---------------------------------------------------------------------------

inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    if (x.rank() != 2) throw ShapeError("layernorm: expects rank-2, got " + shape_str(x.shape()));
    const int T = x.dim(0), D = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != D || beta.rank() != 1 || beta.dim(0) != D)
        throw ShapeError("layernorm: affine params must be length " + std::to_string(D));
    constexpr float kEps = 1e-5f;
    Tensor out({T, D});
    Tensor xhat({T, D});        // kept for backward
    std::vector<float> inv_sigma(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        const float* row = x.ptr() + static_cast<int64_t>(t) * D;
        double mu = 0.0;
        for (int d = 0; d < D; ++d) mu += row[d];
        mu /= D;
        double var = 0.0;
        for (int d = 0; d < D; ++d) {
            double c = row[d] - mu;
            var += c * c;
        }
        var /= D;
        const float is = 1.0f / std::sqrt(static_cast<float>(var) + kEps);
        inv_sigma[static_cast<size_t>(t)] = is;
        float* xh = xhat.ptr() + static_cast<int64_t>(t) * D;
        float* y = out.ptr() + static_cast<int64_t>(t) * D;
        for (int d = 0; d < D; ++d) {
            xh[d] = (row[d] - static_cast<float>(mu)) * is;
            y[d] = gamma.ptr()[d] * xh[d] + beta.ptr()[d];
        }
    }
    return detail::finish(out, "layernorm", {&x, &gamma, &beta},
                          [x, gamma, beta, out, xhat, inv_sigma, T, D]() mutable {
        const auto& g = out.grad();
        for (int t = 0; t < T; ++t) {
            const float* gy = g.data() + static_cast<int64_t>(t) * D;
            const float* xh = xhat.ptr() + static_cast<int64_t>(t) * D;
            if (gamma.requires_grad()) {
                auto& gg = gamma.grad();
                for (int d = 0; d < D; ++d) gg[static_cast<size_t>(d)] += gy[d] * xh[d];
            }
            if (beta.requires_grad()) {
                auto& gb = beta.grad();
                for (int d = 0; d < D; ++d) gb[static_cast<size_t>(d)] += gy[d];
            }
            if (x.requires_grad()) {
                // dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
                double m1 = 0.0, m2 = 0.0;
                for (int d = 0; d < D; ++d) {
                    const double dxh = static_cast<double>(gy[d]) * gamma.ptr()[d];
                    m1 += dxh;
                    m2 += dxh * xh[d];
                }
                m1 /= D;
                m2 /= D;
                const float is = inv_sigma[static_cast<size_t>(t)];
                auto& gx = x.grad();
                float* gxr = gx.data() + static_cast<int64_t>(t) * D;
                for (int d = 0; d < D; ++d) {
                    const float dxh = gy[d] * gamma.ptr()[d];
                    gxr[d] += is * (dxh - static_cast<float>(m1) - xh[d] * static_cast<float>(m2));
                }
            }
        }
    });
}

inline Tensor softmax(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("softmax: expects rank-2, got " + shape_str(x.shape()));
    const int T = x.dim(0), D = x.dim(1);
    Tensor out({T, D});
    for (int t = 0; t < T; ++t) {
        const float* row = x.ptr() + static_cast<int64_t>(t) * D;
        float* y = out.ptr() + static_cast<int64_t>(t) * D;
        float mx = row[0];
        for (int d = 1; d < D; ++d) mx = std::max(mx, row[d]);
        double denom = 0.0;
        for (int d = 0; d < D; ++d) {
            y[d] = std::exp(row[d] - mx);
            denom += y[d];
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int d = 0; d < D; ++d) y[d] *= inv;
    }
    return detail::finish(out, "softmax", {&x}, [x, out, T, D]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int t = 0; t < T; ++t) {
            const float* y = out.ptr() + static_cast<int64_t>(t) * D;
            const float* gy = g.data() + static_cast<int64_t>(t) * D;
            double dot = 0.0;
            for (int d = 0; d < D; ++d) dot += static_cast<double>(gy[d]) * y[d];
            float* gxr = gx.data() + static_cast<int64_t>(t) * D;
            for (int d = 0; d < D; ++d) gxr[d] += y[d] * (gy[d] - static_cast<float>(dot));
        }
    });
}

inline Tensor log_softmax(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("log_softmax: expects rank-2, got " + shape_str(x.shape()));
    const int T = x.dim(0), D = x.dim(1);
    Tensor out({T, D});
    for (int t = 0; t < T; ++t) {
        const float* row = x.ptr() + static_cast<int64_t>(t) * D;
        float* y = out.ptr() + static_cast<int64_t>(t) * D;
        float mx = row[0];
        for (int d = 1; d < D; ++d) mx = std::max(mx, row[d]);
        double denom = 0.0;
        for (int d = 0; d < D; ++d) denom += std::exp(static_cast<double>(row[d]) - mx);
        const float lse = mx + static_cast<float>(std::log(denom));
        for (int d = 0; d < D; ++d) y[d] = row[d] - lse;
    }
    return detail::finish(out, "log_softmax", {&x}, [x, out, T, D]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int t = 0; t < T; ++t) {
            const float* y = out.ptr() + static_cast<int64_t>(t) * D;
            const float* gy = g.data() + static_cast<int64_t>(t) * D;
            double gsum = 0.0;
            for (int d = 0; d < D; ++d) gsum += gy[d];
            float* gxr = gx.data() + static_cast<int64_t>(t) * D;
            for (int d = 0; d < D; ++d)
                gxr[d] += gy[d] - static_cast<float>(gsum) * std::exp(y[d]);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation, lookup, reduction
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor out(std::move(shape));
    std::copy(x.data().begin(), x.data().end(), out.ptr());
    return detail::finish(out, "reshape", {&x}, [x, out]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
    Shape out_shape = parts[0].shape();
    int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
                throw ShapeError("concat: extent mismatch at dim " + std::to_string(i));
        axis_total += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);
    Tensor out(out_shape);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];
    const int64_t out_stride = axis_total * inner;

    int64_t offset = 0;
    for (const Tensor& p : parts) {
        const int64_t block = p.dim(axis) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::copy(p.ptr() + o * block, p.ptr() + (o + 1) * block,
                      out.ptr() + o * out_stride + offset);
        offset += block;
    }
    std::vector<const Tensor*> ins;
    for (const Tensor& p : parts) ins.push_back(&p);
    bool rg = false;
    for (const Tensor& p : parts) rg = rg || p.requires_grad();
    detail::check_finite(out, "concat");
    if (recording() && rg) {
        out.set_requires_grad(true);
        std::vector<Tensor> captured = parts;
        Tape::active()->record(out, "concat", [captured, out, outer, inner, out_stride]() mutable {
            const auto& g = out.grad();
            int64_t offset = 0;
            for (Tensor& p : captured) {
                const int64_t blk = p.numel() / outer;
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t i = 0; i < blk; ++i)
                            gp[static_cast<size_t>(o * blk + i)] += g[static_cast<size_t>(o * out_stride + offset + i)];
                }
                offset += blk;
            }
        });
    }
    return out;
}

// Contiguous row slice of a rank-2 tensor: out = x[start : start+len, :].
inline Tensor slice_rows(const Tensor& x, int start, int len) {
    if (x.rank() != 2) throw ShapeError("slice_rows: expects rank-2");
    const int T = x.dim(0), D = x.dim(1);
    if (start < 0 || len < 1 || start + len > T) throw ShapeError("slice_rows: bad range");
    Tensor out({len, D});
    std::copy(x.ptr() + static_cast<int64_t>(start) * D, x.ptr() + static_cast<int64_t>(start + len) * D,
              out.ptr());
    return detail::finish(out, "slice_rows", {&x}, [x, out, start, len, D]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int64_t i = 0; i < static_cast<int64_t>(len) * D; ++i)
            gx[static_cast<size_t>(static_cast<int64_t>(start) * D + i)] += g[static_cast<size_t>(i)];
    });
}

// CxHxW frame -> (H/p * W/p) rows of p*p*C patch pixels, channel-major
// within each patch. The differentiable front door of the vision encoder.
inline Tensor patchify(const Tensor& frame, int p) {
    if (frame.rank() != 3) throw ShapeError("patchify: expects CxHxW, got " + shape_str(frame.shape()));
    const int C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    if (p < 1 || H % p != 0 || W % p != 0)
        throw ShapeError("patchify: frame " + shape_str(frame.shape()) + " not divisible by patch " +
                         std::to_string(p));
    const int gh = H / p, gw = W / p;
    Tensor out({gh * gw, C * p * p});
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            float* dst = out.ptr() + static_cast<int64_t>(py * gw + px) * C * p * p;
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        *dst++ = frame.ptr()[(static_cast<int64_t>(c) * H + py * p + dy) * W + px * p + dx];
        }
    return detail::finish(out, "patchify", {&frame}, [frame, out, p, C, H, W, gh, gw]() mutable {
        if (!frame.requires_grad()) return;
        const auto& g = out.grad();
        auto& gf = frame.grad();
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                const float* src = g.data() + static_cast<int64_t>(py * gw + px) * C * p * p;
                for (int c = 0; c < C; ++c)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            gf[(static_cast<size_t>(c) * H + static_cast<size_t>(py * p + dy)) * W +
                               static_cast<size_t>(px * p + dx)] += *src++;
            }
    });
}

// Contiguous column slice of a rank-2 tensor: out = x[:, start : start+len].
inline Tensor slice_cols(const Tensor& x, int start, int len) {
    if (x.rank() != 2) throw ShapeError("slice_cols: expects rank-2");
    const int T = x.dim(0), D = x.dim(1);
    if (start < 0 || len < 1 || start + len > D) throw ShapeError("slice_cols: bad range");
    Tensor out({T, len});
    for (int t = 0; t < T; ++t)
        std::copy(x.ptr() + static_cast<int64_t>(t) * D + start,
                  x.ptr() + static_cast<int64_t>(t) * D + start + len,
                  out.ptr() + static_cast<int64_t>(t) * len);
    return detail::finish(out, "slice_cols", {&x}, [x, out, start, len, T, D]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < len; ++j)
                gx[static_cast<size_t>(t) * D + static_cast<size_t>(start + j)] +=
                    g[static_cast<size_t>(t) * len + static_cast<size_t>(j)];
    });
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank-2");
    const int V = table.dim(0), D = table.dim(1);
    const int T = static_cast<int>(ids.size());
    if (T == 0) throw UsageError("embedding_lookup: empty id list");
    for (int id : ids)
        if (id < 0 || id >= V) throw UsageError("embedding_lookup: id " + std::to_string(id) + " out of range");
    Tensor out({T, D});
    for (int t = 0; t < T; ++t)
        std::copy(table.ptr() + static_cast<int64_t>(ids[static_cast<size_t>(t)]) * D,
                  table.ptr() + static_cast<int64_t>(ids[static_cast<size_t>(t)] + 1) * D,
                  out.ptr() + static_cast<int64_t>(t) * D);
    return detail::finish(out, "embedding_lookup", {&table}, [table, out, ids, T, D]() mutable {
        if (!table.requires_grad()) return;
        const auto& g = out.grad();
        auto& gt = table.grad();
        for (int t = 0; t < T; ++t) {
            const float* gr = g.data() + static_cast<int64_t>(t) * D;
            float* dst = gt.data() + static_cast<int64_t>(ids[static_cast<size_t>(t)]) * D;
            for (int d = 0; d < D; ++d) dst[d] += gr[d];
        }
    });
}

// y[i] = x[rows[i], cols[i]]
inline Tensor gather_rc(const Tensor& x, const std::vector<int>& rows, const std::vector<int>& cols) {
    if (x.rank() != 2) throw ShapeError("gather_rc: expects rank-2");
    if (rows.size() != cols.size() || rows.empty()) throw UsageError("gather_rc: bad index lists");
    const int M = x.dim(0), N = x.dim(1);
    const int n = static_cast<int>(rows.size());
    for (int i = 0; i < n; ++i)
        if (rows[static_cast<size_t>(i)] < 0 || rows[static_cast<size_t>(i)] >= M ||
            cols[static_cast<size_t>(i)] < 0 || cols[static_cast<size_t>(i)] >= N)
            throw UsageError("gather_rc: index out of range");
    Tensor out({n});
    for (int i = 0; i < n; ++i)
        out.ptr()[i] = x.ptr()[static_cast<int64_t>(rows[static_cast<size_t>(i)]) * N + cols[static_cast<size_t>(i)]];
    return detail::finish(out, "gather_rc", {&x}, [x, out, rows, cols, N, n]() mutable {
        if (!x.requires_grad()) return;
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int i = 0; i < n; ++i)
            gx[static_cast<size_t>(rows[static_cast<size_t>(i)]) * N + static_cast<size_t>(cols[static_cast<size_t>(i)])] +=
                g[static_cast<size_t>(i)];
    });
}

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x.ptr()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    return detail::finish(out, "sum", {&x}, [x, out]() mutable {
        if (!x.requires_grad()) return;
        const float g = out.grad()[0];
        auto& gx = x.grad();
        for (auto& v : gx) v += g;
    });
}

inline Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x.ptr()[i];
    const float inv = 1.0f / static_cast<float>(x.numel());
    Tensor out = Tensor::scalar(static_cast<float>(acc) * inv);
    return detail::finish(out, "mean", {&x}, [x, out, inv]() mutable {
        if (!x.requires_grad()) return;
        const float g = out.grad()[0] * inv;
        auto& gx = x.grad();
        for (auto& v : gx) v += g;
    });
}

// Squared L2 distance between two same-shape tensors, as one fused op.
inline Tensor sq_dist(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ShapeError("sq_dist: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.ptr()[i]) - b.ptr()[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    return detail::finish(out, "sq_dist", {&a, &b}, [a, b, out]() mutable {
        const float g = out.grad()[0];
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i)
                ga[static_cast<size_t>(i)] += 2.0f * g * (a.ptr()[i] - b.ptr()[i]);
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (int64_t i = 0; i < b.numel(); ++i)
                gb[static_cast<size_t>(i)] += 2.0f * g * (b.ptr()[i] - a.ptr()[i]);
        }
    });
}

}  // namespace advgen
