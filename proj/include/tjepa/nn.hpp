#pragma once
#include <vector>

#include "tjepa/autodiff.hpp"

namespace tjepa {

// Scaled dot-product self-attention over unordered tokens (no causal mask),
// composed from the primitive ops so the backward pass comes for free.
template <typename Real>
NodeId multi_head_self_attention(Graph<Real>& g, NodeId x, NodeId wq, NodeId bq, NodeId wk,
                                 NodeId bk, NodeId wv, NodeId bv, NodeId wo, NodeId bo,
                                 std::size_t num_heads) {
    std::size_t h = g.value(x).cols();
    if (num_heads == 0 || h % num_heads != 0)
        throw config_error("attention: hidden size " + std::to_string(h) +
                           " not divisible by " + std::to_string(num_heads) + " heads");
    std::size_t dh = h / num_heads;
    NodeId q = linear(g, x, wq, bq);
    NodeId k = linear(g, x, wk, bk);
    NodeId v = linear(g, x, wv, bv);
    Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<NodeId> heads;
    heads.reserve(num_heads);
    for (std::size_t i = 0; i < num_heads; ++i) {
        NodeId qi = slice_cols(g, q, i * dh, dh);
        NodeId ki = slice_cols(g, k, i * dh, dh);
        NodeId vi = slice_cols(g, v, i * dh, dh);
        NodeId scores = scale(g, matmul(g, qi, transpose(g, ki)), inv_sqrt);
        NodeId attn = softmax_rows(g, scores);
        heads.push_back(matmul(g, attn, vi));
    }
    NodeId merged = num_heads == 1 ? heads[0] : concat_cols(g, heads);
    return linear(g, merged, wo, bo);
}

// Running statistics owned by the module that holds the batch-norm layer.
template <typename Real>
struct BatchNormState {
    Tensor<Real> running_mean;
    Tensor<Real> running_var;

    explicit BatchNormState(std::size_t features = 0)
        : running_mean(Tensor<Real>::zeros({features})),
          running_var(Tensor<Real>::full({features}, Real(1))) {}
};

// 1-D batch norm over rows of x [n x f]. Training mode normalizes with batch
// statistics and updates the running estimates; eval mode uses the stored ones.
template <typename Real>
NodeId batch_norm(Graph<Real>& g, NodeId x, NodeId gamma, NodeId beta, BatchNormState<Real>& state,
                  bool training, Real momentum = Real(0.1), Real eps = Real(1e-5)) {
    const Tensor<Real>& xv = g.value(x);
    std::size_t n = xv.rows();
    std::size_t f = xv.cols();
    if (g.value(gamma).size() != f || g.value(beta).size() != f || state.running_mean.size() != f)
        throw shape_error("batch_norm: feature size mismatch");

    const Tensor<Real>& gv = g.value(gamma);
    const Tensor<Real>& bv = g.value(beta);
    Tensor<Real> out({n, f});

    if (!training) {
        std::vector<Real> is(f);
        for (std::size_t j = 0; j < f; ++j)
            is[j] = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(state.running_var[j] + eps)));
        Tensor<Real> xhat({n, f});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) {
                xhat(i, j) = (xv(i, j) - state.running_mean[j]) * is[j];
                out(i, j) = gv[j] * xhat(i, j) + bv[j];
            }
        bool needs = g.needs_adj(x) || g.needs_adj(gamma) || g.needs_adj(beta);
        return g.make(std::move(out), needs,
                      [x, gamma, beta, is = std::move(is), xhat = std::move(xhat)](Graph<Real>& gr, NodeId self) {
            const Tensor<Real>& d = gr.adj(self);
            std::size_t n = d.rows(), f = d.cols();
            const Tensor<Real>& gval = gr.value(gamma);
            if (gr.needs_adj(beta)) {
                Tensor<Real>& db = gr.adj(beta);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < f; ++j) db[j] += d(i, j);
            }
            if (gr.needs_adj(gamma)) {
                Tensor<Real>& dg = gr.adj(gamma);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < f; ++j) dg[j] += d(i, j) * xhat(i, j);
            }
            if (gr.needs_adj(x)) {
                Tensor<Real>& dx = gr.adj(x);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < f; ++j) dx(i, j) += d(i, j) * gval[j] * is[j];
            }
        });
    }

    if (n < 2) throw shape_error("batch_norm: training mode needs at least 2 rows");
    std::vector<Real> mean(f, Real(0)), var(f, Real(0)), invstd(f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) mean[j] += xv(i, j);
    for (std::size_t j = 0; j < f; ++j) mean[j] /= static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            Real c = xv(i, j) - mean[j];
            var[j] += c * c;
        }
    for (std::size_t j = 0; j < f; ++j) {
        var[j] /= static_cast<Real>(n);
        invstd[j] = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(var[j] + eps)));
    }
    Tensor<Real> xhat({n, f});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            Real xh = (xv(i, j) - mean[j]) * invstd[j];
            xhat(i, j) = xh;
            out(i, j) = gv[j] * xh + bv[j];
        }
    // unbiased running variance, matching the usual convention
    for (std::size_t j = 0; j < f; ++j) {
        state.running_mean[j] = (Real(1) - momentum) * state.running_mean[j] + momentum * mean[j];
        Real unbiased = var[j] * static_cast<Real>(n) / static_cast<Real>(n - 1);
        state.running_var[j] = (Real(1) - momentum) * state.running_var[j] + momentum * unbiased;
    }
    bool needs = g.needs_adj(x) || g.needs_adj(gamma) || g.needs_adj(beta);
    return g.make(std::move(out), needs,
                  [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd)](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        std::size_t n = d.rows(), f = d.cols();
        const Tensor<Real>& gval = gr.value(gamma);
        if (gr.needs_adj(beta)) {
            Tensor<Real>& db = gr.adj(beta);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) db[j] += d(i, j);
        }
        if (gr.needs_adj(gamma)) {
            Tensor<Real>& dg = gr.adj(gamma);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) dg[j] += d(i, j) * xhat(i, j);
        }
        if (gr.needs_adj(x)) {
            Tensor<Real>& dx = gr.adj(x);
            std::vector<Real> m1(f, Real(0)), m2(f, Real(0));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) {
                    Real dxh = d(i, j) * gval[j];
                    m1[j] += dxh;
                    m2[j] += dxh * xhat(i, j);
                }
            for (std::size_t j = 0; j < f; ++j) {
                m1[j] /= static_cast<Real>(n);
                m2[j] /= static_cast<Real>(n);
            }
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) {
                    Real dxh = d(i, j) * gval[j];
                    dx(i, j) += invstd[j] * (dxh - m1[j] - xhat(i, j) * m2[j]);
                }
        }
    });
}

// Channel-wise batch norm on [N,C,H,W]: statistics over N, H and W per channel.
template <typename Real>
NodeId batch_norm2d(Graph<Real>& g, NodeId x, NodeId gamma, NodeId beta, BatchNormState<Real>& state,
                    bool training, Real momentum = Real(0.1), Real eps = Real(1e-5)) {
    const Tensor<Real>& xv = g.value(x);
    if (xv.ndim() != 4) throw shape_error("batch_norm2d: expected [N,C,H,W]");
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::size_t plane = H * W;
    std::size_t per_channel = N * plane;
    if (g.value(gamma).size() != C || g.value(beta).size() != C || state.running_mean.size() != C)
        throw shape_error("batch_norm2d: channel count mismatch");
    const Tensor<Real>& gv = g.value(gamma);
    const Tensor<Real>& bv = g.value(beta);

    std::vector<Real> mean(C, Real(0)), invstd(C);
    if (training) {
        if (per_channel < 2) throw shape_error("batch_norm2d: training mode needs at least 2 values");
        std::vector<Real> var(C, Real(0));
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const Real* p = xv.data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) mean[c] += p[i];
            }
        for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<Real>(per_channel);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const Real* p = xv.data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) var[c] += (p[i] - mean[c]) * (p[i] - mean[c]);
            }
        for (std::size_t c = 0; c < C; ++c) {
            var[c] /= static_cast<Real>(per_channel);
            invstd[c] = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(var[c] + eps)));
            state.running_mean[c] = (Real(1) - momentum) * state.running_mean[c] + momentum * mean[c];
            Real unbiased = var[c] * static_cast<Real>(per_channel) / static_cast<Real>(per_channel - 1);
            state.running_var[c] = (Real(1) - momentum) * state.running_var[c] + momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            invstd[c] = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(state.running_var[c] + eps)));
        }
    }

    Tensor<Real> xhat(xv.shape());
    Tensor<Real> out(xv.shape());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const Real* p = xv.data() + (n * C + c) * plane;
            Real* xh = xhat.data() + (n * C + c) * plane;
            Real* o = out.data() + (n * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean[c]) * invstd[c];
                o[i] = gv[c] * xh[i] + bv[c];
            }
        }

    bool needs = g.needs_adj(x) || g.needs_adj(gamma) || g.needs_adj(beta);
    return g.make(std::move(out), needs,
                  [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), training, N, C,
                   plane](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        const Tensor<Real>& gval = gr.value(gamma);
        std::size_t per_channel = N * plane;
        if (gr.needs_adj(beta)) {
            Tensor<Real>& db = gr.adj(beta);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const Real* dp = d.data() + (n * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) db[c] += dp[i];
                }
        }
        if (gr.needs_adj(gamma)) {
            Tensor<Real>& dg = gr.adj(gamma);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const Real* dp = d.data() + (n * C + c) * plane;
                    const Real* xh = xhat.data() + (n * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) dg[c] += dp[i] * xh[i];
                }
        }
        if (gr.needs_adj(x)) {
            Tensor<Real>& dx = gr.adj(x);
            if (!training) {
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const Real* dp = d.data() + (n * C + c) * plane;
                        Real* dxp = dx.data() + (n * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) dxp[i] += dp[i] * gval[c] * invstd[c];
                    }
                return;
            }
            std::vector<Real> m1(C, Real(0)), m2(C, Real(0));
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const Real* dp = d.data() + (n * C + c) * plane;
                    const Real* xh = xhat.data() + (n * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        Real dxh = dp[i] * gval[c];
                        m1[c] += dxh;
                        m2[c] += dxh * xh[i];
                    }
                }
            for (std::size_t c = 0; c < C; ++c) {
                m1[c] /= static_cast<Real>(per_channel);
                m2[c] /= static_cast<Real>(per_channel);
            }
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const Real* dp = d.data() + (n * C + c) * plane;
                    const Real* xh = xhat.data() + (n * C + c) * plane;
                    Real* dxp = dx.data() + (n * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        Real dxh = dp[i] * gval[c];
                        dxp[i] += invstd[c] * (dxh - m1[c] - xh[i] * m2[c]);
                    }
                }
        }
    });
}

// Per-feature max over the h hidden dims: [N, d*h] -> [N, d].
template <typename Real>
NodeId pool_features_max(Graph<Real>& g, NodeId x, std::size_t d, std::size_t h) {
    const Tensor<Real>& xv = g.value(x);
    if (xv.cols() != d * h) throw shape_error("pool max: width is not d*h");
    std::size_t n = xv.rows();
    Tensor<Real> out({n, d});
    std::vector<std::size_t> argmax(n * d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t f = 0; f < d; ++f) {
            std::size_t best = r * d * h + f * h;
            Real bv = xv[best];
            for (std::size_t j = 1; j < h; ++j) {
                std::size_t off = r * d * h + f * h + j;
                if (xv[off] > bv) {
                    bv = xv[off];
                    best = off;
                }
            }
            out(r, f) = bv;
            argmax[r * d + f] = best;
        }
    return g.make(std::move(out), g.needs_adj(x), [x, argmax = std::move(argmax)](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(x)) return;
        const Tensor<Real>& dy = gr.adj(self);
        Tensor<Real>& dx = gr.adj(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    });
}

// Per-feature mean over the h hidden dims: [N, d*h] -> [N, d].
template <typename Real>
NodeId pool_features_mean(Graph<Real>& g, NodeId x, std::size_t d, std::size_t h) {
    const Tensor<Real>& xv = g.value(x);
    if (xv.cols() != d * h) throw shape_error("pool mean: width is not d*h");
    std::size_t n = xv.rows();
    Tensor<Real> out({n, d});
    Real inv = Real(1) / static_cast<Real>(h);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t f = 0; f < d; ++f) {
            Real s = 0;
            for (std::size_t j = 0; j < h; ++j) s += xv[r * d * h + f * h + j];
            out(r, f) = s * inv;
        }
    return g.make(std::move(out), g.needs_adj(x), [x, d, h, inv](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(x)) return;
        const Tensor<Real>& dy = gr.adj(self);
        Tensor<Real>& dx = gr.adj(x);
        std::size_t n = dy.rows();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t f = 0; f < d; ++f) {
                Real v = dy(r, f) * inv;
                for (std::size_t j = 0; j < h; ++j) dx[r * d * h + f * h + j] += v;
            }
    });
}

// 3x3 convolution, stride 1, zero padding 1; x is [N,C,H,W], w is [Cout,Cin,3,3].
template <typename Real>
NodeId conv2d_3x3(Graph<Real>& g, NodeId x, NodeId w, NodeId bias) {
    const Tensor<Real>& xv = g.value(x);
    const Tensor<Real>& wv = g.value(w);
    if (xv.ndim() != 4 || wv.ndim() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3)
        throw shape_error("conv2d: expected x[N,C,H,W], w[Cout,Cin, 3,3]");
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::size_t Co = wv.dim(0);
    if (wv.dim(1) != C) throw shape_error("conv2d: channel mismatch");
    if (g.value(bias).size() != Co) throw shape_error("conv2d: bias size mismatch");
    const Tensor<Real>& bv = g.value(bias);

    auto xat = [&](const Tensor<Real>& t, std::size_t n, std::size_t c, long i, long j) -> Real {
        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) return Real(0);
        return t.data()[((n * C + c) * H + static_cast<std::size_t>(i)) * W + static_cast<std::size_t>(j)];
    };

    Tensor<Real> out({N, Co, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    Real acc = bv[co];
                    for (std::size_t c = 0; c < C; ++c)
                        for (int di = -1; di <= 1; ++di)
                            for (int dj = -1; dj <= 1; ++dj)
                                acc += wv.data()[((co * C + c) * 3 + static_cast<std::size_t>(di + 1)) * 3 +
                                                 static_cast<std::size_t>(dj + 1)] *
                                       xat(xv, n, c, static_cast<long>(i) + di, static_cast<long>(j) + dj);
                    out.data()[((n * Co + co) * H + i) * W + j] = acc;
                }
    bool needs = g.needs_adj(x) || g.needs_adj(w) || g.needs_adj(bias);
    return g.make(std::move(out), needs, [x, w, bias, N, C, H, W, Co](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        const Tensor<Real>& xval = gr.value(x);
        const Tensor<Real>& wval = gr.value(w);
        bool nx = gr.needs_adj(x), nw = gr.needs_adj(w), nb = gr.needs_adj(bias);
        Tensor<Real>* dx = nx ? &gr.adj(x) : nullptr;
        Tensor<Real>* dw = nw ? &gr.adj(w) : nullptr;
        Tensor<Real>* db = nb ? &gr.adj(bias) : nullptr;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) {
                        Real dv = d.data()[((n * Co + co) * H + i) * W + j];
                        if (dv == Real(0)) continue;
                        if (nb) (*db)[co] += dv;
                        for (std::size_t c = 0; c < C; ++c)
                            for (int di = -1; di <= 1; ++di)
                                for (int dj = -1; dj <= 1; ++dj) {
                                    long ii = static_cast<long>(i) + di;
                                    long jj = static_cast<long>(j) + dj;
                                    if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W))
                                        continue;
                                    std::size_t xoff = ((n * C + c) * H + static_cast<std::size_t>(ii)) * W +
                                                       static_cast<std::size_t>(jj);
                                    std::size_t woff = ((co * C + c) * 3 + static_cast<std::size_t>(di + 1)) * 3 +
                                                       static_cast<std::size_t>(dj + 1);
                                    if (nw) (*dw)[woff] += dv * xval.data()[xoff];
                                    if (nx) (*dx)[xoff] += dv * wval.data()[woff];
                                }
                    }
    });
}

// 2x2 max pooling with stride 2 (floor semantics); x is [N,C,H,W].
template <typename Real>
NodeId maxpool2d_2x2(Graph<Real>& g, NodeId x) {
    const Tensor<Real>& xv = g.value(x);
    if (xv.ndim() != 4) throw shape_error("maxpool2d: expected [N,C,H,W]");
    std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::size_t Ho = H / 2, Wo = W / 2;
    if (Ho == 0 || Wo == 0) throw shape_error("maxpool2d: spatial dims too small");
    Tensor<Real> out({N, C, Ho, Wo});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    std::size_t best = ((n * C + c) * H + 2 * i) * W + 2 * j;
                    Real bv = xv.data()[best];
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            std::size_t off = ((n * C + c) * H + 2 * i + di) * W + 2 * j + dj;
                            if (xv.data()[off] > bv) {
                                bv = xv.data()[off];
                                best = off;
                            }
                        }
                    std::size_t ooff = ((n * C + c) * Ho + i) * Wo + j;
                    out.data()[ooff] = bv;
                    argmax[ooff] = best;
                }
    return g.make(std::move(out), g.needs_adj(x), [x, argmax = std::move(argmax)](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(x)) return;
        const Tensor<Real>& d = gr.adj(self);
        Tensor<Real>& dx = gr.adj(x);
        for (std::size_t i = 0; i < d.size(); ++i) dx[argmax[i]] += d[i];
    });
}

// mean over rows of -log softmax(logits)[label]; saves probabilities
template <typename Real>
NodeId cross_entropy_mean(Graph<Real>& g, NodeId logits, std::vector<int> labels) {
    const Tensor<Real>& lv = g.value(logits);
    std::size_t n = lv.rows(), c = lv.cols();
    if (labels.size() != n) throw shape_error("cross_entropy: label count mismatch");
    Tensor<Real> probs({n, c});
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw shape_error("cross_entropy: label out of range");
        const Real* row = lv.data() + i * c;
        Real mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = row[j] > mx ? row[j] : mx;
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(static_cast<double>(row[j] - mx));
            probs(i, j) = static_cast<Real>(e);
            sum += e;
        }
        for (std::size_t j = 0; j < c; ++j) probs(i, j) = static_cast<Real>(probs(i, j) / sum);
        loss -= std::log(std::max(static_cast<double>(probs(i, static_cast<std::size_t>(labels[i]))), 1e-300));
    }
    loss /= static_cast<double>(n);
    return g.make(Tensor<Real>::scalar(static_cast<Real>(loss)), g.needs_adj(logits),
                  [logits, probs = std::move(probs), labels = std::move(labels)](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(logits)) return;
        Real d = gr.adj(self)[0];
        Tensor<Real>& dl = gr.adj(logits);
        std::size_t n = probs.rows(), c = probs.cols();
        Real inv_n = Real(1) / static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                Real t = probs(i, j) - (static_cast<std::size_t>(labels[i]) == j ? Real(1) : Real(0));
                dl(i, j) += d * t * inv_n;
            }
    });
}

}  // namespace tjepa
