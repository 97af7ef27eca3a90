#pragma once

#include "mcnet/core/autodiff.hpp"

namespace mcnet::ad {

namespace detail {

// copy one (Ci,H,W) image into a zero-padded (Ci,H+2p,W+2p) buffer
inline void pad_image(const double* src, double* dst, int ci, int h, int w, int pad) {
    const int ph = h + 2 * pad, pw = w + 2 * pad;
    std::fill(dst, dst + static_cast<std::size_t>(ci) * ph * pw, 0.0);
    for (int c = 0; c < ci; ++c)
        for (int y = 0; y < h; ++y) {
            const double* s = src + (static_cast<std::size_t>(c) * h + y) * w;
            double* d = dst + (static_cast<std::size_t>(c) * ph + y + pad) * pw + pad;
            std::copy(s, s + w, d);
        }
}

}  // namespace detail

// x (N,Ci,H,W) * w (Co,Ci,kh,kw) + b (Co), zero padding. The inner loops run
// on an explicitly padded copy of each image, keeping them branch-free.
inline Var conv2d(Tape* t, const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x->val.rank() != 4 || w->val.rank() != 4) throw ConfigError("conv2d: expects rank-4 input and weight");
    const int n = x->val.dim(0), ci = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
    const int co = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    if (w->val.dim(1) != ci)
        throw ConfigError("conv2d: channel mismatch, input " + x->val.shape_str() + " weight " + w->val.shape_str());
    if (b->val.rank() != 1 || b->val.dim(0) != co) throw ConfigError("conv2d: bad bias shape");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw ConfigError("conv2d: output collapses to zero size");
    const int ph = h + 2 * pad, pw = wd + 2 * pad;
    bool tracked = detail::track(t, {&x, &w, &b});
    Tensor v({n, co, oh, ow});
    std::vector<double> padded(static_cast<std::size_t>(ci) * ph * pw);
    for (int in = 0; in < n; ++in) {
        detail::pad_image(x->val.data() + static_cast<std::size_t>(in) * ci * h * wd, padded.data(), ci, h,
                          wd, pad);
        for (int oc = 0; oc < co; ++oc) {
            double* vrow = v.data() + ((static_cast<std::size_t>(in) * co + oc) * oh) * ow;
            const double bias = b->val[oc];
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) vrow[i] = bias;
            for (int ic = 0; ic < ci; ++ic) {
                const double* wbase = w->val.data() + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
                const double* xbase = padded.data() + static_cast<std::size_t>(ic) * ph * pw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wbase[ky * kw + kx];
                        if (wv == 0.0) continue;
                        for (int yy = 0; yy < oh; ++yy) {
                            const double* xr = xbase + (yy * stride + ky) * pw + kx;
                            double* vr = vrow + yy * ow;
                            for (int xx = 0; xx < ow; ++xx) vr[xx] += wv * xr[xx * stride];
                        }
                    }
            }
        }
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, w, b, out, n, ci, h, wd, co, kh, kw, oh, ow, stride, pad, ph, pw] {
            std::vector<double> padded_x(static_cast<std::size_t>(ci) * ph * pw);
            std::vector<double> padded_g(static_cast<std::size_t>(ci) * ph * pw);
            for (int in = 0; in < n; ++in) {
                detail::pad_image(x->val.data() + static_cast<std::size_t>(in) * ci * h * wd,
                                  padded_x.data(), ci, h, wd, pad);
                std::fill(padded_g.begin(), padded_g.end(), 0.0);
                for (int oc = 0; oc < co; ++oc) {
                    const double* grow = out->grad.data() + ((static_cast<std::size_t>(in) * co + oc) * oh) * ow;
                    if (b->requires_grad) {
                        double s = 0.0;
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) s += grow[i];
                        b->grad[oc] += s;
                    }
                    for (int ic = 0; ic < ci; ++ic) {
                        double* wg = w->requires_grad
                                         ? w->grad.data() + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw
                                         : nullptr;
                        const double* wv = w->val.data() + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
                        const double* xbase = padded_x.data() + static_cast<std::size_t>(ic) * ph * pw;
                        double* gbase = padded_g.data() + static_cast<std::size_t>(ic) * ph * pw;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                double wsum = 0.0;
                                const double wval = wv[ky * kw + kx];
                                for (int yy = 0; yy < oh; ++yy) {
                                    const double* gr = grow + yy * ow;
                                    const double* xr = xbase + (yy * stride + ky) * pw + kx;
                                    double* gx = gbase + (yy * stride + ky) * pw + kx;
                                    for (int xx = 0; xx < ow; ++xx) {
                                        wsum += gr[xx] * xr[xx * stride];
                                        gx[xx * stride] += gr[xx] * wval;
                                    }
                                }
                                if (wg) wg[ky * kw + kx] += wsum;
                            }
                    }
                }
                if (x->requires_grad) {
                    // fold the padded gradient back onto the image
                    for (int ic = 0; ic < ci; ++ic)
                        for (int y = 0; y < h; ++y) {
                            const double* g = padded_g.data() +
                                              (static_cast<std::size_t>(ic) * ph + y + pad) * pw + pad;
                            double* dst = x->grad.data() +
                                          ((static_cast<std::size_t>(in) * ci + ic) * h + y) * wd;
                            for (int xx = 0; xx < wd; ++xx) dst[xx] += g[xx];
                        }
                }
            }
        });
    }
    return out;
}

// (N,C,H,W) -> (N,C)
inline Var global_avg_pool(Tape* t, const Var& x) {
    if (x->val.rank() != 4) throw ConfigError("global_avg_pool: expects rank-4");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const double inv = 1.0 / static_cast<double>(h * w);
    bool tracked = detail::track(t, {&x});
    Tensor v({n, c});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            double s = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) s += x->val.at(in, ic, y, xx);
            v.at(in, ic) = s * inv;
        }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, out, n, c, h, w, inv] {
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < c; ++ic) {
                    const double g = out->grad.at(in, ic) * inv;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) x->grad.at(in, ic, y, xx) += g;
                }
        });
    }
    return out;
}

// Activation attention map: Q[n, h*W+w] = sum_c M[n,c,h,w]^2, (N,C,H,W) -> (N,H*W)
inline Var channel_sumsq_map(Tape* t, const Var& x) {
    if (x->val.rank() != 4) throw ConfigError("channel_sumsq_map: expects rank-4");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    bool tracked = detail::track(t, {&x});
    Tensor v({n, h * w});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double e = x->val.at(in, ic, y, xx);
                    v.at(in, y * w + xx) += e * e;
                }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, out, n, c, h, w] {
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < c; ++ic)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx)
                            x->grad.at(in, ic, y, xx) +=
                                2.0 * x->val.at(in, ic, y, xx) * out->grad.at(in, y * w + xx);
        });
    }
    return out;
}

// Filter-response normalization: per (sample, channel), divide by the RMS
// over the spatial grid, then apply a learned per-channel gain and bias.
// Plays batch norm's stabilizing role without batch coupling, so evaluation
// stays deterministic sample by sample.
inline Var frn_norm(Tape* t, const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
    if (x->val.rank() != 4) throw ConfigError("frn_norm: expects rank-4");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    if (gamma->val.rank() != 1 || gamma->val.dim(0) != c || beta->val.rank() != 1 || beta->val.dim(0) != c)
        throw ConfigError("frn_norm: gain/bias must have one entry per channel");
    const int hw = h * w;
    bool tracked = detail::track(t, {&x, &gamma, &beta});
    Tensor v({n, c, h, w});
    auto inv_rms = std::make_shared<Tensor>(Tensor({n, c}));
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            double m = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) m += x->val.at(in, ic, y, xx) * x->val.at(in, ic, y, xx);
            m = m / hw + eps;
            const double r = 1.0 / std::sqrt(m);
            inv_rms->at(in, ic) = r;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    v.at(in, ic, y, xx) = gamma->val[ic] * x->val.at(in, ic, y, xx) * r + beta->val[ic];
        }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, gamma, beta, out, inv_rms, n, c, h, w, hw] {
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < c; ++ic) {
                    const double r = inv_rms->at(in, ic);
                    const double g = gamma->val[ic];
                    double gx = 0.0, gsum = 0.0;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            gx += out->grad.at(in, ic, y, xx) * x->val.at(in, ic, y, xx);
                            gsum += out->grad.at(in, ic, y, xx);
                        }
                    if (gamma->requires_grad) gamma->grad[ic] += gx * r;
                    if (beta->requires_grad) beta->grad[ic] += gsum;
                    if (x->requires_grad) {
                        const double k = g * r * r * r / hw * gx;
                        for (int y = 0; y < h; ++y)
                            for (int xx = 0; xx < w; ++xx)
                                x->grad.at(in, ic, y, xx) +=
                                    g * r * out->grad.at(in, ic, y, xx) - k * x->val.at(in, ic, y, xx);
                    }
                }
        });
    }
    return out;
}

// Token-wise RMS normalization over the channel dimension with learned gain
// and bias: tokens (T,C) -> (T,C).
inline Var rms_norm_tokens(Tape* t, const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
    if (x->val.rank() != 2) throw ConfigError("rms_norm_tokens: expects rank-2");
    const int tc = x->val.dim(0), c = x->val.dim(1);
    if (gamma->val.rank() != 1 || gamma->val.dim(0) != c || beta->val.rank() != 1 || beta->val.dim(0) != c)
        throw ConfigError("rms_norm_tokens: gain/bias must have one entry per channel");
    bool tracked = detail::track(t, {&x, &gamma, &beta});
    Tensor v({tc, c});
    auto inv_rms = std::make_shared<Tensor>(Tensor({tc}));
    for (int i = 0; i < tc; ++i) {
        double m = 0.0;
        for (int j = 0; j < c; ++j) m += x->val.at(i, j) * x->val.at(i, j);
        m = m / c + eps;
        const double r = 1.0 / std::sqrt(m);
        (*inv_rms)[i] = r;
        for (int j = 0; j < c; ++j) v.at(i, j) = gamma->val[j] * x->val.at(i, j) * r + beta->val[j];
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, gamma, beta, out, inv_rms, tc, c] {
            for (int i = 0; i < tc; ++i) {
                const double r = (*inv_rms)[i];
                double gx = 0.0;
                for (int j = 0; j < c; ++j) gx += out->grad.at(i, j) * gamma->val[j] * x->val.at(i, j);
                for (int j = 0; j < c; ++j) {
                    if (gamma->requires_grad) gamma->grad[j] += out->grad.at(i, j) * x->val.at(i, j) * r;
                    if (beta->requires_grad) beta->grad[j] += out->grad.at(i, j);
                    if (x->requires_grad)
                        x->grad.at(i, j) += gamma->val[j] * r * out->grad.at(i, j) -
                                            r * r * r / c * gx * x->val.at(i, j);
                }
            }
        });
    }
    return out;
}

// Slice image n out of a batch: (N,C,H,W) -> (C,H,W) kept as rank-4 (1,C,H,W)
inline Var select_image(Tape* t, const Var& x, int n) {
    if (x->val.rank() != 4) throw ConfigError("select_image: expects rank-4");
    const int c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    if (n < 0 || n >= x->val.dim(0)) throw ConfigError("select_image: index out of range");
    bool tracked = detail::track(t, {&x});
    Tensor v({1, c, h, w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) v.at(0, ic, y, xx) = x->val.at(n, ic, y, xx);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, out, n, c, h, w] {
            for (int ic = 0; ic < c; ++ic)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) x->grad.at(n, ic, y, xx) += out->grad.at(0, ic, y, xx);
        });
    }
    return out;
}

// (1,C,H,W) -> tokens (H*W, C); token index = h*W + w
inline Var chw_to_tokens(Tape* t, const Var& x) {
    if (x->val.rank() != 4 || x->val.dim(0) != 1) throw ConfigError("chw_to_tokens: expects (1,C,H,W)");
    const int c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    bool tracked = detail::track(t, {&x});
    Tensor v({h * w, c});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) v.at(y * w + xx, ic) = x->val.at(0, ic, y, xx);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, out, c, h, w] {
            for (int ic = 0; ic < c; ++ic)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) x->grad.at(0, ic, y, xx) += out->grad.at(y * w + xx, ic);
        });
    }
    return out;
}

// tokens (H*W, C) -> (1,C,H,W)
inline Var tokens_to_chw(Tape* t, const Var& x, int h, int w) {
    if (x->val.rank() != 2 || x->val.dim(0) != h * w) throw ConfigError("tokens_to_chw: token count mismatch");
    const int c = x->val.dim(1);
    bool tracked = detail::track(t, {&x});
    Tensor v({1, c, h, w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) v.at(0, ic, y, xx) = x->val.at(y * w + xx, ic);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, out, c, h, w] {
            for (int ic = 0; ic < c; ++ic)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) x->grad.at(y * w + xx, ic) += out->grad.at(0, ic, y, xx);
        });
    }
    return out;
}

// Factored relative position encoding: e[(y*W+x), :] = row(y,:) + col(x,:)
// row (H,dk), col (W,dk) -> (H*W, dk)
inline Var pos_encoding_sum(Tape* t, const Var& row, const Var& col) {
    if (row->val.rank() != 2 || col->val.rank() != 2 || row->val.dim(1) != col->val.dim(1))
        throw ConfigError("pos_encoding_sum: shape mismatch");
    const int h = row->val.dim(0), w = col->val.dim(0), dk = row->val.dim(1);
    bool tracked = detail::track(t, {&row, &col});
    Tensor v({h * w, dk});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int j = 0; j < dk; ++j) v.at(y * w + x, j) = row->val.at(y, j) + col->val.at(x, j);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([row, col, out, h, w, dk] {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int j = 0; j < dk; ++j) {
                        const double g = out->grad.at(y * w + x, j);
                        if (row->requires_grad) row->grad.at(y, j) += g;
                        if (col->requires_grad) col->grad.at(x, j) += g;
                    }
        });
    }
    return out;
}

}  // namespace mcnet::ad
