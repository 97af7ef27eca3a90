#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcnet/core/autodiff.hpp"
#include "mcnet/core/conv_ops.hpp"
#include "mcnet/core/rng.hpp"

namespace mcnet::nets {

struct Param {
    std::string name;
    ad::Var var;
};

using ParamList = std::vector<Param>;

namespace init {

// He-style fan-in scaled normal, seeded per parameter name so that adding or
// removing one module never reshuffles the initialization of the others.
inline Tensor he_normal(std::vector<int> shape, int fan_in, std::uint64_t seed, const std::string& name) {
    Tensor w(std::move(shape));
    Rng rng(derive_seed(seed, name));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    rng.fill_normal(w.data(), static_cast<std::size_t>(w.numel()), 0.0, std);
    return w;
}

inline Tensor scaled_normal(std::vector<int> shape, double std, std::uint64_t seed, const std::string& name) {
    Tensor w(std::move(shape));
    Rng rng(derive_seed(seed, name));
    rng.fill_normal(w.data(), static_cast<std::size_t>(w.numel()), 0.0, std);
    return w;
}

}  // namespace init

struct Conv2dLayer {
    ad::Var w, b;
    int stride = 1;
    int pad = 1;

    void build(const std::string& name, int cin, int cout, int k, int stride_, int pad_, std::uint64_t seed) {
        stride = stride_;
        pad = pad_;
        w = ad::make_var(init::he_normal({cout, cin, k, k}, cin * k * k, seed, name + ".w"), true, name + ".w");
        // small positive bias keeps narrow ReLU stacks from dying to an
        // exactly-zero pooled feature, which the cosine losses reject
        b = ad::make_var(Tensor::full({cout}, 0.01), true, name + ".b");
    }

    ad::Var forward(ad::Tape* t, const ad::Var& x) const { return ad::conv2d(t, x, w, b, stride, pad); }

    void collect(ParamList& out) const {
        out.push_back({w->name, w});
        out.push_back({b->name, b});
    }
};

struct LinearLayer {
    ad::Var w, b;

    void build(const std::string& name, int din, int dout, std::uint64_t seed) {
        w = ad::make_var(init::he_normal({dout, din}, din, seed, name + ".w"), true, name + ".w");
        b = ad::make_var(Tensor::full({dout}, 0.01), true, name + ".b");
    }

    ad::Var forward(ad::Tape* t, const ad::Var& x) const { return ad::linear(t, x, w, b); }

    void collect(ParamList& out) const {
        out.push_back({w->name, w});
        out.push_back({b->name, b});
    }
};

// learned per-channel gain/bias pair for the normalization ops
struct NormLayer {
    ad::Var gamma, beta;

    void build(const std::string& name, int channels) {
        gamma = ad::make_var(Tensor::full({channels}, 1.0), true, name + ".gamma");
        beta = ad::make_var(Tensor::zeros({channels}), true, name + ".beta");
    }

    ad::Var spatial(ad::Tape* t, const ad::Var& x) const { return ad::frn_norm(t, x, gamma, beta); }
    ad::Var tokens(ad::Tape* t, const ad::Var& x) const { return ad::rms_norm_tokens(t, x, gamma, beta); }

    void collect(ParamList& out) const {
        out.push_back({gamma->name, gamma});
        out.push_back({beta->name, beta});
    }
};

// conv-norm-conv residual unit with an optional 1x1 projection on the skip
// path; filter-response normalization keeps activations at unit scale, which
// the scale-invariant cosine losses would otherwise leave unconstrained
struct ResidualBlock {
    Conv2dLayer conv1, conv2;
    NormLayer n1, n2;
    Conv2dLayer proj;
    bool has_proj = false;

    void build(const std::string& name, int cin, int cout, int stride, std::uint64_t seed) {
        conv1.build(name + ".conv1", cin, cout, 3, stride, 1, seed);
        n1.build(name + ".n1", cout);
        conv2.build(name + ".conv2", cout, cout, 3, 1, 1, seed);
        n2.build(name + ".n2", cout);
        has_proj = (stride != 1) || (cin != cout);
        if (has_proj) proj.build(name + ".proj", cin, cout, 1, stride, 0, seed);
    }

    ad::Var forward(ad::Tape* t, const ad::Var& x) const {
        ad::Var h = ad::relu(t, n1.spatial(t, conv1.forward(t, x)));
        h = n2.spatial(t, conv2.forward(t, h));
        ad::Var skip = has_proj ? proj.forward(t, x) : x;
        return ad::relu(t, ad::add(t, h, skip));
    }

    void collect(ParamList& out) const {
        conv1.collect(out);
        n1.collect(out);
        conv2.collect(out);
        n2.collect(out);
        if (has_proj) proj.collect(out);
    }
};

// Multi-head self-attention over tokens with the content-position term:
//   softmax((q e^T + q k^T) / sqrt(d_k)) v per head, heads concatenated,
// then a linear output map. The position encoding is learned; by default it
// is factored into row and column components, one absolute table otherwise.
struct Mhsa {
    LinearLayer wq, wk, wv, wo;
    ad::Var pos_row, pos_col;  // (H, heads*dk), (W, heads*dk)
    ad::Var pos_abs;           // (H*W, heads*dk)
    int heads = 1;
    int dk = 0;
    int grid_h = 0, grid_w = 0;
    bool absolute = false;

    void build(const std::string& name, int channels, int n_heads, int h, int w, bool absolute_pos,
               std::uint64_t seed) {
        if (n_heads < 1 || channels % n_heads != 0 || channels / n_heads == 0)
            throw ConfigError("mhsa: d_k would be 0 (channels=" + std::to_string(channels) +
                              ", heads=" + std::to_string(n_heads) + ")");
        heads = n_heads;
        dk = channels / n_heads;
        grid_h = h;
        grid_w = w;
        absolute = absolute_pos;
        wq.build(name + ".wq", channels, channels, seed);
        wk.build(name + ".wk", channels, channels, seed);
        wv.build(name + ".wv", channels, channels, seed);
        wo.build(name + ".wo", channels, channels, seed);
        const double ps = 0.02;
        if (absolute) {
            pos_abs = ad::make_var(init::scaled_normal({h * w, channels}, ps, seed, name + ".pos_abs"), true,
                                   name + ".pos_abs");
        } else {
            pos_row = ad::make_var(init::scaled_normal({h, channels}, ps, seed, name + ".pos_row"), true,
                                   name + ".pos_row");
            pos_col = ad::make_var(init::scaled_normal({w, channels}, ps, seed, name + ".pos_col"), true,
                                   name + ".pos_col");
        }
    }

    // tokens (T, C) -> (T, C); attn_out, when given, receives each head's
    // attention matrix values (row-stochastic, T x T)
    ad::Var forward(ad::Tape* t, const ad::Var& tokens, std::vector<Tensor>* attn_out = nullptr) const {
        const int tcount = tokens->val.dim(0);
        if (tcount < 1) throw ConfigError("mhsa: needs at least one token");
        if (tcount != grid_h * grid_w) throw ConfigError("mhsa: token count does not match grid");
        ad::Var q = wq.forward(t, tokens);
        ad::Var k = wk.forward(t, tokens);
        ad::Var v = wv.forward(t, tokens);
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        std::vector<ad::Var> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            ad::Var qh = ad::narrow_cols(t, q, hd * dk, dk);
            ad::Var kh = ad::narrow_cols(t, k, hd * dk, dk);
            ad::Var vh = ad::narrow_cols(t, v, hd * dk, dk);
            ad::Var eh;
            if (absolute) {
                eh = ad::narrow_cols(t, pos_abs, hd * dk, dk);
            } else {
                ad::Var rr = ad::narrow_cols(t, pos_row, hd * dk, dk);
                ad::Var rc = ad::narrow_cols(t, pos_col, hd * dk, dk);
                eh = ad::pos_encoding_sum(t, rr, rc);
            }
            ad::Var content = ad::matmul_nt(t, qh, kh);
            ad::Var position = ad::matmul_nt(t, qh, eh);
            ad::Var logits = ad::scale(t, ad::add(t, position, content), inv_sqrt_dk);
            ad::Var attn = ad::softmax_rows(t, logits);
            if (attn_out) attn_out->push_back(attn->val);
            head_outs.push_back(ad::matmul(t, attn, vh));
        }
        ad::Var merged = ad::concat_cols(t, head_outs);
        return wo.forward(t, merged);
    }

    void collect(ParamList& out) const {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
        if (absolute) {
            out.push_back({pos_abs->name, pos_abs});
        } else {
            out.push_back({pos_row->name, pos_row});
            out.push_back({pos_col->name, pos_col});
        }
    }
};

// MLP -> MHSA -> MLP with a pre-norm residual connection around the whole
// block. The MLP layers act per token (equivalent to 1x1 convolutions).
struct AttentionBlock {
    LinearLayer mlp1, mlp2;
    NormLayer norm;
    Mhsa mhsa;

    void build(const std::string& name, int channels, int n_heads, int h, int w, bool absolute_pos,
               std::uint64_t seed) {
        mlp1.build(name + ".mlp1", channels, channels, seed);
        norm.build(name + ".norm", channels);
        mlp2.build(name + ".mlp2", channels, channels, seed);
        mhsa.build(name + ".mhsa", channels, n_heads, h, w, absolute_pos, seed);
    }

    ad::Var forward(ad::Tape* t, const ad::Var& tokens, std::vector<Tensor>* attn_out = nullptr) const {
        ad::Var h = ad::relu(t, mlp1.forward(t, norm.tokens(t, tokens)));
        ad::Var a = mhsa.forward(t, h, attn_out);
        return ad::relu(t, ad::add(t, tokens, mlp2.forward(t, a)));
    }

    void collect(ParamList& out) const {
        mlp1.collect(out);
        norm.collect(out);
        mhsa.collect(out);
        mlp2.collect(out);
    }
};

}  // namespace mcnet::nets
