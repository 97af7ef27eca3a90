#pragma once

#include <string>
#include <vector>

#include "mcnet/nets/layers.hpp"

namespace mcnet::nets {

struct ArchConfig {
    int in_channels = 1;
    int image_size = 12;
    int stem_channels = 8;
    std::vector<int> backbone_channels = {16, 16};
    std::vector<int> backbone_strides = {2, 2};
    int cnn_head_blocks = 1;
    int att_head_blocks = 2;
    int att_heads = 4;
    bool absolute_pos_encoding = false;
    int semantic_dim = 64;
    int semantic_hidden = 32;

    int feature_dim() const { return backbone_channels.back(); }

    // spatial size after the backbone (stem is stride 1)
    int backbone_spatial() const {
        int s = image_size;
        for (int st : backbone_strides) s = (s + 2 - 3) / st + 1;
        return s;
    }

    void validate() const {
        if (in_channels < 1 || image_size < 4) throw ConfigError("arch: bad input geometry");
        if (backbone_channels.empty() || backbone_channels.size() != backbone_strides.size())
            throw ConfigError("arch: backbone channel/stride lists must match");
        if (cnn_head_blocks < 1 || att_head_blocks < 1) throw ConfigError("arch: head block counts must be >= 1");
        if (backbone_spatial() < 2)
            throw ConfigError("arch: backbone output spatial size " + std::to_string(backbone_spatial()) +
                              " < 2; attention maps need spatial extent");
        if (att_heads < 1 || feature_dim() % att_heads != 0)
            throw ConfigError("arch: feature_dim must be divisible by att_heads");
        if (semantic_dim < 1 || semantic_hidden < 1) throw ConfigError("arch: bad semantic net dims");
    }
};

struct BackboneOut {
    ad::Var final;               // (N, C_b, H_b, W_b)
    std::vector<ad::Var> acts;   // activation after each residual block
};

// Small residual embedding network shared by both heads of a model.
struct Backbone {
    Conv2dLayer stem;
    NormLayer stem_norm;
    std::vector<ResidualBlock> blocks;

    void build(const std::string& name, const ArchConfig& cfg, std::uint64_t seed) {
        stem.build(name + ".stem", cfg.in_channels, cfg.stem_channels, 3, 1, 1, seed);
        stem_norm.build(name + ".stem_norm", cfg.stem_channels);
        int cin = cfg.stem_channels;
        blocks.resize(cfg.backbone_channels.size());
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].build(name + ".b" + std::to_string(i), cin, cfg.backbone_channels[i],
                            cfg.backbone_strides[i], seed);
            cin = cfg.backbone_channels[i];
        }
    }

    BackboneOut forward(ad::Tape* t, const ad::Var& images) const {
        BackboneOut out;
        ad::Var h = ad::relu(t, stem_norm.spatial(t, stem.forward(t, images)));
        for (const auto& blk : blocks) {
            h = blk.forward(t, h);
            out.acts.push_back(h);
        }
        out.final = h;
        return out;
    }

    void collect(ParamList& out) const {
        stem.collect(out);
        stem_norm.collect(out);
        for (const auto& b : blocks) b.collect(out);
    }
};

struct CnnHead {
    std::vector<ResidualBlock> blocks;

    void build(const std::string& name, const ArchConfig& cfg, std::uint64_t seed) {
        const int c = cfg.feature_dim();
        blocks.resize(static_cast<std::size_t>(cfg.cnn_head_blocks));
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].build(name + ".b" + std::to_string(i), c, c, 1, seed);
    }

    // returns pooled feature (N, d_f); block_acts receives per-block maps
    ad::Var forward(ad::Tape* t, const ad::Var& feat, std::vector<ad::Var>* block_acts = nullptr) const {
        ad::Var h = feat;
        for (const auto& b : blocks) {
            h = b.forward(t, h);
            if (block_acts) block_acts->push_back(h);
        }
        return ad::global_avg_pool(t, h);
    }

    void collect(ParamList& out) const {
        for (const auto& b : blocks) b.collect(out);
    }
};

struct AttHead {
    std::vector<AttentionBlock> blocks;
    int grid = 0;

    void build(const std::string& name, const ArchConfig& cfg, std::uint64_t seed) {
        grid = cfg.backbone_spatial();
        const int c = cfg.feature_dim();
        blocks.resize(static_cast<std::size_t>(cfg.att_head_blocks));
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].build(name + ".b" + std::to_string(i), c, cfg.att_heads, grid, grid,
                            cfg.absolute_pos_encoding, seed);
    }

    // feat (N, d_f, H, W) -> pooled (N, d_f). Tokens are the spatial
    // positions; pooling is the mean over tokens, matching the CNN head's
    // average pooling. block_qmaps, when given, receives per-block activation
    // attention maps (N, H*W) computed from the token features.
    ad::Var forward(ad::Tape* t, const ad::Var& feat, std::vector<ad::Var>* block_qmaps = nullptr,
                    std::vector<Tensor>* attn_out = nullptr) const {
        const int n = feat->val.dim(0);
        std::vector<ad::Var> pooled;
        pooled.reserve(static_cast<std::size_t>(n));
        std::vector<std::vector<ad::Var>> qrows(blocks.size());
        for (int i = 0; i < n; ++i) {
            ad::Var img = ad::select_image(t, feat, i);
            ad::Var tokens = ad::chw_to_tokens(t, img);
            for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
                tokens = blocks[bi].forward(t, tokens, attn_out);
                if (block_qmaps) {
                    ad::Var chw = ad::tokens_to_chw(t, tokens, grid, grid);
                    qrows[bi].push_back(ad::channel_sumsq_map(t, chw));
                }
            }
            pooled.push_back(ad::mean_rows(t, tokens));
        }
        if (block_qmaps)
            for (auto& rows : qrows) block_qmaps->push_back(ad::concat_rows(t, rows));
        return ad::concat_rows(t, pooled);
    }

    void collect(ParamList& out) const {
        for (const auto& b : blocks) b.collect(out);
    }
};

// Two fully-connected layers with a rectifier between them: d_a -> d_f
struct SemanticNet {
    LinearLayer l1, l2;

    void build(const std::string& name, const ArchConfig& cfg, std::uint64_t seed) {
        l1.build(name + ".l1", cfg.semantic_dim, cfg.semantic_hidden, seed);
        l2.build(name + ".l2", cfg.semantic_hidden, cfg.feature_dim(), seed);
    }

    ad::Var forward(ad::Tape* t, const ad::Var& a) const {
        return l2.forward(t, ad::relu(t, l1.forward(t, a)));
    }

    void collect(ParamList& out) const {
        l1.collect(out);
        l2.collect(out);
    }
};

// Activation-based spatial attention map of one feature map batch:
// Q[n, h*W+w] = sum_c M[n,c,h,w]^2, flattened over the spatial grid.
inline ad::Var attention_map(ad::Tape* t, const ad::Var& feature_map) {
    return ad::channel_sumsq_map(t, feature_map);
}

// Ordered concatenation (z1C || z1T || z2C || z2T); null streams are skipped
// but the relative order of the remaining ones is preserved.
inline ad::Var compose_features(ad::Tape* t, const ad::Var& z1c, const ad::Var& z1t, const ad::Var& z2c,
                                const ad::Var& z2t) {
    std::vector<ad::Var> parts;
    int d = -1;
    for (const ad::Var* s : {&z1c, &z1t, &z2c, &z2t}) {
        if (*s == nullptr) continue;
        if (d < 0) d = (*s)->val.dim(1);
        if ((*s)->val.dim(1) != d) throw ConfigError("compose_features: stream dimensions differ");
        parts.push_back(*s);
    }
    if (parts.empty()) throw ConfigError("compose_features: no streams");
    return ad::concat_cols(t, parts);
}

}  // namespace mcnet::nets
