#pragma once

#include <vector>

#include "mcnet/nets/model.hpp"

namespace mcnet::nets {

struct StreamMask {
    bool model2 = true;
    bool att_head = true;

    int stream_count() const { return (model2 ? 2 : 1) * (att_head ? 2 : 1); }
};

// One embedding network: shared backbone feeding a CNN head and an attention head.
struct ModelNet {
    Backbone backbone;
    CnnHead cnn;
    AttHead att;

    void build(const std::string& name, const ArchConfig& cfg, std::uint64_t seed) {
        backbone.build(name + ".backbone", cfg, seed);
        cnn.build(name + ".cnn", cfg, seed);
        att.build(name + ".att", cfg, seed);
    }

    void collect(ParamList& out) const {
        backbone.collect(out);
        cnn.collect(out);
        att.collect(out);
    }
};

struct ForwardBundle {
    ad::Var z1c, z1t, z2c, z2t;        // (N, d_f); null when the stream is masked
    ad::Var z;                          // composed feature (N, streams * d_f)
    std::vector<ad::Var> ar_q1, ar_q2;  // activation attention maps per AR block
};

// The full two-model, four-head ensemble with the cosine-classifier weights
// phi (model 1's task) and the semantic embedding network psi (model 2's task).
struct Ensemble {
    ArchConfig cfg;
    ModelNet m1, m2;
    ad::Var phi;  // (n_base_classes, d_f), bias-free cosine classifier
    SemanticNet psi;
    bool has_model2 = true;

    void build(const ArchConfig& arch, int n_base_classes, std::uint64_t seed, bool with_model2 = true) {
        arch.validate();
        cfg = arch;
        has_model2 = with_model2;
        m1.build("m1", cfg, seed);
        if (with_model2) {
            m2.build("m2", cfg, seed);
            psi.build("psi", cfg, seed);
        }
        const double std = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim()));
        phi = ad::make_var(init::scaled_normal({n_base_classes, cfg.feature_dim()}, std, seed, "phi"), true,
                           "phi");
    }

    ParamList params() const {
        ParamList out;
        m1.collect(out);
        if (has_model2) m2.collect(out);
        out.push_back({phi->name, phi});
        if (has_model2) psi.collect(out);
        return out;
    }

    // ar_blocks: which backbone blocks contribute attention maps (all when
    // want_ar_maps and ar_include_heads extends the list with head blocks).
    ForwardBundle forward(ad::Tape* t, const Tensor& images, const StreamMask& mask, bool want_ar_maps = false,
                          bool ar_include_heads = false) const {
        if (want_ar_maps && !(mask.model2 && has_model2))
            throw ConfigError("ensemble: attention regularization needs both models");
        ad::Var x = ad::constant(images);
        ForwardBundle out;

        std::vector<ad::Var> cnn_acts1, cnn_acts2;
        BackboneOut b1 = m1.backbone.forward(t, x);
        out.z1c = m1.cnn.forward(t, b1.final, want_ar_maps && ar_include_heads ? &cnn_acts1 : nullptr);
        std::vector<ad::Var> att_q1;
        if (mask.att_head)
            out.z1t = m1.att.forward(t, b1.final, want_ar_maps && ar_include_heads ? &att_q1 : nullptr);

        std::vector<ad::Var> att_q2;
        if (mask.model2 && has_model2) {
            BackboneOut b2 = m2.backbone.forward(t, x);
            out.z2c = m2.cnn.forward(t, b2.final, want_ar_maps && ar_include_heads ? &cnn_acts2 : nullptr);
            if (mask.att_head)
                out.z2t = m2.att.forward(t, b2.final, want_ar_maps && ar_include_heads ? &att_q2 : nullptr);
            if (want_ar_maps) {
                for (std::size_t i = 0; i < b1.acts.size(); ++i) {
                    out.ar_q1.push_back(attention_map(t, b1.acts[i]));
                    out.ar_q2.push_back(attention_map(t, b2.acts[i]));
                }
                if (ar_include_heads) {
                    for (std::size_t i = 0; i < cnn_acts1.size(); ++i) {
                        out.ar_q1.push_back(attention_map(t, cnn_acts1[i]));
                        out.ar_q2.push_back(attention_map(t, cnn_acts2[i]));
                    }
                    for (std::size_t i = 0; i < att_q1.size(); ++i) {
                        out.ar_q1.push_back(att_q1[i]);
                        out.ar_q2.push_back(att_q2[i]);
                    }
                }
            }
        }
        out.z = compose_features(t, out.z1c, out.z1t, out.z2c, out.z2t);
        return out;
    }

    int composed_dim(const StreamMask& mask) const { return mask.stream_count() * cfg.feature_dim(); }
};

// Deep copy of all parameter tensors (the frozen previous-session snapshot).
// Rebuilds a fresh ensemble and copies values over the canonical parameter
// list, so no tensor storage is ever shared with the source.
inline Ensemble clone_ensemble(const Ensemble& src) {
    Ensemble dst;
    dst.build(src.cfg, src.phi->val.dim(0), /*seed=*/0, src.has_model2);
    ParamList sp = src.params();
    ParamList dp = dst.params();
    if (sp.size() != dp.size()) throw ConfigError("clone_ensemble: parameter lists diverge");
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i].name != dp[i].name) throw ConfigError("clone_ensemble: parameter order diverges");
        dp[i].var->val = sp[i].var->val;
    }
    return dst;
}

}  // namespace mcnet::nets
