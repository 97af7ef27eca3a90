#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mcnet/core/autodiff.hpp"
#include "mcnet/core/log.hpp"
#include "mcnet/nets/ensemble.hpp"

namespace mcnet::losses {

struct LossConfig {
    double alpha = 0.4;    // attention-regularization weight
    double lambda = 16.0;  // distillation weight
    double tau = 16.0;     // cosine-logit scale
    double margin = 0.0;   // triplet margin

    void validate() const {
        if (!(std::isfinite(alpha) && std::isfinite(lambda) && std::isfinite(tau) && std::isfinite(margin)))
            throw ConfigError("loss config: values must be finite");
        if (alpha < 0.0) throw ConfigError("loss config: alpha must be >= 0");
        if (lambda < 0.0) throw ConfigError("loss config: lambda must be >= 0");
        if (tau <= 0.0) throw ConfigError("loss config: tau must be > 0");
        if (margin < 0.0) throw ConfigError("loss config: margin must be >= 0");
    }
};

// Mean cross-entropy over scaled cosine logits. One weight row per class;
// zero-norm features or weights are reported with their row index.
inline ad::Var cosine_ce_loss(ad::Tape* t, const ad::Var& features, const ad::Var& weights,
                              const std::vector<int>& labels, double tau) {
    if (features->val.rank() != 2 || weights->val.rank() != 2 ||
        features->val.dim(1) != weights->val.dim(1))
        throw ConfigError("cosine_ce_loss: feature/weight dimension mismatch");
    ad::Var fn = ad::row_l2_normalize(t, features, "cosine_ce_loss features");
    ad::Var wn = ad::row_l2_normalize(t, weights, "cosine_ce_loss weights");
    ad::Var logits = ad::scale(t, ad::matmul_nt(t, fn, wn), tau);
    return ad::cross_entropy_mean(t, logits, labels);
}

// Mean cosine similarity between the two models' activation attention maps,
// averaged over blocks and the batch. A block containing a zero map on
// either side is skipped (and logged), since its cosine is undefined.
inline ad::Var attention_regularization(ad::Tape* t, const std::vector<ad::Var>& blocks1,
                                        const std::vector<ad::Var>& blocks2) {
    if (blocks1.size() != blocks2.size() || blocks1.empty())
        throw ConfigError("attention_regularization: block list length mismatch");
    std::vector<ad::Var> per_block;
    for (std::size_t j = 0; j < blocks1.size(); ++j) {
        const ad::Var& q1 = blocks1[j];
        const ad::Var& q2 = blocks2[j];
        if (!q1->val.same_shape(q2->val))
            throw ConfigError("attention_regularization: map shape mismatch at block " + std::to_string(j));
        bool zero = false;
        for (const ad::Var* q : {&q1, &q2}) {
            const int n = (*q)->val.dim(0), d = (*q)->val.dim(1);
            for (int i = 0; i < n && !zero; ++i) {
                double s = 0.0;
                for (int k = 0; k < d; ++k) s += (*q)->val.at(i, k) * (*q)->val.at(i, k);
                if (!(std::sqrt(s) > 1e-12)) zero = true;
            }
        }
        if (zero) {
            log::warn("attention_regularization: zero attention map, skipping block " + std::to_string(j));
            continue;
        }
        per_block.push_back(ad::mean_all(t, ad::rowwise_cosine(t, q1, q2, "attention_regularization")));
    }
    if (per_block.empty()) {
        log::warn("attention_regularization: all blocks skipped, returning 0");
        return ad::constant(Tensor::scalar(0.0));
    }
    ad::Var sum = per_block[0];
    for (std::size_t j = 1; j < per_block.size(); ++j) sum = ad::add(t, sum, per_block[j]);
    return ad::scale(t, sum, 1.0 / static_cast<double>(per_block.size()));
}

struct BaseLossResult {
    ad::Var total;
    double l1c = 0.0, l1t = 0.0, l2c = 0.0, l2t = 0.0, ar = 0.0;
};

// L1C + L1T + L2C + L2T + alpha * L_AR. Model 1 streams classify against the
// cosine classifier phi, model 2 streams against the semantic embeddings.
// Masked streams contribute nothing; AR is included only when the bundle
// carries attention maps and alpha > 0.
inline BaseLossResult base_loss(ad::Tape* t, const nets::ForwardBundle& b, const std::vector<int>& labels,
                                const ad::Var& semantic_weights, const ad::Var& phi, const LossConfig& cfg) {
    cfg.validate();
    BaseLossResult out;
    std::vector<ad::Var> terms;
    if (b.z1c) {
        ad::Var l = cosine_ce_loss(t, b.z1c, phi, labels, cfg.tau);
        out.l1c = l->val.value();
        terms.push_back(l);
    }
    if (b.z1t) {
        ad::Var l = cosine_ce_loss(t, b.z1t, phi, labels, cfg.tau);
        out.l1t = l->val.value();
        terms.push_back(l);
    }
    if (b.z2c) {
        ad::Var l = cosine_ce_loss(t, b.z2c, semantic_weights, labels, cfg.tau);
        out.l2c = l->val.value();
        terms.push_back(l);
    }
    if (b.z2t) {
        ad::Var l = cosine_ce_loss(t, b.z2t, semantic_weights, labels, cfg.tau);
        out.l2t = l->val.value();
        terms.push_back(l);
    }
    if (terms.empty()) throw ConfigError("base_loss: no classification streams");
    ad::Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(t, total, terms[i]);
    if (cfg.alpha > 0.0 && !b.ar_q1.empty()) {
        ad::Var ar = attention_regularization(t, b.ar_q1, b.ar_q2);
        out.ar = ar->val.value();
        total = ad::add(t, total, ad::scale(t, ar, cfg.alpha));
    }
    out.total = total;
    return out;
}

// Prototype Smoothing Hard-mining Triplet loss. The first n_anchors rows of
// the pool are the current-session anchors; the remaining rows (pseudo
// old-class features) only ever act as positives/negatives candidates.
// Hard mining selects the farthest same-class and nearest different-class
// pool element per anchor; ties resolve to the lowest pool index.
inline ad::Var psht_loss(ad::Tape* t, const ad::Var& pool, const std::vector<int>& pool_labels,
                         int n_anchors, double margin) {
    if (pool->val.rank() != 2) throw ConfigError("psht_loss: pool must be rank-2");
    const int p = pool->val.dim(0), d = pool->val.dim(1);
    if (static_cast<int>(pool_labels.size()) != p) throw ConfigError("psht_loss: label count mismatch");
    if (n_anchors < 1 || n_anchors > p) throw ConfigError("psht_loss: bad anchor count");
    if (margin < 0.0) throw ConfigError("psht_loss: margin must be >= 0");

    auto dist = [&](int i, int j) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) {
            const double e = pool->val.at(i, k) - pool->val.at(j, k);
            s += e * e;
        }
        return std::sqrt(s);
    };

    std::vector<ad::Var> terms;
    terms.reserve(static_cast<std::size_t>(n_anchors));
    for (int a = 0; a < n_anchors; ++a) {
        int best_pos = -1, best_neg = -1;
        double pos_d = -1.0, neg_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < p; ++j) {
            if (j == a) continue;
            const double dd = dist(a, j);
            if (pool_labels[static_cast<std::size_t>(j)] == pool_labels[static_cast<std::size_t>(a)]) {
                if (dd > pos_d) {
                    pos_d = dd;
                    best_pos = j;
                }
            } else if (dd < neg_d) {
                neg_d = dd;
                best_neg = j;
            }
        }
        if (best_pos < 0)
            throw ProtocolError("psht_loss: anchor " + std::to_string(a) + " of class " +
                                std::to_string(pool_labels[static_cast<std::size_t>(a)]) +
                                " has no positive in the pool");
        if (best_neg < 0)
            throw ProtocolError("psht_loss: anchor " + std::to_string(a) + " of class " +
                                std::to_string(pool_labels[static_cast<std::size_t>(a)]) +
                                " has no negative in the pool");
        ad::Var za = ad::narrow_rows(t, pool, a, 1);
        ad::Var zp = ad::narrow_rows(t, pool, best_pos, 1);
        ad::Var zn = ad::narrow_rows(t, pool, best_neg, 1);
        ad::Var dp = ad::row_l2_norm(t, ad::sub(t, za, zp));  // (1)
        ad::Var dn = ad::row_l2_norm(t, ad::sub(t, za, zn));
        ad::Var gap = ad::sub(t, dp, dn);
        if (margin != 0.0) gap = ad::add(t, gap, ad::constant(Tensor({1}, {margin})));
        terms.push_back(ad::relu(t, gap));
    }
    ad::Var sum = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(t, sum, terms[i]);
    ad::Var mean = ad::div_scalar(t, sum, static_cast<double>(n_anchors));
    return ad::reshape(t, mean, {});
}

// Feature distillation: mean over the batch of ||z_t - z_{t-1}||_2. The
// previous-session features are detached internally, so no gradient ever
// reaches the snapshot side.
inline ad::Var kd_loss(ad::Tape* t, const ad::Var& z_current, const ad::Var& z_previous) {
    if (!z_current->val.same_shape(z_previous->val))
        throw ConfigError("kd_loss: shape mismatch " + z_current->val.shape_str() + " vs " +
                          z_previous->val.shape_str());
    ad::Var prev = ad::constant(z_previous->val);
    ad::Var diff = ad::sub(t, z_current, prev);
    return ad::mean_all(t, ad::row_l2_norm(t, diff));
}

// L_novel = L_PSHT + lambda * L_KD
inline ad::Var novel_loss(ad::Tape* t, const ad::Var& psht, const ad::Var& kd, double lambda) {
    if (lambda < 0.0) throw ConfigError("novel_loss: lambda must be >= 0");
    if (lambda == 0.0) return psht;
    return ad::add(t, psht, ad::reshape(t, ad::scale(t, kd, lambda), psht->val.shape()));
}

// Fig.-style comparison regularizers between the two models' features.
// Cosine variant: mean cosine between corresponding streams of the models.
inline ad::Var cos_regularizer(ad::Tape* t, const nets::ForwardBundle& b) {
    if (!b.z2c) throw ConfigError("cos_regularizer: needs both models");
    std::vector<ad::Var> terms;
    terms.push_back(ad::mean_all(t, ad::rowwise_cosine(t, b.z1c, b.z2c, "cos_regularizer")));
    if (b.z1t && b.z2t)
        terms.push_back(ad::mean_all(t, ad::rowwise_cosine(t, b.z1t, b.z2t, "cos_regularizer")));
    ad::Var sum = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(t, sum, terms[i]);
    return ad::scale(t, sum, 1.0 / static_cast<double>(terms.size()));
}

// Cross-entropy variant: each model's streams are classified into disjoint
// label blocks (model 1 -> y, model 2 -> y + C) with a shared 2C-row cosine
// classifier, so pushing the loss down pulls the two models' features apart.
inline ad::Var ce_regularizer(ad::Tape* t, const nets::ForwardBundle& b, const std::vector<int>& labels,
                              const ad::Var& chi, int n_classes, double tau) {
    if (!b.z2c) throw ConfigError("ce_regularizer: needs both models");
    if (chi->val.dim(0) != 2 * n_classes) throw ConfigError("ce_regularizer: classifier must have 2C rows");
    std::vector<int> shifted(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) shifted[i] = labels[i] + n_classes;
    std::vector<ad::Var> terms;
    terms.push_back(cosine_ce_loss(t, b.z1c, chi, labels, tau));
    terms.push_back(cosine_ce_loss(t, b.z2c, chi, shifted, tau));
    if (b.z1t) terms.push_back(cosine_ce_loss(t, b.z1t, chi, labels, tau));
    if (b.z2t) terms.push_back(cosine_ce_loss(t, b.z2t, chi, shifted, tau));
    ad::Var sum = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(t, sum, terms[i]);
    return ad::scale(t, sum, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace mcnet::losses
