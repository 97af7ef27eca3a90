#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mcnet/data/session.hpp"
#include "mcnet/engine/metrics.hpp"
#include "mcnet/engine/optimizer.hpp"
#include "mcnet/io/config.hpp"
#include "mcnet/losses/losses.hpp"
#include "mcnet/nets/ensemble.hpp"
#include "mcnet/proto/store.hpp"

namespace mcnet::engine {

struct RunState {
    nets::Ensemble ensemble;
    proto::PrototypeStore store;
    std::vector<int> base_classes;  // sorted ids of session 0
    data::SemanticTable semantic;
};

inline nets::StreamMask stream_mask(const io::RunConfig& cfg) {
    nets::StreamMask m;
    m.model2 = cfg.ablation.use_model2;
    m.att_head = cfg.ablation.use_attention_head;
    return m;
}

// ---------------------------------------------------------------------------
// batching helpers
// ---------------------------------------------------------------------------

inline Tensor stack_images(const std::vector<data::Sample>& samples, const std::vector<int>& idx) {
    if (idx.empty()) throw ConfigError("stack_images: empty batch");
    const auto& first = samples[static_cast<std::size_t>(idx[0])].image;
    const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensor out({static_cast<int>(idx.size()), c, h, w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& img = samples[static_cast<std::size_t>(idx[i])].image;
        if (img.shape() != first.shape()) throw ConfigError("stack_images: inconsistent image shapes");
        std::copy(img.data(), img.data() + img.numel(), out.data() + static_cast<std::int64_t>(i) * img.numel());
    }
    return out;
}

// Composed features of a sample list in evaluation mode, chunked by batch.
inline Tensor eval_features(const nets::Ensemble& ens, const std::vector<data::Sample>& samples,
                            const nets::StreamMask& mask, int batch_size) {
    const int n = static_cast<int>(samples.size());
    const int d = ens.composed_dim(mask);
    Tensor out({n, d});
    for (int start = 0; start < n; start += batch_size) {
        const int len = std::min(batch_size, n - start);
        std::vector<int> idx(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        Tensor images = stack_images(samples, idx);
        auto bundle = ens.forward(nullptr, images, mask, false);
        for (int i = 0; i < len; ++i)
            for (int j = 0; j < d; ++j) out.at(start + i, j) = bundle.z->val.at(i, j);
    }
    return out;
}

// Semantic matrix (C, d_a) for the given classes, in the given order.
inline Tensor semantic_matrix(const data::SemanticTable& tbl, const std::vector<int>& classes) {
    if (classes.empty()) throw ConfigError("semantic_matrix: no classes");
    const int d = static_cast<int>(tbl.get(classes[0]).numel());
    Tensor out({static_cast<int>(classes.size()), d});
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const Tensor& v = tbl.get(classes[i]);
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = v[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// trainable-parameter resolution
// ---------------------------------------------------------------------------

// trainable_blocks spec: "heads_last" (default), "heads_all",
// "backbone_last+heads", "all", "none", or a comma-separated list of
// parameter-name prefixes such as "m1.cnn.b0,m2.att.b1".
inline std::vector<ad::Var> resolve_trainable(const nets::Ensemble& ens, const std::string& spec,
                                              const nets::StreamMask& mask) {
    nets::ParamList all = ens.params();
    auto active = [&](const std::string& name) {
        if (!mask.att_head && (name.rfind("m1.att.", 0) == 0 || name.rfind("m2.att.", 0) == 0)) return false;
        if (!mask.model2 && name.rfind("m2.", 0) == 0) return false;
        return true;
    };
    std::vector<std::string> prefixes;
    const int cnn_last = static_cast<int>(ens.m1.cnn.blocks.size()) - 1;
    const int att_last = static_cast<int>(ens.m1.att.blocks.size()) - 1;
    if (spec == "none" || spec.empty()) {
        throw ConfigError("trainable_blocks is empty: nothing to optimize");
    } else if (spec == "heads_last") {
        prefixes = {"m1.cnn.b" + std::to_string(cnn_last), "m1.att.b" + std::to_string(att_last),
                    "m2.cnn.b" + std::to_string(cnn_last), "m2.att.b" + std::to_string(att_last)};
    } else if (spec == "heads_all") {
        prefixes = {"m1.cnn.", "m1.att.", "m2.cnn.", "m2.att."};
    } else if (spec == "backbone_last+heads") {
        const int bb_last = static_cast<int>(ens.m1.backbone.blocks.size()) - 1;
        prefixes = {"m1.backbone.b" + std::to_string(bb_last), "m2.backbone.b" + std::to_string(bb_last),
                    "m1.cnn.", "m1.att.", "m2.cnn.", "m2.att."};
    } else if (spec == "all") {
        prefixes = {"m1.", "m2."};
    } else {
        std::stringstream ss(spec);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok.erase(0, tok.find_first_not_of(" \t"));
            tok.erase(tok.find_last_not_of(" \t") + 1);
            if (!tok.empty()) prefixes.push_back(tok);
        }
        if (prefixes.empty()) throw ConfigError("trainable_blocks is empty: nothing to optimize");
        for (const auto& p : prefixes) {
            bool hit = false;
            for (const auto& param : all) hit = hit || param.name.rfind(p, 0) == 0;
            if (!hit) throw ConfigError("trainable_blocks prefix '" + p + "' matches no parameter");
        }
    }
    std::vector<ad::Var> out;
    for (const auto& param : all) {
        if (!active(param.name)) continue;
        for (const auto& p : prefixes) {
            if (param.name.rfind(p, 0) == 0) {
                out.push_back(param.var);
                break;
            }
        }
    }
    if (out.empty()) throw ConfigError("trainable_blocks '" + spec + "' selects no active parameters");
    return out;
}

// Parameters optimized during base training: every active stream plus the
// classifiers. Masked streams stay untouched so ablations do not silently
// decay unused weights.
inline std::vector<ad::Var> base_trainable(const nets::Ensemble& ens, const nets::StreamMask& mask) {
    std::vector<ad::Var> out;
    for (const auto& param : ens.params()) {
        if (!mask.att_head && (param.name.rfind("m1.att.", 0) == 0 || param.name.rfind("m2.att.", 0) == 0))
            continue;
        if (!mask.model2 && (param.name.rfind("m2.", 0) == 0 || param.name.rfind("psi.", 0) == 0)) continue;
        out.push_back(param.var);
    }
    return out;
}

// ---------------------------------------------------------------------------
// base-session training
// ---------------------------------------------------------------------------

inline void add_session_prototypes(RunState& st, const data::SessionData& session,
                                   const io::RunConfig& cfg) {
    const nets::StreamMask mask = stream_mask(cfg);
    Tensor feats = eval_features(st.ensemble, session.samples, mask, cfg.train.batch_size);
    std::vector<int> labels;
    labels.reserve(session.samples.size());
    for (const auto& s : session.samples) labels.push_back(s.label);
    auto protos = proto::compute_prototypes(feats, labels, session.session_index);
    if (cfg.train.variance_shrinkage && session.session_index >= 1 && !st.store.empty()) {
        const Tensor shrunk = proto::mean_variance(st.store, st.base_classes);
        for (auto& kv : protos) kv.second.variance = shrunk;
    }
    for (auto& kv : protos) st.store.insert(kv.first, std::move(kv.second));
}

inline void train_base(RunState& st, const data::SessionStream& stream, const io::RunConfig& cfg,
                       MetricsWriter* writer) {
    const auto& session = stream.sessions.at(0);
    const std::uint64_t seed = cfg.protocol.seed;
    const nets::StreamMask mask = stream_mask(cfg);
    const io::Regularizer reg = cfg.effective_regularizer();
    st.base_classes = session.class_set;

    // local label space for the classifiers: position in the sorted base set
    std::map<int, int> to_local;
    for (std::size_t i = 0; i < st.base_classes.size(); ++i)
        to_local[st.base_classes[i]] = static_cast<int>(i);
    const int n_classes = static_cast<int>(st.base_classes.size());

    const Tensor sem_matrix = semantic_matrix(st.semantic, st.base_classes);

    // the CE comparison regularizer uses its own 2C-row cosine classifier;
    // it is training scaffolding and is not persisted
    ad::Var chi;
    std::vector<ad::Var> trainable = base_trainable(st.ensemble, mask);
    if (reg == io::Regularizer::CE) {
        const double std = 1.0 / std::sqrt(static_cast<double>(st.ensemble.cfg.feature_dim()));
        chi = ad::make_var(
            nets::init::scaled_normal({2 * n_classes, st.ensemble.cfg.feature_dim()}, std, seed, "chi"), true,
            "chi");
        trainable.push_back(chi);
    }
    SgdOptimizer opt(trainable, cfg.train.momentum, cfg.train.weight_decay, cfg.train.clip_norm);

    const int n = static_cast<int>(session.samples.size());
    const int steps_per_epoch = (n + cfg.train.batch_size - 1) / cfg.train.batch_size;
    const int total_steps = cfg.train.base_epochs * steps_per_epoch;
    const bool augment = cfg.data.augment && cfg.data.source == "manifest";

    int step = 0;
    for (int epoch = 0; epoch < cfg.train.base_epochs; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng(derive_seed(seed, "base_shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng aug_rng(derive_seed(seed, "augment", static_cast<std::uint64_t>(epoch)));
        for (int start = 0; start < n; start += cfg.train.batch_size, ++step) {
            const int len = std::min(cfg.train.batch_size, n - start);
            std::vector<int> idx(order.begin() + start, order.begin() + start + len);
            Tensor images = stack_images(session.samples, idx);
            if (augment) {
                for (int i = 0; i < len; ++i) {
                    Tensor img({images.dim(1), images.dim(2), images.dim(3)});
                    std::copy(images.data() + static_cast<std::int64_t>(i) * img.numel(),
                              images.data() + static_cast<std::int64_t>(i + 1) * img.numel(), img.data());
                    Tensor aug = data::augment_image(img, aug_rng);
                    std::copy(aug.data(), aug.data() + aug.numel(),
                              images.data() + static_cast<std::int64_t>(i) * img.numel());
                }
            }
            std::vector<int> labels(static_cast<std::size_t>(len));
            for (int i = 0; i < len; ++i)
                labels[static_cast<std::size_t>(i)] =
                    to_local.at(session.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].label);

            ad::Tape tape;
            auto bundle = st.ensemble.forward(&tape, images, mask, reg == io::Regularizer::AR);
            ad::Var sem_w;
            if (mask.model2) sem_w = st.ensemble.psi.forward(&tape, ad::constant(sem_matrix));
            losses::LossConfig lcfg = cfg.loss;
            if (reg != io::Regularizer::AR) lcfg.alpha = 0.0;
            auto res = losses::base_loss(&tape, bundle, labels, sem_w, st.ensemble.phi, lcfg);
            ad::Var total = res.total;
            double reg_value = res.ar;
            if (reg == io::Regularizer::Cos && mask.model2) {
                ad::Var r = losses::cos_regularizer(&tape, bundle);
                reg_value = r->val.value();
                total = ad::add(&tape, total, ad::scale(&tape, r, cfg.loss.alpha));
            } else if (reg == io::Regularizer::CE && mask.model2) {
                ad::Var r = losses::ce_regularizer(&tape, bundle, labels, chi, n_classes, cfg.loss.tau);
                reg_value = r->val.value();
                total = ad::add(&tape, total, ad::scale(&tape, r, cfg.loss.alpha));
            }
            if (!std::isfinite(total->val.value()))
                throw NumericError("base training diverged at step " + std::to_string(step));
            opt.zero_grad();
            tape.backward(total);
            const double lr = cosine_lr(cfg.train.base_lr, step, total_steps);
            opt.step(lr);
            if (writer) {
                writer->log_step({{"phase", "base"},
                                  {"session", 0},
                                  {"epoch", epoch},
                                  {"step", step},
                                  {"lr", lr},
                                  {"loss", total->val.value()},
                                  {"loss_l1c", res.l1c},
                                  {"loss_l1t", res.l1t},
                                  {"loss_l2c", res.l2c},
                                  {"loss_l2t", res.l2t},
                                  {"loss_reg", reg_value}});
            }
        }
    }
    add_session_prototypes(st, session, cfg);
}

// ---------------------------------------------------------------------------
// incremental fine-tuning
// ---------------------------------------------------------------------------

// Random-triplet comparison variant: uniformly drawn positive and negative
// per anchor instead of hard mining.
inline ad::Var random_triplet_loss(ad::Tape* t, const ad::Var& pool, const std::vector<int>& labels,
                                   int n_anchors, double margin, Rng& rng) {
    const int p = pool->val.dim(0);
    std::vector<ad::Var> terms;
    for (int a = 0; a < n_anchors; ++a) {
        std::vector<int> pos, neg;
        for (int j = 0; j < p; ++j) {
            if (j == a) continue;
            if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)])
                pos.push_back(j);
            else
                neg.push_back(j);
        }
        if (pos.empty() || neg.empty())
            throw ProtocolError("random_triplet_loss: anchor " + std::to_string(a) + " of class " +
                                std::to_string(labels[static_cast<std::size_t>(a)]) +
                                " lacks a positive or negative");
        const int jp = pos[rng.index(pos.size())];
        const int jn = neg[rng.index(neg.size())];
        ad::Var za = ad::narrow_rows(t, pool, a, 1);
        ad::Var dp = ad::row_l2_norm(t, ad::sub(t, za, ad::narrow_rows(t, pool, jp, 1)));
        ad::Var dn = ad::row_l2_norm(t, ad::sub(t, za, ad::narrow_rows(t, pool, jn, 1)));
        ad::Var gap = ad::sub(t, dp, dn);
        if (margin != 0.0) gap = ad::add(t, gap, ad::constant(Tensor({1}, {margin})));
        terms.push_back(ad::relu(t, gap));
    }
    ad::Var sum = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(t, sum, terms[i]);
    return ad::reshape(t, ad::div_scalar(t, sum, static_cast<double>(n_anchors)), {});
}

// Fine-tunes the deep layers on session t with the configured triplet
// variant plus feature distillation against the frozen t-1 snapshot.
// Returns the parameter drift over the tuned set.
inline double finetune_incremental(RunState& st, const data::SessionStream& stream, int t,
                                   const io::RunConfig& cfg, MetricsWriter* writer) {
    if (t < 1) throw ProtocolError("finetune_incremental: t must be >= 1");
    const auto& session = stream.sessions.at(static_cast<std::size_t>(t));
    const std::uint64_t seed = cfg.protocol.seed;
    const nets::StreamMask mask = stream_mask(cfg);
    const io::TripletVariant variant = cfg.ablation.triplet_variant;

    const nets::Ensemble snapshot = nets::clone_ensemble(st.ensemble);
    std::vector<ad::Var> trainable = resolve_trainable(st.ensemble, cfg.train.trainable_blocks, mask);
    SgdOptimizer opt(trainable, cfg.train.momentum, cfg.train.weight_decay, cfg.train.clip_norm);
    const std::vector<Tensor> start_values = snapshot_values(trainable);

    const int n = static_cast<int>(session.samples.size());
    std::vector<int> all_idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all_idx[static_cast<std::size_t>(i)] = i;
    Tensor images = stack_images(session.samples, all_idx);
    std::vector<int> labels;
    for (const auto& s : session.samples) labels.push_back(s.label);

    std::map<int, int> class_counts;
    for (int l : labels) class_counts[l]++;
    bool warned_single = false;

    const std::vector<int> old_classes = st.store.classes();
    const int pseudo_n = cfg.train.pseudo_per_class > 0 ? cfg.train.pseudo_per_class : session.k_shot;

    // previous-session features of the session data, fixed for all epochs
    Tensor z_prev_vals = eval_features(snapshot, session.samples, mask, cfg.train.batch_size);

    for (int epoch = 0; epoch < cfg.train.incr_epochs; ++epoch) {
        ad::Tape tape;
        auto bundle = st.ensemble.forward(&tape, images, mask, false);
        ad::Var z_cur = bundle.z;

        // assemble the triplet pool: anchors first, then constant rows
        std::vector<ad::Var> pool_parts{z_cur};
        std::vector<int> pool_labels = labels;
        if (variant == io::TripletVariant::PSHT || variant == io::TripletVariant::PHT) {
            const std::uint64_t eseed =
                derive_seed(seed, "pseudo", static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(epoch));
            for (int c : old_classes) {
                const auto& entry = st.store.get(c);
                Tensor rows;
                if (variant == io::TripletVariant::PSHT) {
                    rows = proto::sample_smoothed(entry.mean, entry.variance, pseudo_n,
                                                  derive_seed(eseed, "class", static_cast<std::uint64_t>(c)));
                } else {
                    rows = Tensor({1, static_cast<int>(entry.mean.numel())});
                    for (std::int64_t j = 0; j < entry.mean.numel(); ++j) rows.at(0, static_cast<int>(j)) = entry.mean[j];
                }
                pool_parts.push_back(ad::constant(rows));
                for (int r = 0; r < rows.dim(0); ++r) pool_labels.push_back(c);
            }
        }
        // k_shot = 1 fallback: an anchor with no same-class partner gets its
        // own feature appended as a zero-variance prototype positive
        for (int i = 0; i < n; ++i) {
            if (class_counts.at(labels[static_cast<std::size_t>(i)]) > 1) continue;
            Tensor row({1, z_cur->val.dim(1)});
            for (int j = 0; j < z_cur->val.dim(1); ++j) row.at(0, j) = z_cur->val.at(i, j);
            pool_parts.push_back(ad::constant(row));
            pool_labels.push_back(labels[static_cast<std::size_t>(i)]);
            if (!warned_single) {
                log::warn("session " + std::to_string(t) +
                          ": single-shot class, using prototype-positive fallback");
                warned_single = true;
            }
        }
        ad::Var pool = ad::concat_rows(&tape, pool_parts);

        ad::Var triplet;
        if (variant == io::TripletVariant::TL) {
            Rng trng(derive_seed(seed, "tl", static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(epoch)));
            triplet = random_triplet_loss(&tape, pool, pool_labels, n, cfg.loss.margin, trng);
        } else {
            triplet = losses::psht_loss(&tape, pool, pool_labels, n, cfg.loss.margin);
        }
        ad::Var kd = losses::kd_loss(&tape, z_cur, ad::constant(z_prev_vals));
        ad::Var total = losses::novel_loss(&tape, triplet, kd, cfg.loss.lambda);
        if (!std::isfinite(total->val.value()))
            throw NumericError("fine-tuning diverged in session " + std::to_string(t) + " epoch " +
                               std::to_string(epoch));
        opt.zero_grad();
        tape.backward(total);
        opt.step(cfg.train.incr_lr);
        if (writer) {
            writer->log_step({{"phase", "incr"},
                              {"session", t},
                              {"epoch", epoch},
                              {"lr", cfg.train.incr_lr},
                              {"loss", total->val.value()},
                              {"loss_psht", triplet->val.value()},
                              {"loss_kd", kd->val.value()}});
        }
    }
    add_session_prototypes(st, session, cfg);
    return param_distance(trainable, start_values);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy = 0.0;
    double accuracy_base = 0.0;
    int n_test = 0;
};

// Micro top-1 over the union of classes of sessions 0..t, plus the same
// predictions restricted to base-session classes.
inline EvalResult evaluate_session(const RunState& st, const data::SessionStream& stream, int t,
                                   const io::RunConfig& cfg) {
    const std::vector<int> seen = stream.seen_classes(t);
    for (int c : seen)
        if (!st.store.has(c))
            throw ProtocolError("evaluate_session: missing prototype for class " + std::to_string(c));
    const nets::StreamMask mask = stream_mask(cfg);
    std::vector<data::Sample> test;
    for (int c : seen) {
        const auto& pool = stream.test_pool.at(c);
        test.insert(test.end(), pool.begin(), pool.end());
    }
    Tensor feats = eval_features(st.ensemble, test, mask, cfg.train.batch_size);
    const std::set<int> base_set(st.base_classes.begin(), st.base_classes.end());
    EvalResult res;
    res.n_test = static_cast<int>(test.size());
    int correct = 0, base_total = 0, base_correct = 0;
    const int d = feats.dim(1);
    for (std::size_t i = 0; i < test.size(); ++i) {
        Tensor z({d});
        for (int j = 0; j < d; ++j) z[j] = feats.at(static_cast<int>(i), j);
        const int pred = proto::classify(z, st.store, seen);
        const bool ok = pred == test[i].label;
        correct += ok ? 1 : 0;
        if (base_set.count(test[i].label)) {
            base_total += 1;
            base_correct += ok ? 1 : 0;
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    res.accuracy_base = base_total > 0 ? static_cast<double>(base_correct) / base_total : 0.0;
    return res;
}

}  // namespace mcnet::engine
