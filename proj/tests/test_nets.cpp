#include <gtest/gtest.h>

#include "mcnet/core/rng.hpp"
#include "mcnet/losses/losses.hpp"
#include "mcnet/nets/ensemble.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"

using namespace mcnet;

namespace {

nets::ArchConfig tiny_arch() {
    nets::ArchConfig a;
    a.in_channels = 1;
    a.image_size = 6;
    a.stem_channels = 2;
    a.backbone_channels = {3, 4};
    a.backbone_strides = {2, 1};
    a.cnn_head_blocks = 1;
    a.att_head_blocks = 1;
    a.att_heads = 2;
    a.semantic_dim = 5;
    a.semantic_hidden = 3;
    return a;
}

Tensor random_images(int n, const nets::ArchConfig& a, Rng& rng) {
    Tensor t({n, a.in_channels, a.image_size, a.image_size});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

std::vector<ad::Var> leaf_vars(const nets::ParamList& params) {
    std::vector<ad::Var> out;
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

TEST(Nets, BackboneShapeContract) {
    nets::ArchConfig a = tiny_arch();
    nets::Backbone b;
    b.build("bb", a, 7);
    Rng rng(1);
    Tensor imgs = random_images(1, a, rng);
    auto out = b.forward(nullptr, ad::constant(imgs));
    const int s = a.backbone_spatial();
    EXPECT_EQ(out.final->val.shape(), (std::vector<int>{1, a.feature_dim(), s, s}));
    EXPECT_EQ(out.acts.size(), a.backbone_channels.size());
    EXPECT_GE(s, 2);
}

TEST(Nets, BackboneBatchIndependence) {
    nets::ArchConfig a = tiny_arch();
    nets::Backbone b;
    b.build("bb", a, 7);
    Rng rng(2);
    Tensor one = random_images(1, a, rng);
    Tensor two({2, a.in_channels, a.image_size, a.image_size});
    for (std::int64_t i = 0; i < one.numel(); ++i) {
        two[i] = one[i];
        two[one.numel() + i] = one[i];
    }
    auto o1 = b.forward(nullptr, ad::constant(one));
    auto o2 = b.forward(nullptr, ad::constant(two));
    const std::int64_t per = o1.final->val.numel();
    for (std::int64_t i = 0; i < per; ++i) {
        EXPECT_DOUBLE_EQ(o2.final->val[i], o1.final->val[i]);
        EXPECT_DOUBLE_EQ(o2.final->val[per + i], o1.final->val[i]);
    }
}

TEST(Nets, BackboneGradientCheck) {
    nets::ArchConfig a = tiny_arch();
    nets::Backbone b;
    b.build("bb", a, 7);
    Rng rng(3);
    Tensor imgs = random_images(2, a, rng);
    nets::ParamList params;
    b.collect(params);
    auto build = [&](ad::Tape* t) {
        auto out = b.forward(t, ad::constant(imgs));
        return ad::mean_all(t, ad::square(t, out.final));
    };
    ad::Tape tape;
    auto loss = build(&tape);
    tape.backward(loss);
    auto res = test::finite_diff_check([&] { return build(nullptr)->val.value(); }, leaf_vars(params));
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Nets, MhsaSingleTokenEqualsValueProjection) {
    // one token, e = 0: the single-logit softmax is 1, so the head output is
    // exactly the token's value projection pushed through the output map
    nets::Mhsa m;
    m.build("mhsa", 4, 2, 1, 1, false, 11);
    m.pos_row->val.fill(0.0);
    m.pos_col->val.fill(0.0);
    Rng rng(5);
    Tensor x({1, 4});
    for (int j = 0; j < 4; ++j) x.at(0, j) = rng.normal();
    auto tokens = ad::constant(x);
    auto out = m.forward(nullptr, tokens);
    auto v = m.wv.forward(nullptr, tokens);
    auto expected = m.wo.forward(nullptr, v);
    ASSERT_EQ(out->val.shape(), expected->val.shape());
    for (std::int64_t i = 0; i < out->val.numel(); ++i)
        EXPECT_NEAR(out->val[i], expected->val[i], 1e-12);
}

TEST(Nets, MhsaMatchesDenseOracleTwoTokens) {
    // single head, d_k = C = 2, integer projections, e = 0, identity output map
    nets::Mhsa m;
    m.build("mhsa", 2, 1, 1, 2, false, 13);
    m.pos_row->val.fill(0.0);
    m.pos_col->val.fill(0.0);
    std::vector<std::vector<double>> wq{{1, 2}, {0, 1}}, wk{{2, 0}, {1, 1}}, wv{{1, -1}, {3, 1}};
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 2; ++i) {
            m.wq.w->val.at(o, i) = wq[o][i];
            m.wk.w->val.at(o, i) = wk[o][i];
            m.wv.w->val.at(o, i) = wv[o][i];
            m.wo.w->val.at(o, i) = (o == i) ? 1.0 : 0.0;
        }
    m.wq.b->val.fill(0.0);
    m.wk.b->val.fill(0.0);
    m.wv.b->val.fill(0.0);
    m.wo.b->val.fill(0.0);
    std::vector<std::vector<double>> x{{1, 2}, {-1, 1}};
    std::vector<std::vector<double>> e{{0, 0}, {0, 0}};
    Tensor xt({2, 2});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) xt.at(i, j) = x[i][j];
    auto out = m.forward(nullptr, ad::constant(xt));
    auto expected = test::dense_attention(x, wq, wk, wv, e);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(out->val.at(i, j), expected[i][j], 1e-12);
}

TEST(Nets, MhsaRowsAreStochastic) {
    nets::Mhsa m;
    m.build("mhsa", 8, 4, 3, 3, false, 17);
    Rng rng(19);
    Tensor x({9, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    std::vector<Tensor> attn;
    m.forward(nullptr, ad::constant(x), &attn);
    ASSERT_EQ(attn.size(), 4u);
    for (const auto& a : attn) {
        ASSERT_EQ(a.shape(), (std::vector<int>{9, 9}));
        for (int i = 0; i < 9; ++i) {
            double s = 0.0;
            for (int j = 0; j < 9; ++j) {
                s += a.at(i, j);
                EXPECT_GE(a.at(i, j), 0.0);
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Nets, MhsaGradientCheck) {
    nets::Mhsa m;
    m.build("mhsa", 4, 2, 2, 2, false, 23);
    Rng rng(29);
    Tensor x({4, 4});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    auto tokens = ad::make_var(x, true, "tokens");
    nets::ParamList params;
    m.collect(params);
    auto leaves = leaf_vars(params);
    leaves.push_back(tokens);
    auto build = [&](ad::Tape* t) { return ad::mean_all(t, ad::square(t, m.forward(t, tokens))); };
    ad::Tape tape;
    auto loss = build(&tape);
    tape.backward(loss);
    auto res = test::finite_diff_check([&] { return build(nullptr)->val.value(); }, leaves);
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Nets, MhsaRejectsZeroDk) {
    nets::Mhsa m;
    EXPECT_THROW(m.build("mhsa", 4, 3, 2, 2, false, 1), ConfigError);  // 4 % 3 != 0
}

TEST(Nets, HeadsEqualDimsAndZeroPropagation) {
    nets::ArchConfig a = tiny_arch();
    nets::CnnHead ch;
    nets::AttHead ah;
    ch.build("cnn", a, 31);
    ah.build("att", a, 31);
    const int s = a.backbone_spatial();
    Tensor zero({2, a.feature_dim(), s, s});
    // zero all parameters: zero input + zero params must give zero outputs
    nets::ParamList params;
    ch.collect(params);
    ah.collect(params);
    for (auto& p : params) p.var->val.fill(0.0);
    auto zc = ch.forward(nullptr, ad::constant(zero));
    auto zt = ah.forward(nullptr, ad::constant(zero));
    EXPECT_EQ(zc->val.dim(1), a.feature_dim());
    EXPECT_EQ(zt->val.dim(1), a.feature_dim());
    EXPECT_EQ(zc->val.dim(1), zt->val.dim(1));
    for (std::int64_t i = 0; i < zc->val.numel(); ++i) EXPECT_DOUBLE_EQ(zc->val[i], 0.0);
    for (std::int64_t i = 0; i < zt->val.numel(); ++i) EXPECT_DOUBLE_EQ(zt->val[i], 0.0);
}

TEST(Nets, HeadsGradientCheck) {
    nets::ArchConfig a = tiny_arch();
    nets::CnnHead ch;
    nets::AttHead ah;
    ch.build("cnn", a, 37);
    ah.build("att", a, 37);
    Rng rng(41);
    const int s = a.backbone_spatial();
    Tensor feat({1, a.feature_dim(), s, s});
    for (std::int64_t i = 0; i < feat.numel(); ++i) feat[i] = rng.normal(0.0, 0.5);
    nets::ParamList params;
    ch.collect(params);
    ah.collect(params);
    auto build = [&](ad::Tape* t) {
        auto x = ad::constant(feat);
        auto zc = ch.forward(t, x);
        auto zt = ah.forward(t, x);
        return ad::mean_all(t, ad::square(t, ad::concat_cols(t, {zc, zt})));
    };
    ad::Tape tape;
    auto loss = build(&tape);
    tape.backward(loss);
    auto res = test::finite_diff_check([&] { return build(nullptr)->val.value(); }, leaf_vars(params));
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Nets, SemanticNetZeroAndIdentity) {
    nets::ArchConfig a = tiny_arch();
    a.semantic_dim = 4;
    a.semantic_hidden = 4;
    a.backbone_channels = {3, 4};  // d_f = 4
    nets::SemanticNet s;
    s.build("psi", a, 43);
    // zero input, zero biases -> zero output
    s.l1.b->val.fill(0.0);
    s.l2.b->val.fill(0.0);
    auto out = s.forward(nullptr, ad::constant(Tensor({1, 4})));
    for (std::int64_t i = 0; i < out->val.numel(); ++i) EXPECT_DOUBLE_EQ(out->val[i], 0.0);
    // identity-like square weights reproduce a nonnegative input
    for (int o = 0; o < 4; ++o)
        for (int i = 0; i < 4; ++i) {
            s.l1.w->val.at(o, i) = (o == i) ? 1.0 : 0.0;
            s.l2.w->val.at(o, i) = (o == i) ? 1.0 : 0.0;
        }
    Tensor av({1, 4}, {0.5, 0.25, 1.5, 0.0});
    auto rep = s.forward(nullptr, ad::constant(av));
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(rep->val.at(0, j), av.at(0, j));
}

TEST(Nets, SemanticNetGradientCheck) {
    nets::ArchConfig a = tiny_arch();
    nets::SemanticNet s;
    s.build("psi", a, 47);
    Rng rng(53);
    Tensor av({3, a.semantic_dim});
    for (std::int64_t i = 0; i < av.numel(); ++i) av[i] = rng.normal();
    nets::ParamList params;
    s.collect(params);
    auto build = [&](ad::Tape* t) { return ad::mean_all(t, ad::square(t, s.forward(t, ad::constant(av)))); };
    ad::Tape tape;
    auto loss = build(&tape);
    tape.backward(loss);
    auto res = test::finite_diff_check([&] { return build(nullptr)->val.value(); }, leaf_vars(params));
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Nets, AttentionMapZeroAndHandValue) {
    auto zero = ad::constant(Tensor({1, 3, 2, 2}));
    auto q0 = nets::attention_map(nullptr, zero);
    for (std::int64_t i = 0; i < q0->val.numel(); ++i) EXPECT_DOUBLE_EQ(q0->val[i], 0.0);

    // C=2 single pixel with values (3,4): Q = [25]
    auto m = ad::constant(Tensor({1, 2, 1, 1}, {3.0, 4.0}));
    auto q = nets::attention_map(nullptr, m);
    ASSERT_EQ(q->val.shape(), (std::vector<int>{1, 1}));
    EXPECT_DOUBLE_EQ(q->val[0], 25.0);

    Rng rng(59);
    Tensor r({2, 3, 4, 4});
    for (std::int64_t i = 0; i < r.numel(); ++i) r[i] = rng.normal();
    auto qr = nets::attention_map(nullptr, ad::constant(r));
    for (std::int64_t i = 0; i < qr->val.numel(); ++i) EXPECT_GE(qr->val[i], 0.0);
}

TEST(Nets, ComposeFeaturesOrderAndDim) {
    Tensor u({1, 3}, {1.0, 2.0, 3.0});
    auto v = ad::constant(u);
    auto z = nets::compose_features(nullptr, v, v, v, v);
    ASSERT_EQ(z->val.shape(), (std::vector<int>{1, 12}));
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(z->val.at(0, 3 * k + j), u.at(0, j));

    // unit basis vectors in d_f = 4: ones land at positions 0, 5, 10, 15
    std::vector<ad::Var> basis;
    for (int k = 0; k < 4; ++k) {
        Tensor e({1, 4});
        e.at(0, k) = 1.0;
        basis.push_back(ad::constant(e));
    }
    auto zb = nets::compose_features(nullptr, basis[0], basis[1], basis[2], basis[3]);
    ASSERT_EQ(zb->val.numel(), 16);
    for (int i = 0; i < 16; ++i)
        EXPECT_DOUBLE_EQ(zb->val[i], (i == 0 || i == 5 || i == 10 || i == 15) ? 1.0 : 0.0);

    EXPECT_THROW(nets::compose_features(nullptr, v, basis[0], v, v), ConfigError);
}

TEST(Nets, EnsembleForwardComposesInOrder) {
    nets::ArchConfig a = tiny_arch();
    nets::Ensemble ens;
    ens.build(a, 4, 61);
    Rng rng(67);
    Tensor imgs = random_images(2, a, rng);
    auto b = ens.forward(nullptr, imgs, {});
    const int d = a.feature_dim();
    ASSERT_EQ(b.z->val.shape(), (std::vector<int>{2, 4 * d}));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < d; ++j) {
            EXPECT_DOUBLE_EQ(b.z->val.at(i, j), b.z1c->val.at(i, j));
            EXPECT_DOUBLE_EQ(b.z->val.at(i, d + j), b.z1t->val.at(i, j));
            EXPECT_DOUBLE_EQ(b.z->val.at(i, 2 * d + j), b.z2c->val.at(i, j));
            EXPECT_DOUBLE_EQ(b.z->val.at(i, 3 * d + j), b.z2t->val.at(i, j));
        }
    // masked streams shrink the composition
    nets::StreamMask m1only;
    m1only.model2 = false;
    auto b1 = ens.forward(nullptr, imgs, m1only);
    EXPECT_EQ(b1.z->val.dim(1), 2 * d);
    EXPECT_EQ(b1.z2c, nullptr);
}

TEST(Nets, EnsembleCloneIsDeepCopy) {
    nets::ArchConfig a = tiny_arch();
    nets::Ensemble ens;
    ens.build(a, 4, 71);
    nets::Ensemble snap = nets::clone_ensemble(ens);
    auto p0 = ens.params();
    auto p1 = snap.params();
    ASSERT_EQ(p0.size(), p1.size());
    for (std::size_t i = 0; i < p0.size(); ++i) {
        EXPECT_EQ(p0[i].name, p1[i].name);
        ASSERT_EQ(p0[i].var->val.numel(), p1[i].var->val.numel());
        for (std::int64_t j = 0; j < p0[i].var->val.numel(); ++j)
            EXPECT_EQ(p0[i].var->val[j], p1[i].var->val[j]);
    }
    p1[0].var->val[0] += 42.0;
    EXPECT_NE(p0[0].var->val[0], p1[0].var->val[0]);
}

TEST(Nets, ArchValidationCatchesBadGeometry) {
    nets::ArchConfig a = tiny_arch();
    a.backbone_strides = {2, 2};  // 6 -> 3 -> 2: fine
    a.validate();
    a.image_size = 4;  // 4 -> 2 -> 1: spatial collapses below 2
    EXPECT_THROW(a.validate(), ConfigError);
    a = tiny_arch();
    a.att_heads = 3;
    EXPECT_THROW(a.validate(), ConfigError);
}

// --- base loss over the real ensemble ------------------------------------

TEST(Losses, BaseLossBreakdownIdentityAndAlphaZero) {
    nets::ArchConfig a = tiny_arch();
    nets::Ensemble ens;
    ens.build(a, 3, 73);
    Rng rng(79);
    Tensor imgs = random_images(4, a, rng);
    std::vector<int> labels{0, 1, 2, 1};
    Tensor sem({3, a.semantic_dim});
    for (std::int64_t i = 0; i < sem.numel(); ++i) sem[i] = rng.normal();

    losses::LossConfig cfg;
    cfg.alpha = 0.4;
    ad::Tape t;
    auto bundle = ens.forward(&t, imgs, {}, true);
    auto sem_w = ens.psi.forward(&t, ad::constant(sem));
    auto res = losses::base_loss(&t, bundle, labels, sem_w, ens.phi, cfg);
    const double reassembled = res.l1c + res.l1t + res.l2c + res.l2t + cfg.alpha * res.ar;
    EXPECT_NEAR(res.total->val.value(), reassembled, 1e-9);
    EXPECT_GE(res.ar, -1.0 - 1e-12);
    EXPECT_LE(res.ar, 1.0 + 1e-12);

    // alpha = 0 equals the plain sum of the four cross-entropy terms,
    // whether or not AR maps were even computed
    losses::LossConfig cfg0 = cfg;
    cfg0.alpha = 0.0;
    auto res0 = losses::base_loss(&t, bundle, labels, sem_w, ens.phi, cfg0);
    EXPECT_NEAR(res0.total->val.value(), res.l1c + res.l1t + res.l2c + res.l2t, 1e-12);
    auto bundle_nomap = ens.forward(&t, imgs, {}, false);
    auto res_nomap = losses::base_loss(&t, bundle_nomap, labels, sem_w, ens.phi, cfg);
    EXPECT_NEAR(res_nomap.total->val.value(), res.l1c + res.l1t + res.l2c + res.l2t, 1e-12);
}

TEST(Losses, BaseLossPermutationInvariant) {
    nets::ArchConfig a = tiny_arch();
    nets::Ensemble ens;
    ens.build(a, 3, 83);
    Rng rng(89);
    Tensor imgs = random_images(4, a, rng);
    std::vector<int> labels{0, 1, 2, 1};
    Tensor sem({3, a.semantic_dim});
    for (std::int64_t i = 0; i < sem.numel(); ++i) sem[i] = rng.normal();
    losses::LossConfig cfg;

    auto eval_perm = [&](const std::vector<int>& perm) {
        Tensor pimg({4, a.in_channels, a.image_size, a.image_size});
        std::vector<int> plab(4);
        const std::int64_t stride = imgs.numel() / 4;
        for (int i = 0; i < 4; ++i) {
            plab[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
            for (std::int64_t j = 0; j < stride; ++j)
                pimg[i * stride + j] = imgs[perm[static_cast<std::size_t>(i)] * stride + j];
        }
        auto bundle = ens.forward(nullptr, pimg, {}, false);
        auto sem_w = ens.psi.forward(nullptr, ad::constant(sem));
        return losses::base_loss(nullptr, bundle, plab, sem_w, ens.phi, cfg).total->val.value();
    };
    const double base = eval_perm({0, 1, 2, 3});
    EXPECT_NEAR(eval_perm({3, 2, 1, 0}), base, 1e-9);
    EXPECT_NEAR(eval_perm({1, 3, 0, 2}), base, 1e-9);
}

TEST(Losses, BaseLossAndArGradientThroughEnsemble) {
    nets::ArchConfig a = tiny_arch();
    a.att_head_blocks = 1;
    nets::Ensemble ens;
    ens.build(a, 2, 97);
    Rng rng(101);
    Tensor imgs = random_images(2, a, rng);
    std::vector<int> labels{0, 1};
    Tensor sem({2, a.semantic_dim});
    for (std::int64_t i = 0; i < sem.numel(); ++i) sem[i] = rng.normal();
    losses::LossConfig cfg;
    cfg.alpha = 0.4;
    auto build = [&](ad::Tape* t) {
        auto bundle = ens.forward(t, imgs, {}, true);
        auto sem_w = ens.psi.forward(t, ad::constant(sem));
        return losses::base_loss(t, bundle, labels, sem_w, ens.phi, cfg).total;
    };
    ad::Tape tape;
    auto loss = build(&tape);
    tape.backward(loss);
    // spot-check a slice of parameters to keep the finite-difference loop fast
    nets::ParamList params = ens.params();
    std::vector<ad::Var> leaves;
    for (std::size_t i = 0; i < params.size(); i += 7) leaves.push_back(params[i].var);
    auto res = test::finite_diff_check([&] { return build(nullptr)->val.value(); }, leaves);
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

}  // namespace
