#include <gtest/gtest.h>

#include "mcnet/core/rng.hpp"
#include "mcnet/losses/losses.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"

using namespace mcnet;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
    return t;
}

TEST(Losses, CosineCeClosedFormAlignedFeature) {
    // feature equals its class weight, the other weight is orthogonal:
    // logits (tau, 0) -> loss = -log(e^tau / (e^tau + 1)) = log(1 + e^-tau)
    auto f = ad::make_var(Tensor({1, 2}, {2.0, 0.0}));
    auto w = ad::make_var(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    ad::Tape t;
    auto loss = losses::cosine_ce_loss(&t, f, w, {0}, 16.0);
    const double expected = std::log(1.0 + std::exp(-16.0));
    EXPECT_NEAR(loss->val.value(), expected, 1e-12);
    EXPECT_NEAR(loss->val.value(), 1.13e-7, 2e-9);
}

TEST(Losses, CosineCeEquidistantIsLogC) {
    // feature at equal cosine to all weights -> uniform softmax -> log C
    const int c = 5;
    Tensor w({c, 3});
    for (int i = 0; i < c; ++i) {
        w.at(i, 0) = std::cos(2.0 * M_PI * i / c);
        w.at(i, 1) = std::sin(2.0 * M_PI * i / c);
        w.at(i, 2) = 1.0;
    }
    auto wf = ad::make_var(w);
    auto f = ad::make_var(Tensor({1, 3}, {0.0, 0.0, 1.0}));
    ad::Tape t;
    auto loss = losses::cosine_ce_loss(&t, f, wf, {2}, 16.0);
    EXPECT_NEAR(loss->val.value(), std::log(static_cast<double>(c)), 1e-9);
}

TEST(Losses, CosineCeGradients) {
    Rng rng(51);
    auto f = ad::make_var(random_tensor({4, 6}, rng), true, "features");
    auto w = ad::make_var(random_tensor({3, 6}, rng), true, "weights");
    std::vector<int> labels{0, 2, 1, 0};
    ad::Tape tape;
    auto loss = losses::cosine_ce_loss(&tape, f, w, labels, 16.0);
    tape.backward(loss);
    auto res = test::finite_diff_check(
        [&] { return losses::cosine_ce_loss(nullptr, f, w, labels, 16.0)->val.value(); }, {f, w});
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Losses, CosineCeReportsZeroNormRow) {
    auto f = ad::make_var(Tensor({2, 2}, {1.0, 0.0, 0.0, 0.0}));
    auto w = ad::make_var(Tensor({1, 2}, {1.0, 0.0}));
    ad::Tape t;
    try {
        losses::cosine_ce_loss(&t, f, w, {0, 0}, 16.0);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
    }
}

TEST(Losses, AttentionRegularizationIdenticalMapsIsOne) {
    Rng rng(53);
    Tensor q = random_tensor({3, 9}, rng);
    for (std::int64_t i = 0; i < q.numel(); ++i) q[i] = std::fabs(q[i]) + 0.1;
    auto q1 = ad::make_var(q);
    auto q2 = ad::make_var(q);
    ad::Tape t;
    auto v = losses::attention_regularization(&t, {q1, q1}, {q2, q2});
    EXPECT_NEAR(v->val.value(), 1.0, 1e-12);
}

TEST(Losses, AttentionRegularizationOrthogonalIsZero) {
    auto a = ad::make_var(Tensor({1, 4}, {1.0, 0.0, 1.0, 0.0}));
    auto b = ad::make_var(Tensor({1, 4}, {0.0, 1.0, 0.0, 1.0}));
    ad::Tape t;
    auto v = losses::attention_regularization(&t, {a}, {b});
    EXPECT_NEAR(v->val.value(), 0.0, 1e-12);
}

TEST(Losses, AttentionRegularizationHandCosine) {
    auto a = ad::make_var(Tensor({1, 2}, {1.0, 0.0}));
    auto b = ad::make_var(Tensor({1, 2}, {1.0, 1.0}));
    ad::Tape t;
    auto v = losses::attention_regularization(&t, {a}, {b});
    EXPECT_NEAR(v->val.value(), 1.0 / std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(v->val.value(), 0.70711, 1e-5);
}

TEST(Losses, AttentionRegularizationBoundsAndGradient) {
    Rng rng(57);
    auto q1 = ad::make_var(random_tensor({4, 8}, rng), true, "q1");
    auto q2 = ad::make_var(random_tensor({4, 8}, rng), true, "q2");
    ad::Tape tape;
    auto v = losses::attention_regularization(&tape, {q1}, {q2});
    EXPECT_GE(v->val.value(), -1.0 - 1e-12);
    EXPECT_LE(v->val.value(), 1.0 + 1e-12);
    tape.backward(v);
    auto res = test::finite_diff_check(
        [&] { return losses::attention_regularization(nullptr, {q1}, {q2})->val.value(); }, {q1, q2});
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Losses, AttentionRegularizationSkipsZeroBlocks) {
    auto zero = ad::make_var(Tensor({1, 3}));
    auto a = ad::make_var(Tensor({1, 3}, {1.0, 2.0, 2.0}));
    auto b = ad::make_var(Tensor({1, 3}, {1.0, 2.0, 2.0}));
    ad::Tape t;
    auto v = losses::attention_regularization(&t, {zero, a}, {zero, b});
    EXPECT_NEAR(v->val.value(), 1.0, 1e-12);  // only the valid block counts
    auto all_zero = losses::attention_regularization(&t, {zero}, {zero});
    EXPECT_DOUBLE_EQ(all_zero->val.value(), 0.0);
}

TEST(Losses, AttentionRegularizationLengthMismatch) {
    auto a = ad::make_var(Tensor({1, 3}, {1.0, 0.0, 0.0}));
    ad::Tape t;
    EXPECT_THROW(losses::attention_regularization(&t, {a, a}, {a}), ConfigError);
}

// --- PSHT ---------------------------------------------------------------

ad::Var make_pool(const std::vector<std::vector<double>>& rows, bool grad = false) {
    const int n = static_cast<int>(rows.size()), d = static_cast<int>(rows[0].size());
    Tensor t({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) t.at(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return ad::make_var(t, grad, "pool");
}

TEST(Losses, PshtHandExampleFarthestPositiveNearestNegative) {
    // anchor (0,0), positives {(0,1),(0,3)}, negatives {(2,0),(5,0)}
    // farthest positive d=3, nearest negative d=2 -> max(0, 3-2) = 1
    auto pool = make_pool({{0, 0}, {0, 1}, {0, 3}, {2, 0}, {5, 0}});
    std::vector<int> labels{0, 0, 0, 1, 1};
    ad::Tape t;
    auto v = losses::psht_loss(&t, pool, labels, 1, 0.0);
    EXPECT_DOUBLE_EQ(v->val.value(), 1.0);
}

TEST(Losses, PshtHandExampleHingeInactive) {
    // positive at distance 1, negative at distance 5 -> max(0, 1-5) = 0
    auto pool = make_pool({{0, 0}, {0, 1}, {0, 5}});
    std::vector<int> labels{0, 0, 1};
    ad::Tape t;
    auto v = losses::psht_loss(&t, pool, labels, 1, 0.0);
    EXPECT_DOUBLE_EQ(v->val.value(), 0.0);
}

TEST(Losses, PshtIdenticalPositivesGiveZero) {
    auto pool = make_pool({{1, 1}, {1, 1}, {4, 4}});
    std::vector<int> labels{0, 0, 1};
    ad::Tape t;
    auto v = losses::psht_loss(&t, pool, labels, 2, 0.0);
    EXPECT_DOUBLE_EQ(v->val.value(), 0.0);
}

TEST(Losses, PshtMissingPositiveOrNegative) {
    auto pool = make_pool({{0, 0}, {1, 0}});
    ad::Tape t;
    try {
        losses::psht_loss(&t, pool, {0, 1}, 1, 0.0);  // no positive for anchor 0
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos);
    }
    EXPECT_THROW(losses::psht_loss(&t, pool, {0, 0}, 1, 0.0), ProtocolError);  // no negative
}

TEST(Losses, PshtMatchesBruteForceExactly) {
    Rng rng(61);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_int(0, 46));
        const int d = 1 + static_cast<int>(rng.uniform_int(0, 7));
        // round-robin labels guarantee every class has >= 2 members and
        // every anchor sees at least one negative
        const int classes = 2 + static_cast<int>(rng.uniform_int(0, n / 2 - 2));
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) {
            std::vector<double> r(static_cast<std::size_t>(d));
            // quantized coordinates force frequent exact distance ties
            for (auto& x : r) x = std::round(rng.uniform(-2.0, 2.0));
            rows.push_back(std::move(r));
            labels.push_back(i % classes);
        }
        const int anchors = std::min(n, 2 * classes);
        const double margin = (trial % 3 == 0) ? 0.5 : 0.0;
        auto pool = make_pool(rows);
        ad::Tape t;
        auto v = losses::psht_loss(&t, pool, labels, anchors, margin);
        EXPECT_EQ(v->val.value(), test::brute_force_psht(rows, labels, anchors, margin))
            << "trial " << trial;
    }
}

TEST(Losses, PshtGradientAwayFromKinks) {
    Rng rng(67);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 8, d = 4;
        Tensor pool_t = random_tensor({n, d}, rng, 2.0);
        std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2};
        auto pool = ad::make_var(pool_t, true, "pool");
        ad::Tape tape;
        auto v = losses::psht_loss(&tape, pool, labels, 4, 0.0);
        // skip configurations at a hinge kink or mining tie
        if (std::fabs(v->val.value()) < 1e-3) continue;
        tape.backward(v);
        auto res = test::finite_diff_check(
            [&] { return losses::psht_loss(nullptr, pool, labels, 4, 0.0)->val.value(); }, {pool}, 1e-6);
        EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
    }
}

// --- KD / novel ----------------------------------------------------------

TEST(Losses, KdIdenticalBatchesZero) {
    Rng rng(71);
    Tensor z = random_tensor({3, 5}, rng);
    auto a = ad::make_var(z);
    auto b = ad::make_var(z);
    ad::Tape t;
    EXPECT_DOUBLE_EQ(losses::kd_loss(&t, a, b)->val.value(), 0.0);
}

TEST(Losses, KdPerRowShiftGivesNorm) {
    // z_current = z_previous + (3,4,0,...) per row -> mean norm 5
    Rng rng(73);
    Tensor prev = random_tensor({4, 6}, rng);
    Tensor cur = prev;
    for (int i = 0; i < 4; ++i) {
        cur.at(i, 0) += 3.0;
        cur.at(i, 1) += 4.0;
    }
    ad::Tape t;
    auto v = losses::kd_loss(&t, ad::make_var(cur), ad::make_var(prev));
    EXPECT_NEAR(v->val.value(), 5.0, 1e-12);
}

TEST(Losses, KdStopGradientOnPrevious) {
    Rng rng(79);
    auto cur = ad::make_var(random_tensor({2, 3}, rng), true, "cur");
    auto prev = ad::make_var(random_tensor({2, 3}, rng), true, "prev");
    ad::Tape t;
    auto v = losses::kd_loss(&t, cur, prev);
    t.backward(v);
    for (std::int64_t i = 0; i < prev->grad.numel(); ++i) EXPECT_DOUBLE_EQ(prev->grad[i], 0.0);
    double cur_grad_norm = 0.0;
    for (std::int64_t i = 0; i < cur->grad.numel(); ++i) cur_grad_norm += cur->grad[i] * cur->grad[i];
    EXPECT_GT(cur_grad_norm, 0.0);
}

TEST(Losses, KdGradient) {
    Rng rng(83);
    auto cur = ad::make_var(random_tensor({3, 4}, rng), true, "cur");
    auto prev = ad::make_var(random_tensor({3, 4}, rng), false, "prev");
    ad::Tape tape;
    auto v = losses::kd_loss(&tape, cur, prev);
    tape.backward(v);
    auto res = test::finite_diff_check([&] { return losses::kd_loss(nullptr, cur, prev)->val.value(); },
                                       {cur});
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(Losses, KdShapeMismatch) {
    ad::Tape t;
    EXPECT_THROW(losses::kd_loss(&t, ad::make_var(Tensor({2, 3})), ad::make_var(Tensor({3, 2}))),
                 ConfigError);
}

TEST(Losses, NovelLossArithmetic) {
    ad::Tape t;
    auto psht = ad::make_var(Tensor::scalar(1.0));
    auto kd = ad::make_var(Tensor::scalar(0.5));
    EXPECT_DOUBLE_EQ(losses::novel_loss(&t, psht, kd, 2.0)->val.value(), 2.0);
    EXPECT_DOUBLE_EQ(losses::novel_loss(&t, psht, kd, 0.0)->val.value(), 1.0);
    EXPECT_THROW(losses::novel_loss(&t, psht, kd, -1.0), ConfigError);
}

TEST(Losses, ConfigValidation) {
    losses::LossConfig ok;
    ok.validate();
    losses::LossConfig bad = ok;
    bad.tau = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = ok;
    bad.alpha = -0.1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = ok;
    bad.lambda = std::numeric_limits<double>::infinity();
    EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
