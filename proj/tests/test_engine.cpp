#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcnet/engine/protocol.hpp"

using namespace mcnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("mcnet_engine_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Micro configuration that trains in well under a second.
io::RunConfig micro_config() {
    io::RunConfig c = io::preset_config("toy");
    c.data.n_classes = 6;
    c.data.image_size = 6;
    c.data.samples_per_class = 24;
    c.data.noise_std = 0.1;
    c.data.semantic_dim = 8;
    c.protocol.base_classes = 2;
    c.protocol.n_way = 2;
    c.protocol.k_shot = 2;
    c.protocol.n_sessions = 2;
    c.protocol.test_per_class = 2;
    c.protocol.seed = 5;
    c.model.stem_channels = 4;
    c.model.backbone_channels = {6, 8};
    c.model.backbone_strides = {2, 1};
    c.model.att_head_blocks = 1;
    c.model.att_heads = 2;
    c.model.semantic_hidden = 4;
    c.train.batch_size = 16;
    c.train.base_epochs = 2;
    c.train.incr_epochs = 2;
    return c;
}

TEST(Engine, DeterministicRunsProduceIdenticalSummaries) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    auto r1 = engine::run_protocol(cfg, (dir.path / "a").string());
    auto r2 = engine::run_protocol(cfg, (dir.path / "b").string());
    ASSERT_EQ(r1.sessions.size(), r2.sessions.size());
    EXPECT_EQ(slurp(dir.path / "a" / "summary.json"), slurp(dir.path / "b" / "summary.json"));
    // different seed must change the hash (and in general the numbers)
    io::RunConfig other = cfg;
    other.protocol.seed = 6;
    auto r3 = engine::run_protocol(other, (dir.path / "c").string());
    EXPECT_NE(slurp(dir.path / "a" / "summary.json"), slurp(dir.path / "c" / "summary.json"));
}

TEST(Engine, SessionCountsAndGrowingUnion) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    auto report = engine::run_protocol(cfg, (dir.path / "run").string());
    ASSERT_EQ(report.sessions.size(), 3u);  // base + 2 incremental
    EXPECT_EQ(report.sessions[0].n_classes_seen, 2);
    EXPECT_EQ(report.sessions[1].n_classes_seen, 4);
    EXPECT_EQ(report.sessions[2].n_classes_seen, 6);
    for (const auto& s : report.sessions) {
        EXPECT_GE(s.accuracy, 0.0);
        EXPECT_LE(s.accuracy, 1.0);
    }
    for (int t = 0; t < 3; ++t) EXPECT_TRUE(fs::exists(dir.path / "run" / ("ckpt_session_" + std::to_string(t))));
    EXPECT_TRUE(fs::exists(dir.path / "run" / "config.ini"));
    EXPECT_TRUE(fs::exists(dir.path / "run" / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(dir.path / "run" / "timing.json"));
}

TEST(Engine, FreezePolicyOutsideTrainableBlocks) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    auto [stream, semantic] = engine::build_stream(cfg);
    engine::RunState st;
    st.semantic = semantic;
    st.base_classes = stream.sessions[0].class_set;
    st.ensemble.build(cfg.arch(), cfg.protocol.base_classes, derive_seed(cfg.protocol.seed, "init"), true);
    engine::train_base(st, stream, cfg, nullptr);

    // record every parameter, then fine-tune session 1
    nets::ParamList params = st.ensemble.params();
    std::vector<Tensor> before;
    for (const auto& p : params) before.push_back(p.var->val);
    std::vector<ad::Var> trainable =
        engine::resolve_trainable(st.ensemble, cfg.train.trainable_blocks, engine::stream_mask(cfg));
    std::set<const ad::Node*> tuned;
    for (const auto& v : trainable) tuned.insert(v.get());

    engine::finetune_incremental(st, stream, 1, cfg, nullptr);

    bool any_tuned_changed = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool is_tuned = tuned.count(params[i].var.get()) > 0;
        bool changed = false;
        for (std::int64_t j = 0; j < before[i].numel(); ++j)
            changed = changed || params[i].var->val[j] != before[i][j];
        if (is_tuned) {
            any_tuned_changed = any_tuned_changed || changed;
        } else {
            EXPECT_FALSE(changed) << "frozen parameter " << params[i].name << " moved";
        }
    }
    EXPECT_TRUE(any_tuned_changed);
    // default policy tunes exactly the two heads' final blocks of each model
    for (const auto& v : trainable) {
        const std::string& n = v->name;
        EXPECT_TRUE(n.rfind("m1.cnn.b0", 0) == 0 || n.rfind("m1.att.b0", 0) == 0 ||
                    n.rfind("m2.cnn.b0", 0) == 0 || n.rfind("m2.att.b0", 0) == 0)
            << n;
    }
}

TEST(Engine, TrainableBlocksValidation) {
    io::RunConfig cfg = micro_config();
    nets::Ensemble ens;
    ens.build(cfg.arch(), 2, 7, true);
    EXPECT_THROW(engine::resolve_trainable(ens, "none", {}), ConfigError);
    EXPECT_THROW(engine::resolve_trainable(ens, "m9.bogus", {}), ConfigError);
    auto all = engine::resolve_trainable(ens, "all", {});
    EXPECT_GT(all.size(), engine::resolve_trainable(ens, "heads_last", {}).size());
    auto custom = engine::resolve_trainable(ens, "m1.cnn.b0", {});
    for (const auto& v : custom) EXPECT_EQ(v->name.rfind("m1.cnn.b0", 0), 0u);
}

TEST(Engine, IncrEpochsZeroMatchesFrozenBaseline) {
    TempDir dir;
    io::RunConfig with_ft = micro_config();
    with_ft.train.incr_epochs = 0;  // fine-tune enabled but a no-op
    io::RunConfig no_ft = micro_config();
    no_ft.ablation.use_finetune = false;
    auto r1 = engine::run_protocol(with_ft, (dir.path / "noop").string());
    auto r2 = engine::run_protocol(no_ft, (dir.path / "frozen").string());
    ASSERT_EQ(r1.sessions.size(), r2.sessions.size());
    for (std::size_t i = 0; i < r1.sessions.size(); ++i) {
        EXPECT_DOUBLE_EQ(r1.sessions[i].accuracy, r2.sessions[i].accuracy);
        EXPECT_DOUBLE_EQ(r1.sessions[i].param_drift, 0.0);
    }
}

TEST(Engine, EvaluateSelfConsistencyOnZeroNoise) {
    // prototypes computed from the test features themselves, zero noise:
    // every query coincides with its class prototype, accuracy 1.0
    io::RunConfig cfg = micro_config();
    cfg.data.noise_std = 0.0;
    auto [stream, semantic] = engine::build_stream(cfg);
    engine::RunState st;
    st.semantic = semantic;
    st.base_classes = stream.sessions[0].class_set;
    st.ensemble.build(cfg.arch(), cfg.protocol.base_classes, 99, true);

    std::vector<data::Sample> all_test;
    std::vector<int> labels;
    for (int t = 0; t < stream.total_sessions(); ++t) {
        for (int c : stream.sessions[static_cast<std::size_t>(t)].class_set) {
            for (const auto& s : stream.test_pool.at(c)) {
                all_test.push_back(s);
                labels.push_back(s.label);
            }
        }
    }
    Tensor feats = engine::eval_features(st.ensemble, all_test, {}, cfg.train.batch_size);
    auto protos = proto::compute_prototypes(feats, labels, 0);
    for (auto& kv : protos) st.store.insert(kv.first, std::move(kv.second));
    auto ev = engine::evaluate_session(st, stream, stream.total_sessions() - 1, cfg);
    EXPECT_DOUBLE_EQ(ev.accuracy, 1.0);
}

TEST(Engine, RandomPrototypesScoreAtChanceLevel) {
    io::RunConfig cfg = micro_config();
    cfg.data.samples_per_class = 60;
    cfg.protocol.test_per_class = 40;
    auto [stream, semantic] = engine::build_stream(cfg);
    engine::RunState st;
    st.semantic = semantic;
    st.base_classes = stream.sessions[0].class_set;
    st.ensemble.build(cfg.arch(), cfg.protocol.base_classes, 123, true);
    Rng rng(17);
    const int d = st.ensemble.composed_dim({});
    for (int c : stream.seen_classes(stream.total_sessions() - 1)) {
        proto::ProtoEntry e;
        e.mean = Tensor({d});
        for (int j = 0; j < d; ++j) e.mean[j] = rng.normal();
        e.variance = Tensor({d});
        st.store.insert(c, std::move(e));
    }
    auto ev = engine::evaluate_session(st, stream, stream.total_sessions() - 1, cfg);
    const double p = 1.0 / 6.0;
    const double stderr3 = 3.0 * std::sqrt(p * (1.0 - p) / ev.n_test);
    EXPECT_NEAR(ev.accuracy, p, stderr3);
}

TEST(Engine, ResumeReplaysIdenticalMetrics) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    auto full = engine::run_protocol(cfg, (dir.path / "full").string());

    // simulate an interrupted run: copy, then drop everything past session 1
    fs::create_directories(dir.path / "resume");
    for (const auto& entry : fs::directory_iterator(dir.path / "full"))
        fs::copy(entry.path(), dir.path / "resume" / entry.path().filename());
    fs::remove(dir.path / "resume" / "ckpt_session_2");

    auto resumed = engine::run_protocol(cfg, (dir.path / "resume").string(), /*resume=*/true);
    ASSERT_EQ(resumed.sessions.size(), full.sessions.size());
    EXPECT_EQ(slurp(dir.path / "full" / "summary.json"), slurp(dir.path / "resume" / "summary.json"));

    // resume with a different config is rejected
    io::RunConfig other = cfg;
    other.protocol.seed = 1234;
    EXPECT_THROW(engine::run_protocol(other, (dir.path / "resume").string(), true), ConfigError);
}

TEST(Engine, AblationEmptyAxesEqualsRunProtocol) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    auto cells = engine::run_ablation(cfg, {}, (dir.path / "abl").string());
    ASSERT_EQ(cells.size(), 1u);
    auto direct = engine::run_protocol(cfg, (dir.path / "direct").string());
    ASSERT_EQ(cells[0].report.sessions.size(), direct.sessions.size());
    for (std::size_t i = 0; i < direct.sessions.size(); ++i)
        EXPECT_DOUBLE_EQ(cells[0].report.sessions[i].accuracy, direct.sessions[i].accuracy);
    EXPECT_TRUE(fs::exists(dir.path / "abl" / "ablation.json"));
}

TEST(Engine, AblationLambdaSweepSharesBaseAndControlsDrift) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    cfg.train.incr_epochs = 4;
    cfg.ablation.lambda_grid = {0.0, 1e6};
    auto cells = engine::run_ablation(cfg, {"lambda"}, (dir.path / "abl").string());
    ASSERT_EQ(cells.size(), 2u);
    // shared base: identical session-0 accuracy
    EXPECT_DOUBLE_EQ(cells[0].report.sessions[0].accuracy, cells[1].report.sessions[0].accuracy);
    double drift0 = 0.0, drift_inf = 0.0;
    for (const auto& s : cells[0].report.sessions) drift0 += s.param_drift;
    for (const auto& s : cells[1].report.sessions) drift_inf += s.param_drift;
    EXPECT_LT(drift_inf, drift0);
}

TEST(Engine, AblationUnknownAxisRejected) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    EXPECT_THROW(engine::run_ablation(cfg, {"learning_rate"}, (dir.path / "abl").string()), ConfigError);
}

TEST(Engine, TripletVariantSweepRuns) {
    TempDir dir;
    io::RunConfig cfg = micro_config();
    auto cells = engine::run_ablation(cfg, {"triplet_variant"}, (dir.path / "abl").string());
    ASSERT_EQ(cells.size(), 4u);
    std::set<std::string> names;
    for (const auto& c : cells) names.insert(c.name);
    EXPECT_TRUE(names.count("triplet_variant=tl"));
    EXPECT_TRUE(names.count("triplet_variant=psht"));
    // shared base checkpoint: all four cells start from the same session 0
    for (const auto& c : cells)
        EXPECT_DOUBLE_EQ(c.report.sessions[0].accuracy, cells[0].report.sessions[0].accuracy);
}

}  // namespace
