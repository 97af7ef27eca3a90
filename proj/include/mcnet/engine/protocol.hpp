#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>

#include "mcnet/data/manifest.hpp"
#include "mcnet/engine/trainer.hpp"
#include "mcnet/io/checkpoint.hpp"

namespace mcnet::engine {

inline std::string ckpt_path(const std::string& out_dir, int session) {
    return out_dir + "/ckpt_session_" + std::to_string(session);
}

// Materializes the configured dataset and its session stream.
inline std::pair<data::SessionStream, data::SemanticTable> build_stream(const io::RunConfig& cfg) {
    data::Dataset ds;
    data::SemanticTable sem;
    if (cfg.data.source == "synthetic") {
        auto pair = data::make_synthetic_dataset(cfg.synthetic_spec(), cfg.protocol.seed);
        ds = std::move(pair.first);
        sem = std::move(pair.second);
    } else {
        data::LoadOptions opt;
        opt.image_size = cfg.data.image_size;
        opt.channels = cfg.data.channels;
        opt.semantic_file = cfg.data.semantic_file;
        opt.strict_semantic = cfg.data.strict_semantic;
        opt.semantic_dim = cfg.data.semantic_dim;
        opt.semantic_seed = cfg.protocol.seed;
        const std::string root = cfg.data.data_root.empty()
                                     ? std::filesystem::path(cfg.data.manifest).parent_path().string()
                                     : cfg.data.data_root;
        auto pair = data::load_image_dataset(root, cfg.data.manifest, opt);
        ds = std::move(pair.first);
        sem = std::move(pair.second);
    }
    data::SessionStream stream = data::build_session_stream(ds, sem, cfg.protocol, cfg.protocol.seed);
    data::validate_stream(stream);
    return {std::move(stream), std::move(sem)};
}

// Full FSCIL protocol: base training, then per-session fine-tune, store
// update, and joint evaluation. Everything after (config, seed) is
// deterministic; checkpoints land in out_dir as ckpt_session_<t>.
// shared_base_ckpt, when set, replaces base training with a checkpoint load
// (used by ablation sweeps whose axes only affect incremental sessions).
inline MetricsReport run_protocol(const io::RunConfig& cfg, const std::string& out_dir, bool resume = false,
                                  const std::string& shared_base_ckpt = "") {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::string hash = io::config_hash(cfg);
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream echo(out_dir + "/config.ini", std::ios::trunc);
        echo << io::resolved_config_text(cfg);
    }

    auto [stream, semantic] = build_stream(cfg);
    const int total_sessions = stream.total_sessions();

    MetricsReport report;
    report.seed = cfg.protocol.seed;
    report.preset = cfg.preset_name;
    report.config_hash = hash;

    RunState st;
    st.semantic = std::move(semantic);
    st.base_classes = stream.sessions.at(0).class_set;

    int next_session = 0;
    if (resume && std::filesystem::exists(out_dir + "/summary.json")) {
        MetricsReport prior = read_summary(out_dir);
        if (prior.config_hash != hash)
            throw ConfigError("resume: existing run in " + out_dir + " was produced by a different config");
        // resume after the last session whose checkpoint exists
        int last = -1;
        for (const auto& s : prior.sessions)
            if (std::filesystem::exists(ckpt_path(out_dir, s.session))) last = s.session;
        if (last >= 0) {
            io::Checkpoint ck = io::load_checkpoint(ckpt_path(out_dir, last));
            st.ensemble = std::move(ck.ensemble);
            st.store = std::move(ck.store);
            for (const auto& s : prior.sessions)
                if (s.session <= last) report.sessions.push_back(s);
            next_session = last + 1;
        }
    }

    MetricsWriter writer(out_dir, /*append=*/next_session > 0);

    if (next_session == 0) {
        if (!shared_base_ckpt.empty()) {
            io::Checkpoint ck = io::load_checkpoint(shared_base_ckpt);
            if (ck.session_index != 0)
                throw ConfigError("shared base checkpoint is not a session-0 checkpoint");
            st.ensemble = std::move(ck.ensemble);
            st.store = std::move(ck.store);
        } else {
            st.ensemble.build(cfg.arch(), cfg.protocol.base_classes, derive_seed(cfg.protocol.seed, "init"),
                              cfg.ablation.use_model2);
            train_base(st, stream, cfg, &writer);
        }
        EvalResult ev = evaluate_session(st, stream, 0, cfg);
        report.sessions.push_back({0, static_cast<int>(stream.seen_classes(0).size()), ev.accuracy,
                                   ev.accuracy_base, 0.0});
        io::save_checkpoint(ckpt_path(out_dir, 0), st.ensemble, st.store, 0, cfg.protocol.base_classes);
        writer.write_summary(report, cfg);
        next_session = 1;
    }

    for (int t = next_session; t < total_sessions; ++t) {
        double drift = 0.0;
        if (cfg.ablation.use_finetune && cfg.train.incr_epochs > 0) {
            drift = finetune_incremental(st, stream, t, cfg, &writer);
        } else {
            add_session_prototypes(st, stream.sessions.at(static_cast<std::size_t>(t)), cfg);
        }
        EvalResult ev = evaluate_session(st, stream, t, cfg);
        report.sessions.push_back({t, static_cast<int>(stream.seen_classes(t).size()), ev.accuracy,
                                   ev.accuracy_base, drift});
        io::save_checkpoint(ckpt_path(out_dir, t), st.ensemble, st.store, t, cfg.protocol.base_classes);
        writer.write_summary(report, cfg);
    }

    const auto t1 = std::chrono::steady_clock::now();
    writer.write_timing(std::chrono::duration<double>(t1 - t0).count());
    return report;
}

// ---------------------------------------------------------------------------
// ablation sweeps
// ---------------------------------------------------------------------------

struct AblationCell {
    std::string name;
    io::RunConfig config;
    MetricsReport report;
};

namespace detail_abl {

struct AxisValue {
    std::string text;
    std::function<void(io::RunConfig&)> apply;
};

inline std::vector<AxisValue> axis_values(const io::RunConfig& base, const std::string& axis) {
    std::vector<AxisValue> out;
    auto flag = [&](bool io::AblationSection::*member) {
        for (bool v : {true, false})
            out.push_back({v ? "true" : "false", [member, v](io::RunConfig& c) { c.ablation.*member = v; }});
    };
    if (axis == "use_model2") {
        flag(&io::AblationSection::use_model2);
    } else if (axis == "use_attention_head") {
        flag(&io::AblationSection::use_attention_head);
    } else if (axis == "use_ar") {
        flag(&io::AblationSection::use_ar);
    } else if (axis == "use_finetune") {
        flag(&io::AblationSection::use_finetune);
    } else if (axis == "triplet_variant") {
        for (auto v : {io::TripletVariant::TL, io::TripletVariant::HTL, io::TripletVariant::PHT,
                       io::TripletVariant::PSHT})
            out.push_back({io::to_string(v), [v](io::RunConfig& c) { c.ablation.triplet_variant = v; }});
    } else if (axis == "regularizer") {
        for (auto v : {io::Regularizer::None, io::Regularizer::Cos, io::Regularizer::CE, io::Regularizer::AR})
            out.push_back({io::to_string(v), [v](io::RunConfig& c) { c.ablation.regularizer = v; }});
    } else if (axis == "alpha") {
        if (base.ablation.alpha_grid.empty())
            throw ConfigError("ablation axis 'alpha' needs ablation.alpha_grid in the config");
        for (double v : base.ablation.alpha_grid)
            out.push_back({io::detail::fmt_double(v), [v](io::RunConfig& c) { c.loss.alpha = v; }});
    } else if (axis == "lambda") {
        if (base.ablation.lambda_grid.empty())
            throw ConfigError("ablation axis 'lambda' needs ablation.lambda_grid in the config");
        for (double v : base.ablation.lambda_grid)
            out.push_back({io::detail::fmt_double(v), [v](io::RunConfig& c) { c.loss.lambda = v; }});
    } else {
        throw ConfigError("unknown ablation axis '" + axis +
                          "' (use_model2|use_attention_head|use_ar|use_finetune|triplet_variant|"
                          "regularizer|alpha|lambda)");
    }
    return out;
}

}  // namespace detail_abl

// Cartesian sweep over the requested axes with shared seeds. When every axis
// only affects incremental sessions, the base checkpoint of the first cell is
// reused by the rest.
inline std::vector<AblationCell> run_ablation(const io::RunConfig& base, const std::vector<std::string>& axes,
                                              const std::string& out_root, bool resume = false) {
    std::filesystem::create_directories(out_root);
    std::vector<AblationCell> cells;
    if (axes.empty()) {
        AblationCell cell;
        cell.name = "all_defaults";
        cell.config = base;
        cells.push_back(std::move(cell));
    } else {
        std::vector<std::vector<detail_abl::AxisValue>> grids;
        for (const auto& axis : axes) grids.push_back(detail_abl::axis_values(base, axis));
        std::vector<std::size_t> cursor(grids.size(), 0);
        while (true) {
            AblationCell cell;
            cell.config = base;
            for (std::size_t i = 0; i < grids.size(); ++i) {
                const auto& av = grids[i][cursor[i]];
                av.apply(cell.config);
                if (!cell.name.empty()) cell.name += "__";
                cell.name += axes[i] + "=" + av.text;
            }
            cells.push_back(std::move(cell));
            std::size_t k = 0;
            while (k < grids.size()) {
                if (++cursor[k] < grids[k].size()) break;
                cursor[k] = 0;
                ++k;
            }
            if (k == grids.size()) break;
        }
    }

    static const std::set<std::string> incremental_only{"triplet_variant", "lambda", "use_finetune"};
    bool share_base = !axes.empty();
    for (const auto& a : axes) share_base = share_base && incremental_only.count(a) > 0;

    std::string base_ckpt;
    for (auto& cell : cells) {
        const std::string dir = out_root + "/" + cell.name;
        cell.report = run_protocol(cell.config, dir, resume, base_ckpt);
        if (share_base && base_ckpt.empty()) base_ckpt = ckpt_path(dir, 0);
    }

    // index of the sweep for downstream plotting
    nlohmann::json idx = nlohmann::json::array();
    for (const auto& cell : cells) {
        nlohmann::json cj{{"name", cell.name}, {"dir", out_root + "/" + cell.name}};
        nlohmann::json accs = nlohmann::json::array();
        for (const auto& s : cell.report.sessions) accs.push_back(s.accuracy);
        cj["accuracies"] = accs;
        idx.push_back(cj);
    }
    std::ofstream out(out_root + "/ablation.json", std::ios::trunc);
    out << idx.dump(2) << "\n";
    return cells;
}

}  // namespace mcnet::engine
