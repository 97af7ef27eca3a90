// mcnet command-line driver: prepare | run | ablate | eval | plot

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "mcnet/engine/protocol.hpp"
#include "mcnet/io/svg_plot.hpp"

namespace fs = std::filesystem;
using namespace mcnet;

namespace {

struct CommonOpts {
    std::string preset = "toy";
    std::string config_file;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool force = false;
    bool resume = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_out = true) {
    cmd->add_option("--preset", o.preset, "configuration preset: toy|cifar-like|mini-like|cub-like")
        ->default_val("toy");
    cmd->add_option("--config", o.config_file, "INI config overlaying the preset");
    cmd->add_option("--seed", o.seed, "override [protocol] seed")->each([&o](const std::string&) {
        o.seed_given = true;
    });
    if (with_out) cmd->add_option("--out", o.out, "output directory")->required();
    cmd->add_flag("--force", o.force, "overwrite existing outputs");
    cmd->add_flag("--resume", o.resume, "continue an interrupted run from its last checkpoint");
}

io::RunConfig resolve_config(const CommonOpts& o) {
    io::RunConfig cfg = io::preset_config(o.preset);
    if (!o.config_file.empty()) io::apply_config_file(cfg, o.config_file);
    if (o.seed_given) cfg.protocol.seed = o.seed;
    cfg.validate();
    return cfg;
}

void guard_output(const std::string& out, const std::string& marker, bool force, bool resume) {
    if (!force && !resume && fs::exists(fs::path(out) / marker)) {
        throw ConfigError("output directory " + out + " already contains " + marker +
                          "; use --force to overwrite or --resume to continue");
    }
}

void print_report(const engine::MetricsReport& r) {
    std::cout << "session  classes  accuracy  base-acc  drift\n";
    for (const auto& s : r.sessions) {
        std::cout << std::setw(7) << s.session << "  " << std::setw(7) << s.n_classes_seen << "  "
                  << std::fixed << std::setprecision(4) << std::setw(8) << s.accuracy << "  " << std::setw(8)
                  << s.accuracy_base << "  " << std::setprecision(6) << s.param_drift << "\n";
    }
    std::cout << "final accuracy: " << std::setprecision(4) << r.final_accuracy() << "\n";
}

// --- prepare ----------------------------------------------------------------

void write_dataset_blob(const std::string& path, const data::Dataset& ds) {
    nlohmann::json header;
    header["n"] = ds.samples.size();
    header["channels"] = ds.channels;
    header["height"] = ds.height;
    header["width"] = ds.width;
    nlohmann::json labels = nlohmann::json::array(), uids = nlohmann::json::array();
    for (const auto& s : ds.samples) {
        labels.push_back(s.label);
        uids.push_back(s.uid);
    }
    header["labels"] = labels;
    header["uids"] = uids;
    const std::string htxt = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("MCNETDS1", 8);
    const std::uint64_t hlen = htxt.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));
    for (const auto& s : ds.samples)
        out.write(reinterpret_cast<const char*>(s.image.data()),
                  static_cast<std::streamsize>(s.image.numel() * sizeof(double)));
    if (!out) throw IoError("short write on dataset blob: " + path);
}

int cmd_prepare(const CommonOpts& o) {
    io::RunConfig cfg = resolve_config(o);
    guard_output(o.out, "descriptor.json", o.force, o.resume);
    fs::create_directories(o.out);

    data::Dataset ds;
    data::SemanticTable sem;
    if (cfg.data.source == "synthetic") {
        auto pair = data::make_synthetic_dataset(cfg.synthetic_spec(), cfg.protocol.seed);
        ds = std::move(pair.first);
        sem = std::move(pair.second);
        write_dataset_blob(o.out + "/data.bin", ds);
    } else {
        data::LoadOptions opt;
        opt.image_size = cfg.data.image_size;
        opt.channels = cfg.data.channels;
        opt.semantic_file = cfg.data.semantic_file;
        opt.strict_semantic = cfg.data.strict_semantic;
        opt.semantic_dim = cfg.data.semantic_dim;
        opt.semantic_seed = cfg.protocol.seed;
        const std::string root = cfg.data.data_root.empty()
                                     ? fs::path(cfg.data.manifest).parent_path().string()
                                     : cfg.data.data_root;
        auto pair = data::load_image_dataset(root, cfg.data.manifest, opt);
        ds = std::move(pair.first);
        sem = std::move(pair.second);
    }
    data::SessionStream stream = data::build_session_stream(ds, sem, cfg.protocol, cfg.protocol.seed);
    data::validate_stream(stream);

    io::Sha1 hasher;
    for (const auto& s : ds.samples) {
        hasher.update(s.image.data(), static_cast<std::size_t>(s.image.numel()) * sizeof(double));
        hasher.update(&s.label, sizeof(s.label));
    }
    nlohmann::json desc;
    desc["schema"] = 1;
    desc["preset"] = cfg.preset_name;
    desc["config_hash"] = io::config_hash(cfg);
    desc["data_hash"] = hasher.hex_digest();
    desc["image_shape"] = {ds.channels, ds.height, ds.width};
    nlohmann::json sessions = nlohmann::json::array();
    for (const auto& s : stream.sessions) {
        sessions.push_back(nlohmann::json{{"session", s.session_index},
                                          {"classes", s.class_set},
                                          {"n_train", s.samples.size()},
                                          {"k_shot", s.k_shot}});
    }
    desc["sessions"] = sessions;
    nlohmann::json test_counts = nlohmann::json::object();
    for (const auto& kv : stream.test_pool) test_counts[std::to_string(kv.first)] = kv.second.size();
    desc["test_per_class"] = test_counts;
    std::ofstream out(o.out + "/descriptor.json", std::ios::trunc);
    out << desc.dump(2) << "\n";
    {
        std::ofstream echo(o.out + "/config.ini", std::ios::trunc);
        echo << io::resolved_config_text(cfg);
    }
    std::cout << "prepared " << stream.total_sessions() << " sessions, " << ds.samples.size()
              << " training images; descriptor written to " << o.out << "/descriptor.json\n";
    return 0;
}

// --- run / ablate -----------------------------------------------------------

int cmd_run(const CommonOpts& o) {
    io::RunConfig cfg = resolve_config(o);
    guard_output(o.out, "summary.json", o.force, o.resume);
    auto report = engine::run_protocol(cfg, o.out, o.resume);
    print_report(report);
    return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& axes_csv) {
    io::RunConfig cfg = resolve_config(o);
    guard_output(o.out, "ablation.json", o.force, o.resume);
    std::vector<std::string> axes;
    std::stringstream ss(axes_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = io::detail::trim(tok);
        if (!tok.empty()) axes.push_back(tok);
    }
    auto cells = engine::run_ablation(cfg, axes, o.out, o.resume);
    for (const auto& cell : cells) {
        std::cout << "== " << cell.name << " ==\n";
        print_report(cell.report);
    }
    return 0;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const CommonOpts& o, const std::string& ckpt) {
    io::RunConfig cfg = resolve_config(o);
    io::Checkpoint ck = io::load_checkpoint(ckpt);
    auto [stream, semantic] = engine::build_stream(cfg);
    if (ck.session_index >= stream.total_sessions())
        throw ConfigError("checkpoint session index exceeds the configured stream");
    engine::RunState st;
    st.ensemble = std::move(ck.ensemble);
    st.store = std::move(ck.store);
    st.semantic = std::move(semantic);
    st.base_classes = stream.sessions.at(0).class_set;
    io::RunConfig eval_cfg = cfg;
    eval_cfg.ablation.use_model2 = cfg.ablation.use_model2 && st.ensemble.has_model2;
    auto ev = engine::evaluate_session(st, stream, ck.session_index, eval_cfg);
    std::cout << "session " << ck.session_index << ": accuracy " << std::fixed << std::setprecision(4)
              << ev.accuracy << " over " << ev.n_test << " test samples (base-class accuracy "
              << ev.accuracy_base << ")\n";
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        nlohmann::json j{{"session", ck.session_index},
                         {"accuracy", ev.accuracy},
                         {"accuracy_base", ev.accuracy_base},
                         {"n_test", ev.n_test}};
        std::ofstream f(o.out + "/eval.json", std::ios::trunc);
        f << j.dump(2) << "\n";
    }
    return 0;
}

// --- plot -------------------------------------------------------------------

std::map<std::string, std::string> parse_echo(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line, section;
    while (std::getline(ss, line)) {
        line = io::detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[section + "." + io::detail::trim(line.substr(0, eq))] = io::detail::trim(line.substr(eq + 1));
    }
    return kv;
}

int cmd_plot(const std::vector<std::string>& run_dirs, const std::string& out) {
    if (run_dirs.empty()) throw ConfigError("plot: need at least one run directory");
    fs::create_directories(out);

    struct RunInfo {
        std::string dir, label;
        engine::MetricsReport report;
        std::map<std::string, std::string> cfg;
    };
    std::vector<RunInfo> runs;
    for (const auto& dir : run_dirs) {
        RunInfo info;
        info.dir = dir;
        info.report = engine::read_summary(dir);  // throws if missing
        std::ifstream f(dir + "/summary.json");
        nlohmann::json j = nlohmann::json::parse(f);
        info.cfg = parse_echo(j.value("config", ""));
        info.label = fs::path(dir).filename().string();
        runs.push_back(std::move(info));
    }

    // keys that differ across runs make better labels than directory names
    std::vector<std::string> diff_keys;
    if (runs.size() > 1) {
        for (const auto& kv : runs[0].cfg) {
            for (std::size_t i = 1; i < runs.size(); ++i) {
                auto it = runs[i].cfg.find(kv.first);
                if (it != runs[i].cfg.end() && it->second != kv.second) {
                    diff_keys.push_back(kv.first);
                    break;
                }
            }
        }
        if (!diff_keys.empty() && diff_keys.size() <= 2) {
            for (auto& r : runs) {
                std::string label;
                for (const auto& k : diff_keys) {
                    if (!label.empty()) label += " ";
                    std::string v = r.cfg.at(k);
                    if (k == "ablation.triplet_variant" || k == "ablation.regularizer")
                        std::transform(v.begin(), v.end(), v.begin(), ::toupper);
                    label += v;
                }
                r.label = label;
            }
        }
    }

    std::vector<io::PlotSeries> curves;
    for (const auto& r : runs) {
        io::PlotSeries s;
        s.label = r.label;
        for (const auto& m : r.report.sessions)
            s.points.push_back({static_cast<double>(m.session), m.accuracy});
        curves.push_back(std::move(s));
    }
    io::write_line_chart(out + "/accuracy_curves.svg", "Top-1 accuracy per session", "session",
                         "accuracy", curves);
    std::cout << "wrote " << out << "/accuracy_curves.svg\n";

    if (runs.size() > 1) {
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& r : runs) bars.push_back({r.label, r.report.final_accuracy()});
        io::write_bar_chart(out + "/final_accuracy_bars.svg", "Final-session accuracy", "accuracy", bars);
        std::cout << "wrote " << out << "/final_accuracy_bars.svg\n";
    }

    // coefficient sweeps: exactly one numeric differing key from [loss]
    if (diff_keys.size() == 1 && (diff_keys[0] == "loss.alpha" || diff_keys[0] == "loss.lambda")) {
        const std::string key = diff_keys[0];
        io::PlotSeries s;
        s.label = "final accuracy";
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : runs) pts.push_back({std::stod(r.cfg.at(key)), r.report.final_accuracy()});
        std::sort(pts.begin(), pts.end());
        s.points = pts;
        const std::string name = key == "loss.alpha" ? "alpha_sweep.svg" : "lambda_sweep.svg";
        io::write_line_chart(out + "/" + name, "Final accuracy vs " + key, key, "accuracy", {s});
        std::cout << "wrote " << out << "/" << name << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memorizing-complementation ensemble for few-shot class-incremental learning"};
    app.require_subcommand(1);

    CommonOpts prep_o, run_o, abl_o, eval_o;
    std::string axes_csv, ckpt_path_arg;
    std::vector<std::string> plot_dirs;
    std::string plot_out;

    CLI::App* prep = app.add_subcommand("prepare", "materialize a dataset and its session stream");
    add_common(prep, prep_o);

    CLI::App* run = app.add_subcommand("run", "run the full session protocol");
    add_common(run, run_o);

    CLI::App* abl = app.add_subcommand("ablate", "Cartesian ablation sweep");
    add_common(abl, abl_o);
    abl->add_option("--axes", axes_csv,
                    "comma list: use_model2,use_attention_head,use_ar,use_finetune,triplet_variant,"
                    "regularizer,alpha,lambda");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on its session");
    add_common(ev, eval_o, /*with_out=*/false);
    ev->add_option("--out", eval_o.out, "optional directory for eval.json");
    ev->add_option("--ckpt", ckpt_path_arg, "checkpoint file (ckpt_session_<t>)")->required();

    CLI::App* plot = app.add_subcommand("plot", "emit SVG figures from run directories");
    plot->add_option("dirs", plot_dirs, "run directories with summary.json")->required();
    plot->add_option("--out", plot_out, "output directory for figures")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) return cmd_prepare(prep_o);
        if (run->parsed()) return cmd_run(run_o);
        if (abl->parsed()) return cmd_ablate(abl_o, axes_csv);
        if (ev->parsed()) return cmd_eval(eval_o, ckpt_path_arg);
        if (plot->parsed()) return cmd_plot(plot_dirs, plot_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
