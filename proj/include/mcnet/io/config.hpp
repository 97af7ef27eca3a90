#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/core/errors.hpp"
#include "mcnet/data/dataset.hpp"
#include "mcnet/data/session.hpp"
#include "mcnet/io/hash.hpp"
#include "mcnet/losses/losses.hpp"
#include "mcnet/nets/model.hpp"

namespace mcnet::io {

enum class TripletVariant { TL, HTL, PHT, PSHT };
enum class Regularizer { None, Cos, CE, AR };

struct DataSection {
    std::string source = "synthetic";  // synthetic | manifest
    int n_classes = 20;
    int image_size = 12;
    int channels = 1;
    int samples_per_class = 70;
    double noise_std = 0.25;
    int semantic_dim = 64;
    std::string manifest;
    std::string data_root;
    std::string semantic_file;
    bool strict_semantic = false;
    bool augment = true;  // real images, base session only
};

struct ModelSection {
    int stem_channels = 8;
    std::vector<int> backbone_channels = {16, 16};
    std::vector<int> backbone_strides = {2, 2};
    int cnn_head_blocks = 1;
    int att_head_blocks = 2;
    int att_heads = 4;
    bool absolute_pos_encoding = false;
    int semantic_hidden = 32;
};

struct TrainSection {
    double base_lr = 0.05;
    double incr_lr = 0.001;
    int batch_size = 64;
    int base_epochs = 60;
    int incr_epochs = 30;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double clip_norm = 5.0;
    int pseudo_per_class = 0;  // 0 -> use k_shot
    std::string trainable_blocks = "heads_last";
    bool variance_shrinkage = false;
};

struct AblationSection {
    bool use_model2 = true;
    bool use_attention_head = true;
    bool use_ar = true;
    bool use_finetune = true;
    TripletVariant triplet_variant = TripletVariant::PSHT;
    Regularizer regularizer = Regularizer::AR;
    std::vector<double> alpha_grid;
    std::vector<double> lambda_grid;
};

struct RunConfig {
    std::string preset_name = "toy";
    DataSection data;
    data::ProtocolConfig protocol;
    ModelSection model;
    losses::LossConfig loss;
    TrainSection train;
    AblationSection ablation;

    // The regularizer actually applied during base training: use_ar only
    // gates the AR choice; Cos/CE are explicit comparison variants.
    Regularizer effective_regularizer() const {
        if (ablation.regularizer == Regularizer::AR) return ablation.use_ar ? Regularizer::AR : Regularizer::None;
        return ablation.regularizer;
    }

    nets::ArchConfig arch() const {
        nets::ArchConfig a;
        a.in_channels = data.channels;
        a.image_size = data.image_size;
        a.stem_channels = model.stem_channels;
        a.backbone_channels = model.backbone_channels;
        a.backbone_strides = model.backbone_strides;
        a.cnn_head_blocks = model.cnn_head_blocks;
        a.att_head_blocks = model.att_head_blocks;
        a.att_heads = model.att_heads;
        a.absolute_pos_encoding = model.absolute_pos_encoding;
        a.semantic_dim = data.semantic_dim;
        a.semantic_hidden = model.semantic_hidden;
        return a;
    }

    data::SyntheticSpec synthetic_spec() const {
        data::SyntheticSpec s;
        s.n_classes = data.n_classes;
        s.image_size = data.image_size;
        s.channels = data.channels;
        s.samples_per_class = data.samples_per_class;
        s.noise_std = data.noise_std;
        s.semantic_dim = data.semantic_dim;
        return s;
    }

    void validate() const {
        if (data.source != "synthetic" && data.source != "manifest")
            throw ConfigError("config: data.source must be 'synthetic' or 'manifest'");
        if (data.source == "manifest" && data.manifest.empty())
            throw ConfigError("config: data.source=manifest requires data.manifest");
        if (train.base_lr <= 0.0 || train.incr_lr <= 0.0)
            throw ConfigError("config: learning rates must be > 0");
        if (train.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (train.base_epochs < 0 || train.incr_epochs < 0)
            throw ConfigError("config: epoch counts must be >= 0");
        if (train.momentum < 0.0 || train.momentum >= 1.0)
            throw ConfigError("config: momentum must lie in [0, 1)");
        if (train.weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
        if (train.clip_norm < 0.0) throw ConfigError("config: clip_norm must be >= 0 (0 disables)");
        if (train.pseudo_per_class < 0) throw ConfigError("config: pseudo_per_class must be >= 0");
        if (ablation.use_ar && !ablation.use_model2 && ablation.regularizer == Regularizer::AR)
            throw ConfigError("config: attention regularization needs use_model2=true");
        loss.validate();
        arch().validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

inline int parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(r);
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
    }
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad real for " + key + ": '" + v + "'");
    }
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(parse_int(tok, key));
    }
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

inline std::vector<double> parse_real_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(parse_real(tok, key));
    }
    return out;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

inline std::string join_reals(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += fmt_double(v[i]);
    }
    return out;
}

}  // namespace detail

inline std::string to_string(TripletVariant v) {
    switch (v) {
        case TripletVariant::TL: return "tl";
        case TripletVariant::HTL: return "htl";
        case TripletVariant::PHT: return "pht";
        case TripletVariant::PSHT: return "psht";
    }
    return "psht";
}

inline TripletVariant triplet_from_string(const std::string& s) {
    if (s == "tl") return TripletVariant::TL;
    if (s == "htl") return TripletVariant::HTL;
    if (s == "pht") return TripletVariant::PHT;
    if (s == "psht") return TripletVariant::PSHT;
    throw ConfigError("config: unknown triplet_variant '" + s + "' (tl|htl|pht|psht)");
}

inline std::string to_string(Regularizer r) {
    switch (r) {
        case Regularizer::None: return "none";
        case Regularizer::Cos: return "cos";
        case Regularizer::CE: return "ce";
        case Regularizer::AR: return "ar";
    }
    return "ar";
}

inline Regularizer regularizer_from_string(const std::string& s) {
    if (s == "none") return Regularizer::None;
    if (s == "cos") return Regularizer::Cos;
    if (s == "ce") return Regularizer::CE;
    if (s == "ar") return Regularizer::AR;
    throw ConfigError("config: unknown regularizer '" + s + "' (none|cos|ce|ar)");
}

// Baked-in presets; a config file overlays individual keys on top.
inline RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset_name = name;
    if (name == "toy") {
        return c;  // the defaults above are the toy preset
    }
    if (name == "cifar-like" || name == "mini-like") {
        c.data.n_classes = 100;
        c.data.samples_per_class = 60;
        c.data.noise_std = 0.25;
        c.protocol.base_classes = 60;
        c.protocol.n_way = 5;
        c.protocol.k_shot = 5;
        c.protocol.n_sessions = 8;
        c.protocol.test_per_class = 8;
        c.loss.lambda = (name == "cifar-like") ? 16.0 : 8.0;
        c.train.base_lr = 0.05;
        c.train.base_epochs = 30;
        return c;
    }
    if (name == "cub-like") {
        c.data.n_classes = 200;
        c.data.samples_per_class = 60;
        c.data.noise_std = 0.25;
        c.protocol.base_classes = 100;
        c.protocol.n_way = 10;
        c.protocol.k_shot = 5;
        c.protocol.n_sessions = 10;
        c.protocol.test_per_class = 8;
        c.loss.lambda = 0.5;
        c.train.base_lr = 0.01;
        c.train.incr_lr = 1e-4;
        c.train.base_epochs = 30;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (toy|cifar-like|mini-like|cub-like)");
}

// Applies "key = value" INI lines onto cfg. Unknown sections or keys are
// rejected so typos cannot silently fall back to defaults.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(path + ":" + std::to_string(lineno) + ": bad section header");
            section = s.substr(1, s.size() - 2);
            static const std::set<std::string> known{"data", "protocol", "model", "loss", "train", "ablation"};
            if (!known.count(section))
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(s.substr(0, eq));
        const std::string val = detail::trim(s.substr(eq + 1));
        const std::string qual = section + "." + key;
        using namespace detail;
        if (section == "data") {
            if (key == "source") cfg.data.source = val;
            else if (key == "n_classes") cfg.data.n_classes = parse_int(val, qual);
            else if (key == "image_size") cfg.data.image_size = parse_int(val, qual);
            else if (key == "channels") cfg.data.channels = parse_int(val, qual);
            else if (key == "samples_per_class") cfg.data.samples_per_class = parse_int(val, qual);
            else if (key == "noise_std") cfg.data.noise_std = parse_real(val, qual);
            else if (key == "semantic_dim") cfg.data.semantic_dim = parse_int(val, qual);
            else if (key == "manifest") cfg.data.manifest = val;
            else if (key == "data_root") cfg.data.data_root = val;
            else if (key == "semantic_file") cfg.data.semantic_file = val;
            else if (key == "strict_semantic") cfg.data.strict_semantic = parse_bool(val, qual);
            else if (key == "augment") cfg.data.augment = parse_bool(val, qual);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + qual);
        } else if (section == "protocol") {
            if (key == "base_classes") cfg.protocol.base_classes = parse_int(val, qual);
            else if (key == "n_way") cfg.protocol.n_way = parse_int(val, qual);
            else if (key == "k_shot") cfg.protocol.k_shot = parse_int(val, qual);
            else if (key == "n_sessions") cfg.protocol.n_sessions = parse_int(val, qual);
            else if (key == "test_per_class") cfg.protocol.test_per_class = parse_int(val, qual);
            else if (key == "seed") cfg.protocol.seed = parse_u64(val, qual);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + qual);
        } else if (section == "model") {
            if (key == "stem_channels") cfg.model.stem_channels = parse_int(val, qual);
            else if (key == "backbone_channels") cfg.model.backbone_channels = parse_int_list(val, qual);
            else if (key == "backbone_strides") cfg.model.backbone_strides = parse_int_list(val, qual);
            else if (key == "cnn_head_blocks") cfg.model.cnn_head_blocks = parse_int(val, qual);
            else if (key == "att_head_blocks") cfg.model.att_head_blocks = parse_int(val, qual);
            else if (key == "att_heads") cfg.model.att_heads = parse_int(val, qual);
            else if (key == "absolute_pos_encoding") cfg.model.absolute_pos_encoding = parse_bool(val, qual);
            else if (key == "semantic_hidden") cfg.model.semantic_hidden = parse_int(val, qual);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + qual);
        } else if (section == "loss") {
            if (key == "alpha") cfg.loss.alpha = parse_real(val, qual);
            else if (key == "lambda") cfg.loss.lambda = parse_real(val, qual);
            else if (key == "tau") cfg.loss.tau = parse_real(val, qual);
            else if (key == "margin") cfg.loss.margin = parse_real(val, qual);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + qual);
        } else if (section == "train") {
            if (key == "base_lr") cfg.train.base_lr = parse_real(val, qual);
            else if (key == "incr_lr") cfg.train.incr_lr = parse_real(val, qual);
            else if (key == "batch_size") cfg.train.batch_size = parse_int(val, qual);
            else if (key == "base_epochs") cfg.train.base_epochs = parse_int(val, qual);
            else if (key == "incr_epochs") cfg.train.incr_epochs = parse_int(val, qual);
            else if (key == "momentum") cfg.train.momentum = parse_real(val, qual);
            else if (key == "weight_decay") cfg.train.weight_decay = parse_real(val, qual);
            else if (key == "clip_norm") cfg.train.clip_norm = parse_real(val, qual);
            else if (key == "pseudo_per_class") cfg.train.pseudo_per_class = parse_int(val, qual);
            else if (key == "trainable_blocks") cfg.train.trainable_blocks = val;
            else if (key == "variance_shrinkage") cfg.train.variance_shrinkage = parse_bool(val, qual);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + qual);
        } else if (section == "ablation") {
            if (key == "use_model2") cfg.ablation.use_model2 = parse_bool(val, qual);
            else if (key == "use_attention_head") cfg.ablation.use_attention_head = parse_bool(val, qual);
            else if (key == "use_ar") cfg.ablation.use_ar = parse_bool(val, qual);
            else if (key == "use_finetune") cfg.ablation.use_finetune = parse_bool(val, qual);
            else if (key == "triplet_variant") cfg.ablation.triplet_variant = triplet_from_string(val);
            else if (key == "regularizer") cfg.ablation.regularizer = regularizer_from_string(val);
            else if (key == "alpha_grid") cfg.ablation.alpha_grid = parse_real_list(val, qual);
            else if (key == "lambda_grid") cfg.ablation.lambda_grid = parse_real_list(val, qual);
            else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key " + qual);
        }
    }
}

// Canonical text form: every key in a fixed order. This is what gets echoed
// into the run directory and hashed for the config_hash, so formatting here
// is part of the reproducibility contract.
inline std::string resolved_config_text(const RunConfig& c) {
    using detail::fmt_double;
    using detail::join_ints;
    using detail::join_reals;
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "# resolved mcnet configuration (preset: " << c.preset_name << ")\n";
    os << "[data]\n";
    os << "source = " << c.data.source << "\n";
    os << "n_classes = " << c.data.n_classes << "\n";
    os << "image_size = " << c.data.image_size << "\n";
    os << "channels = " << c.data.channels << "\n";
    os << "samples_per_class = " << c.data.samples_per_class << "\n";
    os << "noise_std = " << fmt_double(c.data.noise_std) << "\n";
    os << "semantic_dim = " << c.data.semantic_dim << "\n";
    os << "manifest = " << c.data.manifest << "\n";
    os << "data_root = " << c.data.data_root << "\n";
    os << "semantic_file = " << c.data.semantic_file << "\n";
    os << "strict_semantic = " << b(c.data.strict_semantic) << "\n";
    os << "augment = " << b(c.data.augment) << "\n";
    os << "[protocol]\n";
    os << "base_classes = " << c.protocol.base_classes << "\n";
    os << "n_way = " << c.protocol.n_way << "\n";
    os << "k_shot = " << c.protocol.k_shot << "\n";
    os << "n_sessions = " << c.protocol.n_sessions << "\n";
    os << "test_per_class = " << c.protocol.test_per_class << "\n";
    os << "seed = " << c.protocol.seed << "\n";
    os << "[model]\n";
    os << "stem_channels = " << c.model.stem_channels << "\n";
    os << "backbone_channels = " << join_ints(c.model.backbone_channels) << "\n";
    os << "backbone_strides = " << join_ints(c.model.backbone_strides) << "\n";
    os << "cnn_head_blocks = " << c.model.cnn_head_blocks << "\n";
    os << "att_head_blocks = " << c.model.att_head_blocks << "\n";
    os << "att_heads = " << c.model.att_heads << "\n";
    os << "absolute_pos_encoding = " << b(c.model.absolute_pos_encoding) << "\n";
    os << "semantic_hidden = " << c.model.semantic_hidden << "\n";
    os << "[loss]\n";
    os << "alpha = " << fmt_double(c.loss.alpha) << "\n";
    os << "lambda = " << fmt_double(c.loss.lambda) << "\n";
    os << "tau = " << fmt_double(c.loss.tau) << "\n";
    os << "margin = " << fmt_double(c.loss.margin) << "\n";
    os << "[train]\n";
    os << "base_lr = " << fmt_double(c.train.base_lr) << "\n";
    os << "incr_lr = " << fmt_double(c.train.incr_lr) << "\n";
    os << "batch_size = " << c.train.batch_size << "\n";
    os << "base_epochs = " << c.train.base_epochs << "\n";
    os << "incr_epochs = " << c.train.incr_epochs << "\n";
    os << "momentum = " << fmt_double(c.train.momentum) << "\n";
    os << "weight_decay = " << fmt_double(c.train.weight_decay) << "\n";
    os << "clip_norm = " << fmt_double(c.train.clip_norm) << "\n";
    os << "pseudo_per_class = " << c.train.pseudo_per_class << "\n";
    os << "trainable_blocks = " << c.train.trainable_blocks << "\n";
    os << "variance_shrinkage = " << b(c.train.variance_shrinkage) << "\n";
    os << "[ablation]\n";
    os << "use_model2 = " << b(c.ablation.use_model2) << "\n";
    os << "use_attention_head = " << b(c.ablation.use_attention_head) << "\n";
    os << "use_ar = " << b(c.ablation.use_ar) << "\n";
    os << "use_finetune = " << b(c.ablation.use_finetune) << "\n";
    os << "triplet_variant = " << to_string(c.ablation.triplet_variant) << "\n";
    os << "regularizer = " << to_string(c.ablation.regularizer) << "\n";
    os << "alpha_grid = " << join_reals(c.ablation.alpha_grid) << "\n";
    os << "lambda_grid = " << join_reals(c.ablation.lambda_grid) << "\n";
    return os.str();
}

inline std::string config_hash(const RunConfig& c) { return sha1_hex(resolved_config_text(c)); }

}  // namespace mcnet::io
