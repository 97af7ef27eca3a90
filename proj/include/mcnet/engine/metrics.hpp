#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcnet/core/errors.hpp"
#include "mcnet/io/config.hpp"

namespace mcnet::engine {

struct SessionMetrics {
    int session = 0;
    int n_classes_seen = 0;
    double accuracy = 0.0;       // micro top-1 over classes of sessions 0..t
    double accuracy_base = 0.0;  // same predictions restricted to base classes
    double param_drift = 0.0;    // ||theta_end - theta_start|| over tuned params
};

struct MetricsReport {
    std::uint64_t seed = 0;
    std::string preset;
    std::string config_hash;
    std::vector<SessionMetrics> sessions;

    double final_accuracy() const {
        if (sessions.empty()) throw ProtocolError("metrics: no sessions recorded");
        return sessions.back().accuracy;
    }
};

// Append-only JSON-lines step log plus a deterministic summary JSON. Wall
// times go to a separate timing file so two identical runs produce
// byte-identical summaries.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& run_dir, bool append = false) : dir_(run_dir) {
        std::filesystem::create_directories(dir_);
        steps_.open(dir_ + "/metrics.jsonl", append ? std::ios::app : std::ios::trunc);
        if (!steps_) throw IoError("cannot open metrics log in " + run_dir);
    }

    void log_step(const nlohmann::json& record) {
        steps_ << record.dump() << "\n";
        steps_.flush();
    }

    void write_summary(const MetricsReport& report, const io::RunConfig& cfg) const {
        nlohmann::json j;
        j["schema"] = 1;
        j["preset"] = report.preset;
        j["seed"] = report.seed;
        j["config_hash"] = report.config_hash;
        j["config"] = io::resolved_config_text(cfg);
        nlohmann::json sess = nlohmann::json::array();
        for (const auto& s : report.sessions) {
            sess.push_back(nlohmann::json{{"session", s.session},
                                          {"n_classes_seen", s.n_classes_seen},
                                          {"accuracy", s.accuracy},
                                          {"accuracy_base", s.accuracy_base},
                                          {"param_drift", s.param_drift}});
        }
        j["sessions"] = sess;
        if (!report.sessions.empty()) j["final_accuracy"] = report.sessions.back().accuracy;
        std::ofstream out(dir_ + "/summary.json", std::ios::trunc);
        if (!out) throw IoError("cannot write summary in " + dir_);
        out << j.dump(2) << "\n";
    }

    void write_timing(double wall_seconds) const {
        nlohmann::json j{{"wall_time_seconds", wall_seconds}};
        std::ofstream out(dir_ + "/timing.json", std::ios::trunc);
        out << j.dump(2) << "\n";
    }

    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    std::ofstream steps_;
};

inline MetricsReport read_summary(const std::string& run_dir) {
    std::ifstream in(run_dir + "/summary.json");
    if (!in) throw IoError("no summary.json in " + run_dir);
    nlohmann::json j = nlohmann::json::parse(in);
    MetricsReport r;
    r.preset = j.value("preset", "");
    r.seed = j.value("seed", 0ull);
    r.config_hash = j.value("config_hash", "");
    for (const auto& s : j.at("sessions")) {
        SessionMetrics m;
        m.session = s.at("session").get<int>();
        m.n_classes_seen = s.at("n_classes_seen").get<int>();
        m.accuracy = s.at("accuracy").get<double>();
        m.accuracy_base = s.at("accuracy_base").get<double>();
        m.param_drift = s.at("param_drift").get<double>();
        r.sessions.push_back(m);
    }
    return r;
}

}  // namespace mcnet::engine
