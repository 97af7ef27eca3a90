#pragma once

#include <algorithm>
#include <set>
#include <sstream>

#include "mcnet/data/dataset.hpp"

namespace mcnet::data {

struct ProtocolConfig {
    int base_classes = 10;
    int n_way = 2;
    int k_shot = 5;
    int n_sessions = 5;  // incremental sessions; total sessions = n_sessions + 1
    int test_per_class = 20;
    std::uint64_t seed = 0;
};

struct SessionData {
    int session_index = 0;
    std::vector<Sample> samples;
    std::vector<int> class_set;  // sorted
    int n_way = 0;
    int k_shot = 0;
};

struct SessionStream {
    std::vector<SessionData> sessions;
    std::map<int, std::vector<Sample>> test_pool;
    int channels = 0, height = 0, width = 0;

    int total_sessions() const { return static_cast<int>(sessions.size()); }

    // classes of sessions 0..t, sorted
    std::vector<int> seen_classes(int t) const {
        std::vector<int> out;
        for (int i = 0; i <= t && i < total_sessions(); ++i)
            out.insert(out.end(), sessions[static_cast<std::size_t>(i)].class_set.begin(),
                       sessions[static_cast<std::size_t>(i)].class_set.end());
        std::sort(out.begin(), out.end());
        return out;
    }
};

// Deterministic split of a dataset into the FSCIL session protocol: one
// abundant base session followed by n_sessions N-way-K-shot sessions, plus a
// held-out per-class test pool.
inline SessionStream build_session_stream(const Dataset& ds, const SemanticTable& semantic,
                                          const ProtocolConfig& pc, std::uint64_t seed) {
    if (pc.base_classes < 1 || pc.n_way < 1 || pc.k_shot < 1 || pc.n_sessions < 0 || pc.test_per_class < 1)
        throw ConfigError("protocol: all counts must be positive");
    std::vector<int> classes = ds.class_ids();
    const int need = pc.base_classes + pc.n_way * pc.n_sessions;
    if (static_cast<int>(classes.size()) < need) {
        std::ostringstream os;
        os << "protocol: needs " << need << " classes (" << pc.base_classes << " base + " << pc.n_sessions
           << " x " << pc.n_way << "-way) but the dataset has " << classes.size();
        throw ConfigError(os.str());
    }
    for (int c : classes) {
        if (semantic.vectors.find(c) == semantic.vectors.end())
            throw ConfigError("protocol: class " + std::to_string(c) + " has no semantic vector");
    }

    // per-class sample indices
    std::map<int, std::vector<int>> per_class;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        per_class[ds.samples[i].label].push_back(static_cast<int>(i));

    // seeded shuffle decides the class-to-session assignment
    Rng class_rng(derive_seed(seed, "class_order"));
    class_rng.shuffle(classes);

    SessionStream stream;
    stream.channels = ds.channels;
    stream.height = ds.height;
    stream.width = ds.width;

    const int total_sessions = pc.n_sessions + 1;
    std::size_t cursor = 0;
    for (int t = 0; t < total_sessions; ++t) {
        SessionData sd;
        sd.session_index = t;
        sd.n_way = (t == 0) ? pc.base_classes : pc.n_way;
        sd.k_shot = pc.k_shot;
        const int take = (t == 0) ? pc.base_classes : pc.n_way;
        for (int i = 0; i < take; ++i) sd.class_set.push_back(classes[cursor++]);
        std::sort(sd.class_set.begin(), sd.class_set.end());
        stream.sessions.push_back(std::move(sd));
    }

    for (auto& session : stream.sessions) {
        const int t = session.session_index;
        for (int c : session.class_set) {
            std::vector<int> idx = per_class.at(c);
            Rng srng(derive_seed(seed, "subsample", static_cast<std::uint64_t>(c)));
            srng.shuffle(idx);
            const int avail = static_cast<int>(idx.size());
            const int train_need = (t == 0) ? 10 * pc.k_shot : pc.k_shot;
            if (avail < pc.test_per_class + train_need) {
                std::ostringstream os;
                os << "protocol: class " << c << " has " << avail << " samples but needs "
                   << pc.test_per_class << " test + " << train_need << " train";
                throw ConfigError(os.str());
            }
            for (int i = 0; i < pc.test_per_class; ++i)
                stream.test_pool[c].push_back(ds.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
            const int train_take = (t == 0) ? avail - pc.test_per_class : pc.k_shot;
            for (int i = 0; i < train_take; ++i) {
                const int j = pc.test_per_class + i;
                session.samples.push_back(ds.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]);
            }
        }
    }
    return stream;
}

// Hard asserts over a generated stream: disjoint class sets, exact shots in
// few-shot sessions, and no train/test identity overlap.
inline void validate_stream(const SessionStream& stream) {
    std::set<int> seen;
    for (const auto& s : stream.sessions) {
        for (int c : s.class_set) {
            if (!seen.insert(c).second)
                throw ProtocolError("stream: class " + std::to_string(c) + " appears in two sessions");
        }
        if (s.session_index >= 1) {
            if (static_cast<int>(s.class_set.size()) != s.n_way)
                throw ProtocolError("stream: session " + std::to_string(s.session_index) + " is not n_way");
            if (static_cast<int>(s.samples.size()) != s.n_way * s.k_shot)
                throw ProtocolError("stream: session " + std::to_string(s.session_index) +
                                    " does not have n_way*k_shot samples");
        } else {
            std::map<int, int> counts;
            for (const auto& smp : s.samples) counts[smp.label]++;
            for (const auto& kv : counts)
                if (kv.second < 10 * s.k_shot)
                    throw ProtocolError("stream: base class " + std::to_string(kv.first) +
                                        " has fewer than 10*k_shot samples");
        }
        for (const auto& smp : s.samples) {
            auto it = stream.test_pool.find(smp.label);
            if (it == stream.test_pool.end())
                throw ProtocolError("stream: class " + std::to_string(smp.label) + " missing from test pool");
            for (const auto& ts : it->second)
                if (ts.uid == smp.uid)
                    throw ProtocolError("stream: sample uid " + std::to_string(smp.uid) +
                                        " leaks between train and test");
        }
    }
    for (const auto& kv : stream.test_pool) {
        if (seen.find(kv.first) == seen.end())
            throw ProtocolError("stream: test pool covers unknown class " + std::to_string(kv.first));
        if (kv.second.empty())
            throw ProtocolError("stream: empty test pool for class " + std::to_string(kv.first));
    }
    for (int c : seen)
        if (stream.test_pool.find(c) == stream.test_pool.end())
            throw ProtocolError("stream: no test samples for class " + std::to_string(c));
}

}  // namespace mcnet::data
