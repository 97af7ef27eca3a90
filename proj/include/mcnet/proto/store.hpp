#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mcnet/core/errors.hpp"
#include "mcnet/core/rng.hpp"
#include "mcnet/core/tensor.hpp"

namespace mcnet::proto {

struct ProtoEntry {
    Tensor mean;      // p_c, composed feature dimension
    Tensor variance;  // diagonal sigma^2, same dimension
    int session = 0;  // session of origin
    int count = 0;    // samples behind the estimate
};

class PrototypeStore {
public:
    bool has(int class_id) const { return entries_.count(class_id) != 0; }

    const ProtoEntry& get(int class_id) const {
        auto it = entries_.find(class_id);
        if (it == entries_.end())
            throw ProtocolError("prototype store: missing class " + std::to_string(class_id));
        return it->second;
    }

    void insert(int class_id, ProtoEntry e) {
        if (has(class_id))
            throw ProtocolError("prototype store: class " + std::to_string(class_id) + " already stored");
        for (std::int64_t i = 0; i < e.variance.numel(); ++i)
            if (e.variance[i] < 0.0)
                throw NumericError("prototype store: negative variance entry for class " +
                                   std::to_string(class_id));
        entries_.emplace(class_id, std::move(e));
    }

    std::vector<int> classes() const {
        std::vector<int> out;
        out.reserve(entries_.size());
        for (const auto& kv : entries_) out.push_back(kv.first);
        return out;  // std::map keeps them sorted
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    int dim() const {
        if (entries_.empty()) throw ProtocolError("prototype store: empty");
        return static_cast<int>(entries_.begin()->second.mean.numel());
    }

    const std::map<int, ProtoEntry>& entries() const { return entries_; }

private:
    std::map<int, ProtoEntry> entries_;
};

// Per-class mean and population (divide-by-N) diagonal variance of composed
// features. Single-sample classes get zero variance.
inline std::map<int, ProtoEntry> compute_prototypes(const Tensor& features, const std::vector<int>& labels,
                                                    int session = 0) {
    if (features.rank() != 2) throw ConfigError("compute_prototypes: features must be rank-2");
    const int n = features.dim(0), d = features.dim(1);
    if (static_cast<int>(labels.size()) != n) throw ConfigError("compute_prototypes: label count mismatch");
    if (n == 0) throw ConfigError("compute_prototypes: empty class set");
    std::map<int, ProtoEntry> out;
    std::map<int, int> counts;
    for (int i = 0; i < n; ++i) counts[labels[static_cast<std::size_t>(i)]]++;
    for (const auto& kv : counts) {
        ProtoEntry e;
        e.mean = Tensor::zeros({d});
        e.variance = Tensor::zeros({d});
        e.session = session;
        e.count = kv.second;
        out.emplace(kv.first, std::move(e));
    }
    for (int i = 0; i < n; ++i) {
        ProtoEntry& e = out.at(labels[static_cast<std::size_t>(i)]);
        for (int j = 0; j < d; ++j) e.mean[j] += features.at(i, j);
    }
    for (auto& kv : out)
        for (int j = 0; j < d; ++j) kv.second.mean[j] /= static_cast<double>(kv.second.count);
    for (int i = 0; i < n; ++i) {
        ProtoEntry& e = out.at(labels[static_cast<std::size_t>(i)]);
        for (int j = 0; j < d; ++j) {
            const double dev = features.at(i, j) - e.mean[j];
            e.variance[j] += dev * dev;
        }
    }
    for (auto& kv : out)
        for (int j = 0; j < d; ++j) kv.second.variance[j] /= static_cast<double>(kv.second.count);
    return out;
}

// Gaussian prototype smoothing: z~ = p + eta (*) sigma with eta ~ N(0, I).
// Deterministic given the seed; n rows of pseudo-features.
inline Tensor sample_smoothed(const Tensor& mean, const Tensor& variance, int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample_smoothed: n must be >= 1");
    if (!mean.same_shape(variance)) throw ConfigError("sample_smoothed: mean/variance shape mismatch");
    const int d = static_cast<int>(mean.numel());
    Tensor sigma({d});
    for (int j = 0; j < d; ++j) {
        if (variance[j] < 0.0)
            throw NumericError("sample_smoothed: negative variance entry " + std::to_string(j));
        sigma[j] = std::sqrt(variance[j]);
    }
    Rng rng(seed);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = mean[j] + rng.normal() * sigma[j];
    return out;
}

// Nearest-prototype classification by cosine similarity over the seen
// classes; ties resolve to the lowest class id.
inline int classify(const Tensor& z, const PrototypeStore& store, const std::vector<int>& seen_classes) {
    if (seen_classes.empty()) throw ProtocolError("classify: no seen classes");
    const int d = static_cast<int>(z.numel());
    double zn = 0.0;
    for (int j = 0; j < d; ++j) zn += z[j] * z[j];
    zn = std::sqrt(zn);
    if (!(zn > 0.0)) throw NumericError("classify: zero-norm query feature");
    int best = -1;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (int c : seen_classes) {
        const ProtoEntry& e = store.get(c);
        if (e.mean.numel() != d) throw ConfigError("classify: dimension mismatch for class " + std::to_string(c));
        double dot = 0.0, pn = 0.0;
        for (int j = 0; j < d; ++j) {
            dot += z[j] * e.mean[j];
            pn += e.mean[j] * e.mean[j];
        }
        pn = std::sqrt(pn);
        if (!(pn > 0.0))
            throw NumericError("classify: zero-norm prototype for class " + std::to_string(c));
        const double cos = dot / (zn * pn);
        if (cos > best_cos || (cos == best_cos && best >= 0 && c < best)) {
            best_cos = cos;
            best = c;
        }
    }
    return best;
}

enum class UpdatePolicy { FrozenOld };

// Adds prototypes for the new session's classes; stored entries are never
// touched (frozen-old policy).
inline void update_store_after_session(PrototypeStore& store, const Tensor& new_features,
                                       const std::vector<int>& new_labels, int session,
                                       UpdatePolicy policy = UpdatePolicy::FrozenOld) {
    (void)policy;
    if (new_labels.empty()) return;
    auto protos = compute_prototypes(new_features, new_labels, session);
    for (auto& kv : protos) {
        if (store.has(kv.first))
            throw ProtocolError("update_store_after_session: class " + std::to_string(kv.first) +
                                " already present");
        store.insert(kv.first, std::move(kv.second));
    }
}

// Optional shrinkage: replace each few-shot class's variance by the mean
// variance vector over the given reference classes.
inline Tensor mean_variance(const PrototypeStore& store, const std::vector<int>& classes) {
    if (classes.empty()) throw ConfigError("mean_variance: empty class list");
    const int d = store.dim();
    Tensor v({d});
    for (int c : classes) {
        const ProtoEntry& e = store.get(c);
        for (int j = 0; j < d; ++j) v[j] += e.variance[j];
    }
    for (int j = 0; j < d; ++j) v[j] /= static_cast<double>(classes.size());
    return v;
}

}  // namespace mcnet::proto
