#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mcnet/core/errors.hpp"
#include "mcnet/core/rng.hpp"
#include "mcnet/core/tensor.hpp"

namespace mcnet::data {

struct Sample {
    Tensor image;  // (C,H,W), values in [0,1]
    int label = 0;
    int uid = -1;  // dataset-unique identity, used by leakage checks
};

struct Dataset {
    std::vector<Sample> samples;
    int channels = 0, height = 0, width = 0;

    std::vector<int> class_ids() const {
        std::vector<int> ids;
        for (const auto& s : samples) ids.push_back(s.label);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return ids;
    }
};

struct SemanticTable {
    enum class Source { File, Generator };
    std::map<int, Tensor> vectors;  // class id -> (d_a)
    int dim = 0;
    Source source = Source::Generator;

    const Tensor& get(int class_id) const {
        auto it = vectors.find(class_id);
        if (it == vectors.end())
            throw ProtocolError("semantic table: missing vector for class " + std::to_string(class_id));
        return it->second;
    }
};

// Deterministic unit-norm pseudo-random semantic vector keyed by (seed, class).
inline Tensor semantic_vector(std::uint64_t seed, int class_id, int dim) {
    Rng rng(derive_seed(seed, "semantic", static_cast<std::uint64_t>(class_id)));
    Tensor v({dim});
    double norm = 0.0;
    while (!(norm > 1e-9)) {
        rng.fill_normal(v.data(), static_cast<std::size_t>(dim));
        norm = 0.0;
        for (int j = 0; j < dim; ++j) norm += v[j] * v[j];
        norm = std::sqrt(norm);
    }
    for (int j = 0; j < dim; ++j) v[j] /= norm;
    return v;
}

inline SemanticTable generate_semantic_table(const std::vector<int>& classes, int dim, std::uint64_t seed) {
    SemanticTable tbl;
    tbl.dim = dim;
    tbl.source = SemanticTable::Source::Generator;
    for (int c : classes) tbl.vectors.emplace(c, semantic_vector(seed, c, dim));
    return tbl;
}

struct SyntheticSpec {
    int n_classes = 20;
    int image_size = 12;
    int channels = 1;
    int samples_per_class = 50;
    double noise_std = 0.1;
    int semantic_dim = 64;
};

// Smooth per-class template: a few random cosine gratings, squashed into
// [0.2, 0.8] so that noise rarely clips.
inline Tensor class_template(std::uint64_t seed, int class_id, int channels, int size) {
    Rng rng(derive_seed(seed, "template", static_cast<std::uint64_t>(class_id)));
    Tensor img({channels, size, size});
    for (int c = 0; c < channels; ++c) {
        const int waves = 3;
        std::vector<double> fx(waves), fy(waves), ph(waves), amp(waves);
        for (int k = 0; k < waves; ++k) {
            fx[k] = rng.uniform(0.3, 2.0);
            fy[k] = rng.uniform(0.3, 2.0);
            ph[k] = rng.uniform(0.0, 2.0 * M_PI);
            amp[k] = rng.uniform(0.5, 1.0);
        }
        double lo = 1e30, hi = -1e30;
        std::vector<double> raw(static_cast<std::size_t>(size) * size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double v = 0.0;
                for (int k = 0; k < waves; ++k)
                    v += amp[k] * std::cos(2.0 * M_PI * (fx[k] * x + fy[k] * y) / size + ph[k]);
                raw[static_cast<std::size_t>(y) * size + x] = v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double v = (raw[static_cast<std::size_t>(y) * size + x] - lo) / span;
                img.at(c, y, x) = 0.2 + 0.6 * v;
            }
    }
    return img;
}

// Class templates plus i.i.d. pixel noise, clipped to [0,1]. Everything is a
// pure function of (spec, seed).
inline std::pair<Dataset, SemanticTable> make_synthetic_dataset(const SyntheticSpec& spec,
                                                                std::uint64_t seed) {
    if (spec.n_classes < 4) throw ConfigError("synthetic: n_classes must be >= 4");
    if (spec.image_size < 1 || spec.channels < 1 || spec.samples_per_class < 1)
        throw ConfigError("synthetic: sizes must be positive");
    if (spec.noise_std < 0.0) throw ConfigError("synthetic: noise_std must be >= 0");
    Dataset ds;
    ds.channels = spec.channels;
    ds.height = ds.width = spec.image_size;
    ds.samples.reserve(static_cast<std::size_t>(spec.n_classes) * spec.samples_per_class);
    int uid = 0;
    for (int c = 0; c < spec.n_classes; ++c) {
        const Tensor tmpl = class_template(seed, c, spec.channels, spec.image_size);
        Rng noise(derive_seed(seed, "noise", static_cast<std::uint64_t>(c)));
        for (int s = 0; s < spec.samples_per_class; ++s) {
            Sample smp;
            smp.label = c;
            smp.uid = uid++;
            smp.image = tmpl;
            if (spec.noise_std > 0.0) {
                for (std::int64_t i = 0; i < smp.image.numel(); ++i) {
                    double v = smp.image[i] + noise.normal(0.0, spec.noise_std);
                    smp.image[i] = std::clamp(v, 0.0, 1.0);
                }
            }
            ds.samples.push_back(std::move(smp));
        }
    }
    std::vector<int> classes(static_cast<std::size_t>(spec.n_classes));
    for (int c = 0; c < spec.n_classes; ++c) classes[static_cast<std::size_t>(c)] = c;
    return {std::move(ds), generate_semantic_table(classes, spec.semantic_dim, seed)};
}

// Base-session augmentation for real images: random horizontal flip plus a
// random crop with 4-pixel zero padding.
inline Tensor augment_image(const Tensor& img, Rng& rng) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const int pad = 4;
    const bool flip = rng.uniform() < 0.5;
    const int oy = static_cast<int>(rng.uniform_int(0, 2 * pad));
    const int ox = static_cast<int>(rng.uniform_int(0, 2 * pad));
    Tensor out({c, h, w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = y + oy - pad;
                int sx = x + ox - pad;
                if (flip) sx = w - 1 - sx;
                double v = 0.0;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w) v = img.at(ic, sy, sx);
                out.at(ic, y, x) = v;
            }
    return out;
}

}  // namespace mcnet::data
