#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcnet/core/log.hpp"
#include "mcnet/data/dataset.hpp"
#include "mcnet/data/image_io.hpp"

namespace mcnet::data {

struct LoadOptions {
    int image_size = 12;
    int channels = 1;
    std::string semantic_file;       // empty -> generator fallback
    bool strict_semantic = false;    // error when a class is missing from the file
    int semantic_dim = 64;           // generator dimension
    std::uint64_t semantic_seed = 0;
};

// Parses "class_id<TAB>v1,v2,...,v_da" lines.
inline SemanticTable load_semantic_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open semantic file: " + path);
    SemanticTable tbl;
    tbl.source = SemanticTable::Source::File;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("semantic file " + path + ":" + std::to_string(lineno) + ": expected TAB separator");
        const int cls = std::stoi(line.substr(0, tab));
        std::vector<double> vals;
        std::stringstream ss(line.substr(tab + 1));
        std::string tok;
        while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
        if (vals.empty())
            throw IoError("semantic file " + path + ":" + std::to_string(lineno) + ": empty vector");
        if (tbl.dim == 0) tbl.dim = static_cast<int>(vals.size());
        if (static_cast<int>(vals.size()) != tbl.dim)
            throw IoError("semantic file " + path + ":" + std::to_string(lineno) + ": dimension mismatch");
        double norm = 0.0;
        for (double v : vals) norm += v * v;
        if (!(std::sqrt(norm) > 1e-12))
            throw IoError("semantic file " + path + ":" + std::to_string(lineno) + ": zero vector for class " +
                          std::to_string(cls));
        tbl.vectors.emplace(cls, Tensor({tbl.dim}, std::move(vals)));
    }
    if (tbl.vectors.empty()) throw IoError("semantic file " + path + " has no entries");
    return tbl;
}

// Manifest format: one "relative/path.png<TAB>class_id" per line.
inline std::pair<Dataset, SemanticTable> load_image_dataset(const std::string& root,
                                                            const std::string& manifest_path,
                                                            const LoadOptions& opt) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    Dataset ds;
    ds.channels = opt.channels;
    ds.height = ds.width = opt.image_size;
    std::string line;
    int lineno = 0, uid = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("manifest " + manifest_path + ":" + std::to_string(lineno) +
                          ": expected 'path<TAB>class_id'");
        const std::string rel = line.substr(0, tab);
        int cls = 0;
        try {
            cls = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw IoError("manifest " + manifest_path + ":" + std::to_string(lineno) + ": bad class id");
        }
        if (cls < 0)
            throw IoError("manifest " + manifest_path + ":" + std::to_string(lineno) +
                          ": class ids must be non-negative");
        const std::string full = (std::filesystem::path(root) / rel).string();
        Sample s;
        s.label = cls;
        s.uid = uid++;
        s.image = to_tensor(read_image(full), opt.channels, opt.image_size);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw IoError("manifest " + manifest_path + " lists no images");

    const std::vector<int> classes = ds.class_ids();
    SemanticTable tbl;
    if (!opt.semantic_file.empty() && std::filesystem::exists(opt.semantic_file)) {
        tbl = load_semantic_file(opt.semantic_file);
        for (int c : classes) {
            if (tbl.vectors.find(c) != tbl.vectors.end()) continue;
            if (opt.strict_semantic)
                throw ConfigError("semantic file " + opt.semantic_file + " is missing class " +
                                  std::to_string(c));
            log::warn("semantic file missing class " + std::to_string(c) + ", using generated vector");
            tbl.vectors.emplace(c, semantic_vector(opt.semantic_seed, c, tbl.dim));
        }
    } else {
        if (!opt.semantic_file.empty() && opt.strict_semantic)
            throw ConfigError("semantic file not found: " + opt.semantic_file);
        if (!opt.semantic_file.empty())
            log::warn("semantic file not found: " + opt.semantic_file + ", falling back to generated vectors");
        tbl = generate_semantic_table(classes, opt.semantic_dim, opt.semantic_seed);
    }
    return {std::move(ds), std::move(tbl)};
}

}  // namespace mcnet::data
