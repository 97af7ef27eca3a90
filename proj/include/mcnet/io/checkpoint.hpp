#pragma once

// Checkpoint archive, format version 1:
//   bytes 0..7   magic "MCNETCK1"
//   bytes 8..15  u64 little-endian header length H
//   bytes 16..   UTF-8 JSON header of H bytes
//   then         raw little-endian float64 payload, arrays back to back in
//                header order
// The header records the architecture, session index, named parameter
// shapes/offsets, and the prototype-store metadata.

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcnet/io/config.hpp"
#include "mcnet/nets/ensemble.hpp"
#include "mcnet/proto/store.hpp"

namespace mcnet::io {

constexpr char kCkptMagic[9] = "MCNETCK1";

struct Checkpoint {
    nets::Ensemble ensemble;
    proto::PrototypeStore store;
    int session_index = 0;
    int n_base_classes = 0;
};

namespace detail_ckpt {

inline nlohmann::json arch_to_json(const nets::ArchConfig& a) {
    return nlohmann::json{{"in_channels", a.in_channels},
                          {"image_size", a.image_size},
                          {"stem_channels", a.stem_channels},
                          {"backbone_channels", a.backbone_channels},
                          {"backbone_strides", a.backbone_strides},
                          {"cnn_head_blocks", a.cnn_head_blocks},
                          {"att_head_blocks", a.att_head_blocks},
                          {"att_heads", a.att_heads},
                          {"absolute_pos_encoding", a.absolute_pos_encoding},
                          {"semantic_dim", a.semantic_dim},
                          {"semantic_hidden", a.semantic_hidden}};
}

inline nets::ArchConfig arch_from_json(const nlohmann::json& j) {
    nets::ArchConfig a;
    a.in_channels = j.at("in_channels").get<int>();
    a.image_size = j.at("image_size").get<int>();
    a.stem_channels = j.at("stem_channels").get<int>();
    a.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
    a.backbone_strides = j.at("backbone_strides").get<std::vector<int>>();
    a.cnn_head_blocks = j.at("cnn_head_blocks").get<int>();
    a.att_head_blocks = j.at("att_head_blocks").get<int>();
    a.att_heads = j.at("att_heads").get<int>();
    a.absolute_pos_encoding = j.at("absolute_pos_encoding").get<bool>();
    a.semantic_dim = j.at("semantic_dim").get<int>();
    a.semantic_hidden = j.at("semantic_hidden").get<int>();
    return a;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const std::string& path, const nets::Ensemble& ens,
                            const proto::PrototypeStore& store, int session_index, int n_base_classes) {
    using nlohmann::json;
    std::vector<std::pair<std::string, const Tensor*>> arrays;
    nets::ParamList params = ens.params();
    for (const auto& p : params) arrays.push_back({p.name, &p.var->val});

    // prototype store as two matrices plus metadata
    const int k = static_cast<int>(store.size());
    const int d = k > 0 ? store.dim() : 0;
    Tensor proto_means({k, d}), proto_vars({k, d});
    json classes_json = json::array();
    json counts = json::array(), sessions = json::array();
    {
        int row = 0;
        for (const auto& kv : store.entries()) {
            for (int j = 0; j < d; ++j) {
                proto_means.at(row, j) = kv.second.mean[j];
                proto_vars.at(row, j) = kv.second.variance[j];
            }
            classes_json.push_back(kv.first);
            counts.push_back(kv.second.count);
            sessions.push_back(kv.second.session);
            ++row;
        }
    }
    arrays.push_back({"store.means", &proto_means});
    arrays.push_back({"store.variances", &proto_vars});

    json header;
    header["format_version"] = 1;
    header["session_index"] = session_index;
    header["n_base_classes"] = n_base_classes;
    header["has_model2"] = ens.has_model2;
    header["arch"] = detail_ckpt::arch_to_json(ens.cfg);
    header["store"] = json{{"classes", classes_json}, {"counts", counts}, {"sessions", sessions}};
    json jarrays = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : arrays) {
        jarrays.push_back(json{{"name", name}, {"shape", tensor->shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(tensor->numel());
    }
    header["arrays"] = jarrays;

    const std::string htxt = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kCkptMagic, 8);
    const std::uint64_t hlen = htxt.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));
    for (const auto& [name, tensor] : arrays) {
        (void)name;
        out.write(reinterpret_cast<const char*>(tensor->data()),
                  static_cast<std::streamsize>(tensor->numel() * sizeof(double)));
    }
    if (!out) throw IoError("short write on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using nlohmann::json;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw IoError("not an mcnet checkpoint (bad magic): " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htxt(hlen, '\0');
    in.read(htxt.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);
    json header = json::parse(htxt);
    if (header.at("format_version").get<int>() != 1)
        throw IoError("unsupported checkpoint version in " + path);

    Checkpoint ck;
    ck.session_index = header.at("session_index").get<int>();
    ck.n_base_classes = header.at("n_base_classes").get<int>();
    const bool has_model2 = header.at("has_model2").get<bool>();
    nets::ArchConfig arch = detail_ckpt::arch_from_json(header.at("arch"));
    ck.ensemble.build(arch, ck.n_base_classes, /*seed=*/0, has_model2);

    std::map<std::string, ad::Var> by_name;
    for (const auto& p : ck.ensemble.params()) by_name[p.name] = p.var;

    Tensor proto_means, proto_vars;
    for (const auto& ja : header.at("arrays")) {
        const std::string name = ja.at("name").get<std::string>();
        const std::vector<int> shape = ja.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint payload at array " + name + ": " + path);
        if (name == "store.means") {
            proto_means = std::move(t);
        } else if (name == "store.variances") {
            proto_vars = std::move(t);
        } else {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw IoError("checkpoint array " + name + " has no matching parameter");
            if (it->second->val.shape() != shape)
                throw IoError("checkpoint array " + name + " shape mismatch");
            it->second->val = std::move(t);
            by_name.erase(it);
        }
    }
    if (!by_name.empty())
        throw IoError("checkpoint " + path + " is missing parameter " + by_name.begin()->first);

    const auto& js = header.at("store");
    const auto cls = js.at("classes").get<std::vector<int>>();
    const auto counts = js.at("counts").get<std::vector<int>>();
    const auto sess = js.at("sessions").get<std::vector<int>>();
    const int d = proto_means.rank() == 2 ? proto_means.dim(1) : 0;
    for (std::size_t i = 0; i < cls.size(); ++i) {
        proto::ProtoEntry e;
        e.mean = Tensor({d});
        e.variance = Tensor({d});
        for (int j = 0; j < d; ++j) {
            e.mean[j] = proto_means.at(static_cast<int>(i), j);
            e.variance[j] = proto_vars.at(static_cast<int>(i), j);
        }
        e.count = counts[i];
        e.session = sess[i];
        ck.store.insert(cls[i], std::move(e));
    }
    return ck;
}

}  // namespace mcnet::io
