// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint format: the magic string "GSEB1", a text header (model config
// key=value block, then a parameter manifest with names and shapes), the
// literal line "end_header", and raw little-endian float32 data in manifest
// order, row-major.

#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/nn.hpp"

namespace edscore {

inline constexpr const char* kCheckpointMagic = "GSEB1";

struct CheckpointMeta {
    std::string stage;        // "init", "pretrain", "finetune"
    std::string config_hash;  // hash of the model-relevant config section
    std::uint64_t seed = 0;
};

namespace detail {

inline void append_config_header(std::string& h, const ModelConfig& cfg) {
    h += "config.num_layers=" + std::to_string(cfg.num_layers) + "\n";
    h += "config.num_heads=" + std::to_string(cfg.num_heads) + "\n";
    h += "config.hidden_dim=" + std::to_string(cfg.hidden_dim) + "\n";
    h += "config.ff_dim=" + std::to_string(cfg.ff_dim) + "\n";
    h += "config.max_len=" + std::to_string(cfg.max_len) + "\n";
    h += "config.vocab_size=" + std::to_string(cfg.vocab_size) + "\n";
    h += "config.num_labels=" + std::to_string(cfg.num_labels) + "\n";
    h += "config.dropout_rate=" + format_double(cfg.dropout_rate) + "\n";
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams<T>& params, const CheckpointMeta& meta) {
    std::string header;
    header += kCheckpointMagic;
    header += '\n';
    detail::append_config_header(header, cfg);
    header += "meta.stage=" + meta.stage + "\n";
    header += "meta.seed=" + std::to_string(meta.seed) + "\n";
    header += "meta.config_hash=" + meta.config_hash + "\n";

    auto refs = param_manifest(const_cast<ModelParams<T>&>(params));
    for (const auto& ref : refs)
        header += "param " + ref.name + " " + std::to_string(ref.tensor->rows) + " " +
                  std::to_string(ref.tensor->cols) + "\n";
    header += "end_header\n";

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> row;
    for (const auto& ref : refs) {
        row.resize(ref.tensor->size());
        for (std::size_t i = 0; i < row.size(); ++i)
            row[i] = static_cast<float>(ref.tensor->v[i]);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw DataError("checkpoint write failed: " + path.string());
}

template <class T>
struct LoadedCheckpoint {
    ModelConfig config;
    ModelParams<T> params;
    CheckpointMeta meta;
};

template <class T = float>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());

    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic)
        throw DataError("not a checkpoint file (bad magic): " + path.string());

    LoadedCheckpoint<T> ck;
    std::map<std::string, std::string> kv;
    std::vector<std::pair<std::string, std::pair<int, int>>> manifest;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        if (line.rfind("param ", 0) == 0) {
            const auto f = split_whitespace(line);
            if (f.size() != 4) throw DataError("malformed manifest line: " + line);
            manifest.push_back({f[1],
                                {static_cast<int>(parse_long(f[2], "rows")),
                                 static_cast<int>(parse_long(f[3], "cols"))}});
        } else {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw DataError("malformed header line: " + line);
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }

    auto req = [&](const std::string& key) {
        const auto it = kv.find(key);
        if (it == kv.end()) throw DataError("checkpoint header missing " + key);
        return it->second;
    };
    ck.config.num_layers = static_cast<int>(parse_long(req("config.num_layers"), "num_layers"));
    ck.config.num_heads = static_cast<int>(parse_long(req("config.num_heads"), "num_heads"));
    ck.config.hidden_dim = static_cast<int>(parse_long(req("config.hidden_dim"), "hidden_dim"));
    ck.config.ff_dim = static_cast<int>(parse_long(req("config.ff_dim"), "ff_dim"));
    ck.config.max_len = static_cast<int>(parse_long(req("config.max_len"), "max_len"));
    ck.config.vocab_size = static_cast<int>(parse_long(req("config.vocab_size"), "vocab_size"));
    ck.config.num_labels = static_cast<int>(parse_long(req("config.num_labels"), "num_labels"));
    ck.config.dropout_rate = parse_double(req("config.dropout_rate"), "dropout_rate");
    ck.meta.stage = kv.count("meta.stage") ? kv["meta.stage"] : "";
    ck.meta.config_hash = kv.count("meta.config_hash") ? kv["meta.config_hash"] : "";
    ck.meta.seed =
        kv.count("meta.seed") ? static_cast<std::uint64_t>(parse_long(kv["meta.seed"], "seed"))
                              : 0;
    ck.config.validate();

    ck.params = make_param_shapes<T>(ck.config);
    auto refs = param_manifest(ck.params);
    if (refs.size() != manifest.size())
        throw DataError("checkpoint manifest size mismatch: " + path.string());
    std::vector<float> row;
    for (std::size_t t = 0; t < refs.size(); ++t) {
        if (refs[t].name != manifest[t].first ||
            refs[t].tensor->rows != manifest[t].second.first ||
            refs[t].tensor->cols != manifest[t].second.second)
            throw DataError("checkpoint manifest mismatch at " + manifest[t].first +
                            " (model config incompatible)");
        row.resize(refs[t].tensor->size());
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw DataError("checkpoint truncated at " + refs[t].name);
        for (std::size_t i = 0; i < row.size(); ++i)
            refs[t].tensor->v[i] = static_cast<T>(row[i]);
    }
    return ck;
}

}  // namespace edscore
