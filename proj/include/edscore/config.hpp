// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat key=value files, command-line overrides, the
// effective-config echo written into every output directory, and the config
// hash that ties dependent stages together.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/nn.hpp"

namespace edscore {

struct RunConfig {
    // model
    int model_layers = 2;
    int model_heads = 2;
    int model_hidden = 64;
    int model_ff = 256;
    int model_max_len = 128;
    int model_vocab_size = 2000;  // build-vocab target; actual size comes from the vocab file
    double model_dropout = 0.1;

    // training
    double lr = 3e-5;           // fine-tuning default
    double head_lr_scale = 1.0; // classifier lr multiplier during fine-tuning
    double warmup_fraction = 0.1;
    double pretrain_lr = 1e-3;  // desk-scale from-scratch pre-training
    int batch_size = 32;
    int epochs = 4;
    int pretrain_epochs = 3;
    int folds = 5;
    double mask_rate = 0.15;
    bool average_qwk = false;

    // prompts
    std::string prompt_directive = "score this answer: {response}";
    std::string prompt_context = "task: {task}";
    int prompt_examples = 2;
    int prompt_max_example_words = 12;

    // generator
    int gen_finetune_items = 27;
    int gen_pretrain_items = 8;
    int gen_responses_per_item = 1000;       // fine-tune items
    int gen_pretrain_responses = 1000;       // pre-training and generic items
    double gen_misspell_rate = 0.02;
    double gen_science_density = 0.2;
    double gen_length_min = 12.0;
    double gen_length_max = 28.0;
    int gen_min_labels = 2;
    int gen_max_labels = 5;
    int gen_synonym_group_size = 3;

    // paths
    std::string corpus_dir = "out/corpus";
    std::string lexicon = "data/german_lexicon.txt";
    std::string science_lexicon = "data/science_lexicon.txt";
    std::string vocab = "out/vocab.txt";
    std::string checkpoint_baseline = "out/pretrain_generic/checkpoint.gseb";
    std::string checkpoint_adapted = "out/pretrain_domain/checkpoint.gseb";
    std::string frozen_checkpoint;  // empty: the base checkpoint in use
    std::string out_dir = "out";

    std::uint64_t seed = 42;
    int threads = 1;

    void validate() const {
        if (model_max_len > 512) throw DataError("config: model.max_len exceeds the 512 cap");
        if (folds < 2) throw DataError("config: train.folds must be >= 2");
        if (batch_size < 1) throw DataError("config: train.batch_size must be >= 1");
        if (epochs < 0 || pretrain_epochs < 0) throw DataError("config: epochs must be >= 0");
        if (mask_rate < 0.0 || mask_rate > 0.5)
            throw DataError("config: train.mask_rate outside [0, 0.5]");
        if (threads < 1) throw DataError("config: threads must be >= 1");
        if (gen_min_labels < 2 || gen_max_labels > 5 || gen_min_labels > gen_max_labels)
            throw DataError("config: gen label range must satisfy 2 <= min <= max <= 5");
    }

    ModelConfig model_config(int actual_vocab_size, int num_labels) const {
        ModelConfig cfg;
        cfg.num_layers = model_layers;
        cfg.num_heads = model_heads;
        cfg.hidden_dim = model_hidden;
        cfg.ff_dim = model_ff;
        cfg.max_len = model_max_len;
        cfg.vocab_size = actual_vocab_size;
        cfg.num_labels = num_labels;
        cfg.dropout_rate = model_dropout;
        return cfg;
    }
};

namespace detail {

template <class F>
void visit_config(RunConfig& c, F&& f) {
    f("model.layers", c.model_layers);
    f("model.heads", c.model_heads);
    f("model.hidden", c.model_hidden);
    f("model.ff", c.model_ff);
    f("model.max_len", c.model_max_len);
    f("model.vocab_size", c.model_vocab_size);
    f("model.dropout", c.model_dropout);
    f("train.lr", c.lr);
    f("train.head_lr_scale", c.head_lr_scale);
    f("train.warmup_fraction", c.warmup_fraction);
    f("train.pretrain_lr", c.pretrain_lr);
    f("train.batch_size", c.batch_size);
    f("train.epochs", c.epochs);
    f("train.pretrain_epochs", c.pretrain_epochs);
    f("train.folds", c.folds);
    f("train.mask_rate", c.mask_rate);
    f("train.average_qwk", c.average_qwk);
    f("prompt.directive", c.prompt_directive);
    f("prompt.context", c.prompt_context);
    f("prompt.examples", c.prompt_examples);
    f("prompt.max_example_words", c.prompt_max_example_words);
    f("gen.finetune_items", c.gen_finetune_items);
    f("gen.pretrain_items", c.gen_pretrain_items);
    f("gen.responses_per_item", c.gen_responses_per_item);
    f("gen.pretrain_responses", c.gen_pretrain_responses);
    f("gen.misspell_rate", c.gen_misspell_rate);
    f("gen.science_density", c.gen_science_density);
    f("gen.length_min", c.gen_length_min);
    f("gen.length_max", c.gen_length_max);
    f("gen.min_labels", c.gen_min_labels);
    f("gen.max_labels", c.gen_max_labels);
    f("gen.synonym_groups", c.gen_synonym_group_size);
    f("paths.corpus_dir", c.corpus_dir);
    f("paths.lexicon", c.lexicon);
    f("paths.science_lexicon", c.science_lexicon);
    f("paths.vocab", c.vocab);
    f("paths.checkpoint_baseline", c.checkpoint_baseline);
    f("paths.checkpoint_adapted", c.checkpoint_adapted);
    f("paths.frozen_checkpoint", c.frozen_checkpoint);
    f("paths.out_dir", c.out_dir);
    f("seed", c.seed);
    f("threads", c.threads);
}

struct ConfigSetter {
    const std::map<std::string, std::string>* values;
    std::map<std::string, bool>* used;

    void operator()(const char* key, int& field) const {
        const auto it = values->find(key);
        if (it == values->end()) return;
        field = static_cast<int>(parse_long(it->second, key));
        (*used)[key] = true;
    }
    void operator()(const char* key, double& field) const {
        const auto it = values->find(key);
        if (it == values->end()) return;
        field = parse_double(it->second, key);
        (*used)[key] = true;
    }
    void operator()(const char* key, bool& field) const {
        const auto it = values->find(key);
        if (it == values->end()) return;
        if (it->second == "true" || it->second == "1")
            field = true;
        else if (it->second == "false" || it->second == "0")
            field = false;
        else
            throw DataError(std::string("config: boolean expected for ") + key);
        (*used)[key] = true;
    }
    void operator()(const char* key, std::string& field) const {
        const auto it = values->find(key);
        if (it == values->end()) return;
        field = it->second;
        (*used)[key] = true;
    }
    void operator()(const char* key, std::uint64_t& field) const {
        const auto it = values->find(key);
        if (it == values->end()) return;
        field = static_cast<std::uint64_t>(parse_long(it->second, key));
        (*used)[key] = true;
    }
};

struct ConfigPrinter {
    std::string* out;

    template <class V>
    void operator()(const char* key, V& field) const {
        *out += key;
        *out += '=';
        if constexpr (std::is_same_v<V, std::string>) {
            *out += field;
        } else if constexpr (std::is_same_v<V, bool>) {
            *out += field ? "true" : "false";
        } else if constexpr (std::is_same_v<V, double>) {
            *out += format_double(field);
        } else {
            *out += std::to_string(field);
        }
        *out += '\n';
    }
};

}  // namespace detail

inline std::map<std::string, std::string> parse_key_values(
    const std::vector<std::string>& lines, const std::string& origin) {
    std::map<std::string, std::string> kv;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string line = trim(lines[i]);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(origin + ":" + std::to_string(i + 1) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

// file values first, then overrides; unknown keys are errors
inline RunConfig load_run_config(const std::filesystem::path& config_path,
                                 const std::vector<std::string>& overrides) {
    RunConfig cfg;
    std::map<std::string, std::string> kv;
    if (!config_path.empty())
        kv = parse_key_values(read_lines(config_path), config_path.string());
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw UsageError("override must be key=value, got: " + ov);
        kv[trim(ov.substr(0, eq))] = trim(ov.substr(eq + 1));
    }
    std::map<std::string, bool> used;
    detail::visit_config(cfg, detail::ConfigSetter{&kv, &used});
    for (const auto& [key, value] : kv) {
        (void)value;
        if (!used.count(key)) throw DataError("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    detail::visit_config(const_cast<RunConfig&>(cfg), detail::ConfigPrinter{&out});
    return out;
}

// Hash of the semantically relevant configuration: identifies the experiment,
// so artifact locations and worker counts stay out of it.
inline std::string config_hash(const RunConfig& cfg) {
    std::string hashed;
    for (const auto& line : split_on(serialize_config(cfg), '\n')) {
        if (line.rfind("paths.", 0) == 0 || line.rfind("threads", 0) == 0) continue;
        if (line.empty()) continue;
        hashed += line;
        hashed += '\n';
    }
    return hex64(fnv1a(hashed));
}

// every stage drops its effective configuration into its output directory
inline void echo_config(const std::filesystem::path& out_dir, const RunConfig& cfg) {
    std::string text = serialize_config(cfg);
    text += "# config_hash=" + config_hash(cfg) + "\n";
    write_text_file(out_dir / "effective_config.txt", text);
}

}  // namespace edscore
