// SPDX-License-Identifier: Apache-2.0
//
// Stage orchestration behind the CLI subcommands: corpus generation, vocab
// construction, pre-training (domain and generic), per-item fine-tuning, and
// the baseline-vs-adapted comparison with report and plots. The acceptance
// suite drives the same functions.

#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "edscore/checkpoint.hpp"
#include "edscore/config.hpp"
#include "edscore/corpus.hpp"
#include "edscore/finetune.hpp"
#include "edscore/folds.hpp"
#include "edscore/generator.hpp"
#include "edscore/nn.hpp"
#include "edscore/pretrain.hpp"
#include "edscore/prompts.hpp"
#include "edscore/report.hpp"
#include "edscore/stats.hpp"
#include "edscore/svg.hpp"
#include "edscore/tokenizer.hpp"

namespace edscore {

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

struct GenCorpusOutput {
    std::filesystem::path domain_file;
    std::filesystem::path generic_file;
    std::vector<std::filesystem::path> item_files;
    std::filesystem::path manifest_file;
};

namespace pipeline_detail {

inline std::string item_code(const char* prefix, int index) {
    const int block = 101 + index;
    return std::string(prefix) + std::to_string(block) + "Q01";
}

// Global synonym groups over the science pool, shared by every item. The
// domain corpus uses group members interchangeably in identical contexts, so
// MLM pre-training can learn their equivalence; that equivalence is what
// transfers to held-out items.
inline std::vector<ConceptGroup> make_global_groups(const RunConfig& cfg,
                                                    const std::vector<std::string>& science_pool) {
    std::vector<std::string> pool = science_pool;
    Rng rng(mix_seed(cfg.seed, 0x9007, 0, 0));
    rng.shuffle(pool);
    const int gsz = std::max(1, cfg.gen_synonym_group_size);
    std::vector<ConceptGroup> groups;
    for (std::size_t at = 0; at + static_cast<std::size_t>(gsz) <= pool.size();
         at += static_cast<std::size_t>(gsz)) {
        ConceptGroup g;
        for (int k = 0; k < gsz; ++k) g.synonyms.push_back(pool[at + static_cast<std::size_t>(k)]);
        groups.push_back(std::move(g));
    }
    if (groups.size() < static_cast<std::size_t>(cfg.gen_max_labels - 1))
        throw DataError("science lexicon too small for the configured synonym groups");
    return groups;
}

inline std::vector<GenItem> make_items(const RunConfig& cfg, const char* prefix, int count,
                                       SplitHint role, bool with_concepts,
                                       const std::vector<ConceptGroup>& global_groups,
                                       std::uint64_t stream) {
    std::vector<GenItem> items;
    for (int i = 0; i < count; ++i) {
        GenItem item;
        item.item_id = item_code(prefix, i);
        item.role = role;
        const int span = cfg.gen_max_labels - cfg.gen_min_labels + 1;
        item.num_labels = cfg.gen_min_labels + i % span;
        item.mean_length =
            count > 1 ? cfg.gen_length_min + (cfg.gen_length_max - cfg.gen_length_min) *
                                                 static_cast<double>(i) /
                                                 static_cast<double>(count - 1)
                      : 0.5 * (cfg.gen_length_min + cfg.gen_length_max);
        if (with_concepts) {
            const int needed = item.num_labels - 1;
            std::vector<std::size_t> order(global_groups.size());
            for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
            if (role == SplitHint::pretrain) {
                // rotate deterministically so the pre-training items jointly
                // cover every global group
                std::rotate(order.begin(),
                            order.begin() + (static_cast<std::size_t>(i) * needed) % order.size(),
                            order.end());
            } else {
                Rng rng(mix_seed(cfg.seed, stream, static_cast<std::uint64_t>(i), 0xc09c));
                rng.shuffle(order);
            }
            for (int g = 0; g < needed; ++g)
                item.concepts.push_back(global_groups[order[static_cast<std::size_t>(g)]]);
        }
        items.push_back(std::move(item));
    }
    return items;
}

inline std::vector<std::string> lexicon_words(const Lexicon& lex) {
    return std::vector<std::string>(lex.words.begin(), lex.words.end());
}

}  // namespace pipeline_detail

inline GenCorpusOutput run_gen_corpus(const RunConfig& cfg) {
    const Lexicon german = load_lexicon(cfg.lexicon);
    const Lexicon science = load_lexicon(cfg.science_lexicon);
    for (const auto& w : science.words)
        if (!german.contains(w))
            throw DataError("science lexicon word missing from the German lexicon: " + w);

    std::vector<std::string> science_pool = pipeline_detail::lexicon_words(science);
    std::vector<std::string> filler_pool;
    for (const auto& w : german.words)
        if (!science.contains(w)) filler_pool.push_back(w);

    const auto global_groups = pipeline_detail::make_global_groups(cfg, science_pool);
    const auto finetune_items = pipeline_detail::make_items(
        cfg, "S", cfg.gen_finetune_items, SplitHint::finetune, true, global_groups, 0x51);
    const auto pretrain_items = pipeline_detail::make_items(
        cfg, "P", cfg.gen_pretrain_items, SplitHint::pretrain, true, global_groups, 0x52);

    GeneratorSpec pretrain_spec;
    pretrain_spec.science_pool = science_pool;
    pretrain_spec.filler_pool = filler_pool;
    pretrain_spec.responses_per_item = cfg.gen_pretrain_responses;
    pretrain_spec.misspell_rate = cfg.gen_misspell_rate;
    pretrain_spec.science_density = cfg.gen_science_density;
    pretrain_spec.items = pretrain_items;

    GeneratorSpec finetune_spec = pretrain_spec;
    finetune_spec.responses_per_item = cfg.gen_responses_per_item;
    finetune_spec.items = finetune_items;

    // concept-free corpus of equal shape for the baseline's generic pre-training
    GeneratorSpec generic_spec;
    generic_spec.filler_pool = filler_pool;
    generic_spec.responses_per_item = cfg.gen_pretrain_responses;
    generic_spec.misspell_rate = cfg.gen_misspell_rate;
    generic_spec.science_density = 0.0;
    generic_spec.items = pipeline_detail::make_items(cfg, "G", cfg.gen_pretrain_items,
                                                     SplitHint::pretrain, false, global_groups,
                                                     0x53);

    // disjoint item ids across all roles
    std::set<std::string> ids;
    for (const auto& spec : {&pretrain_spec, &finetune_spec, &generic_spec})
        for (const auto& item : spec->items)
            if (!ids.insert(item.item_id).second)
                throw DataError("colliding item id: " + item.item_id);

    const auto domain_pretrain = generate_corpus(pretrain_spec, cfg.seed);
    const auto finetune_records = generate_corpus(finetune_spec, mix_seed(cfg.seed, 0x5e, 0, 0));
    const auto generic_records = generate_corpus(generic_spec, mix_seed(cfg.seed, 0x9e, 0, 0));

    const std::filesystem::path dir(cfg.corpus_dir);
    std::filesystem::create_directories(dir / "items");

    GenCorpusOutput out;
    out.domain_file = dir / "pretrain_domain.tsv";
    out.generic_file = dir / "pretrain_generic.tsv";
    out.manifest_file = dir / "manifest.tsv";

    std::map<std::string, int> pretrain_labels, generic_labels;
    std::map<std::string, std::vector<ScoredResponse>> per_item;
    for (const auto& rec : finetune_records) per_item[rec.item_id].push_back(rec);
    for (const auto& item : pretrain_items) pretrain_labels[item.item_id] = item.num_labels;
    for (const auto& item : generic_spec.items) generic_labels[item.item_id] = item.num_labels;

    save_dataset(out.domain_file, domain_pretrain, pretrain_labels);
    save_dataset(out.generic_file, generic_records, generic_labels);
    for (const auto& item : finetune_items) {
        const auto path = dir / "items" / (item.item_id + ".tsv");
        save_dataset(path, per_item.at(item.item_id), {{item.item_id, item.num_labels}});
        out.item_files.push_back(path);
    }

    std::string manifest = "# corpus manifest\n# config_hash=" + config_hash(cfg) +
                           "\n# seed=" + std::to_string(cfg.seed) + "\n";
    manifest += "item_id\trole\tlabels\tcount\tmean_length\n";
    auto manifest_row = [&](const GenItem& item, const char* role, long count) {
        manifest += item.item_id + "\t" + role + "\t" + std::to_string(item.num_labels) + "\t" +
                    std::to_string(count) + "\t" + format_double(item.mean_length) + "\n";
    };
    for (const auto& item : pretrain_items)
        manifest_row(item, "pretrain", cfg.gen_pretrain_responses);
    for (const auto& item : generic_spec.items)
        manifest_row(item, "generic", cfg.gen_pretrain_responses);
    for (const auto& item : finetune_items)
        manifest_row(item, "finetune", cfg.gen_responses_per_item);
    write_text_file(out.manifest_file, manifest);
    echo_config(dir, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// build-vocab
// ---------------------------------------------------------------------------

inline Vocab run_build_vocab(const RunConfig& cfg) {
    const Lexicon german = load_lexicon(cfg.lexicon);
    const std::filesystem::path dir(cfg.corpus_dir);
    std::vector<std::string> docs;
    for (const char* name : {"pretrain_domain.tsv", "pretrain_generic.tsv"}) {
        const auto records = load_dataset(dir / name);
        for (const auto& rec : records)
            docs.push_back(rec.task_text + " " + correct_spelling(rec.response_text, german));
    }
    // prompt scaffolding must be covered by whole-word-ish tokens
    PromptSpec spec;
    spec.directive_template = cfg.prompt_directive;
    spec.context_template = cfg.prompt_context;
    spec.label_names = default_label_names(5);
    const std::string prompt_text = prompt_vocabulary_text(spec);
    for (int i = 0; i < 50; ++i) docs.push_back(prompt_text);

    const Vocab vocab = build_vocab(docs, cfg.model_vocab_size);
    save_vocab(cfg.vocab, vocab);
    return vocab;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainOutput {
    std::filesystem::path checkpoint;
    std::filesystem::path trajectory;
    long steps = 0;
};

inline PretrainOutput run_pretrain(const RunConfig& cfg, const std::filesystem::path& corpus_file,
                                   const std::filesystem::path& out_dir) {
    const Vocab vocab = load_vocab(cfg.vocab);
    const Lexicon german = load_lexicon(cfg.lexicon);
    const auto records = load_dataset(corpus_file);
    if (records.empty()) throw DataError("pretrain corpus is empty: " + corpus_file.string());

    std::vector<TokenizedPair> pairs;
    pairs.reserve(records.size());
    for (const auto& rec : records)
        pairs.push_back(encode_pair(rec.task_text, correct_spelling(rec.response_text, german),
                                    vocab, cfg.model_max_len));

    ModelConfig model_cfg = cfg.model_config(vocab.size(), cfg.gen_max_labels);
    // identical initialization for every pre-training run at the same seed, so
    // baseline vs adapted differ only in their corpus
    ModelParams<float> params = init_params<float>(model_cfg, mix_seed(cfg.seed, 0x171, 0, 0));

    PretrainHyper hyper;
    hyper.lr = cfg.pretrain_lr;
    hyper.batch_size = cfg.batch_size;
    hyper.epochs = cfg.pretrain_epochs;
    hyper.mask_rate = cfg.mask_rate;
    hyper.seed = mix_seed(cfg.seed, 0x93e, fnv1a(corpus_file.filename().string()), 0);

    PretrainOutput out;
    out.checkpoint = out_dir / "checkpoint.gseb";
    out.trajectory = out_dir / "trajectory.tsv";
    CheckpointMeta meta{"pretrain", config_hash(cfg), cfg.seed};
    const auto result = pretrain_loop(std::move(pairs), params, model_cfg, hyper, out.checkpoint,
                                      meta);
    save_trajectory(out.trajectory, result.trajectory);
    echo_config(out_dir, cfg);
    out.steps = result.steps;
    return out;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneItemOutput {
    std::string item_id;
    int num_labels = 0;
    double qwk = 0.0;
    long n_train_rot0 = 0;
    long n_test_rot0 = 0;
    std::filesystem::path predictions_file;
    std::filesystem::path audit_file;
    FinetuneResult result;
};

namespace pipeline_detail {

inline void check_stage_compatibility(const ModelConfig& ck, const ModelConfig& want,
                                      const std::string& checkpoint_path) {
    const bool ok = ck.num_layers == want.num_layers && ck.num_heads == want.num_heads &&
                    ck.hidden_dim == want.hidden_dim && ck.ff_dim == want.ff_dim &&
                    ck.max_len == want.max_len && ck.vocab_size == want.vocab_size;
    if (!ok)
        throw DataError("checkpoint " + checkpoint_path +
                        " was produced under a different model config; re-run build-vocab and "
                        "pretrain with the current config, or point paths.* at matching "
                        "artifacts");
}

}  // namespace pipeline_detail

inline FinetuneItemOutput run_finetune_item(const RunConfig& cfg,
                                            const std::filesystem::path& item_file,
                                            const std::filesystem::path& checkpoint_path,
                                            const std::filesystem::path& out_dir,
                                            const std::string& model_tag) {
    const Vocab vocab = load_vocab(cfg.vocab);
    const Lexicon german = load_lexicon(cfg.lexicon);
    auto ck = load_checkpoint<float>(checkpoint_path);
    pipeline_detail::check_stage_compatibility(
        ck.config, cfg.model_config(vocab.size(), ck.config.num_labels),
        checkpoint_path.string());
    // the frozen encoder for over-length inputs defaults to the base being
    // fine-tuned but can be pinned to a specific checkpoint
    ModelParams<float>* frozen = &ck.params;
    LoadedCheckpoint<float> frozen_ck;
    if (!cfg.frozen_checkpoint.empty()) {
        frozen_ck = load_checkpoint<float>(cfg.frozen_checkpoint);
        pipeline_detail::check_stage_compatibility(frozen_ck.config, ck.config,
                                                   cfg.frozen_checkpoint);
        frozen = &frozen_ck.params;
    }

    auto dataset = load_dataset_full(item_file);
    if (dataset.records.empty()) throw DataError("item file has no records: " + item_file.string());
    const std::string item_id = dataset.records.front().item_id;
    for (const auto& rec : dataset.records)
        if (rec.item_id != item_id)
            throw DataError("item file mixes item ids: " + item_file.string());
    int num_labels = 0;
    if (dataset.labels_by_item.count(item_id)) {
        num_labels = dataset.labels_by_item.at(item_id);
    } else {
        for (const auto& rec : dataset.records) num_labels = std::max(num_labels, rec.score + 1);
        num_labels = std::max(num_labels, 2);
    }

    for (auto& rec : dataset.records)
        rec.response_text = correct_spelling(rec.response_text, german);

    PromptSpec prompt_spec;
    prompt_spec.directive_template = cfg.prompt_directive;
    prompt_spec.context_template = cfg.prompt_context;
    prompt_spec.num_in_context_examples = cfg.prompt_examples;
    prompt_spec.max_example_words = cfg.prompt_max_example_words;
    prompt_spec.label_names = default_label_names(num_labels);

    ModelConfig model_cfg = ck.config;
    model_cfg.dropout_rate = cfg.model_dropout;

    FinetuneHyper hyper;
    hyper.lr = cfg.lr;
    hyper.head_lr_scale = cfg.head_lr_scale;
    hyper.warmup_fraction = cfg.warmup_fraction;
    hyper.batch_size = cfg.batch_size;
    hyper.epochs = cfg.epochs;
    hyper.folds = cfg.folds;
    hyper.seed = mix_seed(cfg.seed, 0xf17e, fnv1a(item_id), 0);
    hyper.average_qwk = cfg.average_qwk;

    FinetuneItemOutput out;
    out.item_id = item_id;
    out.num_labels = num_labels;
    out.result = finetune_item(dataset.records, item_id, num_labels, ck.params, model_cfg, vocab,
                               prompt_spec, hyper,
                               cfg.frozen_checkpoint.empty() ? nullptr : frozen);
    out.qwk = out.result.qwk;

    for (const auto& e : out.result.audit) {
        if (e.rotation != 0) continue;
        if (e.kind == "train" || e.kind == "validation") ++out.n_train_rot0;
        if (e.kind == "test") ++out.n_test_rot0;
    }

    std::filesystem::create_directories(out_dir);
    out.predictions_file = out_dir / ("predictions_" + model_tag + ".tsv");
    out.audit_file = out_dir / ("audit_" + model_tag + ".tsv");
    const std::string hash = config_hash(cfg);
    save_predictions(out.predictions_file, item_id, num_labels, model_tag, hash, out.result);
    save_audit(out.audit_file, item_id, out.result.audit);

    std::string meta = "# finetune item=" + item_id + " model=" + model_tag +
                       " config_hash=" + hash + "\n";
    meta += "qwk\t" + format_double(out.qwk) + "\n";
    for (const auto& rot : out.result.rotations) {
        meta += "rotation\t" + std::to_string(rot.rotation) + "\tselected_epoch\t" +
                std::to_string(rot.selected_epoch) + "\tval_metric";
        for (double v : rot.val_metric_per_epoch) meta += "\t" + format_double(v);
        meta += "\n";
        for (const auto& w : rot.warnings) meta += "# warning " + w + "\n";
    }
    write_text_file(out_dir / ("meta_" + model_tag + ".txt"), meta);
    return out;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareOutput {
    MetricReport report;
    std::filesystem::path report_file;
    std::filesystem::path length_plot;
    std::filesystem::path science_plot;
    std::vector<std::string> skipped_items;
};

inline CompareOutput run_compare(const RunConfig& cfg) {
    const std::filesystem::path items_dir = std::filesystem::path(cfg.corpus_dir) / "items";
    if (!std::filesystem::exists(items_dir))
        throw DataError("no items directory under " + cfg.corpus_dir + "; run gen-corpus first");
    std::vector<std::filesystem::path> item_files;
    for (const auto& entry : std::filesystem::directory_iterator(items_dir))
        if (entry.path().extension() == ".tsv") item_files.push_back(entry.path());
    std::sort(item_files.begin(), item_files.end());
    if (item_files.empty()) throw DataError("no item files under " + items_dir.string());
    if (!std::filesystem::exists(cfg.checkpoint_baseline))
        throw DataError("missing baseline checkpoint: " + cfg.checkpoint_baseline +
                        "; run pretrain on the generic corpus first");
    if (!std::filesystem::exists(cfg.checkpoint_adapted))
        throw DataError("missing adapted checkpoint: " + cfg.checkpoint_adapted +
                        "; run pretrain on the domain corpus first");
    {
        const auto ck_b = load_checkpoint<float>(cfg.checkpoint_baseline);
        const auto ck_a = load_checkpoint<float>(cfg.checkpoint_adapted);
        pipeline_detail::check_stage_compatibility(ck_b.config, ck_a.config,
                                                   cfg.checkpoint_baseline);
    }

    const Lexicon german = load_lexicon(cfg.lexicon);
    const Lexicon science = load_lexicon(cfg.science_lexicon);
    const std::filesystem::path out_root = std::filesystem::path(cfg.out_dir) / "compare";
    std::filesystem::create_directories(out_root);

    CompareOutput out;
    struct ItemSlot {
        bool skipped = false;
        std::string skip_reason;
        ReportRow row;
    };
    std::vector<ItemSlot> slots(item_files.size());

    auto process_item = [&](std::size_t idx) {
        const auto& item_file = item_files[idx];
        auto& slot = slots[idx];
        const auto dataset = load_dataset_full(item_file);
        if (static_cast<int>(dataset.records.size()) < cfg.folds) {
            slot.skipped = true;
            slot.skip_reason = "fewer records than folds";
            slot.row.item_id = dataset.records.empty() ? item_file.stem().string()
                                                       : dataset.records.front().item_id;
            return;
        }
        const auto item_out_dir = out_root / "items" / item_file.stem().string();
        const auto baseline = run_finetune_item(cfg, item_file, cfg.checkpoint_baseline,
                                                item_out_dir, "baseline");
        const auto adapted = run_finetune_item(cfg, item_file, cfg.checkpoint_adapted,
                                               item_out_dir, "adapted");
        ReportRow row;
        row.item_id = baseline.item_id;
        row.n_train = baseline.n_train_rot0;
        row.n_test = baseline.n_test_rot0;
        row.num_labels = baseline.num_labels;
        row.qwk_baseline = baseline.qwk;
        row.qwk_adapted = adapted.qwk;
        std::vector<std::string> responses;
        for (const auto& rec : dataset.records)
            responses.push_back(correct_spelling(rec.response_text, german));
        row.avg_response_length = avg_response_length(responses);
        row.scientific_word_rate = scientific_word_rate(responses, science);
        slot.row = row;
    };

    if (cfg.threads <= 1 || item_files.size() <= 1) {
        for (std::size_t i = 0; i < item_files.size(); ++i) process_item(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const int n_workers = std::min<int>(cfg.threads, static_cast<int>(item_files.size()));
        for (int w = 0; w < n_workers; ++w)
            workers.emplace_back([&]() {
                for (std::size_t i = next.fetch_add(1); i < item_files.size();
                     i = next.fetch_add(1))
                    process_item(i);
            });
        for (auto& t : workers) t.join();
    }

    std::vector<ReportRow> rows;
    for (const auto& slot : slots) {
        if (slot.skipped) {
            out.skipped_items.push_back(slot.row.item_id + " (" + slot.skip_reason + ")");
            continue;
        }
        rows.push_back(slot.row);
    }
    if (rows.empty()) throw DataError("compare: every item was skipped");
    out.report = build_report(std::move(rows));

    const std::string hash = config_hash(cfg);
    std::string report_text = render_report(out.report, hash);
    for (const auto& skipped : out.skipped_items)
        report_text += "# warning skipped item " + skipped + "\n";
    out.report_file = out_root / "report.tsv";
    write_text_file(out.report_file, report_text);

    auto make_plot = [&](const std::string& feature_key, const std::string& x_label,
                         auto feature_of) {
        std::vector<PlotSeries> series(2);
        series[0].name = "baseline";
        series[0].color = "#d95f02";
        series[1].name = "adapted";
        series[1].color = "#1b9e77";
        for (const auto& row : out.report.rows) {
            series[0].x.push_back(feature_of(row));
            series[0].y.push_back(row.qwk_baseline);
            series[1].x.push_back(feature_of(row));
            series[1].y.push_back(row.qwk_adapted);
        }
        series[0].trend = out.report.regressions.at("baseline/" + feature_key);
        series[1].trend = out.report.regressions.at("adapted/" + feature_key);
        return render_scatter_svg(x_label, series);
    };
    if (out.report.has_regressions) {
        out.length_plot = out_root / "length_vs_qwk.svg";
        out.science_plot = out_root / "scientific_words_vs_qwk.svg";
        write_text_file(out.length_plot,
                        make_plot("avg_response_length", "average response length (words)",
                                  [](const ReportRow& r) { return r.avg_response_length; }));
        write_text_file(out.science_plot,
                        make_plot("scientific_word_rate", "average scientific words",
                                  [](const ReportRow& r) { return r.scientific_word_rate; }));
    }
    echo_config(out_root, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOutput {
    std::string item_id;
    int num_labels = 0;
    std::size_t n = 0;
    double qwk_recomputed = 0.0;
    bool matches_stored = true;
    std::vector<std::string> leakage_violations;
};

inline EvaluateOutput run_evaluate(const std::filesystem::path& predictions_path,
                                   const std::filesystem::path& audit_path = {}) {
    const auto pf = load_predictions(predictions_path);
    EvaluateOutput out;
    out.item_id = pf.item_id;
    out.num_labels = pf.num_labels;
    out.n = pf.predictions.size();
    out.qwk_recomputed = pooled_qwk(pf.predictions, pf.num_labels);
    if (pf.has_stored_qwk && std::fabs(out.qwk_recomputed - pf.stored_qwk) > 1e-12)
        out.matches_stored = false;
    if (!audit_path.empty()) out.leakage_violations = audit_leakage(load_audit(audit_path));
    return out;
}

}  // namespace edscore
