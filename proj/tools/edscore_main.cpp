// SPDX-License-Identifier: Apache-2.0
//
// edscore command line: gen-corpus, build-vocab, pretrain, finetune,
// evaluate, compare. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "edscore/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    long seed = -1;

    edscore::RunConfig load() const {
        std::vector<std::string> all = overrides;
        if (seed >= 0) all.push_back("seed=" + std::to_string(seed));
        return edscore::load_run_config(config_path, all);
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "override the run seed");
    cmd->add_option("--set", args.overrides, "override a config key (key=value, repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
    edscore::enable_flush_to_zero();
    CLI::App app{"desk-scale domain-adaptive pre-training and response scoring"};
    app.require_subcommand(1);

    CommonArgs gen_args, vocab_args, pretrain_args, finetune_args, evaluate_args, compare_args;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic scored-response corpus");
    add_common(gen, gen_args);

    auto* vocab = app.add_subcommand("build-vocab", "build the subword vocabulary");
    add_common(vocab, vocab_args);

    auto* pretrain = app.add_subcommand("pretrain", "masked-language-model pre-training");
    add_common(pretrain, pretrain_args);
    std::string pretrain_corpus = "domain";
    pretrain->add_option("--corpus", pretrain_corpus,
                         "which corpus to train on: domain, generic, or a file path");
    std::string pretrain_out;
    pretrain->add_option("--out", pretrain_out, "output directory (default per corpus)");

    auto* finetune = app.add_subcommand("finetune", "fine-tune and score one item");
    add_common(finetune, finetune_args);
    std::string finetune_item_path;
    finetune->add_option("--item", finetune_item_path, "item dataset file")
        ->required()
        ->check(CLI::ExistingFile);
    std::string finetune_checkpoint;
    finetune->add_option("--checkpoint", finetune_checkpoint,
                         "base checkpoint (default: paths.checkpoint_adapted)");
    std::string finetune_tag = "adapted";
    finetune->add_option("--tag", finetune_tag, "model tag used in output file names");

    auto* evaluate = app.add_subcommand("evaluate", "recompute metrics from a predictions file");
    add_common(evaluate, evaluate_args);
    std::string eval_predictions;
    evaluate->add_option("--predictions", eval_predictions, "predictions file")
        ->required()
        ->check(CLI::ExistingFile);
    std::string eval_audit;
    evaluate->add_option("--audit", eval_audit, "audit file for the leakage check")
        ->check(CLI::ExistingFile);

    auto* compare = app.add_subcommand("compare",
                                       "fine-tune every item from both checkpoints and report");
    add_common(compare, compare_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse error
        return code == 0 ? 0 : 1;     // usage errors exit 1
    }

    try {
        if (gen->parsed()) {
            const auto cfg = gen_args.load();
            const auto out = edscore::run_gen_corpus(cfg);
            std::printf("corpus written under %s (%zu finetune items)\n", cfg.corpus_dir.c_str(),
                        out.item_files.size());
        } else if (vocab->parsed()) {
            const auto cfg = vocab_args.load();
            const auto v = edscore::run_build_vocab(cfg);
            std::printf("vocab of %d tokens written to %s\n", v.size(), cfg.vocab.c_str());
        } else if (pretrain->parsed()) {
            const auto cfg = pretrain_args.load();
            std::filesystem::path corpus_file;
            std::filesystem::path out_dir;
            if (pretrain_corpus == "domain") {
                corpus_file = std::filesystem::path(cfg.corpus_dir) / "pretrain_domain.tsv";
                out_dir = std::filesystem::path(cfg.out_dir) / "pretrain_domain";
            } else if (pretrain_corpus == "generic") {
                corpus_file = std::filesystem::path(cfg.corpus_dir) / "pretrain_generic.tsv";
                out_dir = std::filesystem::path(cfg.out_dir) / "pretrain_generic";
            } else {
                corpus_file = pretrain_corpus;
                out_dir = std::filesystem::path(cfg.out_dir) / "pretrain_custom";
            }
            if (!pretrain_out.empty()) out_dir = pretrain_out;
            const auto out = edscore::run_pretrain(cfg, corpus_file, out_dir);
            std::printf("pretrained %ld steps; checkpoint at %s\n", out.steps,
                        out.checkpoint.string().c_str());
        } else if (finetune->parsed()) {
            const auto cfg = finetune_args.load();
            const std::string checkpoint =
                finetune_checkpoint.empty() ? cfg.checkpoint_adapted : finetune_checkpoint;
            const auto out_dir = std::filesystem::path(cfg.out_dir) / "finetune" /
                                 std::filesystem::path(finetune_item_path).stem().string();
            const auto out = edscore::run_finetune_item(cfg, finetune_item_path, checkpoint,
                                                        out_dir, finetune_tag);
            std::printf("item %s: pooled QWK %s (predictions at %s)\n", out.item_id.c_str(),
                        edscore::format_double(out.qwk).c_str(),
                        out.predictions_file.string().c_str());
            for (const auto& rot : out.result.rotations)
                for (const auto& warning : rot.warnings)
                    std::fprintf(stderr, "warning: %s\n", warning.c_str());
        } else if (evaluate->parsed()) {
            (void)evaluate_args;
            const auto out = edscore::run_evaluate(eval_predictions, eval_audit);
            std::printf("item %s: n=%zu labels=%d qwk=%s\n", out.item_id.c_str(), out.n,
                        out.num_labels, edscore::format_double(out.qwk_recomputed).c_str());
            if (!out.matches_stored)
                throw edscore::NumericError(
                    "recomputed QWK deviates from the value stored at training time");
            for (const auto& v : out.leakage_violations)
                std::fprintf(stderr, "leakage: %s\n", v.c_str());
            if (!out.leakage_violations.empty())
                throw edscore::DataError("leakage audit failed");
            if (!eval_audit.empty()) std::printf("leakage audit: clean\n");
        } else if (compare->parsed()) {
            const auto cfg = compare_args.load();
            const auto out = edscore::run_compare(cfg);
            std::printf("report: %s\n", out.report_file.string().c_str());
            std::printf("mean QWK baseline=%s adapted=%s (t=%s, df=%d, p=%s)\n",
                        edscore::format_double(out.report.mean_qwk_baseline).c_str(),
                        edscore::format_double(out.report.mean_qwk_adapted).c_str(),
                        edscore::format_double(out.report.t_test.t).c_str(),
                        out.report.t_test.df,
                        edscore::format_double(out.report.t_test.p_value).c_str());
            for (const auto& skipped : out.skipped_items)
                std::fprintf(stderr, "warning: skipped item %s\n", skipped.c_str());
        }
    } catch (const edscore::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const edscore::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const edscore::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
