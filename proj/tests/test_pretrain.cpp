// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "edscore/checkpoint.hpp"
#include "edscore/pretrain.hpp"
#include "support.hpp"

using namespace edscore;
using edscore::testing::random_pair;
using edscore::testing::tiny_config;

namespace {

std::vector<TokenizedPair> corpus_batch(const ModelConfig& cfg, Rng& rng, int n) {
    std::vector<TokenizedPair> out;
    for (int i = 0; i < n; ++i)
        out.push_back(random_pair(cfg, rng, static_cast<int>(rng.uniform_int(8, cfg.max_len))));
    return out;
}

// learnable corpus: content tokens follow a skewed unigram distribution, so
// MLM loss can fall well below the ln(vocab) baseline
std::vector<TokenizedPair> structured_corpus(const ModelConfig& cfg, Rng& rng, int n) {
    auto skewed = [&]() {
        const double u = rng.next_unit();
        if (u < 0.55) return 7;
        if (u < 0.80) return 8;
        if (u < 0.92) return 9;
        return 10;
    };
    std::vector<TokenizedPair> out;
    for (int i = 0; i < n; ++i) {
        auto tp = random_pair(cfg, rng, static_cast<int>(rng.uniform_int(8, cfg.max_len)));
        for (std::size_t p = 0; p < tp.token_ids.size(); ++p) {
            const int id = tp.token_ids[p];
            if (id == kClsId || id == kSepId || id == kPadId) continue;
            tp.token_ids[p] = skewed();
        }
        out.push_back(std::move(tp));
    }
    return out;
}

std::filesystem::path tmp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "edscore_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("apply_masking: rate 0 is the identity") {
    const auto cfg = tiny_config();
    Rng rng(3);
    const auto pairs = corpus_batch(cfg, rng, 5);
    const auto masked = apply_masking(pairs, 0.0, cfg.vocab_size, 1);
    for (std::size_t s = 0; s < pairs.size(); ++s) {
        CHECK(masked.inputs[s].token_ids == pairs[s].token_ids);
        for (int t : masked.targets[s]) CHECK(t == -1);
    }
}

TEST_CASE("apply_masking: deterministic per seed") {
    const auto cfg = tiny_config();
    Rng rng(4);
    const auto pairs = corpus_batch(cfg, rng, 8);
    const auto a = apply_masking(pairs, 0.15, cfg.vocab_size, 9);
    const auto b = apply_masking(pairs, 0.15, cfg.vocab_size, 9);
    for (std::size_t s = 0; s < pairs.size(); ++s) {
        CHECK(a.inputs[s].token_ids == b.inputs[s].token_ids);
        CHECK(a.targets[s] == b.targets[s]);
    }
    const auto c = apply_masking(pairs, 0.15, cfg.vocab_size, 10);
    bool differs = false;
    for (std::size_t s = 0; s < pairs.size(); ++s)
        if (a.inputs[s].token_ids != c.inputs[s].token_ids) differs = true;
    CHECK(differs);
}

TEST_CASE("apply_masking: statistics over 1000 sequences") {
    ModelConfig cfg = tiny_config(200);
    cfg.max_len = 48;
    Rng rng(5);
    const auto pairs = corpus_batch(cfg, rng, 1000);
    const auto masked = apply_masking(pairs, 0.15, cfg.vocab_size, 77);

    long maskable = 0, target_count = 0;
    long to_mask = 0, to_random = 0, to_keep = 0;
    for (std::size_t s = 0; s < pairs.size(); ++s) {
        for (std::size_t p = 0; p < pairs[s].token_ids.size(); ++p) {
            const int id = pairs[s].token_ids[p];
            const bool special = id == kClsId || id == kSepId || id == kPadId;
            if (!special && pairs[s].attention_mask[p] == 1) ++maskable;
            if (masked.targets[s][p] >= 0) {
                CHECK_FALSE(special);
                ++target_count;
                const int replaced = masked.inputs[s].token_ids[p];
                if (replaced == kMaskId)
                    ++to_mask;
                else if (replaced == id)
                    ++to_keep;
                else
                    ++to_random;
                // replacement is [MASK] or a real token, never another special
                CHECK((replaced == kMaskId || replaced >= 5));
            }
        }
    }
    const double fraction = static_cast<double>(target_count) / static_cast<double>(maskable);
    CHECK(fraction >= 0.13);
    CHECK(fraction <= 0.17);
    const double n = static_cast<double>(target_count);
    CHECK(std::fabs(to_mask / n - 0.8) < 0.03);
    CHECK(std::fabs(to_random / n - 0.1) < 0.03);
    CHECK(std::fabs(to_keep / n - 0.1) < 0.03);
}

TEST_CASE("apply_masking: per-sequence quota within one position of the rate") {
    const auto cfg = tiny_config(64);
    Rng rng(6);
    const auto pairs = corpus_batch(cfg, rng, 50);
    const auto masked = apply_masking(pairs, 0.25, cfg.vocab_size, 3);
    for (std::size_t s = 0; s < pairs.size(); ++s) {
        long maskable = 0, chosen = 0;
        for (std::size_t p = 0; p < pairs[s].token_ids.size(); ++p) {
            const int id = pairs[s].token_ids[p];
            if (id != kClsId && id != kSepId && id != kPadId && pairs[s].attention_mask[p] == 1)
                ++maskable;
            if (masked.targets[s][p] >= 0) ++chosen;
        }
        CHECK(std::fabs(static_cast<double>(chosen) -
                        0.25 * static_cast<double>(maskable)) <= 1.0);
    }
}

TEST_CASE("apply_masking: rate outside [0, 0.5] rejected") {
    const auto cfg = tiny_config();
    Rng rng(3);
    const auto pairs = corpus_batch(cfg, rng, 2);
    CHECK_THROWS_AS(apply_masking(pairs, 0.6, cfg.vocab_size, 1), DataError);
    CHECK_THROWS_AS(apply_masking(pairs, -0.1, cfg.vocab_size, 1), DataError);
}

TEST_CASE("checkpoint: save/load round trip is exact for float models") {
    const auto cfg = tiny_config();
    const auto params = init_params<float>(cfg, 21);
    const auto path = tmp_path("roundtrip.gseb");
    save_checkpoint(path, cfg, params, {"pretrain", "cafebabe", 21});
    auto loaded = load_checkpoint<float>(path);
    CHECK(loaded.meta.stage == "pretrain");
    CHECK(loaded.meta.config_hash == "cafebabe");
    CHECK(loaded.meta.seed == 21);
    CHECK(loaded.config.hidden_dim == cfg.hidden_dim);
    auto a = param_manifest(const_cast<ModelParams<float>&>(params));
    auto b = param_manifest(loaded.params);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t].tensor->v == b[t].tensor->v);
}

TEST_CASE("checkpoint: bad magic and truncation rejected") {
    const auto path = tmp_path("bad.gseb");
    write_text_file(path, "NOTGSEB\nstuff\n");
    CHECK_THROWS_AS(load_checkpoint<float>(path), DataError);
}

TEST_CASE("pretrain: initial loss is near ln(vocab)") {
    const auto cfg = tiny_config(100);
    auto params = init_params<float>(cfg, 55);
    Rng rng(7);
    const auto pairs = corpus_batch(cfg, rng, 32);
    const auto masked = apply_masking(pairs, 0.15, cfg.vocab_size, 2);
    const auto traces = forward_batch(params, cfg, masked.inputs);
    const double loss = mlm_loss(params, cfg, traces, masked.targets);
    CHECK(loss > 0.9 * std::log(100.0));
    CHECK(loss < 1.1 * std::log(100.0));
}

TEST_CASE("pretrain: loop decreases loss and writes checkpoints") {
    ModelConfig cfg = tiny_config(60);
    cfg.dropout_rate = 0.0;
    auto params = init_params<float>(cfg, 66);
    Rng rng(8);
    std::vector<TokenizedPair> corpus = structured_corpus(cfg, rng, 96);

    PretrainHyper hyper;
    hyper.lr = 3e-3;
    hyper.batch_size = 16;
    hyper.epochs = 10;
    hyper.seed = 5;
    const auto ck_path = tmp_path("pretrain_loop.gseb");
    const auto result =
        pretrain_loop(corpus, params, cfg, hyper, ck_path, {"pretrain", "h", 5});
    REQUIRE(result.trajectory.size() >= 30);

    double head = 0.0, tail = 0.0;
    const std::size_t span = 6;
    for (std::size_t i = 0; i < span; ++i) {
        head += result.trajectory[i].loss;
        tail += result.trajectory[result.trajectory.size() - 1 - i].loss;
    }
    CHECK(tail < 0.6 * head);

    // the written checkpoint matches the final in-memory parameters
    const auto loaded = load_checkpoint<float>(ck_path);
    CHECK(loaded.params.tok_emb.v == params.tok_emb.v);
    CHECK(loaded.params.mlm_w.v == params.mlm_w.v);
}

TEST_CASE("pretrain: epochs 0 stores exactly the initialization") {
    const auto cfg = tiny_config();
    auto params = init_params<float>(cfg, 9);
    const auto snapshot = params.tok_emb.v;
    Rng rng(9);
    auto corpus = corpus_batch(cfg, rng, 8);
    PretrainHyper hyper;
    hyper.epochs = 0;
    const auto ck_path = tmp_path("pretrain_zero.gseb");
    pretrain_loop(corpus, params, cfg, hyper, ck_path, {"init", "h", 9});
    const auto loaded = load_checkpoint<float>(ck_path);
    CHECK(loaded.params.tok_emb.v == snapshot);
    CHECK(params.tok_emb.v == snapshot);
}

TEST_CASE("pretrain: checkpoint round trip reproduces evaluation loss bitwise") {
    ModelConfig cfg = tiny_config(60);
    cfg.dropout_rate = 0.0;
    auto params = init_params<float>(cfg, 31);
    Rng rng(10);
    auto corpus = corpus_batch(cfg, rng, 32);
    PretrainHyper hyper;
    hyper.lr = 1e-3;
    hyper.batch_size = 16;
    hyper.epochs = 2;
    const auto ck_path = tmp_path("pretrain_rt.gseb");
    pretrain_loop(corpus, params, cfg, hyper, ck_path, {"pretrain", "h", 31});

    const auto eval_pairs = corpus_batch(cfg, rng, 16);
    const auto masked = apply_masking(eval_pairs, 0.15, cfg.vocab_size, 4);
    const auto t1 = forward_batch(params, cfg, masked.inputs);
    const float loss1 = mlm_loss(params, cfg, t1, masked.targets);

    const auto loaded = load_checkpoint<float>(ck_path);
    const auto t2 = forward_batch(loaded.params, loaded.config, masked.inputs);
    const float loss2 = mlm_loss(loaded.params, loaded.config, t2, masked.targets);
    CHECK(loss1 == loss2);  // bitwise
}

TEST_CASE("pretrain: masked accuracy improves over training") {
    ModelConfig cfg = tiny_config(60);
    cfg.dropout_rate = 0.0;
    auto params = init_params<float>(cfg, 81);
    Rng rng(11);
    auto corpus = structured_corpus(cfg, rng, 96);
    const auto held_out = structured_corpus(cfg, rng, 24);
    const auto masked = apply_masking(held_out, 0.15, cfg.vocab_size, 6);

    const auto t0 = forward_batch(params, cfg, masked.inputs);
    const double acc_before = mlm_masked_accuracy(params, cfg, t0, masked.targets);

    PretrainHyper hyper;
    hyper.lr = 3e-3;
    hyper.batch_size = 16;
    hyper.epochs = 8;
    pretrain_loop(corpus, params, cfg, hyper, tmp_path("pretrain_acc.gseb"),
                  {"pretrain", "h", 81});
    const auto t1 = forward_batch(params, cfg, masked.inputs);
    const double acc_after = mlm_masked_accuracy(params, cfg, t1, masked.targets);
    CHECK(acc_after > acc_before);
}

TEST_CASE("pretrain: guards") {
    const auto cfg = tiny_config();
    auto params = init_params<float>(cfg, 1);
    PretrainHyper hyper;
    std::vector<TokenizedPair> empty;
    CHECK_THROWS_AS(
        pretrain_loop(empty, params, cfg, hyper, tmp_path("x.gseb"), {"p", "h", 1}),
        DataError);
    Rng rng(2);
    auto corpus = corpus_batch(cfg, rng, 4);
    hyper.mask_rate = 0.0;
    CHECK_THROWS_AS(
        pretrain_loop(corpus, params, cfg, hyper, tmp_path("y.gseb"), {"p", "h", 1}),
        DataError);
}
