// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <vector>

#include "edscore/nn.hpp"
#include "support.hpp"

using namespace edscore;
using edscore::testing::gradient_check;
using edscore::testing::random_pair;
using edscore::testing::tiny_config;

namespace {

std::vector<TokenizedPair> make_batch(const ModelConfig& cfg, Rng& rng, int n, int min_len = 6,
                                      int max_len = 0) {
    if (max_len == 0) max_len = cfg.max_len;
    std::vector<TokenizedPair> batch;
    for (int i = 0; i < n; ++i)
        batch.push_back(
            random_pair(cfg, rng, static_cast<int>(rng.uniform_int(min_len, max_len))));
    return batch;
}

std::vector<std::vector<int>> random_mlm_targets(const ModelConfig& cfg,
                                                 const std::vector<TokenizedPair>& batch,
                                                 Rng& rng) {
    std::vector<std::vector<int>> targets;
    for (const auto& tp : batch) {
        std::vector<int> tgt(tp.token_ids.size(), -1);
        bool any = false;
        for (std::size_t p = 0; p < tp.token_ids.size(); ++p) {
            const int id = tp.token_ids[p];
            if (id == kClsId || id == kSepId || id == kPadId) continue;
            if (rng.bernoulli(0.3)) {
                tgt[p] = static_cast<int>(rng.uniform_int(5, cfg.vocab_size - 1));
                any = true;
            }
        }
        if (!any) tgt[2] = 5;  // guarantee at least one target
        targets.push_back(std::move(tgt));
    }
    return targets;
}

}  // namespace

TEST_CASE("init_params: deterministic per seed, rules hold") {
    const auto cfg = tiny_config();
    const auto a = init_params<float>(cfg, 7);
    const auto b = init_params<float>(cfg, 7);
    auto ar = param_manifest(const_cast<ModelParams<float>&>(a));
    auto br = param_manifest(const_cast<ModelParams<float>&>(b));
    REQUIRE(ar.size() == br.size());
    for (std::size_t t = 0; t < ar.size(); ++t) CHECK(ar[t].tensor->v == br[t].tensor->v);

    const auto c = init_params<float>(cfg, 8);
    CHECK(c.tok_emb.v != a.tok_emb.v);

    for (float g : a.layers[0].ln1_gain.v) CHECK(g == 1.0f);
    for (float g : a.layers[0].ln2_gain.v) CHECK(g == 1.0f);
    for (float v : a.cls_b.v) CHECK(v == 0.0f);
    for (float v : a.layers[0].bq.v) CHECK(v == 0.0f);
}

TEST_CASE("forward: shape contract and pooled vector") {
    const auto cfg = tiny_config();
    const auto params = init_params<double>(cfg, 3);
    Rng rng(5);
    const auto batch = make_batch(cfg, rng, 4);
    const auto traces = forward_batch(params, cfg, batch);
    REQUIRE(traces.size() == 4);
    for (const auto& tr : traces) {
        CHECK(static_cast<int>(tr.final_hidden().size()) == tr.len * cfg.hidden_dim);
        const auto pooled = tr.pooled(cfg.hidden_dim);
        REQUIRE(static_cast<int>(pooled.size()) == cfg.hidden_dim);
        for (int i = 0; i < cfg.hidden_dim; ++i)
            CHECK(pooled[static_cast<std::size_t>(i)] ==
                  tr.final_hidden()[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("forward: attention weights on padded positions are exactly zero") {
    const auto cfg = tiny_config();
    const auto params = init_params<double>(cfg, 3);
    Rng rng(6);
    // one long and one short sequence: the short one is padded inside the window
    std::vector<TokenizedPair> batch{random_pair(cfg, rng, 12), random_pair(cfg, rng, 6)};
    const auto traces = forward_batch(params, cfg, batch);
    const auto& tr = traces[1];
    REQUIRE(tr.len == 12);
    const auto& lt = tr.layers[0];
    bool saw_padded = false;
    for (int h = 0; h < cfg.num_heads; ++h)
        for (int i = 0; i < tr.len; ++i)
            for (int j = 0; j < tr.len; ++j) {
                if (tr.attn_mask[static_cast<std::size_t>(j)] == 0) {
                    saw_padded = true;
                    CHECK(lt.attn_probs[(static_cast<std::size_t>(h) * tr.len + i) * tr.len + j] ==
                          0.0);
                }
            }
    CHECK(saw_padded);
}

TEST_CASE("forward: batch order does not change per-sequence output") {
    const auto cfg = tiny_config();
    const auto params = init_params<double>(cfg, 11);
    Rng rng(21);
    auto batch = make_batch(cfg, rng, 3, 6, 12);
    const auto traces = forward_batch(params, cfg, batch);
    std::vector<TokenizedPair> reversed(batch.rbegin(), batch.rend());
    const auto traces_rev = forward_batch(params, cfg, reversed);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& a = traces[s];
        const auto& b = traces_rev[batch.size() - 1 - s];
        REQUIRE(a.len == b.len);
        // semantic (non-pad) positions must agree exactly
        for (int p = 0; p < a.len; ++p) {
            if (a.attn_mask[static_cast<std::size_t>(p)] == 0) continue;
            for (int i = 0; i < cfg.hidden_dim; ++i)
                CHECK(a.final_hidden()[static_cast<std::size_t>(p) * cfg.hidden_dim + i] ==
                      b.final_hidden()[static_cast<std::size_t>(p) * cfg.hidden_dim + i]);
        }
    }
}

TEST_CASE("forward: deterministic without dropout, reproducible with seeded dropout") {
    auto cfg = tiny_config();
    const auto params = init_params<double>(cfg, 2);
    Rng rng(31);
    const auto batch = make_batch(cfg, rng, 2);
    const auto t1 = forward_batch(params, cfg, batch);
    const auto t2 = forward_batch(params, cfg, batch);
    CHECK(t1[0].final_hidden() == t2[0].final_hidden());

    cfg.dropout_rate = 0.2;
    Rng d1(77), d2(77), d3(78);
    const auto a = forward_batch(params, cfg, batch, &d1);
    const auto b = forward_batch(params, cfg, batch, &d2);
    const auto c = forward_batch(params, cfg, batch, &d3);
    CHECK(a[0].final_hidden() == b[0].final_hidden());
    CHECK(a[0].final_hidden() != c[0].final_hidden());
}

TEST_CASE("forward: token id out of range rejected") {
    const auto cfg = tiny_config();
    const auto params = init_params<double>(cfg, 2);
    Rng rng(1);
    auto batch = make_batch(cfg, rng, 1);
    batch[0].token_ids[1] = cfg.vocab_size;
    CHECK_THROWS_AS(forward_batch(params, cfg, batch), DataError);
}

TEST_CASE("classify: zero weights give uniform distribution") {
    const auto cfg = tiny_config(24, 4);
    auto params = make_param_shapes<double>(cfg);
    std::vector<double> pooled(8, 0.3);
    const auto probs = classify<double>(params, pooled);
    for (double p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("classify: analytic softmax and shift invariance") {
    std::vector<double> logits{std::log(2.0), 0.0};
    const auto probs = softmax_vec<double>(logits);
    CHECK(probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    std::vector<double> shifted{logits[0] + 13.7, logits[1] + 13.7};
    const auto probs2 = softmax_vec<double>(shifted);
    CHECK(probs2[0] == doctest::Approx(probs[0]).epsilon(1e-12));

    double sum = 0.0;
    for (double p : probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("mlm_logits: shape, zero weights, purity") {
    const auto cfg = tiny_config();
    auto params = make_param_shapes<double>(cfg);
    for (std::size_t i = 0; i < params.mlm_b.v.size(); ++i)
        params.mlm_b.v[i] = 0.01 * static_cast<double>(i);
    std::vector<double> hidden(3 * 8, 0.0);
    for (int i = 0; i < 8; ++i) {
        hidden[static_cast<std::size_t>(i)] = 0.5;          // position 0
        hidden[static_cast<std::size_t>(16 + i)] = 0.5;     // position 2 identical
    }
    const auto logits = mlm_logits(params, hidden, 3);
    CHECK(logits.rows == 3);
    CHECK(logits.cols == cfg.vocab_size);
    for (int v = 0; v < cfg.vocab_size; ++v) {
        CHECK(logits.at(0, v) == doctest::Approx(params.mlm_b.v[static_cast<std::size_t>(v)]));
        CHECK(logits.at(0, v) == logits.at(2, v));
    }
}

TEST_CASE("cross_entropy: anchors") {
    std::vector<double> perfect{0.0, 1.0, 0.0};
    CHECK(cross_entropy<double>(perfect, 1) == doctest::Approx(0.0));
    std::vector<double> uniform4(4, 0.25);
    CHECK(cross_entropy<double>(uniform4, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
    std::vector<double> zero{1.0, 0.0};
    CHECK(cross_entropy<double>(zero, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
    CHECK(cross_entropy<double>(zero, 1) == doctest::Approx(27.631).epsilon(1e-3));
    CHECK_THROWS_AS(cross_entropy<double>(zero, 2), DataError);
}

TEST_CASE("backward: gradient arrays match parameter shapes") {
    const auto cfg = tiny_config();
    auto params = init_params<double>(cfg, 1);
    auto grads = make_param_shapes<double>(cfg);
    auto pr = param_manifest(params);
    auto gr = param_manifest(grads);
    REQUIRE(pr.size() == gr.size());
    for (std::size_t t = 0; t < pr.size(); ++t) {
        CHECK(pr[t].name == gr[t].name);
        CHECK(pr[t].tensor->rows == gr[t].tensor->rows);
        CHECK(pr[t].tensor->cols == gr[t].tensor->cols);
    }
}

TEST_CASE("backward: classification loss leaves the MLM head untouched") {
    const auto cfg = tiny_config();
    auto params = init_params<double>(cfg, 9);
    Rng rng(4);
    const auto batch = make_batch(cfg, rng, 3);
    const auto traces = forward_batch(params, cfg, batch);
    auto grads = make_param_shapes<double>(cfg);
    std::vector<int> labels{0, 1, 2};
    cls_loss_and_backward(params, cfg, traces, labels, grads);
    for (double g : grads.mlm_w.v) CHECK(g == 0.0);
    for (double g : grads.mlm_b.v) CHECK(g == 0.0);
    // and the classifier does receive gradient
    double any = 0.0;
    for (double g : grads.cls_w.v) any += std::fabs(g);
    CHECK(any > 0.0);
}

TEST_CASE("backward: finite differences agree for the classification head") {
    const auto cfg = tiny_config();
    auto params = edscore::testing::random_point_params(cfg, 13);
    Rng rng(42);
    const auto batch = make_batch(cfg, rng, 2, 6, 10);
    std::vector<int> labels{1, 2};

    auto grads = make_param_shapes<double>(cfg);
    const auto traces = forward_batch(params, cfg, batch);
    cls_loss_and_backward(params, cfg, traces, labels, grads);

    auto loss_fn = [&]() {
        const auto t = forward_batch(params, cfg, batch);
        return static_cast<double>(cls_loss(params, cfg, t, labels));
    };
    Rng coord_rng(7);
    const auto res = gradient_check(params, grads, loss_fn, 120, 1e-3, 1e-4, coord_rng);
    CHECK(res.pass_fraction() >= 0.99);
}

TEST_CASE("backward: finite differences agree for the MLM head") {
    const auto cfg = tiny_config();
    auto params = edscore::testing::random_point_params(cfg, 14);
    Rng rng(43);
    const auto batch = make_batch(cfg, rng, 2, 6, 10);
    const auto targets = random_mlm_targets(cfg, batch, rng);

    auto grads = make_param_shapes<double>(cfg);
    const auto traces = forward_batch(params, cfg, batch);
    mlm_loss_and_backward(params, cfg, traces, targets, grads);

    auto loss_fn = [&]() {
        const auto t = forward_batch(params, cfg, batch);
        return static_cast<double>(mlm_loss(params, cfg, t, targets));
    };
    Rng coord_rng(8);
    const auto res = gradient_check(params, grads, loss_fn, 120, 1e-3, 1e-4, coord_rng);
    CHECK(res.pass_fraction() >= 0.99);
}

// At the 0.02 training init, central differences at eps=1e-3 cannot resolve
// 1e-4 relative error near the first LayerNorm (truncation is O(eps^2) with a
// large constant). Exactness is instead established by the quadratic decay of
// |fd - analytic| as eps shrinks, which any real backward bug would break.
TEST_CASE("backward: fd error decays quadratically in eps at the training init") {
    const auto cfg = tiny_config();
    auto params = init_params<double>(cfg, 14);
    Rng rng(43);
    const auto batch = make_batch(cfg, rng, 2, 6, 10);
    const auto targets = random_mlm_targets(cfg, batch, rng);
    auto grads = make_param_shapes<double>(cfg);
    const auto traces = forward_batch(params, cfg, batch);
    mlm_loss_and_backward(params, cfg, traces, targets, grads);
    auto loss_fn = [&]() {
        const auto t = forward_batch(params, cfg, batch);
        return static_cast<double>(mlm_loss(params, cfg, t, targets));
    };

    auto prefs = param_manifest(params);
    auto grefs = param_manifest(grads);
    Rng coord_rng(77);
    int checked = 0;
    for (int iter = 0; iter < 40 && checked < 8; ++iter) {
        const std::size_t t = coord_rng.index(prefs.size());
        const std::size_t i = coord_rng.index(prefs[t].tensor->size());
        const double an = grefs[t].tensor->v[i];
        if (std::fabs(an) < 1e-4) continue;  // dead or near-dead coordinate
        double& x = prefs[t].tensor->v[i];
        const double saved = x;
        auto fd_at = [&](double eps) {
            x = saved + eps;
            const double lp = loss_fn();
            x = saved - eps;
            const double lm = loss_fn();
            x = saved;
            return (lp - lm) / (2.0 * eps);
        };
        const double err_coarse = std::fabs(fd_at(1e-3) - an);
        const double err_fine = std::fabs(fd_at(1e-4) - an);
        if (err_coarse < 1e-10) continue;  // already at roundoff, nothing to scale
        // quadratic decay would be 100x; allow generous slack for roundoff
        CHECK(err_fine < err_coarse / 20.0);
        ++checked;
    }
    CHECK(checked >= 4);
}

TEST_CASE("backward: finite differences agree with dropout active") {
    auto cfg = tiny_config();
    cfg.dropout_rate = 0.15;
    auto params = edscore::testing::random_point_params(cfg, 15);
    Rng rng(44);
    const auto batch = make_batch(cfg, rng, 2, 6, 10);
    std::vector<int> labels{0, 2};

    // fixed dropout mask: clone the rng for every forward
    const std::uint64_t drop_seed = 555;
    auto grads = make_param_shapes<double>(cfg);
    Rng drop1(drop_seed);
    const auto traces = forward_batch(params, cfg, batch, &drop1);
    cls_loss_and_backward(params, cfg, traces, labels, grads);

    auto loss_fn = [&]() {
        Rng drop(drop_seed);
        const auto t = forward_batch(params, cfg, batch, &drop);
        return static_cast<double>(cls_loss(params, cfg, t, labels));
    };
    Rng coord_rng(9);
    const auto res = gradient_check(params, grads, loss_fn, 80, 1e-3, 1e-4, coord_rng);
    CHECK(res.pass_fraction() >= 0.99);
}

TEST_CASE("adam: first-step delta is about -lr for any positive gradient") {
    const auto cfg = tiny_config();
    auto params = init_params<float>(cfg, 5);
    auto grads = make_param_shapes<float>(cfg);
    grads.cls_w.at(0, 0) = 0.5f;
    grads.cls_w.at(1, 3) = 0.5f;
    auto state = make_adam_state<float>(cfg);
    AdamHyper hyper;
    hyper.lr = 3e-5;
    const float before00 = params.cls_w.at(0, 0);
    const float before13 = params.cls_w.at(1, 3);
    const float untouched = params.cls_w.at(2, 2);
    adam_step(params, grads, state, hyper);
    CHECK(params.cls_w.at(0, 0) - before00 ==
          doctest::Approx(-3e-5).epsilon(1e-3));
    // equal gradients move equally
    CHECK(params.cls_w.at(0, 0) - before00 ==
          doctest::Approx(params.cls_w.at(1, 3) - before13).epsilon(1e-9));
    CHECK(params.cls_w.at(2, 2) == untouched);
    CHECK(state.step == 1);
}

TEST_CASE("adam: zero gradient is a fixed point") {
    const auto cfg = tiny_config();
    auto params = init_params<float>(cfg, 6);
    const auto snapshot = params.tok_emb.v;
    auto grads = make_param_shapes<float>(cfg);
    auto state = make_adam_state<float>(cfg);
    adam_step(params, grads, state, AdamHyper{});
    CHECK(params.tok_emb.v == snapshot);
    CHECK(state.step == 1);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
    const auto cfg = tiny_config();
    auto params = init_params<float>(cfg, 6);
    auto grads = make_param_shapes<float>(cfg);
    grads.layers[0].ff_w1.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
    auto state = make_adam_state<float>(cfg);
    try {
        adam_step(params, grads, state, AdamHyper{});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("ff.w1") != std::string::npos);
    }
}

TEST_CASE("adam: one step on a single example decreases its loss") {
    const auto cfg = tiny_config();
    auto params = init_params<double>(cfg, 77);
    Rng rng(12);
    const auto batch = make_batch(cfg, rng, 1);
    std::vector<int> labels{1};
    const auto t0 = forward_batch(params, cfg, batch);
    const double loss_before = cls_loss(params, cfg, t0, labels);
    auto grads = make_param_shapes<double>(cfg);
    cls_loss_and_backward(params, cfg, t0, labels, grads);
    auto state = make_adam_state<double>(cfg);
    AdamHyper hyper;
    hyper.lr = 1e-4;
    adam_step(params, grads, state, hyper);
    const auto t1 = forward_batch(params, cfg, batch);
    CHECK(cls_loss(params, cfg, t1, labels) < loss_before);
}
