// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the nn tests and the acceptance suite: tiny model
// fixtures and a central finite-difference gradient checker.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/nn.hpp"
#include "edscore/tokenizer.hpp"

namespace edscore::testing {

inline ModelConfig tiny_config(int vocab_size = 24, int num_labels = 3) {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.hidden_dim = 8;
    cfg.ff_dim = 16;
    cfg.max_len = 12;
    cfg.vocab_size = vocab_size;
    cfg.num_labels = num_labels;
    cfg.dropout_rate = 0.0;
    return cfg;
}

// Generic random parameter point for gradient checks. The 0.02 training init
// feeds near-constant vectors into the first LayerNorm, whose curvature then
// exceeds what central differences at a fixed epsilon can resolve; a unit-ish
// scale keeps the finite-difference oracle well conditioned while exercising
// the identical backward code.
inline ModelParams<double> random_point_params(const ModelConfig& cfg, std::uint64_t seed) {
    auto params = make_param_shapes<double>(cfg);
    Rng rng(mix_seed(seed, 0x60ad, 0, 0));
    for (auto& ref : param_manifest(params)) {
        const bool is_gain = ref.name.find("gain") != std::string::npos;
        for (auto& x : ref.tensor->v)
            x = is_gain ? rng.normal(1.0, 0.2) : rng.normal(0.0, 0.3);
    }
    return params;
}

// Random well-formed pair: [CLS] t.. [SEP] r.. [SEP] [PAD]..
inline TokenizedPair random_pair(const ModelConfig& cfg, Rng& rng, int real_len) {
    TokenizedPair tp;
    const int L = cfg.max_len;
    real_len = std::max(4, std::min(real_len, L));
    tp.token_ids.assign(static_cast<std::size_t>(L), kPadId);
    tp.segment_ids.assign(static_cast<std::size_t>(L), 0);
    tp.attention_mask.assign(static_cast<std::size_t>(L), 0);
    const int task_len = std::max(1, (real_len - 3) / 2);
    tp.token_ids[0] = kClsId;
    int pos = 1;
    for (int i = 0; i < task_len; ++i)
        tp.token_ids[static_cast<std::size_t>(pos++)] =
            static_cast<int>(rng.uniform_int(5, cfg.vocab_size - 1));
    tp.token_ids[static_cast<std::size_t>(pos++)] = kSepId;
    while (pos < real_len - 1)
        tp.token_ids[static_cast<std::size_t>(pos++)] =
            static_cast<int>(rng.uniform_int(5, cfg.vocab_size - 1));
    tp.token_ids[static_cast<std::size_t>(pos)] = kSepId;
    for (int i = 0; i < real_len; ++i) {
        tp.attention_mask[static_cast<std::size_t>(i)] = 1;
        tp.segment_ids[static_cast<std::size_t>(i)] = i > task_len + 1 ? 1 : 0;
    }
    return tp;
}

struct GradCheckResult {
    int sampled = 0;
    int within_tolerance = 0;
    double worst_rel_error = 0.0;
    std::string worst_coordinate;

    double pass_fraction() const {
        return sampled == 0 ? 0.0
                            : static_cast<double>(within_tolerance) / static_cast<double>(sampled);
    }
};

// Central finite differences against analytic gradients on `samples` randomly
// chosen coordinates. Relative error uses a 1e-3 denominator floor: below
// that magnitude the O(eps^2) truncation noise of the difference quotient
// itself swamps a 1e-4 relative comparison.
inline GradCheckResult gradient_check(ModelParams<double>& params,
                                      const ModelParams<double>& analytic_grads,
                                      const std::function<double()>& loss_fn, int samples,
                                      double epsilon, double tolerance, Rng& rng) {
    GradCheckResult result;
    auto prefs = param_manifest(params);
    auto grefs = param_manifest(const_cast<ModelParams<double>&>(analytic_grads));

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    std::size_t total = 0;
    for (const auto& ref : prefs) total += ref.tensor->size();
    for (int s = 0; s < samples; ++s) {
        std::size_t flat = rng.index(total);
        for (std::size_t t = 0; t < prefs.size(); ++t) {
            if (flat < prefs[t].tensor->size()) {
                coords.emplace_back(t, flat);
                break;
            }
            flat -= prefs[t].tensor->size();
        }
    }

    for (const auto& [t, i] : coords) {
        double& x = prefs[t].tensor->v[i];
        const double saved = x;
        x = saved + epsilon;
        const double loss_plus = loss_fn();
        x = saved - epsilon;
        const double loss_minus = loss_fn();
        x = saved;
        const double fd = (loss_plus - loss_minus) / (2.0 * epsilon);
        const double an = grefs[t].tensor->v[i];
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
        const double rel = std::fabs(fd - an) / denom;
        ++result.sampled;
        if (rel <= tolerance) {
            ++result.within_tolerance;
        }
        if (rel > result.worst_rel_error) {
            result.worst_rel_error = rel;
            result.worst_coordinate = prefs[t].name + "[" + std::to_string(i) + "]";
        }
    }
    return result;
}

}  // namespace edscore::testing
