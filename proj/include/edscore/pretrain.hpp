// SPDX-License-Identifier: Apache-2.0
//
// Domain-adaptive MLM pre-training: masking policy (per-sequence quota,
// 80/10/10 replacement) and the training loop over task+response pairs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "edscore/checkpoint.hpp"
#include "edscore/common.hpp"
#include "edscore/nn.hpp"
#include "edscore/tokenizer.hpp"

namespace edscore {

struct MaskedBatch {
    std::vector<TokenizedPair> inputs;       // token ids with replacements applied
    std::vector<std::vector<int>> targets;   // original id at masked positions, -1 elsewhere
};

// Each sequence masks round(mask_rate * maskable) positions, never touching
// [CLS]/[SEP]/[PAD]. Selected positions get [MASK] with p=0.8, a random
// vocabulary token with p=0.1, the original token with p=0.1.
inline MaskedBatch apply_masking(std::span<const TokenizedPair> pairs, double mask_rate,
                                 int vocab_size, std::uint64_t seed) {
    if (mask_rate < 0.0 || mask_rate > 0.5)
        throw DataError("apply_masking: mask_rate outside [0, 0.5]");
    MaskedBatch out;
    out.inputs.assign(pairs.begin(), pairs.end());
    out.targets.resize(pairs.size());

    for (std::size_t s = 0; s < pairs.size(); ++s) {
        const auto& tp = pairs[s];
        auto& tgt = out.targets[s];
        tgt.assign(tp.token_ids.size(), -1);

        Rng rng(mix_seed(seed, 0x3a5f, s, 0));
        std::vector<int> maskable;
        for (std::size_t p = 0; p < tp.token_ids.size(); ++p) {
            const int id = tp.token_ids[p];
            if (id == kClsId || id == kSepId || id == kPadId) continue;
            if (tp.attention_mask[p] == 0) continue;
            maskable.push_back(static_cast<int>(p));
        }
        const int quota = static_cast<int>(
            std::lround(mask_rate * static_cast<double>(maskable.size())));
        if (quota == 0) continue;
        rng.shuffle(maskable);
        for (int q = 0; q < quota; ++q) {
            const auto p = static_cast<std::size_t>(maskable[static_cast<std::size_t>(q)]);
            tgt[p] = tp.token_ids[p];
            const double roll = rng.next_unit();
            if (roll < 0.8) {
                out.inputs[s].token_ids[p] = kMaskId;
            } else if (roll < 0.9) {
                out.inputs[s].token_ids[p] =
                    static_cast<int>(rng.uniform_int(5, vocab_size - 1));
            }
            // else: keep the original token
        }
    }
    return out;
}

struct PretrainHyper {
    double lr = 1e-3;  // desk-scale from-scratch rate; fine-tuning keeps 3e-5
    int batch_size = 32;
    int epochs = 3;
    double mask_rate = 0.15;
    std::uint64_t seed = 42;
};

struct LossPoint {
    long step = 0;
    double loss = 0.0;
};

struct PretrainResult {
    std::vector<LossPoint> trajectory;
    long steps = 0;
};

inline void save_trajectory(const std::filesystem::path& path,
                            const std::vector<LossPoint>& traj) {
    std::string out = "# step\tloss\n";
    for (const auto& pt : traj)
        out += std::to_string(pt.step) + "\t" + format_double(pt.loss) + "\n";
    write_text_file(path, out);
}

// MLM training over encoded pairs. The checkpoint at `checkpoint_path` is
// rewritten after every epoch; the loss trajectory records one point per step.
template <class T>
PretrainResult pretrain_loop(std::vector<TokenizedPair> pairs, ModelParams<T>& params,
                             const ModelConfig& cfg, const PretrainHyper& hyper,
                             const std::filesystem::path& checkpoint_path,
                             const CheckpointMeta& meta) {
    if (pairs.empty()) throw DataError("pretrain: empty corpus");
    if (hyper.mask_rate <= 0.0)
        throw DataError("pretrain: mask_rate 0 leaves no targets to train on");
    cfg.validate();

    PretrainResult result;
    save_checkpoint(checkpoint_path, cfg, params, meta);  // epochs=0 means init
    if (hyper.epochs == 0) return result;

    auto state = make_adam_state<T>(cfg);
    AdamHyper adam;
    adam.lr = hyper.lr;
    auto grads = make_param_shapes<T>(cfg);

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(hyper.seed, 0x5e7a, static_cast<std::uint64_t>(epoch), 0));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            std::vector<TokenizedPair> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(pairs[order[i]]);

            const auto masked = apply_masking(batch, hyper.mask_rate, cfg.vocab_size,
                                              mix_seed(hyper.seed, 0xba7c,
                                                       static_cast<std::uint64_t>(step), 0));
            bool any_target = false;
            for (const auto& tgt : masked.targets)
                for (int t : tgt)
                    if (t >= 0) any_target = true;
            if (!any_target) continue;  // degenerate batch of ultra-short sequences

            Rng dropout_rng(mix_seed(hyper.seed, 0xd407, static_cast<std::uint64_t>(step), 0));
            const auto traces =
                forward_batch(params, cfg, masked.inputs,
                              cfg.dropout_rate > 0.0 ? &dropout_rng : nullptr);
            zero_params(grads);
            const T loss = mlm_loss_and_backward(params, cfg, traces, masked.targets, grads);
            adam_step(params, grads, state, adam);
            result.trajectory.push_back({step, static_cast<double>(loss)});
            ++step;
        }
        save_checkpoint(checkpoint_path, cfg, params, meta);
    }
    result.steps = step;
    return result;
}

}  // namespace edscore
