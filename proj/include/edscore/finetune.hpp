// SPDX-License-Identifier: Apache-2.0
//
// Per-item scoring fine-tuning: prompt assembly, encoding (with a frozen-
// encoder chunked path for inputs beyond max_len), stratified 5-fold
// rotations with best-validation-epoch selection, pooled test predictions,
// and an audit log for the leakage checks.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "edscore/checkpoint.hpp"
#include "edscore/common.hpp"
#include "edscore/corpus.hpp"
#include "edscore/folds.hpp"
#include "edscore/nn.hpp"
#include "edscore/prompts.hpp"
#include "edscore/stats.hpp"
#include "edscore/tokenizer.hpp"

namespace edscore {

// ---------------------------------------------------------------------------
// long-input path: chunk the response side so each [CLS] task [SEP] chunk
// [SEP] window fits max_len, encode every chunk with the frozen encoder and
// mean-pool the [CLS] vectors.
// ---------------------------------------------------------------------------

template <class T>
std::vector<T> encode_long(const std::string& task_side, const std::string& response_side,
                           const ModelParams<T>& frozen, const ModelConfig& cfg,
                           const Vocab& vocab, int max_len) {
    const std::vector<int> task_ids = tokenize_text(task_side, vocab);
    const std::vector<int> resp_ids = tokenize_text(response_side, vocab);
    const int capacity = max_len - 3 - static_cast<int>(task_ids.size());
    if (capacity <= 0)
        throw DataError("encode_long: task side alone exceeds max_len - 3 tokens");

    const int num_chunks =
        std::max(1, static_cast<int>((resp_ids.size() + static_cast<std::size_t>(capacity) - 1) /
                                     static_cast<std::size_t>(capacity)));
    std::vector<TokenizedPair> chunks;
    for (int c = 0; c < num_chunks; ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * static_cast<std::size_t>(capacity);
        const std::size_t end =
            std::min(resp_ids.size(), begin + static_cast<std::size_t>(capacity));
        TokenizedPair tp;
        tp.token_ids.push_back(kClsId);
        tp.token_ids.insert(tp.token_ids.end(), task_ids.begin(), task_ids.end());
        tp.token_ids.push_back(kSepId);
        const std::size_t seg0 = tp.token_ids.size();
        tp.token_ids.insert(tp.token_ids.end(), resp_ids.begin() + static_cast<std::ptrdiff_t>(begin),
                            resp_ids.begin() + static_cast<std::ptrdiff_t>(end));
        tp.token_ids.push_back(kSepId);
        tp.segment_ids.assign(seg0, 0);
        tp.segment_ids.resize(tp.token_ids.size(), 1);
        tp.attention_mask.assign(tp.token_ids.size(), 1);
        chunks.push_back(std::move(tp));
    }

    const auto traces = forward_batch(frozen, cfg, chunks);
    std::vector<T> pooled(static_cast<std::size_t>(cfg.hidden_dim), T(0));
    for (const auto& tr : traces) {
        const auto p = tr.pooled(cfg.hidden_dim);
        for (int i = 0; i < cfg.hidden_dim; ++i)
            pooled[static_cast<std::size_t>(i)] += p[static_cast<std::size_t>(i)];
    }
    for (auto& x : pooled) x /= static_cast<T>(traces.size());
    return pooled;
}

inline int count_long_chunks(int task_tokens, int resp_tokens, int max_len) {
    const int capacity = max_len - 3 - task_tokens;
    if (capacity <= 0) throw DataError("encode_long: task side alone exceeds max_len - 3 tokens");
    return std::max(1, (resp_tokens + capacity - 1) / capacity);
}

// ---------------------------------------------------------------------------
// fine-tuning
// ---------------------------------------------------------------------------

struct FinetuneHyper {
    double lr = 3e-5;
    double head_lr_scale = 1.0;    // classifier tensors train at lr * this
    double warmup_fraction = 0.1;  // linear lr warmup over this share of steps
    int batch_size = 32;
    int epochs = 4;
    int folds = 5;
    std::uint64_t seed = 42;
    bool average_qwk = false;  // pooled across test folds by default
};

struct Prediction {
    std::string record_uid;
    int rotation = 0;
    int true_label = 0;
    int predicted = 0;
};

struct RotationMeta {
    int rotation = 0;
    int selected_epoch = 0;  // 1-based epoch whose weights were kept (0 = untrained)
    std::vector<double> val_metric_per_epoch;
    std::vector<std::string> warnings;
};

struct AuditEntry {
    int rotation = 0;
    std::string kind;  // train | validation | test | context
    std::string uid;
    std::string extra;  // for context entries: uid of the record it was assembled for
};

struct FinetuneResult {
    std::vector<Prediction> predictions;
    std::vector<RotationMeta> rotations;
    std::vector<AuditEntry> audit;
    double qwk = 0.0;
    int num_labels = 0;
};

namespace detail {

inline std::string record_uid(const std::string& item_id, int index) {
    return item_id + ":" + std::to_string(index);
}

// candidate context examples ordered from the label extremes inward:
// highest, lowest, second highest, second lowest, ...
inline std::vector<int> context_candidate_order(const std::vector<ScoredResponse>& records,
                                                const std::vector<int>& train_indices,
                                                std::uint64_t seed, int rotation) {
    std::vector<int> shuffled = train_indices;
    Rng rng(mix_seed(seed, 0xc0de, static_cast<std::uint64_t>(rotation), 0));
    rng.shuffle(shuffled);
    std::vector<int> by_label = shuffled;
    std::stable_sort(by_label.begin(), by_label.end(), [&](int a, int b) {
        return records[static_cast<std::size_t>(a)].score >
               records[static_cast<std::size_t>(b)].score;
    });
    std::vector<int> order;
    std::size_t lo = by_label.size();
    std::size_t hi = 0;
    while (order.size() < by_label.size()) {
        if (hi < lo) order.push_back(by_label[hi++]);
        if (lo > hi) order.push_back(by_label[--lo]);
    }
    return order;
}

}  // namespace detail

template <class T>
struct EncodedRecord {
    int index = 0;
    int label = 0;
    bool long_path = false;
    TokenizedPair pair;            // normal path
    std::vector<T> frozen_pooled;  // long path feature
    std::vector<int> context_indices;
};

// Encodes one record for the current rotation. Context examples come from the
// rotation's training folds only; a record never serves as its own example.
template <class T>
EncodedRecord<T> encode_record_for_rotation(const std::vector<ScoredResponse>& records,
                                            int index, const std::vector<int>& candidate_order,
                                            const PromptSpec& spec, const ModelParams<T>& frozen,
                                            const ModelConfig& cfg, const Vocab& vocab) {
    const auto& rec = records[static_cast<std::size_t>(index)];
    EncodedRecord<T> out;
    out.index = index;
    out.label = rec.score;

    std::vector<ContextExample> examples;
    for (int cand : candidate_order) {
        if (static_cast<int>(examples.size()) >= spec.num_in_context_examples) break;
        if (cand == index) continue;
        const auto& ex = records[static_cast<std::size_t>(cand)];
        if (ex.response_text == rec.response_text) continue;
        examples.push_back({ex.response_text,
                            spec.label_names[static_cast<std::size_t>(ex.score)]});
        out.context_indices.push_back(cand);
    }

    const auto assembled = assemble_input(rec, spec, examples);
    out.pair = encode_pair(assembled.task_side, assembled.response_side, vocab, cfg.max_len);
    if (out.pair.truncated) {
        // chunked frozen-encoder path, unless the task side alone exhausts the
        // window; then the truncated pair is the best available encoding
        const int task_tokens =
            static_cast<int>(tokenize_text(assembled.task_side, vocab).size());
        if (task_tokens < cfg.max_len - 3) {
            out.long_path = true;
            out.frozen_pooled = encode_long(assembled.task_side, assembled.response_side,
                                            frozen, cfg, vocab, cfg.max_len);
        }
    }
    return out;
}

namespace detail {

template <class T>
int predict_label(const ModelParams<T>& params, const ModelConfig& cfg,
                  const EncodedRecord<T>& er, const ModelParams<T>& frozen) {
    std::vector<T> pooled;
    if (er.long_path) {
        pooled = er.frozen_pooled;
    } else {
        std::vector<TokenizedPair> one{er.pair};
        const auto traces = forward_batch(params, cfg, one);
        pooled = traces[0].pooled(cfg.hidden_dim);
    }
    (void)frozen;
    const auto probs = classify<T>(params, pooled);
    int best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    return best;
}

template <class T>
std::vector<int> predict_batch(const ModelParams<T>& params, const ModelConfig& cfg,
                               const std::vector<EncodedRecord<T>>& encoded,
                               const std::vector<int>& indices, int batch_size,
                               const std::map<int, std::size_t>& by_index) {
    std::vector<int> out;
    std::vector<const EncodedRecord<T>*> normal;
    for (int idx : indices) {
        const auto& er = encoded[by_index.at(idx)];
        if (!er.long_path) normal.push_back(&er);
    }
    std::map<int, int> predicted;
    for (std::size_t start = 0; start < normal.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(normal.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<TokenizedPair> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(normal[i]->pair);
        const auto traces = forward_batch(params, cfg, batch);
        for (std::size_t i = start; i < end; ++i) {
            const auto probs =
                classify<T>(params, traces[i - start].pooled(cfg.hidden_dim));
            int best = 0;
            for (std::size_t k = 1; k < probs.size(); ++k)
                if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
            predicted[normal[i]->index] = best;
        }
    }
    for (int idx : indices) {
        const auto& er = encoded[by_index.at(idx)];
        if (er.long_path) {
            const auto probs = classify<T>(params, er.frozen_pooled);
            int best = 0;
            for (std::size_t k = 1; k < probs.size(); ++k)
                if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
            out.push_back(best);
        } else {
            out.push_back(predicted.at(er.index));
        }
    }
    return out;
}

// validation metric: QWK when defined (n >= 2), plain accuracy otherwise
inline double validation_metric(const std::vector<int>& truth, const std::vector<int>& pred,
                                int num_labels) {
    if (truth.size() >= 2) return qwk(truth, pred, num_labels);
    double correct = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] == pred[i]) correct += 1.0;
    return truth.empty() ? 0.0 : correct / static_cast<double>(truth.size());
}

}  // namespace detail

// Fine-tunes the classifier (full model on the normal path, classifier-only
// for frozen long-path features) per rotation, selects the best-validation
// epoch and predicts the rotation's test fold.
template <class T>
FinetuneResult finetune_item(const std::vector<ScoredResponse>& records,
                             const std::string& item_id, int num_labels,
                             const ModelParams<T>& base_params, const ModelConfig& base_cfg,
                             const Vocab& vocab, const PromptSpec& prompt_spec,
                             const FinetuneHyper& hyper,
                             const ModelParams<T>* frozen_override = nullptr) {
    if (records.empty()) throw DataError("finetune: no records for item " + item_id);
    for (const auto& rec : records)
        if (rec.score < 0 || rec.score >= num_labels)
            throw DataError("finetune: record score outside [0, K) for item " + item_id);

    ModelConfig cfg = base_cfg;
    cfg.num_labels = num_labels;
    cfg.validate();

    const FoldPlan plan = make_folds(records, hyper.folds, hyper.seed);

    FinetuneResult result;
    result.num_labels = num_labels;

    for (int rotation = 0; rotation < hyper.folds; ++rotation) {
        RotationMeta meta;
        meta.rotation = rotation;

        const auto train_idx = plan.training_records(rotation);
        const auto val_idx = plan.validation_fold(rotation);
        const auto test_idx = plan.test_fold(rotation);

        for (int idx : train_idx)
            result.audit.push_back({rotation, "train", detail::record_uid(item_id, idx), ""});
        for (int idx : val_idx)
            result.audit.push_back(
                {rotation, "validation", detail::record_uid(item_id, idx), ""});
        for (int idx : test_idx)
            result.audit.push_back({rotation, "test", detail::record_uid(item_id, idx), ""});

        // missing-label warning
        std::set<int> train_labels;
        for (int idx : train_idx) train_labels.insert(records[static_cast<std::size_t>(idx)].score);
        for (int k = 0; k < num_labels; ++k)
            if (!train_labels.count(k))
                meta.warnings.push_back("rotation " + std::to_string(rotation) +
                                        ": training folds miss label " + std::to_string(k));

        // model for this rotation: base encoder, fresh classifier for K labels
        ModelParams<T> params = make_param_shapes<T>(cfg);
        {
            auto dst = param_manifest(params);
            auto src = param_manifest(const_cast<ModelParams<T>&>(base_params));
            Rng cls_rng(mix_seed(hyper.seed, 0xc150, static_cast<std::uint64_t>(rotation), 0));
            for (std::size_t t = 0; t < dst.size(); ++t) {
                if (dst[t].name == "cls.w") {
                    for (auto& x : dst[t].tensor->v)
                        x = static_cast<T>(cls_rng.normal(0.0, 0.02));
                } else if (dst[t].name == "cls.b") {
                    dst[t].tensor->zero();
                } else {
                    dst[t].tensor->v = src[t].tensor->v;
                }
            }
        }

        // encode everything once per rotation (context depends on train folds)
        const auto candidate_order =
            detail::context_candidate_order(records, train_idx, hyper.seed, rotation);
        std::vector<EncodedRecord<T>> encoded;
        std::map<int, std::size_t> by_index;
        const ModelParams<T>& frozen = frozen_override ? *frozen_override : base_params;
        auto encode_set = [&](const std::vector<int>& indices) {
            for (int idx : indices) {
                auto er = encode_record_for_rotation(records, idx, candidate_order, prompt_spec,
                                                     frozen, cfg, vocab);
                for (int ctx : er.context_indices)
                    result.audit.push_back({rotation, "context",
                                            detail::record_uid(item_id, ctx),
                                            detail::record_uid(item_id, idx)});
                by_index[idx] = encoded.size();
                encoded.push_back(std::move(er));
            }
        };
        encode_set(train_idx);
        encode_set(val_idx);
        encode_set(test_idx);

        // train
        auto state = make_adam_state<T>(cfg);
        AdamHyper adam;
        adam.lr = hyper.lr;
        adam.head_lr_scale = hyper.head_lr_scale;
        auto grads = make_param_shapes<T>(cfg);

        long normal_count = 0, long_count = 0;
        for (int idx : train_idx)
            (encoded[by_index.at(idx)].long_path ? long_count : normal_count) += 1;
        auto ceil_div = [](long a, long b) { return (a + b - 1) / b; };
        const long steps_per_epoch = ceil_div(normal_count, hyper.batch_size) +
                                     ceil_div(long_count, hyper.batch_size);
        const double warmup_steps =
            std::max(1.0, hyper.warmup_fraction *
                              static_cast<double>(steps_per_epoch * hyper.epochs));
        auto lr_at = [&](long t) {
            const double ramp = std::min(1.0, static_cast<double>(t + 1) / warmup_steps);
            return hyper.lr * ramp;
        };

        ModelParams<T> best_params = params;
        double best_metric = -2.0;
        int best_epoch = 0;
        long step = 0;

        std::vector<int> truth_val;
        for (int idx : val_idx) truth_val.push_back(records[static_cast<std::size_t>(idx)].score);

        for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
            std::vector<int> order = train_idx;
            Rng shuffle_rng(mix_seed(hyper.seed, 0x5f1e, static_cast<std::uint64_t>(rotation),
                                     static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);

            std::vector<const EncodedRecord<T>*> normal_buf, long_buf;
            auto flush_normal = [&]() {
                if (normal_buf.empty()) return;
                std::vector<TokenizedPair> batch;
                std::vector<int> labels;
                for (const auto* er : normal_buf) {
                    batch.push_back(er->pair);
                    labels.push_back(er->label);
                }
                Rng dropout_rng(mix_seed(hyper.seed, 0xd409,
                                         static_cast<std::uint64_t>(rotation),
                                         static_cast<std::uint64_t>(step)));
                const auto traces = forward_batch(params, cfg, batch,
                                                  cfg.dropout_rate > 0.0 ? &dropout_rng
                                                                         : nullptr);
                zero_params(grads);
                cls_loss_and_backward(params, cfg, traces, labels, grads);
                adam.lr = lr_at(step);
                adam_step(params, grads, state, adam);
                ++step;
                normal_buf.clear();
            };
            auto flush_long = [&]() {
                if (long_buf.empty()) return;
                zero_params(grads);
                const T inv_b = T(1) / static_cast<T>(long_buf.size());
                for (const auto* er : long_buf) {
                    const auto probs = classify<T>(params, er->frozen_pooled);
                    for (int k = 0; k < cfg.num_labels; ++k) {
                        T dlogit = probs[static_cast<std::size_t>(k)];
                        if (k == er->label) dlogit -= T(1);
                        dlogit *= inv_b;
                        T* gw = grads.cls_w.row(k);
                        for (int i = 0; i < cfg.hidden_dim; ++i)
                            gw[i] += dlogit * er->frozen_pooled[static_cast<std::size_t>(i)];
                        grads.cls_b.v[static_cast<std::size_t>(k)] += dlogit;
                    }
                }
                adam.lr = lr_at(step);
                adam_step(params, grads, state, adam);
                ++step;
                long_buf.clear();
            };

            for (int idx : order) {
                const auto& er = encoded[by_index.at(idx)];
                if (er.long_path)
                    long_buf.push_back(&er);
                else
                    normal_buf.push_back(&er);
                if (static_cast<int>(normal_buf.size()) == hyper.batch_size) flush_normal();
                if (static_cast<int>(long_buf.size()) == hyper.batch_size) flush_long();
            }
            flush_normal();
            flush_long();

            // epoch selection on the validation fold
            const auto pred_val =
                detail::predict_batch(params, cfg, encoded, val_idx, hyper.batch_size, by_index);
            const double metric = detail::validation_metric(truth_val, pred_val, num_labels);
            meta.val_metric_per_epoch.push_back(metric);
            if (metric > best_metric + 1e-12) {
                best_metric = metric;
                best_epoch = epoch;
                best_params = params;
            }
        }
        if (hyper.epochs > 0) params = best_params;
        meta.selected_epoch = best_epoch;

        const auto pred_test =
            detail::predict_batch(params, cfg, encoded, test_idx, hyper.batch_size, by_index);
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
            Prediction p;
            p.record_uid = detail::record_uid(item_id, test_idx[i]);
            p.rotation = rotation;
            p.true_label = records[static_cast<std::size_t>(test_idx[i])].score;
            p.predicted = pred_test[i];
            result.predictions.push_back(std::move(p));
        }
        result.rotations.push_back(std::move(meta));
    }

    // pooled QWK across rotations (or mean of per-rotation QWKs behind the flag)
    if (hyper.average_qwk) {
        double sum = 0.0;
        for (int rotation = 0; rotation < hyper.folds; ++rotation) {
            std::vector<int> t, p;
            for (const auto& pred : result.predictions) {
                if (pred.rotation != rotation) continue;
                t.push_back(pred.true_label);
                p.push_back(pred.predicted);
            }
            sum += qwk(t, p, num_labels);
        }
        result.qwk = sum / static_cast<double>(hyper.folds);
    } else {
        std::vector<int> t, p;
        for (const auto& pred : result.predictions) {
            t.push_back(pred.true_label);
            p.push_back(pred.predicted);
        }
        result.qwk = qwk(t, p, num_labels);
    }
    return result;
}

}  // namespace edscore
