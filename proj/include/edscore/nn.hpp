// SPDX-License-Identifier: Apache-2.0
//
// Miniature transformer encoder with exact reverse-mode gradients, written
// against a scalar template parameter so training runs in float and gradient
// checks run in double. Architecture: token+position+segment embeddings,
// post-layer-norm blocks (masked multi-head self-attention, GELU feed
// forward), an MLM projection head and a softmax classification head over
// the [CLS] vector. Optimizer: bias-corrected Adam.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/tokenizer.hpp"

namespace edscore {

struct ModelConfig {
    int num_layers = 2;
    int num_heads = 2;
    int hidden_dim = 64;
    int ff_dim = 256;
    int max_len = 128;
    int vocab_size = 2000;
    int num_labels = 5;
    double dropout_rate = 0.1;

    void validate() const {
        if (num_layers < 1 || num_heads < 1 || hidden_dim < 1 || ff_dim < 1 || vocab_size < 5 ||
            num_labels < 2 || max_len < 8)
            throw DataError("model config: all dimensions must be positive (vocab >= 5, K >= 2)");
        if (hidden_dim % num_heads != 0)
            throw DataError("model config: hidden_dim must be divisible by num_heads");
        if (max_len > 512) throw DataError("model config: max_len exceeds the 512 ceiling");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw DataError("model config: dropout_rate outside [0, 1)");
    }

    int head_dim() const { return hidden_dim / num_heads; }
};

// ---------------------------------------------------------------------------
// tensors and parameters
// ---------------------------------------------------------------------------

template <class T>
struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Tensor2() = default;
    Tensor2(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, T(0)) {}

    T* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
    const T* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    T at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return v.size(); }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

template <class T>
struct LayerParams {
    Tensor2<T> wq, wk, wv, wo;  // [H x H], rows index the output dimension
    Tensor2<T> bq, bk, bv, bo;  // [1 x H]
    Tensor2<T> ln1_gain, ln1_bias;
    Tensor2<T> ff_w1, ff_b1;  // [F x H], [1 x F]
    Tensor2<T> ff_w2, ff_b2;  // [H x F], [1 x H]
    Tensor2<T> ln2_gain, ln2_bias;
};

template <class T>
struct ModelParams {
    Tensor2<T> tok_emb;  // [V x H]
    Tensor2<T> pos_emb;  // [max_len x H]
    Tensor2<T> seg_emb;  // [2 x H]
    std::vector<LayerParams<T>> layers;
    Tensor2<T> mlm_w;  // [V x H]
    Tensor2<T> mlm_b;  // [1 x V]
    Tensor2<T> cls_w;  // [K x H]
    Tensor2<T> cls_b;  // [1 x K]
};

template <class T>
struct ParamRef {
    std::string name;
    Tensor2<T>* tensor;
};

template <class T>
std::vector<ParamRef<T>> param_manifest(ModelParams<T>& p) {
    std::vector<ParamRef<T>> refs;
    refs.push_back({"tok_emb", &p.tok_emb});
    refs.push_back({"pos_emb", &p.pos_emb});
    refs.push_back({"seg_emb", &p.seg_emb});
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        auto& lp = p.layers[l];
        refs.push_back({prefix + "attn.wq", &lp.wq});
        refs.push_back({prefix + "attn.bq", &lp.bq});
        refs.push_back({prefix + "attn.wk", &lp.wk});
        refs.push_back({prefix + "attn.bk", &lp.bk});
        refs.push_back({prefix + "attn.wv", &lp.wv});
        refs.push_back({prefix + "attn.bv", &lp.bv});
        refs.push_back({prefix + "attn.wo", &lp.wo});
        refs.push_back({prefix + "attn.bo", &lp.bo});
        refs.push_back({prefix + "ln1.gain", &lp.ln1_gain});
        refs.push_back({prefix + "ln1.bias", &lp.ln1_bias});
        refs.push_back({prefix + "ff.w1", &lp.ff_w1});
        refs.push_back({prefix + "ff.b1", &lp.ff_b1});
        refs.push_back({prefix + "ff.w2", &lp.ff_w2});
        refs.push_back({prefix + "ff.b2", &lp.ff_b2});
        refs.push_back({prefix + "ln2.gain", &lp.ln2_gain});
        refs.push_back({prefix + "ln2.bias", &lp.ln2_bias});
    }
    refs.push_back({"mlm.w", &p.mlm_w});
    refs.push_back({"mlm.b", &p.mlm_b});
    refs.push_back({"cls.w", &p.cls_w});
    refs.push_back({"cls.b", &p.cls_b});
    return refs;
}

template <class T>
ModelParams<T> make_param_shapes(const ModelConfig& cfg) {
    ModelParams<T> p;
    const int H = cfg.hidden_dim;
    const int F = cfg.ff_dim;
    p.tok_emb = Tensor2<T>(cfg.vocab_size, H);
    p.pos_emb = Tensor2<T>(cfg.max_len, H);
    p.seg_emb = Tensor2<T>(2, H);
    p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (auto& lp : p.layers) {
        lp.wq = Tensor2<T>(H, H);
        lp.wk = Tensor2<T>(H, H);
        lp.wv = Tensor2<T>(H, H);
        lp.wo = Tensor2<T>(H, H);
        lp.bq = Tensor2<T>(1, H);
        lp.bk = Tensor2<T>(1, H);
        lp.bv = Tensor2<T>(1, H);
        lp.bo = Tensor2<T>(1, H);
        lp.ln1_gain = Tensor2<T>(1, H);
        lp.ln1_bias = Tensor2<T>(1, H);
        lp.ff_w1 = Tensor2<T>(F, H);
        lp.ff_b1 = Tensor2<T>(1, F);
        lp.ff_w2 = Tensor2<T>(H, F);
        lp.ff_b2 = Tensor2<T>(1, H);
        lp.ln2_gain = Tensor2<T>(1, H);
        lp.ln2_bias = Tensor2<T>(1, H);
    }
    p.mlm_w = Tensor2<T>(cfg.vocab_size, H);
    p.mlm_b = Tensor2<T>(1, cfg.vocab_size);
    p.cls_w = Tensor2<T>(cfg.num_labels, H);
    p.cls_b = Tensor2<T>(1, cfg.num_labels);
    return p;
}

// weights ~ N(0, 0.02^2), biases 0, layer-norm gain 1 / bias 0
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams<T> p = make_param_shapes<T>(cfg);
    Rng rng(mix_seed(seed, 0x1417, 0, 0));
    for (auto& ref : param_manifest(p)) {
        const bool is_bias = ref.name.find(".b") != std::string::npos ||
                             ref.name.find("bias") != std::string::npos;
        const bool is_gain = ref.name.find("gain") != std::string::npos;
        for (auto& x : ref.tensor->v) {
            if (is_gain)
                x = T(1);
            else if (is_bias)
                x = T(0);
            else
                x = static_cast<T>(rng.normal(0.0, 0.02));
        }
    }
    return p;
}

template <class T>
void zero_params(ModelParams<T>& p) {
    for (auto& ref : param_manifest(p)) ref.tensor->zero();
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

namespace nnd {

// y[p] = W.row(o) dot x[p] + b, for all positions; W is [out x in]
template <class T>
void linear_forward(const T* x, int len, int in_dim, const Tensor2<T>& w, const Tensor2<T>& b,
                    T* y) {
    const int out_dim = w.rows;
    for (int p = 0; p < len; ++p) {
        const T* xp = x + static_cast<std::size_t>(p) * in_dim;
        T* yp = y + static_cast<std::size_t>(p) * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const T* wr = w.row(o);
            T acc = b.v[static_cast<std::size_t>(o)];
            for (int i = 0; i < in_dim; ++i) acc += wr[i] * xp[i];
            yp[o] = acc;
        }
    }
}

// gradients of linear_forward; accumulates into dw/db, writes dx (may be null)
template <class T>
void linear_backward(const T* x, int len, int in_dim, const Tensor2<T>& w, const T* dy,
                     Tensor2<T>& dw, Tensor2<T>& db, T* dx) {
    const int out_dim = w.rows;
    for (int p = 0; p < len; ++p) {
        const T* xp = x + static_cast<std::size_t>(p) * in_dim;
        const T* dyp = dy + static_cast<std::size_t>(p) * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const T g = dyp[o];
            if (g == T(0)) continue;
            T* dwr = dw.row(o);
            for (int i = 0; i < in_dim; ++i) dwr[i] += g * xp[i];
            db.v[static_cast<std::size_t>(o)] += g;
        }
        if (dx) {
            T* dxp = dx + static_cast<std::size_t>(p) * in_dim;
            for (int i = 0; i < in_dim; ++i) {
                T acc = T(0);
                for (int o = 0; o < out_dim; ++o) acc += dyp[o] * w.at(o, i);
                dxp[i] += acc;
            }
        }
    }
}

template <class T>
void layer_norm_forward(const T* x, int len, int dim, const Tensor2<T>& gain,
                        const Tensor2<T>& bias, T* y, T* mean_out, T* rstd_out) {
    constexpr T eps = T(1e-5);
    for (int p = 0; p < len; ++p) {
        const T* xp = x + static_cast<std::size_t>(p) * dim;
        T* yp = y + static_cast<std::size_t>(p) * dim;
        T mu = T(0);
        for (int i = 0; i < dim; ++i) mu += xp[i];
        mu /= T(dim);
        T var = T(0);
        for (int i = 0; i < dim; ++i) var += (xp[i] - mu) * (xp[i] - mu);
        var /= T(dim);
        const T rstd = T(1) / std::sqrt(var + eps);
        mean_out[p] = mu;
        rstd_out[p] = rstd;
        for (int i = 0; i < dim; ++i)
            yp[i] = gain.v[static_cast<std::size_t>(i)] * (xp[i] - mu) * rstd +
                    bias.v[static_cast<std::size_t>(i)];
    }
}

template <class T>
void layer_norm_backward(const T* x, int len, int dim, const Tensor2<T>& gain, const T* mean,
                         const T* rstd, const T* dy, Tensor2<T>& dgain, Tensor2<T>& dbias,
                         T* dx) {
    for (int p = 0; p < len; ++p) {
        const T* xp = x + static_cast<std::size_t>(p) * dim;
        const T* dyp = dy + static_cast<std::size_t>(p) * dim;
        T* dxp = dx + static_cast<std::size_t>(p) * dim;
        const T mu = mean[p];
        const T rs = rstd[p];
        T sum_dyg = T(0);
        T sum_dyg_xhat = T(0);
        for (int i = 0; i < dim; ++i) {
            const T xhat = (xp[i] - mu) * rs;
            const T dyg = dyp[i] * gain.v[static_cast<std::size_t>(i)];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            dgain.v[static_cast<std::size_t>(i)] += dyp[i] * xhat;
            dbias.v[static_cast<std::size_t>(i)] += dyp[i];
        }
        const T inv_dim = T(1) / T(dim);
        for (int i = 0; i < dim; ++i) {
            const T xhat = (xp[i] - mu) * rs;
            const T dyg = dyp[i] * gain.v[static_cast<std::size_t>(i)];
            dxp[i] += rs * (dyg - inv_dim * sum_dyg - xhat * inv_dim * sum_dyg_xhat);
        }
    }
}

template <class T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865476)));
}

template <class T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    return cdf + x * pdf;
}

// numerically stable in-place softmax over a row; masked entries get exactly 0
template <class T>
void masked_softmax_row(T* scores, const int* mask, int len) {
    T max_v = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < len; ++j)
        if (mask[j] && scores[j] > max_v) max_v = scores[j];
    T denom = T(0);
    for (int j = 0; j < len; ++j) {
        if (mask[j]) {
            scores[j] = std::exp(scores[j] - max_v);
            denom += scores[j];
        } else {
            scores[j] = T(0);
        }
    }
    for (int j = 0; j < len; ++j) scores[j] /= denom;
}

}  // namespace nnd

template <class T>
std::vector<T> softmax_vec(std::span<const T> logits) {
    std::vector<T> probs(logits.size());
    T max_v = -std::numeric_limits<T>::infinity();
    for (const T x : logits) max_v = std::max(max_v, x);
    T denom = T(0);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max_v);
        denom += probs[i];
    }
    for (auto& p : probs) p /= denom;
    return probs;
}

// -ln(p[label]) with the probability floored at 1e-12
template <class T>
T cross_entropy(std::span<const T> probs, int true_label) {
    if (true_label < 0 || true_label >= static_cast<int>(probs.size()))
        throw DataError("cross_entropy: label out of range");
    T p = probs[static_cast<std::size_t>(true_label)];
    if (p < T(1e-12)) p = T(1e-12);
    return -std::log(p);
}

template <class T>
struct SeqTrace {
    int len = 0;  // processed window (batch max real length)
    std::vector<int> token_ids, segment_ids, attn_mask;

    std::vector<T> emb_sum;   // len*H, after dropout
    std::vector<T> emb_mask;  // dropout mask (empty when dropout off)

    struct LayerTrace {
        std::vector<T> x_in;                 // len*H
        std::vector<T> q, k, v;              // len*H
        std::vector<T> attn_probs;           // heads*len*len
        std::vector<T> ctx;                  // len*H
        std::vector<T> attn_out;             // len*H
        std::vector<T> attn_mask_drop;       // dropout mask
        std::vector<T> res1;                 // len*H
        std::vector<T> ln1_mean, ln1_rstd;   // len
        std::vector<T> ln1_out;              // len*H
        std::vector<T> ff_pre;               // len*F
        std::vector<T> ff_out;               // len*H
        std::vector<T> ff_mask_drop;
        std::vector<T> res2;                 // len*H
        std::vector<T> ln2_mean, ln2_rstd;   // len
        std::vector<T> ln2_out;              // len*H
    };
    std::vector<LayerTrace> layers;

    const std::vector<T>& final_hidden() const {
        return layers.empty() ? emb_sum : layers.back().ln2_out;
    }

    // [CLS] vector: hidden state at position 0
    std::vector<T> pooled(int hidden_dim) const {
        const auto& h = final_hidden();
        return std::vector<T>(h.begin(), h.begin() + hidden_dim);
    }
};

template <class T>
using BatchTrace = std::vector<SeqTrace<T>>;

namespace nnd {

template <class T>
void apply_dropout(std::vector<T>& x, std::vector<T>& mask_out, double rate, Rng& rng) {
    mask_out.resize(x.size());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T m = rng.bernoulli(rate) ? T(0) : keep_scale;
        mask_out[i] = m;
        x[i] *= m;
    }
}

}  // namespace nnd

// Forward pass over a batch. Sequences are processed up to the batch's
// maximum real (unpadded) length; attention masks out padding keys, so real
// positions are independent of batch composition. Pass a dropout RNG to
// enable dropout (training); null means evaluation mode.
template <class T>
BatchTrace<T> forward_batch(const ModelParams<T>& params, const ModelConfig& cfg,
                            std::span<const TokenizedPair> batch, Rng* dropout_rng = nullptr) {
    const int H = cfg.hidden_dim;
    const int F = cfg.ff_dim;
    const int nh = cfg.num_heads;
    const int hd = cfg.head_dim();
    const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));
    const bool drop = dropout_rng != nullptr && cfg.dropout_rate > 0.0;

    int window = 0;
    for (const auto& tp : batch) {
        if (tp.length() > cfg.max_len)
            throw DataError("forward: sequence length exceeds model max_len");
        window = std::max(window, tp.real_length());
    }

    BatchTrace<T> traces;
    traces.reserve(batch.size());
    for (const auto& tp : batch) {
        SeqTrace<T> tr;
        const int L = std::min(window, tp.length());
        tr.len = L;
        tr.token_ids.assign(tp.token_ids.begin(), tp.token_ids.begin() + L);
        tr.segment_ids.assign(tp.segment_ids.begin(), tp.segment_ids.begin() + L);
        tr.attn_mask.assign(tp.attention_mask.begin(), tp.attention_mask.begin() + L);

        // embedding sum
        tr.emb_sum.assign(static_cast<std::size_t>(L) * H, T(0));
        for (int p = 0; p < L; ++p) {
            const int tok = tr.token_ids[static_cast<std::size_t>(p)];
            if (tok < 0 || tok >= cfg.vocab_size)
                throw DataError("forward: token id out of vocabulary range");
            const int seg = tr.segment_ids[static_cast<std::size_t>(p)];
            const T* te = params.tok_emb.row(tok);
            const T* pe = params.pos_emb.row(p);
            const T* se = params.seg_emb.row(seg);
            T* out = tr.emb_sum.data() + static_cast<std::size_t>(p) * H;
            for (int i = 0; i < H; ++i) out[i] = te[i] + pe[i] + se[i];
        }
        if (drop) nnd::apply_dropout(tr.emb_sum, tr.emb_mask, cfg.dropout_rate, *dropout_rng);

        const std::vector<T>* x = &tr.emb_sum;
        tr.layers.resize(static_cast<std::size_t>(cfg.num_layers));
        for (int l = 0; l < cfg.num_layers; ++l) {
            auto& lt = tr.layers[static_cast<std::size_t>(l)];
            const auto& lp = params.layers[static_cast<std::size_t>(l)];
            lt.x_in = *x;

            lt.q.assign(static_cast<std::size_t>(L) * H, T(0));
            lt.k.assign(static_cast<std::size_t>(L) * H, T(0));
            lt.v.assign(static_cast<std::size_t>(L) * H, T(0));
            nnd::linear_forward(lt.x_in.data(), L, H, lp.wq, lp.bq, lt.q.data());
            nnd::linear_forward(lt.x_in.data(), L, H, lp.wk, lp.bk, lt.k.data());
            nnd::linear_forward(lt.x_in.data(), L, H, lp.wv, lp.bv, lt.v.data());

            lt.attn_probs.assign(static_cast<std::size_t>(nh) * L * L, T(0));
            lt.ctx.assign(static_cast<std::size_t>(L) * H, T(0));
            for (int h = 0; h < nh; ++h) {
                const int off = h * hd;
                for (int i = 0; i < L; ++i) {
                    T* row = lt.attn_probs.data() +
                             (static_cast<std::size_t>(h) * L + i) * L;
                    const T* qi = lt.q.data() + static_cast<std::size_t>(i) * H + off;
                    for (int j = 0; j < L; ++j) {
                        const T* kj = lt.k.data() + static_cast<std::size_t>(j) * H + off;
                        T acc = T(0);
                        for (int d = 0; d < hd; ++d) acc += qi[d] * kj[d];
                        row[j] = acc * inv_sqrt_hd;
                    }
                    nnd::masked_softmax_row(row, tr.attn_mask.data(), L);
                    T* ctx_i = lt.ctx.data() + static_cast<std::size_t>(i) * H + off;
                    for (int j = 0; j < L; ++j) {
                        const T a = row[j];
                        if (a == T(0)) continue;
                        const T* vj = lt.v.data() + static_cast<std::size_t>(j) * H + off;
                        for (int d = 0; d < hd; ++d) ctx_i[d] += a * vj[d];
                    }
                }
            }

            lt.attn_out.assign(static_cast<std::size_t>(L) * H, T(0));
            nnd::linear_forward(lt.ctx.data(), L, H, lp.wo, lp.bo, lt.attn_out.data());
            if (drop)
                nnd::apply_dropout(lt.attn_out, lt.attn_mask_drop, cfg.dropout_rate,
                                   *dropout_rng);

            lt.res1.resize(static_cast<std::size_t>(L) * H);
            for (std::size_t i = 0; i < lt.res1.size(); ++i)
                lt.res1[i] = lt.x_in[i] + lt.attn_out[i];
            lt.ln1_mean.resize(static_cast<std::size_t>(L));
            lt.ln1_rstd.resize(static_cast<std::size_t>(L));
            lt.ln1_out.resize(static_cast<std::size_t>(L) * H);
            nnd::layer_norm_forward(lt.res1.data(), L, H, lp.ln1_gain, lp.ln1_bias,
                                    lt.ln1_out.data(), lt.ln1_mean.data(), lt.ln1_rstd.data());

            lt.ff_pre.assign(static_cast<std::size_t>(L) * F, T(0));
            nnd::linear_forward(lt.ln1_out.data(), L, H, lp.ff_w1, lp.ff_b1, lt.ff_pre.data());
            std::vector<T> ff_act(static_cast<std::size_t>(L) * F);
            for (std::size_t i = 0; i < ff_act.size(); ++i) ff_act[i] = nnd::gelu(lt.ff_pre[i]);
            lt.ff_out.assign(static_cast<std::size_t>(L) * H, T(0));
            nnd::linear_forward(ff_act.data(), L, F, lp.ff_w2, lp.ff_b2, lt.ff_out.data());
            if (drop)
                nnd::apply_dropout(lt.ff_out, lt.ff_mask_drop, cfg.dropout_rate, *dropout_rng);

            lt.res2.resize(static_cast<std::size_t>(L) * H);
            for (std::size_t i = 0; i < lt.res2.size(); ++i)
                lt.res2[i] = lt.ln1_out[i] + lt.ff_out[i];
            lt.ln2_mean.resize(static_cast<std::size_t>(L));
            lt.ln2_rstd.resize(static_cast<std::size_t>(L));
            lt.ln2_out.resize(static_cast<std::size_t>(L) * H);
            nnd::layer_norm_forward(lt.res2.data(), L, H, lp.ln2_gain, lp.ln2_bias,
                                    lt.ln2_out.data(), lt.ln2_mean.data(), lt.ln2_rstd.data());
            x = &lt.ln2_out;
        }
        traces.push_back(std::move(tr));
    }
    return traces;
}

// softmax(W_cls * pooled + b_cls)
template <class T>
std::vector<T> classify(const ModelParams<T>& params, std::span<const T> pooled) {
    const int K = params.cls_w.rows;
    const int H = params.cls_w.cols;
    std::vector<T> logits(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const T* wr = params.cls_w.row(k);
        T acc = params.cls_b.v[static_cast<std::size_t>(k)];
        for (int i = 0; i < H; ++i) acc += wr[i] * pooled[static_cast<std::size_t>(i)];
        logits[static_cast<std::size_t>(k)] = acc;
    }
    return softmax_vec<T>(logits);
}

// per-position vocabulary logits
template <class T>
Tensor2<T> mlm_logits(const ModelParams<T>& params, const std::vector<T>& hidden, int len) {
    const int H = params.mlm_w.cols;
    Tensor2<T> out(len, params.mlm_w.rows);
    nnd::linear_forward(hidden.data(), len, H, params.mlm_w, params.mlm_b, out.v.data());
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace nnd {

// encoder backward from d(final hidden); accumulates parameter gradients
template <class T>
void encoder_backward(const ModelParams<T>& params, const ModelConfig& cfg,
                      const SeqTrace<T>& tr, std::vector<T>& dhidden, ModelParams<T>& grads) {
    const int H = cfg.hidden_dim;
    const int F = cfg.ff_dim;
    const int nh = cfg.num_heads;
    const int hd = cfg.head_dim();
    const int L = tr.len;
    const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));

    std::vector<T> dx(static_cast<std::size_t>(L) * H, T(0));
    std::vector<T>& dout = dhidden;

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const auto& lt = tr.layers[static_cast<std::size_t>(l)];
        const auto& lp = params.layers[static_cast<std::size_t>(l)];
        auto& lg = grads.layers[static_cast<std::size_t>(l)];

        // ln2
        std::vector<T> dres2(static_cast<std::size_t>(L) * H, T(0));
        layer_norm_backward(lt.res2.data(), L, H, lp.ln2_gain, lt.ln2_mean.data(),
                            lt.ln2_rstd.data(), dout.data(), lg.ln2_gain, lg.ln2_bias,
                            dres2.data());

        // res2 = ln1_out + dropout(ff_out)
        std::vector<T> dff_out = dres2;
        if (!lt.ff_mask_drop.empty())
            for (std::size_t i = 0; i < dff_out.size(); ++i) dff_out[i] *= lt.ff_mask_drop[i];

        // ff: ln1_out -> w1 -> gelu -> w2
        std::vector<T> ff_act(static_cast<std::size_t>(L) * F);
        for (std::size_t i = 0; i < ff_act.size(); ++i) ff_act[i] = gelu(lt.ff_pre[i]);
        std::vector<T> dff_act(static_cast<std::size_t>(L) * F, T(0));
        linear_backward(ff_act.data(), L, F, lp.ff_w2, dff_out.data(), lg.ff_w2, lg.ff_b2,
                        dff_act.data());
        std::vector<T> dff_pre(static_cast<std::size_t>(L) * F);
        for (std::size_t i = 0; i < dff_pre.size(); ++i)
            dff_pre[i] = dff_act[i] * gelu_grad(lt.ff_pre[i]);
        std::vector<T> dln1_out = dres2;  // residual branch
        linear_backward(lt.ln1_out.data(), L, H, lp.ff_w1, dff_pre.data(), lg.ff_w1, lg.ff_b1,
                        dln1_out.data());

        // ln1
        std::vector<T> dres1(static_cast<std::size_t>(L) * H, T(0));
        layer_norm_backward(lt.res1.data(), L, H, lp.ln1_gain, lt.ln1_mean.data(),
                            lt.ln1_rstd.data(), dln1_out.data(), lg.ln1_gain, lg.ln1_bias,
                            dres1.data());

        // res1 = x_in + dropout(attn_out)
        std::vector<T> dattn_out = dres1;
        if (!lt.attn_mask_drop.empty())
            for (std::size_t i = 0; i < dattn_out.size(); ++i)
                dattn_out[i] *= lt.attn_mask_drop[i];

        std::vector<T> dctx(static_cast<std::size_t>(L) * H, T(0));
        linear_backward(lt.ctx.data(), L, H, lp.wo, dattn_out.data(), lg.wo, lg.bo, dctx.data());

        std::vector<T> dq(static_cast<std::size_t>(L) * H, T(0));
        std::vector<T> dk(static_cast<std::size_t>(L) * H, T(0));
        std::vector<T> dv(static_cast<std::size_t>(L) * H, T(0));
        std::vector<T> dprobs_row(static_cast<std::size_t>(L));
        for (int h = 0; h < nh; ++h) {
            const int off = h * hd;
            for (int i = 0; i < L; ++i) {
                const T* probs =
                    lt.attn_probs.data() + (static_cast<std::size_t>(h) * L + i) * L;
                const T* dctx_i = dctx.data() + static_cast<std::size_t>(i) * H + off;
                T dot = T(0);
                for (int j = 0; j < L; ++j) {
                    if (probs[j] == T(0) && tr.attn_mask[static_cast<std::size_t>(j)] == 0) {
                        dprobs_row[static_cast<std::size_t>(j)] = T(0);
                        continue;
                    }
                    const T* vj = lt.v.data() + static_cast<std::size_t>(j) * H + off;
                    T acc = T(0);
                    for (int d = 0; d < hd; ++d) acc += dctx_i[d] * vj[d];
                    dprobs_row[static_cast<std::size_t>(j)] = acc;
                    dot += acc * probs[j];
                }
                const T* qi = lt.q.data() + static_cast<std::size_t>(i) * H + off;
                T* dq_i = dq.data() + static_cast<std::size_t>(i) * H + off;
                for (int j = 0; j < L; ++j) {
                    const T pj = probs[j];
                    if (pj == T(0)) continue;
                    const T dscore = pj * (dprobs_row[static_cast<std::size_t>(j)] - dot);
                    const T* kj = lt.k.data() + static_cast<std::size_t>(j) * H + off;
                    T* dk_j = dk.data() + static_cast<std::size_t>(j) * H + off;
                    T* dv_j = dv.data() + static_cast<std::size_t>(j) * H + off;
                    const T* dctx_i2 = dctx.data() + static_cast<std::size_t>(i) * H + off;
                    for (int d = 0; d < hd; ++d) {
                        dq_i[d] += dscore * kj[d] * inv_sqrt_hd;
                        dk_j[d] += dscore * qi[d] * inv_sqrt_hd;
                        dv_j[d] += pj * dctx_i2[d];
                    }
                }
            }
        }

        // project q/k/v gradients back to the layer input
        std::fill(dx.begin(), dx.end(), T(0));
        linear_backward(lt.x_in.data(), L, H, lp.wq, dq.data(), lg.wq, lg.bq, dx.data());
        linear_backward(lt.x_in.data(), L, H, lp.wk, dk.data(), lg.wk, lg.bk, dx.data());
        linear_backward(lt.x_in.data(), L, H, lp.wv, dv.data(), lg.wv, lg.bv, dx.data());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dres1[i];  // residual branch

        dout = dx;
    }

    // embedding gradients
    if (!tr.emb_mask.empty())
        for (std::size_t i = 0; i < dout.size(); ++i) dout[i] *= tr.emb_mask[i];
    for (int p = 0; p < L; ++p) {
        const int tok = tr.token_ids[static_cast<std::size_t>(p)];
        const int seg = tr.segment_ids[static_cast<std::size_t>(p)];
        const T* dp = dout.data() + static_cast<std::size_t>(p) * H;
        T* gt = grads.tok_emb.row(tok);
        T* gp = grads.pos_emb.row(p);
        T* gs = grads.seg_emb.row(seg);
        for (int i = 0; i < H; ++i) {
            gt[i] += dp[i];
            gp[i] += dp[i];
            gs[i] += dp[i];
        }
    }
}

}  // namespace nnd

// MLM head: mean cross-entropy over positions with target >= 0.
// targets[s][p] is the original token id at masked positions, -1 elsewhere.
// Returns the loss; accumulates exact gradients of the mean loss into grads.
template <class T>
T mlm_loss_and_backward(const ModelParams<T>& params, const ModelConfig& cfg,
                        const BatchTrace<T>& traces,
                        const std::vector<std::vector<int>>& targets, ModelParams<T>& grads) {
    if (traces.size() != targets.size())
        throw DataError("mlm loss: trace/target batch size mismatch");
    const int H = cfg.hidden_dim;
    long total_masked = 0;
    for (const auto& tgt : targets)
        for (int t : tgt)
            if (t >= 0) ++total_masked;
    if (total_masked == 0) throw DataError("mlm loss: batch has no masked targets");

    const T inv_m = T(1) / static_cast<T>(total_masked);
    T loss = T(0);
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const auto& tr = traces[s];
        const auto& hidden = tr.final_hidden();
        std::vector<T> dhidden(static_cast<std::size_t>(tr.len) * H, T(0));
        std::vector<T> logits(static_cast<std::size_t>(cfg.vocab_size));
        for (int p = 0; p < tr.len; ++p) {
            const int target =
                p < static_cast<int>(targets[s].size()) ? targets[s][static_cast<std::size_t>(p)]
                                                        : -1;
            if (target < 0) continue;
            if (target >= cfg.vocab_size) throw DataError("mlm loss: target id out of range");
            const T* hp = hidden.data() + static_cast<std::size_t>(p) * H;
            for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
                const T* wr = params.mlm_w.row(vtok);
                T acc = params.mlm_b.v[static_cast<std::size_t>(vtok)];
                for (int i = 0; i < H; ++i) acc += wr[i] * hp[i];
                logits[static_cast<std::size_t>(vtok)] = acc;
            }
            const auto probs = softmax_vec<T>(logits);
            loss += cross_entropy<T>(probs, target) * inv_m;

            // dlogits = (probs - onehot) / M
            T* dhp = dhidden.data() + static_cast<std::size_t>(p) * H;
            for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
                T dlogit = probs[static_cast<std::size_t>(vtok)];
                if (vtok == target) dlogit -= T(1);
                dlogit *= inv_m;
                if (dlogit == T(0)) continue;
                const T* wr = params.mlm_w.row(vtok);
                T* gw = grads.mlm_w.row(vtok);
                const T* hp2 = hidden.data() + static_cast<std::size_t>(p) * H;
                for (int i = 0; i < H; ++i) {
                    gw[i] += dlogit * hp2[i];
                    dhp[i] += dlogit * wr[i];
                }
                grads.mlm_b.v[static_cast<std::size_t>(vtok)] += dlogit;
            }
        }
        nnd::encoder_backward(params, cfg, tr, dhidden, grads);
    }
    return loss;
}

// Classification head over [CLS]: mean cross-entropy over the batch.
template <class T>
T cls_loss_and_backward(const ModelParams<T>& params, const ModelConfig& cfg,
                        const BatchTrace<T>& traces, std::span<const int> labels,
                        ModelParams<T>& grads) {
    if (traces.size() != labels.size())
        throw DataError("cls loss: trace/label batch size mismatch");
    const int H = cfg.hidden_dim;
    const int K = cfg.num_labels;
    const T inv_b = T(1) / static_cast<T>(traces.size());
    T loss = T(0);
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const auto& tr = traces[s];
        const int label = labels[s];
        if (label < 0 || label >= K) throw DataError("cls loss: label out of range");
        const auto pooled = tr.pooled(H);
        const auto probs = classify<T>(params, pooled);
        loss += cross_entropy<T>(probs, label) * inv_b;

        std::vector<T> dhidden(static_cast<std::size_t>(tr.len) * H, T(0));
        for (int k = 0; k < K; ++k) {
            T dlogit = probs[static_cast<std::size_t>(k)];
            if (k == label) dlogit -= T(1);
            dlogit *= inv_b;
            const T* wr = params.cls_w.row(k);
            T* gw = grads.cls_w.row(k);
            for (int i = 0; i < H; ++i) {
                gw[i] += dlogit * pooled[static_cast<std::size_t>(i)];
                dhidden[static_cast<std::size_t>(i)] += dlogit * wr[i];
            }
            grads.cls_b.v[static_cast<std::size_t>(k)] += dlogit;
        }
        nnd::encoder_backward(params, cfg, tr, dhidden, grads);
    }
    return loss;
}

// loss without gradients, same reduction as mlm_loss_and_backward
template <class T>
T mlm_loss(const ModelParams<T>& params, const ModelConfig& cfg, const BatchTrace<T>& traces,
           const std::vector<std::vector<int>>& targets) {
    const int H = cfg.hidden_dim;
    long total_masked = 0;
    for (const auto& tgt : targets)
        for (int t : tgt)
            if (t >= 0) ++total_masked;
    if (total_masked == 0) throw DataError("mlm loss: batch has no masked targets");
    T loss = T(0);
    std::vector<T> logits(static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const auto& hidden = traces[s].final_hidden();
        for (int p = 0; p < traces[s].len; ++p) {
            const int target =
                p < static_cast<int>(targets[s].size()) ? targets[s][static_cast<std::size_t>(p)]
                                                        : -1;
            if (target < 0) continue;
            const T* hp = hidden.data() + static_cast<std::size_t>(p) * H;
            for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
                const T* wr = params.mlm_w.row(vtok);
                T acc = params.mlm_b.v[static_cast<std::size_t>(vtok)];
                for (int i = 0; i < H; ++i) acc += wr[i] * hp[i];
                logits[static_cast<std::size_t>(vtok)] = acc;
            }
            loss += cross_entropy<T>(softmax_vec<T>(logits), target);
        }
    }
    return loss / static_cast<T>(total_masked);
}

// fraction of masked positions whose argmax logit equals the original token
template <class T>
double mlm_masked_accuracy(const ModelParams<T>& params, const ModelConfig& cfg,
                           const BatchTrace<T>& traces,
                           const std::vector<std::vector<int>>& targets) {
    const int H = cfg.hidden_dim;
    long correct = 0, total = 0;
    std::vector<T> logits(static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const auto& hidden = traces[s].final_hidden();
        for (int p = 0; p < traces[s].len; ++p) {
            const int target =
                p < static_cast<int>(targets[s].size()) ? targets[s][static_cast<std::size_t>(p)]
                                                        : -1;
            if (target < 0) continue;
            const T* hp = hidden.data() + static_cast<std::size_t>(p) * H;
            int best = 0;
            T best_v = -std::numeric_limits<T>::infinity();
            for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
                const T* wr = params.mlm_w.row(vtok);
                T acc = params.mlm_b.v[static_cast<std::size_t>(vtok)];
                for (int i = 0; i < H; ++i) acc += wr[i] * hp[i];
                if (acc > best_v) {
                    best_v = acc;
                    best = vtok;
                }
            }
            ++total;
            if (best == target) ++correct;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

template <class T>
T cls_loss(const ModelParams<T>& params, const ModelConfig& cfg, const BatchTrace<T>& traces,
           std::span<const int> labels) {
    const int H = cfg.hidden_dim;
    T loss = T(0);
    for (std::size_t s = 0; s < traces.size(); ++s)
        loss += cross_entropy<T>(classify<T>(params, traces[s].pooled(H)), labels[s]);
    return loss / static_cast<T>(traces.size());
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double head_lr_scale = 1.0;  // extra factor on cls.* tensors (fresh-head fine-tuning)
};

template <class T>
struct AdamState {
    ModelParams<T> m;
    ModelParams<T> v;
    long step = 0;
};

template <class T>
AdamState<T> make_adam_state(const ModelConfig& cfg) {
    AdamState<T> st;
    st.m = make_param_shapes<T>(cfg);
    st.v = make_param_shapes<T>(cfg);
    st.step = 0;
    return st;
}

template <class T>
void adam_step(ModelParams<T>& params, ModelParams<T>& grads, AdamState<T>& state,
               const AdamHyper& hyper) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));

    auto prefs = param_manifest(params);
    auto grefs = param_manifest(grads);
    auto mrefs = param_manifest(state.m);
    auto vrefs = param_manifest(state.v);
    for (std::size_t t = 0; t < prefs.size(); ++t) {
        auto& pv = prefs[t].tensor->v;
        auto& gv = grefs[t].tensor->v;
        auto& mv = mrefs[t].tensor->v;
        auto& vv = vrefs[t].tensor->v;
        const double lr = prefs[t].name.rfind("cls.", 0) == 0
                              ? hyper.lr * hyper.head_lr_scale
                              : hyper.lr;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double g = static_cast<double>(gv[i]);
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in " + prefs[t].name);
            const double m = hyper.beta1 * static_cast<double>(mv[i]) + (1.0 - hyper.beta1) * g;
            const double v = hyper.beta2 * static_cast<double>(vv[i]) + (1.0 - hyper.beta2) * g * g;
            mv[i] = static_cast<T>(m);
            vv[i] = static_cast<T>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + hyper.eps);
            pv[i] = static_cast<T>(static_cast<double>(pv[i]) - lr * update);
        }
    }
}

}  // namespace edscore
