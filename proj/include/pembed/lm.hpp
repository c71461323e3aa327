#pragma once

// Minimal decoder-only causal transformer with pre-norm blocks, single-head
// attention, a learned absolute positional table, and optional low-rank (LoRA)
// adapters on the attention Q/V projections. Inputs are mixed sequences of
// token ids and dense embedding-space vectors; vector positions bypass the
// embedding lookup.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pembed/errors.hpp"
#include "pembed/rng.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

struct LmConfig {
    int vocab = 64;
    int dim = 32;
    int layers = 2;
    int ffn = 64;
    int max_len = 64;
    bool pos_on_vectors = true;  // soft/vector positions receive positional encodings

    void validate() const {
        if (vocab < 1 || dim < 1 || layers < 1 || ffn < 1) {
            throw config_error("lm config: all dims must be >= 1");
        }
        if (max_len < 1) throw config_error("lm config: max_len must be >= 1");
    }
};

template <typename S>
struct LmBlockT {
    TensorT<S> attn_norm_g;  // [1 x d]
    TensorT<S> wq, wk, wv, wo;  // [d x d]
    TensorT<S> ffn_norm_g;   // [1 x d]
    TensorT<S> w1;           // [d x h]
    TensorT<S> w2;           // [h x d]
};

// One language model psi = {E, theta, phi}.
template <typename S>
struct LmParamsT {
    LmConfig cfg;
    TensorT<S> tok_emb;  // E, [V x d]
    TensorT<S> pos_emb;  // [max_len x d]
    std::vector<LmBlockT<S>> blocks;
    TensorT<S> head;     // phi, [d x V]
    bool frozen = true;

    template <typename Fn>
    void for_each_tensor(const std::string& prefix, Fn fn) {
        fn(prefix + ".tok_emb", tok_emb);
        fn(prefix + ".pos_emb", pos_emb);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string b = prefix + ".blk" + std::to_string(i);
            fn(b + ".attn_norm_g", blocks[i].attn_norm_g);
            fn(b + ".wq", blocks[i].wq);
            fn(b + ".wk", blocks[i].wk);
            fn(b + ".wv", blocks[i].wv);
            fn(b + ".wo", blocks[i].wo);
            fn(b + ".ffn_norm_g", blocks[i].ffn_norm_g);
            fn(b + ".w1", blocks[i].w1);
            fn(b + ".w2", blocks[i].w2);
        }
        fn(prefix + ".head", head);
    }
};

// LoRA pair for one target matrix W [d x d]: effective weight W + (alpha/r) * B * A,
// computed low-rank as (x*B)*A. B starts at zero, so the adapter is an exact no-op
// at initialization.
template <typename S>
struct LoraPairT {
    TensorT<S> a;  // [r x d]
    TensorT<S> b;  // [d x r], zero-initialized
};

template <typename S>
struct LoraBlockT {
    LoraPairT<S> q, v;
};

template <typename S>
struct LoraSetT {
    int rank = 0;
    double alpha = 0.0;
    std::vector<LoraBlockT<S>> blocks;

    S scaling() const { return static_cast<S>(alpha / rank); }

    template <typename Fn>
    void for_each_tensor(const std::string& prefix, Fn fn) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string b = prefix + ".blk" + std::to_string(i);
            fn(b + ".q.A", blocks[i].q.a);
            fn(b + ".q.B", blocks[i].q.b);
            fn(b + ".v.A", blocks[i].v.a);
            fn(b + ".v.B", blocks[i].v.b);
        }
    }
};

// Ordered positions, each either a token id or a [1 x d] embedding vector.
template <typename S>
struct InputSeqT {
    struct Item {
        int token = -1;
        TensorT<S> vec;
        bool is_token() const { return token >= 0; }
    };
    std::vector<Item> items;

    static InputSeqT from_tokens(const std::vector<int>& ids) {
        InputSeqT s;
        for (int t : ids) s.push_token(t);
        return s;
    }
    void push_token(int id) {
        if (id < 0) throw lookup_error("input sequence: negative token id");
        items.push_back(Item{id, {}});
    }
    void push_vector(TensorT<S> v) { items.push_back(Item{-1, std::move(v)}); }
    int size() const { return static_cast<int>(items.size()); }
};

template <typename S>
LmParamsT<S> init_lm(const LmConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    LmParamsT<S> lm;
    lm.cfg = cfg;
    Rng rng(seed);
    auto normal_mat = [&rng](int r, int c, double std) {
        TensorT<S> t(r, c);
        for (auto& v : *t.data) v = static_cast<S>(rng.normal() * std);
        return t;
    };
    auto ones_row = [](int c) {
        TensorT<S> t(1, c);
        for (auto& v : *t.data) v = S(1);
        return t;
    };
    const double std = 0.02;
    lm.tok_emb = normal_mat(cfg.vocab, cfg.dim, std);
    lm.pos_emb = normal_mat(cfg.max_len, cfg.dim, std);
    lm.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& blk : lm.blocks) {
        blk.attn_norm_g = ones_row(cfg.dim);
        blk.wq = normal_mat(cfg.dim, cfg.dim, std);
        blk.wk = normal_mat(cfg.dim, cfg.dim, std);
        blk.wv = normal_mat(cfg.dim, cfg.dim, std);
        blk.wo = normal_mat(cfg.dim, cfg.dim, std);
        blk.ffn_norm_g = ones_row(cfg.dim);
        blk.w1 = normal_mat(cfg.dim, cfg.ffn, std);
        blk.w2 = normal_mat(cfg.ffn, cfg.dim, std);
    }
    lm.head = normal_mat(cfg.dim, cfg.vocab, std);
    return lm;
}

template <typename S>
LoraSetT<S> init_lora(const LmConfig& cfg, int rank, double alpha, std::uint64_t seed) {
    if (rank < 1) throw config_error("lora: rank must be >= 1");
    LoraSetT<S> set;
    set.rank = rank;
    set.alpha = alpha;
    Rng rng(seed);
    auto normal_mat = [&rng](int r, int c) {
        TensorT<S> t(r, c);
        for (auto& v : *t.data) v = static_cast<S>(rng.normal() * 0.02);
        return t;
    };
    set.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& blk : set.blocks) {
        blk.q.a = normal_mat(rank, cfg.dim);
        blk.q.b = TensorT<S>(cfg.dim, rank);
        blk.v.a = normal_mat(rank, cfg.dim);
        blk.v.b = TensorT<S>(cfg.dim, rank);
    }
    return set;
}

namespace detail {

template <typename S>
TensorT<S> lora_linear(const TensorT<S>& x, const TensorT<S>& w, const LoraPairT<S>* lp, S scaling) {
    TensorT<S> y = matmul(x, w);
    if (lp) y = add(y, scale(matmul(matmul(x, lp->b), lp->a), scaling));
    return y;
}

}  // namespace detail

// Full causal forward pass; row i of the result is the final-layer hidden state
// of position i. Token positions go through the embedding lookup, vector
// positions enter the block stack directly after positional addition.
template <typename S>
TensorT<S> decode(const LmParamsT<S>& lm, const InputSeqT<S>& seq, const LoraSetT<S>* lora = nullptr) {
    const int len = seq.size();
    const int d = lm.cfg.dim;
    if (len < 1) throw contract_error("decode: empty input sequence");
    if (len > lm.cfg.max_len) {
        throw length_error("decode: sequence length " + std::to_string(len) + " exceeds max_len " +
                           std::to_string(lm.cfg.max_len));
    }
    if (lora && static_cast<int>(lora->blocks.size()) != lm.cfg.layers) {
        throw dim_error("decode: lora block count " + std::to_string(lora->blocks.size()) +
                        " does not match " + std::to_string(lm.cfg.layers) + " layers");
    }

    std::vector<TensorT<S>> rows_in;
    std::vector<TensorT<S>> pos_rows;
    rows_in.reserve(static_cast<std::size_t>(len));
    pos_rows.reserve(static_cast<std::size_t>(len));
    for (int p = 0; p < len; ++p) {
        const auto& item = seq.items[static_cast<std::size_t>(p)];
        if (item.is_token()) {
            if (item.token >= lm.cfg.vocab) {
                throw lookup_error("decode: token id " + std::to_string(item.token) +
                                   " out of vocabulary " + std::to_string(lm.cfg.vocab));
            }
            rows_in.push_back(gather_rows(lm.tok_emb, {item.token}));
            pos_rows.push_back(row(lm.pos_emb, p));
        } else {
            if (item.vec.rows != 1 || item.vec.cols != d) {
                throw dim_error("decode: vector position has shape " + item.vec.shape_str() +
                                ", expected [1 x " + std::to_string(d) + "]");
            }
            rows_in.push_back(item.vec);
            pos_rows.push_back(lm.cfg.pos_on_vectors ? row(lm.pos_emb, p) : TensorT<S>(1, d));
        }
    }
    TensorT<S> x = add(concat_rows(rows_in), concat_rows(pos_rows));

    const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));
    for (int li = 0; li < lm.cfg.layers; ++li) {
        const auto& blk = lm.blocks[static_cast<std::size_t>(li)];
        const LoraBlockT<S>* lb = lora ? &lora->blocks[static_cast<std::size_t>(li)] : nullptr;

        TensorT<S> a = rms_norm_rows(x, blk.attn_norm_g);
        TensorT<S> q = detail::lora_linear(a, blk.wq, lb ? &lb->q : nullptr, lora ? lora->scaling() : S(0));
        TensorT<S> kk = matmul(a, blk.wk);
        TensorT<S> v = detail::lora_linear(a, blk.wv, lb ? &lb->v : nullptr, lora ? lora->scaling() : S(0));
        TensorT<S> att = softmax_lastdim(causal_mask(scale(matmul(q, transpose(kk)), inv_sqrt_d)));
        x = add(x, matmul(matmul(att, v), blk.wo));

        TensorT<S> f = rms_norm_rows(x, blk.ffn_norm_g);
        x = add(x, matmul(silu(matmul(f, blk.w1)), blk.w2));
    }
    return x;
}

// logits = h * phi
template <typename S>
TensorT<S> lm_head(const LmParamsT<S>& lm, const TensorT<S>& h) {
    if (h.rows != 1 || h.cols != lm.cfg.dim) {
        throw dim_error("lm_head: hidden state " + h.shape_str() + ", expected [1 x " +
                        std::to_string(lm.cfg.dim) + "]");
    }
    return matmul(h, lm.head);
}

template <typename S>
TensorT<S> last_token_pool(const TensorT<S>& h) {
    if (h.rows < 1) throw contract_error("last_token_pool: empty hidden states");
    return row(h, h.rows - 1);
}

}  // namespace pembed
