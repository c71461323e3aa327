#pragma once

// Embedding extraction through the frozen backbone: build the combined input
// (instruction tokens, aligned prompt vectors, text tokens, EOS), decode, pool
// the last token, and score pairs by cosine similarity.

#include <cmath>
#include <string>
#include <vector>

#include "pembed/errors.hpp"
#include "pembed/lm.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

// Layout: E(t) || P~ || E(X) || E(EOS). An empty prompt matrix (0 rows) yields
// the vanilla instruction-embedding input.
template <typename S>
InputSeqT<S> build_combined(const LmConfig& cfg, const std::vector<int>& instruction,
                            const TensorT<S>& prompts, const std::vector<int>& text, int eos_id) {
    const int m = static_cast<int>(instruction.size());
    const int k = prompts.rows;
    const int n = static_cast<int>(text.size());
    const int total = m + k + n + 1;
    if (total > cfg.max_len) {
        throw length_error("build_combined: length " + std::to_string(total) + " exceeds budget " +
                           std::to_string(cfg.max_len) + " (m=" + std::to_string(m) + ", k=" +
                           std::to_string(k) + ", n=" + std::to_string(n) + ", +1 EOS)");
    }
    if (k > 0 && prompts.cols != cfg.dim) {
        throw dim_error("build_combined: prompts " + prompts.shape_str() + " vs backbone dim " +
                        std::to_string(cfg.dim));
    }
    if (eos_id < 0 || eos_id >= cfg.vocab) {
        throw lookup_error("build_combined: EOS id " + std::to_string(eos_id) + " out of vocabulary");
    }
    InputSeqT<S> seq;
    for (int t : instruction) seq.push_token(t);
    for (int i = 0; i < k; ++i) seq.push_vector(row(prompts, i));
    for (int t : text) seq.push_token(t);
    seq.push_token(eos_id);
    return seq;
}

// v = last-token hidden state of the frozen decode. Gradient flows through the
// frozen weights into any vector positions of the input; the weights themselves
// receive none.
template <typename S>
TensorT<S> embed_text(const LmParamsT<S>& lm, const InputSeqT<S>& combined) {
    if (!lm.frozen) throw contract_error("embed_text: embedding backbone must be frozen");
    return last_token_pool(decode(lm, combined));
}

// a^T b / (|a| |b|); degenerate norms are an error, not a clamp.
template <typename S>
TensorT<S> cosine_sim(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rows != 1 || b.rows != 1 || a.cols != b.cols) {
        throw dim_error("cosine_sim: " + a.shape_str() + " vs " + b.shape_str());
    }
    const double eps = 1e-12;
    double na = 0, nb = 0;
    for (S v : *a.data) na += static_cast<double>(v) * v;
    for (S v : *b.data) nb += static_cast<double>(v) * v;
    if (std::sqrt(na) < eps || std::sqrt(nb) < eps) {
        throw numeric_error("cosine_sim: degenerate embedding (near-zero norm)");
    }
    TensorT<S> dot = matmul(a, transpose(b));
    TensorT<S> inv_na = rsqrt(sum_all(mul(a, a)));
    TensorT<S> inv_nb = rsqrt(sum_all(mul(b, b)));
    return mul(mul(dot, inv_na), inv_nb);
}

}  // namespace pembed
