#pragma once

// Instruction-conditioned, fully differentiable autoregressive soft-prompt
// generation. Each step relaxes the next-token choice into a softmax mixture
// over the vocabulary, embeds the mixture, appends it to the sequence, and
// re-runs the full forward pass; the last hidden state both becomes the
// retained prompt state and seeds the next step. No discrete sampling anywhere.

#include <utility>
#include <vector>

#include "pembed/errors.hpp"
#include "pembed/lm.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

template <typename S>
struct SoftPromptSeqT {
    int k = 0;
    TensorT<S> states;  // [k x d_p]; k == 0 leaves a [0 x d_p] tensor
};

// Per-step intermediates, for inspection and invariant checks.
template <typename S>
struct GenTraceT {
    std::vector<TensorT<S>> alphas;        // relaxation weights, each [1 x V]
    std::vector<TensorT<S>> soft_tokens;   // e_i, each [1 x d_p]
    std::vector<TensorT<S>> prompt_states; // p_i, each [1 x d_p]
};

// Hidden state of the last instruction token.
template <typename S>
TensorT<S> encode_instruction(const LmParamsT<S>& lm, const LoraSetT<S>* lora,
                              const std::vector<int>& instruction) {
    if (instruction.empty()) throw contract_error("encode_instruction: empty instruction");
    return last_token_pool(decode(lm, InputSeqT<S>::from_tokens(instruction), lora));
}

// One relaxation step: alpha = softmax(phi(g) / temperature), e = alpha * E.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> soft_token(const LmParamsT<S>& lm, const TensorT<S>& g,
                                             double temperature = 1.0) {
    if (temperature <= 0.0) throw config_error("soft_token: temperature must be positive");
    TensorT<S> logits = lm_head(lm, g);
    if (temperature != 1.0) logits = scale(logits, static_cast<S>(1.0 / temperature));
    TensorT<S> alpha = softmax_lastdim(logits);
    TensorT<S> e = matmul(alpha, lm.tok_emb);
    return {alpha, e};
}

// The full K-step generation loop. Each step re-runs the forward pass over the
// instruction plus all soft tokens generated so far, exactly as the recurrence
// is defined; prompt states keep gradient lineage back to the LoRA tensors.
template <typename S>
SoftPromptSeqT<S> generate_prompts(const LmParamsT<S>& lm, const LoraSetT<S>* lora,
                                   const std::vector<int>& instruction, int k,
                                   double temperature = 1.0, GenTraceT<S>* trace = nullptr) {
    if (k < 0) throw contract_error("generate_prompts: negative k");
    if (instruction.empty()) throw contract_error("generate_prompts: empty instruction");
    const int m = static_cast<int>(instruction.size());
    if (m + k > lm.cfg.max_len) {
        throw length_error("generate_prompts: instruction length " + std::to_string(m) + " + k " +
                           std::to_string(k) + " exceeds max_len " + std::to_string(lm.cfg.max_len));
    }

    SoftPromptSeqT<S> out;
    out.k = k;
    if (k == 0) {
        out.states = TensorT<S>(0, lm.cfg.dim);
        return out;
    }

    InputSeqT<S> seq = InputSeqT<S>::from_tokens(instruction);
    TensorT<S> g = encode_instruction(lm, lora, instruction);
    std::vector<TensorT<S>> states;
    states.reserve(static_cast<std::size_t>(k));
    for (int i = 1; i <= k; ++i) {
        auto [alpha, e] = soft_token(lm, g, temperature);
        seq.push_vector(e);
        TensorT<S> h = decode(lm, seq, lora);
        TensorT<S> p = row(h, m + i - 1);
        states.push_back(p);
        if (trace) {
            trace->alphas.push_back(alpha);
            trace->soft_tokens.push_back(e);
            trace->prompt_states.push_back(p);
        }
        g = p;
    }
    out.states = concat_rows(states);
    return out;
}

}  // namespace pembed
