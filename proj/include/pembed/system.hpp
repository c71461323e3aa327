#pragma once

// The full trainable system for one run: prompting model + LoRA, frozen
// embedding backbone(s), alignment matrices, and the static virtual tokens of
// the prompt-tuning baseline. Owns tensor naming and the per-mode freeze mask.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pembed/align.hpp"
#include "pembed/config.hpp"
#include "pembed/lm.hpp"
#include "pembed/rng.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

template <typename S>
struct SystemT {
    RunConfig cfg;
    LmParamsT<S> psi_p;
    LoraSetT<S> lora;
    LmParamsT<S> psi_e;
    std::optional<LmParamsT<S>> psi_e_prime;
    TensorT<S> w_proj;                       // [d_e x d_p]
    std::optional<TensorT<S>> w_adp;         // [d_e' x d_e]
    std::optional<TensorT<S>> virtual_toks;  // [V_t x target dim]

    template <typename Fn>
    void for_each_tensor(Fn fn) {
        psi_p.for_each_tensor("psi_p", fn);
        lora.for_each_tensor("lora", fn);
        psi_e.for_each_tensor("psi_e", fn);
        fn(std::string("align.W_proj"), w_proj);
        if (psi_e_prime) psi_e_prime->for_each_tensor("psi_e_prime", fn);
        if (w_adp) fn(std::string("align.W_adp"), *w_adp);
        if (virtual_toks) fn(std::string("baseline.virtual_tokens"), *virtual_toks);
    }

    TensorT<S>* find_tensor(const std::string& name) {
        TensorT<S>* hit = nullptr;
        for_each_tensor([&](const std::string& n, TensorT<S>& t) {
            if (n == name) hit = &t;
        });
        return hit;
    }
};

// Seed streams per component, derived from the master seed.
namespace seed_stream {
inline constexpr std::uint64_t psi_p = 1;
inline constexpr std::uint64_t psi_e = 2;
inline constexpr std::uint64_t psi_e_prime = 3;
inline constexpr std::uint64_t w_proj = 4;
inline constexpr std::uint64_t lora = 5;
inline constexpr std::uint64_t virtual_toks = 6;
inline constexpr std::uint64_t eval = 7;
}  // namespace seed_stream

template <typename S>
SystemT<S> init_system(const RunConfig& cfg) {
    cfg.validate();
    SystemT<S> sys;
    sys.cfg = cfg;
    sys.psi_p = init_lm<S>(cfg.prompting_lm(), mix_seed(cfg.seed, seed_stream::psi_p));
    sys.lora = init_lora<S>(cfg.prompting_lm(), cfg.lora_r, cfg.lora_alpha,
                            mix_seed(cfg.seed, seed_stream::lora));
    sys.psi_e = init_lm<S>(cfg.embedding_lm(), mix_seed(cfg.seed, seed_stream::psi_e));
    // In transfer mode W_proj keeps the source-backbone shape [d_e x d_p] and the
    // adapter maps onward; in every other mode it projects straight into the
    // target backbone's dimension.
    const int proj_rows = cfg.mode == RunMode::transfer ? cfg.d_e : cfg.target_dim();
    sys.w_proj = init_w_proj<S>(proj_rows, cfg.d_p, mix_seed(cfg.seed, seed_stream::w_proj));
    if (cfg.targets_prime()) {
        sys.psi_e_prime = init_lm<S>(cfg.embedding_lm_prime(),
                                     mix_seed(cfg.seed, seed_stream::psi_e_prime));
    }
    if (cfg.mode == RunMode::transfer) {
        sys.w_adp = init_w_adp<S>(cfg.d_e_prime, cfg.d_e);
    }
    if (cfg.mode == RunMode::baseline) {
        TensorT<S> vt(cfg.virtual_tokens, cfg.target_dim());
        Rng rng(mix_seed(cfg.seed, seed_stream::virtual_toks));
        for (auto& v : *vt.data) v = static_cast<S>(rng.normal() * 0.02);
        sys.virtual_toks = std::move(vt);
    }
    return sys;
}

// Exact per-mode trainable tensor names.
template <typename S>
std::vector<std::string> freeze_mask_names(const SystemT<S>& sys) {
    std::vector<std::string> names;
    switch (sys.cfg.mode) {
        case RunMode::scratch:
            for (std::size_t i = 0; i < sys.lora.blocks.size(); ++i) {
                const std::string b = "lora.blk" + std::to_string(i);
                names.push_back(b + ".q.A");
                names.push_back(b + ".q.B");
                names.push_back(b + ".v.A");
                names.push_back(b + ".v.B");
            }
            names.push_back("align.W_proj");
            break;
        case RunMode::transfer:
            names.push_back("align.W_adp");
            break;
        case RunMode::baseline:
            names.push_back("baseline.virtual_tokens");
            break;
        case RunMode::vanilla_eval:
            break;
    }
    return names;
}

template <typename S>
void apply_freeze_mask(SystemT<S>& sys) {
    const auto names = freeze_mask_names(sys);
    const std::set<std::string> mask(names.begin(), names.end());
    sys.for_each_tensor([&](const std::string& n, TensorT<S>& t) {
        if (mask.count(n)) {
            if ((n.rfind("psi_p.", 0) == 0 && sys.psi_p.frozen) ||
                (n.rfind("psi_e", 0) == 0)) {
                throw contract_error("freeze mask: refusing to train frozen-model tensor " + n);
            }
            t.mark_trainable(n);
        }
    });
}

// Trainable scalar count per mode: scratch = |LoRA| + d_e*d_p, transfer = d_e'*d_e,
// baseline = V_t * target dim.
inline long trainable_param_count(const RunConfig& cfg) {
    switch (cfg.mode) {
        case RunMode::scratch:
            return static_cast<long>(cfg.layers) * 2 * (2L * cfg.lora_r * cfg.d_p) +
                   static_cast<long>(cfg.target_dim()) * cfg.d_p;
        case RunMode::transfer:
            return static_cast<long>(cfg.d_e_prime) * cfg.d_e;
        case RunMode::baseline:
            return static_cast<long>(cfg.virtual_tokens) * cfg.target_dim();
        case RunMode::vanilla_eval:
            return 0;
    }
    return 0;
}

// Gradient-buffer audit. Never allows a gradient outside the mask; when
// `strict`, additionally requires every masked tensor to have received one
// (k = 0 and similar degenerate paths legitimately leave the mask untouched).
template <typename S>
void audit_gradient_buffers(SystemT<S>& sys, bool strict) {
    const auto names = freeze_mask_names(sys);
    const std::set<std::string> mask(names.begin(), names.end());
    sys.for_each_tensor([&](const std::string& n, TensorT<S>& t) {
        const bool has = t.slot && t.slot->allocated;
        if (has && !mask.count(n)) {
            throw contract_error("gradient audit: tensor " + n + " received a gradient buffer "
                                 "outside the freeze mask");
        }
        if (strict && mask.count(n) && !has) {
            throw contract_error("gradient audit: masked tensor " + n + " received no gradient");
        }
    });
}

template <typename S>
void zero_gradients(SystemT<S>& sys) {
    sys.for_each_tensor([](const std::string&, TensorT<S>& t) {
        if (t.slot) {
            t.slot->grad.clear();
            t.slot->allocated = false;
        }
    });
}

}  // namespace pembed
