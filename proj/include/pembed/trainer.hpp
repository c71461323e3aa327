#pragma once

// The training forward path shared by every mode: instruction -> soft prompts
// -> alignment -> combined input -> frozen decode -> cosine similarities ->
// InfoNCE. Templated on the scalar so the same code runs in single precision
// for training and double precision for gradient checking.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pembed/checkpoint.hpp"
#include "pembed/contrastive.hpp"
#include "pembed/dataset.hpp"
#include "pembed/embed.hpp"
#include "pembed/evalrank.hpp"
#include "pembed/optim.hpp"
#include "pembed/softprompt.hpp"
#include "pembed/system.hpp"

namespace pembed {

// Prompt + embedding paths for one system. When the prompt inputs are frozen
// for the whole run (transfer mode, or any evaluation pass) the pre-alignment
// prompt states may be cached per instruction; alignment is always re-applied
// so trainable matrices stay on the tape.
template <typename S>
class EmbedderT {
public:
    EmbedderT(SystemT<S>& sys, bool cache_prompts)
        : sys_(sys), cache_(cache_prompts) {}

    const LmParamsT<S>& backbone() const {
        return sys_.cfg.targets_prime() ? *sys_.psi_e_prime : sys_.psi_e;
    }

    // aligned prompt rows inserted at the Eq-5 prompt slot
    TensorT<S> aligned_prompts(const TokenSeq& instruction) {
        const RunConfig& cfg = sys_.cfg;
        if (cfg.mode == RunMode::baseline) return *sys_.virtual_toks;
        TensorT<S> p = prompt_states(instruction);
        if (cfg.mode == RunMode::transfer) return adapt(*sys_.w_adp, sys_.w_proj, p);
        return project(sys_.w_proj, p);
    }

    TensorT<S> embed_query(const Triplet& t) {
        const RunConfig& cfg = sys_.cfg;
        InputSeqT<S> seq = build_combined(backbone().cfg, t.instruction, aligned_prompts(t.instruction),
                                          t.query, cfg.eos_id());
        return embed_text(backbone(), seq);
    }

    // documents embed with empty instruction and no prompts unless the
    // symmetric mode is configured
    TensorT<S> embed_doc(const Triplet& owner, const TokenSeq& doc) {
        const RunConfig& cfg = sys_.cfg;
        if (cfg.symmetric_docs) {
            InputSeqT<S> seq = build_combined(backbone().cfg, owner.instruction,
                                              aligned_prompts(owner.instruction), doc, cfg.eos_id());
            return embed_text(backbone(), seq);
        }
        InputSeqT<S> seq = build_combined(backbone().cfg, {}, TensorT<S>(0, backbone().cfg.dim), doc,
                                          cfg.eos_id());
        return embed_text(backbone(), seq);
    }

    // raw (pre-alignment) prompt states P [k x d_p]
    TensorT<S> prompt_states(const TokenSeq& instruction) {
        if (cache_) {
            auto it = cache_map_.find(instruction);
            if (it != cache_map_.end()) return it->second;
        }
        SoftPromptSeqT<S> gen = generate_prompts(sys_.psi_p, &sys_.lora, instruction, sys_.cfg.k,
                                                 sys_.cfg.gen_temperature);
        if (cache_) cache_map_.emplace(instruction, gen.states);
        return gen.states;
    }

    void clear_cache() { cache_map_.clear(); }

private:
    SystemT<S>& sys_;
    bool cache_;
    std::map<TokenSeq, TensorT<S>> cache_map_;
};

template <typename S>
struct BatchLossResult {
    TensorT<S> loss;  // [1 x 1]
    TensorT<S> sims;  // [N_b x (N_b + 1)], positive at column 0
};

template <typename S>
BatchLossResult<S> batch_loss(EmbedderT<S>& emb, const std::vector<Triplet>& batch, double tau) {
    const auto candidates = build_candidates(batch);

    // one embedding per distinct document in the batch
    std::map<std::pair<int, TokenSeq>, TensorT<S>> doc_cache;
    auto doc_embedding = [&](const Triplet& owner, const TokenSeq& doc) -> const TensorT<S>& {
        auto key = std::make_pair(owner.task, doc);
        auto it = doc_cache.find(key);
        if (it == doc_cache.end()) it = doc_cache.emplace(key, emb.embed_doc(owner, doc)).first;
        return it->second;
    };

    std::vector<TensorT<S>> sim_rows;
    sim_rows.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        TensorT<S> vq = emb.embed_query(batch[i]);
        std::vector<TensorT<S>> cells;
        cells.reserve(candidates[i].docs.size());
        for (std::size_t c = 0; c < candidates[i].docs.size(); ++c) {
            // candidate c's owner: 0 -> own positive, 1 -> own hard negative,
            // 2+ -> other queries' positives in batch order
            std::size_t owner = i;
            if (c >= 2) {
                std::size_t j = c - 2;
                owner = j < i ? j : j + 1;
            }
            cells.push_back(cosine_sim(vq, doc_embedding(batch[owner], candidates[i].docs[c])));
        }
        sim_rows.push_back(concat_cols(cells));
    }
    BatchLossResult<S> out;
    out.sims = concat_rows(sim_rows);
    out.loss = info_nce(out.sims, tau);
    return out;
}

// ---------------------------------------------------------------------------
// run loops (single precision)
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<MetricsRecord> metrics;
    long steps_run = 0;
    double final_accuracy = 0.0;
    double final_mrr = 0.0;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Shared optimization loop; trains whatever the system's freeze mask exposes.
TrainResult train_loop(SystemT<float>& sys, const std::vector<Triplet>& train_set,
                       const std::vector<Triplet>& eval_set, const MetricsSink& sink);

// Full system evaluation with per-instruction prompt caching.
EvalResult evaluate_system(SystemT<float>& sys, const std::vector<Triplet>& eval_set);

// Mode wrappers: initialize, apply the mask, run, and leave the trained system
// in place for checkpointing.
TrainResult run_scratch(SystemT<float>& sys, const std::vector<Triplet>& train_set,
                        const std::vector<Triplet>& eval_set, const MetricsSink& sink);
TrainResult run_transfer(SystemT<float>& sys, const Checkpoint& source,
                         const std::vector<Triplet>& train_set,
                         const std::vector<Triplet>& eval_set, const MetricsSink& sink);
TrainResult run_prompt_tuning_baseline(SystemT<float>& sys, const std::vector<Triplet>& train_set,
                                       const std::vector<Triplet>& eval_set, const MetricsSink& sink);

// checkpoint glue
Checkpoint snapshot_system(SystemT<float>& sys);
void restore_system(SystemT<float>& sys, const Checkpoint& ckpt,
                    const std::vector<std::string>& required_prefixes);

// k-ablation: one scratch run per k under a shared seed and dataset; rows come
// back sorted by k.
struct AblationRow {
    int k = 0;
    double accuracy_at_1 = 0.0;
    double mrr = 0.0;
    long steps = 0;
};
std::vector<AblationRow> ablate_k(const RunConfig& base_cfg, const std::vector<int>& ks,
                                  const std::vector<Triplet>& train_set,
                                  const std::vector<Triplet>& eval_set);

// ---------------------------------------------------------------------------
// gradient checking (double precision)
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel = 0.0;
    double max_abs_diff = 0.0;
    long scalars = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_tensor;
    double max_rel = 0.0;
    long scalars = 0;
    double seconds = 0.0;
    bool passed(double tol) const { return max_rel < tol; }
};

// Central finite differences (h = 1e-4) of the full pipeline loss against the
// analytic gradients, over every trainable scalar of the configured mode.
GradCheckReport gradcheck_pipeline(const RunConfig& cfg, int batch_size, std::uint64_t data_seed);

}  // namespace pembed
