#pragma once

// InfoNCE with the paired-hard-negative + in-batch-positives candidate set.
// Candidate ordering is deterministic: positive first, hard negative second,
// then the other queries' positives in batch order.

#include <string>
#include <vector>

#include "pembed/errors.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

using TokenSeq = std::vector<int>;

// One contrastive example: (instruction, query, positive, hard negative).
struct Triplet {
    int task = 0;
    TokenSeq instruction;
    TokenSeq query;
    TokenSeq positive;
    TokenSeq negative;
};

struct CandidateSet {
    std::vector<TokenSeq> docs;  // docs[0] is the positive
};

inline std::vector<CandidateSet> build_candidates(const std::vector<Triplet>& batch) {
    if (batch.empty()) throw contract_error("build_candidates: empty batch");
    std::vector<CandidateSet> sets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto& docs = sets[i].docs;
        docs.reserve(batch.size() + 1);
        docs.push_back(batch[i].positive);
        docs.push_back(batch[i].negative);
        for (std::size_t j = 0; j < batch.size(); ++j) {
            if (j != i) docs.push_back(batch[j].positive);
        }
    }
    return sets;
}

// L = -(1/N_b) sum_i log( exp(s_{i,0}/tau) / sum_c exp(s_{i,c}/tau) ), with the
// positive at candidate index 0 and log-sum-exp stabilization.
template <typename S>
TensorT<S> info_nce(const TensorT<S>& sims, double tau) {
    if (tau <= 0.0) throw config_error("info_nce: tau must be positive");
    if (sims.rows < 1 || sims.cols < 2) {
        throw contract_error("info_nce: need at least one query and two candidates, got " +
                             sims.shape_str());
    }
    TensorT<S> scaled = scale(sims, static_cast<S>(1.0 / tau));
    TensorT<S> lse = logsumexp_lastdim(scaled);       // [N_b x 1]
    TensorT<S> pos = slice_cols(scaled, 0, 1);        // [N_b x 1]
    return mean_all(sub(lse, pos));
}

}  // namespace pembed
