#pragma once

// Retrieval evaluation: rank each query's true positive among seeded random
// distractors by cosine similarity, report accuracy@1 and MRR. Also the
// line-delimited metrics record format.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pembed/contrastive.hpp"

namespace pembed {

struct MetricsRecord {
    long step = 0;
    double loss = 0.0;
    double accuracy_at_1 = 0.0;
    double mrr = 0.0;
    std::string mode;
    std::uint64_t config_hash = 0;
    double wall_time_ms = 0.0;
    bool has_wall_time = false;  // off by default so logs stay byte-reproducible
};

// One JSON object per line, fixed key order and formatting.
std::string metrics_json_line(const MetricsRecord& rec);

struct EvalResult {
    double accuracy_at_1 = 0.0;
    double mrr = 0.0;
    int queries = 0;
};

using QueryEmbedFn = std::function<std::vector<float>(const Triplet&)>;
using DocEmbedFn = std::function<std::vector<float>(const Triplet&, const TokenSeq&)>;

// corpus = the records' positives; each query ranks its own positive against
// (c - 1) distinct distractors drawn deterministically from the corpus.
EvalResult eval_retrieval(const std::vector<Triplet>& eval_set, int c, std::uint64_t seed,
                          const QueryEmbedFn& embed_query, const DocEmbedFn& embed_doc);

}  // namespace pembed
