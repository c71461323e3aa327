#include "pembed/evalrank.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "pembed/config.hpp"
#include "pembed/errors.hpp"
#include "pembed/rng.hpp"

namespace pembed {

std::string metrics_json_line(const MetricsRecord& rec) {
    char buf[320];
    if (rec.has_wall_time) {
        std::snprintf(buf, sizeof(buf),
                      "{\"step\":%ld,\"loss\":%.6f,\"accuracy_at_1\":%.6f,\"mrr\":%.6f,"
                      "\"mode\":\"%s\",\"config_hash\":\"%s\",\"wall_time_ms\":%.3f}",
                      rec.step, rec.loss, rec.accuracy_at_1, rec.mrr, rec.mode.c_str(),
                      hash_hex(rec.config_hash).c_str(), rec.wall_time_ms);
    } else {
        std::snprintf(buf, sizeof(buf),
                      "{\"step\":%ld,\"loss\":%.6f,\"accuracy_at_1\":%.6f,\"mrr\":%.6f,"
                      "\"mode\":\"%s\",\"config_hash\":\"%s\"}",
                      rec.step, rec.loss, rec.accuracy_at_1, rec.mrr, rec.mode.c_str(),
                      hash_hex(rec.config_hash).c_str());
    }
    return buf;
}

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) {
        throw numeric_error("eval: degenerate embedding (near-zero norm)");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

EvalResult eval_retrieval(const std::vector<Triplet>& eval_set, int c, std::uint64_t seed,
                          const QueryEmbedFn& embed_query, const DocEmbedFn& embed_doc) {
    if (c < 2) throw config_error("eval: corpus size must be >= 2");
    if (eval_set.empty()) throw data_error("eval: empty evaluation set");
    const int n = static_cast<int>(eval_set.size());
    if (n < c) {
        throw config_error("eval: need at least " + std::to_string(c) + " records to draw " +
                           std::to_string(c - 1) + " distractors, got " + std::to_string(n));
    }

    // embed the corpus once; positives are keyed per record so symmetric modes
    // may condition on the owning task
    std::vector<std::vector<float>> doc_emb(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        doc_emb[static_cast<std::size_t>(i)] = embed_doc(eval_set[static_cast<std::size_t>(i)],
                                                         eval_set[static_cast<std::size_t>(i)].positive);
    }

    double hits = 0.0, rr_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& rec = eval_set[static_cast<std::size_t>(i)];
        const std::vector<float> vq = embed_query(rec);
        const double pos_sim = cosine(vq, doc_emb[static_cast<std::size_t>(i)]);

        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        std::vector<char> taken(static_cast<std::size_t>(n), 0);
        taken[static_cast<std::size_t>(i)] = 1;
        int picked = 0, better = 0, attempts = 0;
        while (picked < c - 1) {
            if (++attempts > 64 * c) {
                throw data_error("eval: corpus too duplicate-heavy to draw distinct distractors");
            }
            const int j = rng.uniform_int(0, n - 1);
            if (taken[static_cast<std::size_t>(j)]) continue;
            if (eval_set[static_cast<std::size_t>(j)].positive == rec.positive) continue;
            taken[static_cast<std::size_t>(j)] = 1;
            ++picked;
            if (cosine(vq, doc_emb[static_cast<std::size_t>(j)]) > pos_sim) ++better;
        }
        const int rank = 1 + better;
        if (rank == 1) hits += 1.0;
        rr_sum += 1.0 / rank;
    }

    EvalResult res;
    res.queries = n;
    res.accuracy_at_1 = hits / n;
    res.mrr = rr_sum / n;
    return res;
}

}  // namespace pembed
