#pragma once

// Synthetic multi-task triplet generation over an integer alphabet. Each task
// is a token-selection relation: the positive document is the subsequence of
// the query's tokens from one value class, optionally reversed. Distinct tasks
// select different (class, order) pairs, so the instruction carries real
// information. Hard negatives corrupt the positive by swapping 1-2 tokens
// within the class, which keeps them near-duplicates that fail the relation.
// Queries are padded with junk-class tokens that never appear in documents;
// an untrained random-feature embedder then scores near chance while the
// class-selection channel stays learnable.

#include <cstdint>
#include <string>
#include <vector>

#include "pembed/contrastive.hpp"
#include "pembed/errors.hpp"

namespace pembed {

struct DataGenConfig {
    std::uint64_t seed = 1;
    int tasks = 4;          // 1..4
    int per_task = 500;
    int vocab = 64;
    int tokens_per_class = 3;  // query holds this many tokens from each of A and B
    int junk_tokens = 4;       // query padding from the junk class
    int doc_junk = 2;          // hash-derived junk tokens appended to every document

    void validate() const;
};

// Token-range layout derived from the vocabulary:
//   0                 EOS
//   [1, ...]          class A, class B, junk class (three near-equal ranges)
//   [instr_lo, vocab) instruction ids, two per task
struct TaskAlphabet {
    int vocab = 0;
    int tasks = 0;
    int a_lo = 0, a_hi = 0;  // inclusive
    int b_lo = 0, b_hi = 0;
    int j_lo = 0, j_hi = 0;
    int instr_lo = 0;

    static TaskAlphabet layout(int vocab, int tasks);
    TokenSeq instruction(int task) const;
    bool is_class_a(int tok) const { return tok >= a_lo && tok <= a_hi; }
    bool is_class_b(int tok) const { return tok >= b_lo && tok <= b_hi; }
    bool is_junk(int tok) const { return tok >= j_lo && tok <= j_hi; }
};

// The latent relation: expected positive for a query under a task — the
// selected class subsequence followed by doc_junk hash-derived junk tokens.
// The junk suffix is a deterministic function of (task, query), so positives
// stay machine-checkable; its token values are content-independent noise.
TokenSeq relation_expected(const TaskAlphabet& alpha, int task, const TokenSeq& query,
                           int doc_junk);

// True iff doc is exactly the relation image of query.
bool relation_holds(const TaskAlphabet& alpha, int task, const TokenSeq& query,
                    const TokenSeq& doc, int doc_junk);

// Deterministic generation; records are shuffled across tasks by the same seed.
std::vector<Triplet> gen_dataset(const DataGenConfig& cfg);

// Tab-separated text file, one record per line: task, instruction, query,
// positive, negative (token ids space-separated inside each field).
void save_triplets(const std::string& path, const std::vector<Triplet>& records);
std::vector<Triplet> load_triplets(const std::string& path);

}  // namespace pembed
