#include "pembed/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pembed/rng.hpp"

namespace pembed {

void DataGenConfig::validate() const {
    if (tasks < 1 || tasks > 4) throw config_error("gen-data: tasks must lie in 1..4");
    if (per_task < 1) throw config_error("gen-data: per_task must be >= 1");
    if (tokens_per_class < 1) throw config_error("gen-data: tokens_per_class must be >= 1");
    if (junk_tokens < 0) throw config_error("gen-data: junk_tokens must be >= 0");
    TaskAlphabet::layout(vocab, tasks);  // throws if the vocabulary cannot host the layout
}

TaskAlphabet TaskAlphabet::layout(int vocab, int tasks) {
    TaskAlphabet a;
    a.vocab = vocab;
    a.tasks = tasks;
    a.instr_lo = vocab - 2 * tasks;
    const int content = a.instr_lo - 1;  // ids 1..instr_lo-1
    if (content < 6) {
        throw config_error("vocabulary of " + std::to_string(vocab) +
                           " cannot host EOS + 3 content classes + " + std::to_string(tasks) +
                           " task instructions");
    }
    const int third = content / 3;
    a.a_lo = 1;
    a.a_hi = third;
    a.b_lo = a.a_hi + 1;
    a.b_hi = 2 * third;
    a.j_lo = a.b_hi + 1;
    a.j_hi = a.instr_lo - 1;
    if (a.a_hi < a.a_lo + 1 || a.b_hi < a.b_lo + 1 || a.j_hi < a.j_lo) {
        throw config_error("content classes need at least two tokens each (vocab too small)");
    }
    return a;
}

TokenSeq TaskAlphabet::instruction(int task) const {
    if (task < 0 || task >= tasks) {
        throw data_error("task id " + std::to_string(task) + " out of range [0, " +
                         std::to_string(tasks) + ")");
    }
    return {instr_lo + 2 * task, instr_lo + 2 * task + 1};
}

TokenSeq relation_expected(const TaskAlphabet& alpha, int task, const TokenSeq& query,
                           int doc_junk) {
    const bool pick_a = task % 2 == 0;
    const bool reversed = (task / 2) % 2 == 1;
    TokenSeq out;
    for (int tok : query) {
        if ((pick_a && alpha.is_class_a(tok)) || (!pick_a && alpha.is_class_b(tok))) {
            out.push_back(tok);
        }
    }
    if (reversed) std::reverse(out.begin(), out.end());
    const int junk_size = alpha.j_hi - alpha.j_lo + 1;
    std::uint64_t h = mix_seed(0x6a756e6b, static_cast<std::uint64_t>(task));
    for (int tok : query) h = mix_seed(h, static_cast<std::uint64_t>(tok) + 1);
    for (int i = 0; i < doc_junk; ++i) {
        h = mix_seed(h, static_cast<std::uint64_t>(i) + 17);
        out.push_back(alpha.j_lo + static_cast<int>(h % static_cast<std::uint64_t>(junk_size)));
    }
    return out;
}

bool relation_holds(const TaskAlphabet& alpha, int task, const TokenSeq& query,
                    const TokenSeq& doc, int doc_junk) {
    return relation_expected(alpha, task, query, doc_junk) == doc;
}

std::vector<Triplet> gen_dataset(const DataGenConfig& cfg) {
    cfg.validate();
    const TaskAlphabet alpha = TaskAlphabet::layout(cfg.vocab, cfg.tasks);
    Rng rng(cfg.seed);
    std::vector<Triplet> records;
    records.reserve(static_cast<std::size_t>(cfg.tasks) * cfg.per_task);

    for (int task = 0; task < cfg.tasks; ++task) {
        for (int i = 0; i < cfg.per_task; ++i) {
            Triplet t;
            t.task = task;
            t.instruction = alpha.instruction(task);

            // class labels for query slots, shuffled
            std::vector<int> labels;
            for (int j = 0; j < cfg.tokens_per_class; ++j) labels.push_back(0);
            for (int j = 0; j < cfg.tokens_per_class; ++j) labels.push_back(1);
            for (int j = 0; j < cfg.junk_tokens; ++j) labels.push_back(2);
            rng.shuffle(labels);
            for (int lab : labels) {
                if (lab == 0) t.query.push_back(rng.uniform_int(alpha.a_lo, alpha.a_hi));
                else if (lab == 1) t.query.push_back(rng.uniform_int(alpha.b_lo, alpha.b_hi));
                else t.query.push_back(rng.uniform_int(alpha.j_lo, alpha.j_hi));
            }

            t.positive = relation_expected(alpha, task, t.query, cfg.doc_junk);

            // hard negative: swap 1-2 content positions to different same-class
            // tokens; the junk suffix is left alone so the pair stays a
            // near-duplicate
            t.negative = t.positive;
            const int content_len = static_cast<int>(t.positive.size()) - cfg.doc_junk;
            const int swaps = rng.uniform_int(1, std::min(2, content_len));
            std::vector<int> positions(static_cast<std::size_t>(content_len));
            for (std::size_t p = 0; p < positions.size(); ++p) positions[p] = static_cast<int>(p);
            rng.shuffle(positions);
            for (int s = 0; s < swaps; ++s) {
                const int p = positions[static_cast<std::size_t>(s)];
                const int old = t.negative[static_cast<std::size_t>(p)];
                const bool in_a = alpha.is_class_a(old);
                int repl = old;
                while (repl == old) {
                    repl = in_a ? rng.uniform_int(alpha.a_lo, alpha.a_hi)
                                : rng.uniform_int(alpha.b_lo, alpha.b_hi);
                }
                t.negative[static_cast<std::size_t>(p)] = repl;
            }
            records.push_back(std::move(t));
        }
    }
    rng.shuffle(records);
    return records;
}

namespace {

std::string join_tokens(const TokenSeq& seq) {
    std::ostringstream os;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) os << ' ';
        os << seq[i];
    }
    return os.str();
}

TokenSeq parse_tokens(const std::string& field, const std::string& path, int lineno) {
    TokenSeq out;
    std::istringstream is(field);
    std::string tok;
    while (is >> tok) {
        try {
            std::size_t pos = 0;
            int v = std::stoi(tok, &pos);
            if (pos != tok.size() || v < 0) throw std::invalid_argument("");
            out.push_back(v);
        } catch (const std::exception&) {
            throw data_error(path + ":" + std::to_string(lineno) + ": bad token '" + tok + "'");
        }
    }
    return out;
}

}  // namespace

void save_triplets(const std::string& path, const std::vector<Triplet>& records) {
    std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
    if (!out) throw data_error("cannot write triplet file '" + path + "'");
    for (const auto& t : records) {
        out << t.task << '\t' << join_tokens(t.instruction) << '\t' << join_tokens(t.query) << '\t'
            << join_tokens(t.positive) << '\t' << join_tokens(t.negative) << '\n';
    }
    if (!out) throw data_error("short write to triplet file '" + path + "'");
}

std::vector<Triplet> load_triplets(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open triplet file '" + path + "'");
    std::vector<Triplet> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 5) {
            throw data_error(path + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
        }
        Triplet t;
        try {
            std::size_t pos = 0;
            t.task = std::stoi(fields[0], &pos);
            if (pos != fields[0].size() || t.task < 0) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw data_error(path + ":" + std::to_string(lineno) + ": bad task id '" + fields[0] + "'");
        }
        t.instruction = parse_tokens(fields[1], path, lineno);
        t.query = parse_tokens(fields[2], path, lineno);
        t.positive = parse_tokens(fields[3], path, lineno);
        t.negative = parse_tokens(fields[4], path, lineno);
        if (t.instruction.empty() || t.query.empty() || t.positive.empty() || t.negative.empty()) {
            throw data_error(path + ":" + std::to_string(lineno) + ": empty field");
        }
        if (t.query == t.negative) {
            throw data_error(path + ":" + std::to_string(lineno) +
                             ": degenerate record, query equals hard negative");
        }
        records.push_back(std::move(t));
    }
    if (records.empty()) throw data_error("triplet file '" + path + "' holds no records");
    return records;
}

}  // namespace pembed
