#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pembed/checkpoint.hpp"
#include "pembed/config.hpp"
#include "pembed/dataset.hpp"
#include "pembed/evalrank.hpp"
#include "pembed/trainer.hpp"

using namespace pembed;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string tmp_path(const char* name) {
    return std::string("./") + name;
}

// embeds a token sequence as a pseudo-random unit-ish vector keyed by content
std::vector<float> hash_embed(const TokenSeq& seq, std::uint64_t salt) {
    std::uint64_t h = salt;
    for (int t : seq) h = mix_seed(h, static_cast<std::uint64_t>(t) + 1);
    Rng rng(h);
    std::vector<float> v(16);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

}  // namespace

TEST_CASE("gen_dataset is deterministic and byte-identical per seed") {
    DataGenConfig dg;
    dg.seed = 42;
    dg.tasks = 4;
    dg.per_task = 25;
    auto a = gen_dataset(dg);
    auto b = gen_dataset(dg);
    const std::string pa = tmp_path("wb_data_a.tsv"), pb = tmp_path("wb_data_b.tsv");
    save_triplets(pa, a);
    save_triplets(pb, b);
    CHECK(slurp(pa) == slurp(pb));

    dg.seed = 43;
    auto c = gen_dataset(dg);
    save_triplets(pb, c);
    CHECK(slurp(pa) != slurp(pb));
    std::remove(pa.c_str());
    std::remove(pb.c_str());
}

TEST_CASE("every positive passes the latent-relation checker; every negative fails") {
    DataGenConfig dg;
    dg.seed = 7;
    dg.tasks = 4;
    dg.per_task = 50;
    const TaskAlphabet alpha = TaskAlphabet::layout(dg.vocab, dg.tasks);
    for (const auto& t : gen_dataset(dg)) {
        CHECK(relation_holds(alpha, t.task, t.query, t.positive, dg.doc_junk));
        CHECK_FALSE(relation_holds(alpha, t.task, t.query, t.negative, dg.doc_junk));
        CHECK(t.positive != t.negative);
        CHECK(t.query != t.negative);
        // near-duplicate hard negatives: same length, differs in >= 1 position
        CHECK(t.positive.size() == t.negative.size());
    }
}

TEST_CASE("triplet file round-trip and ingestion validation") {
    DataGenConfig dg;
    dg.seed = 9;
    dg.tasks = 2;
    dg.per_task = 10;
    auto records = gen_dataset(dg);
    const std::string path = tmp_path("wb_roundtrip.tsv");
    save_triplets(path, records);
    auto loaded = load_triplets(path);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].task == records[i].task);
        CHECK(loaded[i].instruction == records[i].instruction);
        CHECK(loaded[i].query == records[i].query);
        CHECK(loaded[i].positive == records[i].positive);
        CHECK(loaded[i].negative == records[i].negative);
    }
    std::remove(path.c_str());

    const std::string bad = tmp_path("wb_bad.tsv");
    {
        std::ofstream out(bad, std::ios::binary);
        out << "0\t1 2\t3 4\n";  // wrong field count
    }
    CHECK_THROWS_AS(load_triplets(bad), data_error);
    {
        std::ofstream out(bad, std::ios::binary);
        out << "0\t1 2\t3 4\t5 6\t3 4\n";  // query == negative
    }
    CHECK_THROWS_AS(load_triplets(bad), data_error);
    std::remove(bad.c_str());
    CHECK_THROWS_AS(load_triplets("./does_not_exist.tsv"), data_error);
}

TEST_CASE("oracle embedder scores perfect retrieval; random embedder sits at chance") {
    DataGenConfig dg;
    dg.seed = 21;
    dg.tasks = 4;
    dg.per_task = 160;  // 640 queries
    auto records = gen_dataset(dg);
    const TaskAlphabet alpha = TaskAlphabet::layout(dg.vocab, dg.tasks);

    // oracle: query maps to the hash of its relation image, docs to their own hash
    QueryEmbedFn oracle_q = [&](const Triplet& t) {
        return hash_embed(relation_expected(alpha, t.task, t.query, dg.doc_junk), 99);
    };
    DocEmbedFn oracle_d = [&](const Triplet&, const TokenSeq& doc) { return hash_embed(doc, 99); };
    EvalResult oracle = eval_retrieval(records, 16, 5, oracle_q, oracle_d);
    CHECK(oracle.accuracy_at_1 == doctest::Approx(1.0));
    CHECK(oracle.mrr == doctest::Approx(1.0));

    // independent random query embeddings carry no signal: expect chance 1/16
    QueryEmbedFn rand_q = [&](const Triplet& t) { return hash_embed(t.query, 1234); };
    EvalResult chance = eval_retrieval(records, 16, 5, rand_q, oracle_d);
    const double p = 1.0 / 16.0;
    const double sigma = std::sqrt(p * (1 - p) / records.size());
    CHECK(std::abs(chance.accuracy_at_1 - p) <= 3 * sigma);
    CHECK(chance.mrr >= chance.accuracy_at_1);
    CHECK(oracle.mrr >= oracle.accuracy_at_1);
}

TEST_CASE("eval argument validation") {
    DataGenConfig dg;
    dg.seed = 3;
    dg.tasks = 1;
    dg.per_task = 8;
    auto records = gen_dataset(dg);
    QueryEmbedFn q = [&](const Triplet& t) { return hash_embed(t.query, 1); };
    DocEmbedFn d = [&](const Triplet&, const TokenSeq& doc) { return hash_embed(doc, 1); };
    CHECK_THROWS_AS(eval_retrieval(records, 1, 5, q, d), config_error);
    CHECK_THROWS_AS(eval_retrieval({}, 4, 5, q, d), data_error);
    CHECK_THROWS_AS(eval_retrieval(records, 9, 5, q, d), config_error);  // 8 records < C
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
    RunConfig cfg;
    cfg.vocab = 16;
    cfg.d_p = 8;
    cfg.d_e = 10;
    cfg.d_e_prime = 6;
    cfg.ffn = 12;
    cfg.k = 2;
    cfg.lora_r = 2;
    SystemT<float> sys = init_system<float>(cfg);
    Checkpoint ckpt = snapshot_system(sys);

    const std::string p1 = tmp_path("wb_ckpt1.pemb"), p2 = tmp_path("wb_ckpt2.pemb");
    save_checkpoint(p1, ckpt);
    Checkpoint loaded = load_checkpoint(p1, config_hash(cfg));
    save_checkpoint(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p2.c_str());

    // distinct failure kinds
    {
        std::ofstream out(tmp_path("wb_ckpt_bad.pemb"), std::ios::binary);
        out << "NOPE";
    }
    try {
        load_checkpoint(tmp_path("wb_ckpt_bad.pemb"), 0);
        FAIL("expected bad magic");
    } catch (const checkpoint_error& e) {
        CHECK(e.kind == checkpoint_error::code::bad_magic);
    }
    std::remove(tmp_path("wb_ckpt_bad.pemb").c_str());

    const std::string full = slurp(p1);
    {
        std::ofstream out(tmp_path("wb_ckpt_trunc.pemb"), std::ios::binary);
        out.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    try {
        load_checkpoint(tmp_path("wb_ckpt_trunc.pemb"), 0);
        FAIL("expected truncation");
    } catch (const checkpoint_error& e) {
        CHECK(e.kind == checkpoint_error::code::truncated);
    }
    std::remove(tmp_path("wb_ckpt_trunc.pemb").c_str());

    try {
        load_checkpoint(p1, 0xdeadbeefull);
        FAIL("expected hash mismatch");
    } catch (const checkpoint_error& e) {
        CHECK(e.kind == checkpoint_error::code::hash_mismatch);
    }
    std::remove(p1.c_str());
}

TEST_CASE("config file parsing, overrides, and validation") {
    const std::string path = tmp_path("wb_cfg.txt");
    {
        std::ofstream out(path);
        out << "# comment\n";
        out << "mode = transfer\n";
        out << "k = 3\n";
        out << "tau = 0.1\n";
        out << "pos_on_soft_tokens = false\n";
    }
    RunConfig cfg = load_config_file(path);
    CHECK(cfg.mode == RunMode::transfer);
    CHECK(cfg.k == 3);
    CHECK(cfg.tau == doctest::Approx(0.1));
    CHECK(cfg.pos_on_soft_tokens == false);
    apply_config_line(cfg, "k", "7");
    CHECK(cfg.k == 7);
    CHECK_THROWS_AS(apply_config_line(cfg, "nope", "1"), config_error);
    CHECK_THROWS_AS(apply_config_line(cfg, "k", "x"), config_error);
    std::remove(path.c_str());

    RunConfig bad;
    bad.tau = -1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    RunConfig bad2;
    bad2.warmup_ratio = 1.0;
    CHECK_THROWS_AS(bad2.validate(), config_error);
    CHECK_THROWS_AS(load_config_file("./missing.cfg"), config_error);
}

TEST_CASE("structural hash is stable and shape-sensitive") {
    RunConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.d_e = 47;
    CHECK(config_hash(a) != config_hash(b));
    RunConfig c = a;
    c.seed = 999;  // seeds do not change the structure
    CHECK(config_hash(a) == config_hash(c));
    CHECK(hash_hex(config_hash(a)).size() == 16);
}

TEST_CASE("metrics lines are stable, parseable key-value JSON") {
    MetricsRecord rec;
    rec.step = 120;
    rec.loss = 1.25;
    rec.accuracy_at_1 = 0.5;
    rec.mrr = 0.75;
    rec.mode = "scratch";
    rec.config_hash = 0xabcull;
    const std::string line = metrics_json_line(rec);
    CHECK(line ==
          "{\"step\":120,\"loss\":1.250000,\"accuracy_at_1\":0.500000,\"mrr\":0.750000,"
          "\"mode\":\"scratch\",\"config_hash\":\"0000000000000abc\"}");
    MetricsRecord wall = rec;
    wall.has_wall_time = true;
    wall.wall_time_ms = 12.5;
    CHECK(metrics_json_line(wall).find("\"wall_time_ms\":12.500") != std::string::npos);
}
