#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "pembed/align.hpp"
#include "pembed/embed.hpp"
#include "pembed/system.hpp"
#include "testutil.hpp"

using namespace pembed;
using testutil::fd_check;
using testutil::random_tensor;

namespace {

LmConfig backbone_cfg() {
    LmConfig cfg;
    cfg.vocab = 12;
    cfg.dim = 10;
    cfg.layers = 2;
    cfg.ffn = 12;
    cfg.max_len = 24;
    return cfg;
}

template <typename S>
bool same_bits(const TensorT<S>& a, const TensorT<S>& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data->data(), b.data->data(), a.numel() * sizeof(S)) == 0;
}

}  // namespace

TEST_CASE("project: identity, zero, and matvec oracle") {
    Rng rng(1);
    TensorD eye(4, 4);
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    TensorD p = random_tensor<double>(rng, 3, 4);
    CHECK(same_bits(project(eye, p), p));

    TensorD zero(5, 4);
    TensorD pz = project(zero, p);
    for (double v : *pz.data) CHECK(v == 0.0);

    TensorD w = random_tensor<double>(rng, 6, 4);
    TensorD got = project(w, p);
    for (int i = 0; i < 3; ++i)
        for (int r = 0; r < 6; ++r) {
            double acc = 0;
            for (int c = 0; c < 4; ++c) acc += w.at(r, c) * p.at(i, c);
            CHECK(got.at(i, r) == doctest::Approx(acc).epsilon(1e-12));
        }

    CHECK_THROWS_AS(project(w, random_tensor<double>(rng, 2, 5)), dim_error);
}

TEST_CASE("adapt: identity adapter, zero factors, precomposition associativity") {
    Rng rng(2);
    TensorD w_proj = random_tensor<double>(rng, 6, 4);
    TensorD p = random_tensor<double>(rng, 3, 4);

    TensorD eye(6, 6);
    for (int i = 0; i < 6; ++i) eye.at(i, i) = 1.0;
    CHECK(same_bits(adapt(eye, w_proj, p), project(w_proj, p)));

    TensorD zero_adp(5, 6);
    TensorD adp_zero = adapt(zero_adp, w_proj, p);
    for (double v : *adp_zero.data) CHECK(v == 0.0);
    TensorD zero_proj(6, 4);
    TensorD wa = random_tensor<double>(rng, 5, 6);
    TensorD proj_zero = adapt(wa, zero_proj, p);
    for (double v : *proj_zero.data) CHECK(v == 0.0);

    // single precision associativity against the precomposed matrix
    Tensor wa_f = random_tensor<float>(rng, 5, 6, 0.3);
    Tensor wp_f = random_tensor<float>(rng, 6, 4, 0.3);
    Tensor p_f = random_tensor<float>(rng, 3, 4, 0.3);
    Tensor two_step = adapt(wa_f, wp_f, p_f);
    Tensor pre = matmul(wa_f, wp_f);
    Tensor one_step = matmul(p_f, transpose(pre));
    for (std::size_t i = 0; i < two_step.numel(); ++i) {
        CHECK(std::abs((*two_step.data)[i] - (*one_step.data)[i]) < 1e-6);
    }

    CHECK_THROWS_AS(adapt(random_tensor<double>(rng, 5, 7), w_proj, p), dim_error);
}

TEST_CASE("adapt is linear in the prompt states") {
    Rng rng(3);
    Tensor wa = random_tensor<float>(rng, 5, 6, 0.3);
    Tensor wp = random_tensor<float>(rng, 6, 4, 0.3);
    Tensor p = random_tensor<float>(rng, 3, 4, 0.3);
    const float c = 2.5f;
    Tensor lhs = adapt(wa, wp, scale(p, c));
    Tensor rhs = scale(adapt(wa, wp, p), c);
    for (std::size_t i = 0; i < lhs.numel(); ++i) {
        CHECK(std::abs((*lhs.data)[i] - (*rhs.data)[i]) < 1e-6);
    }
}

TEST_CASE("w_adp initialization is an identity-like map with orthonormal rows") {
    TensorD w = init_w_adp<double>(4, 6);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double dot = 0;
            for (int c = 0; c < 6; ++c) dot += w.at(i, c) * w.at(j, c);
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0));
        }
}

TEST_CASE("trainable_param_count matches the spec arithmetic") {
    RunConfig cfg;
    cfg.mode = RunMode::transfer;
    cfg.d_e_prime = 40;
    cfg.d_e = 48;
    CHECK(trainable_param_count(cfg) == 1920);

    RunConfig s;
    s.mode = RunMode::scratch;
    s.lora_r = 4;
    s.layers = 2;
    s.d_p = 32;
    s.d_e = 48;
    CHECK(trainable_param_count(s) == 2560);

    RunConfig b;
    b.mode = RunMode::baseline;
    b.virtual_tokens = 20;
    b.d_e = 48;
    CHECK(trainable_param_count(b) == 960);
}

TEST_CASE("build_combined layout and budget") {
    LmConfig cfg = backbone_cfg();
    const int eos = 0;

    auto degenerate = build_combined<float>(cfg, {}, Tensor(0, cfg.dim), {5}, eos);
    CHECK(degenerate.size() == 2);
    CHECK(degenerate.items[0].token == 5);
    CHECK(degenerate.items[1].token == eos);

    Rng rng(4);
    Tensor prompts = random_tensor<float>(rng, 5, cfg.dim);
    auto seq = build_combined<float>(cfg, {1, 2}, prompts, {3, 4, 5}, eos);
    CHECK(seq.size() == 11);
    CHECK(seq.items[10].token == eos);
    CHECK(seq.items[2].is_token() == false);  // first prompt row sits at position m
    CHECK(same_bits(seq.items[2].vec, Tensor(row(prompts, 0))));

    Tensor too_many = random_tensor<float>(rng, cfg.max_len, cfg.dim);
    try {
        build_combined<float>(cfg, {1}, too_many, {2}, eos);
        FAIL("expected length_error");
    } catch (const length_error& e) {
        CHECK(std::string(e.what()).find(std::to_string(cfg.max_len)) != std::string::npos);
    }
}

TEST_CASE("embed_text equals the pooled decode and reacts to text changes") {
    auto lm = init_lm<float>(backbone_cfg(), 66);
    Rng rng(5);
    Tensor prompts = random_tensor<float>(rng, 2, backbone_cfg().dim, 0.1);
    auto seq = build_combined<float>(backbone_cfg(), {1, 2}, prompts, {3, 4}, 0);
    Tensor v = embed_text(lm, seq);
    CHECK(same_bits(v, Tensor(last_token_pool(decode(lm, seq)))));

    auto seq2 = build_combined<float>(backbone_cfg(), {1, 2}, prompts, {3, 7}, 0);
    Tensor v2 = embed_text(lm, seq2);
    CHECK_FALSE(same_bits(v, v2));

    auto thawed = lm;
    thawed.frozen = false;
    CHECK_THROWS_AS(embed_text(thawed, seq), contract_error);
}

TEST_CASE("gradient flows through the frozen backbone into prompts and W_proj") {
    auto lm = init_lm<double>(backbone_cfg(), 71);
    Rng rng(6);
    TensorD prompts = random_tensor<double>(rng, 3, backbone_cfg().dim, 0.3);
    auto rep = fd_check({&prompts}, [&]() {
        auto seq = build_combined<double>(backbone_cfg(), {1, 2}, prompts, {3, 4}, 0);
        TensorD v = embed_text(lm, seq);
        return sum_all(mul(v, v));
    });
    CHECK(rep.max_rel < 1e-4);
    CHECK(rep.max_abs > 0.0);

    // through Eq. 4 as well: d loss / d W_proj is nonzero and FD-consistent
    TensorD w_proj = init_w_proj<double>(backbone_cfg().dim, 5, 72);
    TensorD raw = random_tensor<double>(rng, 3, 5);
    auto rep2 = fd_check({&w_proj}, [&]() {
        auto seq = build_combined<double>(backbone_cfg(), {1, 2}, project(w_proj, raw), {3, 4}, 0);
        TensorD v = embed_text(lm, seq);
        return sum_all(mul(v, v));
    });
    CHECK(rep2.max_rel < 1e-4);
    CHECK(rep2.max_abs > 0.0);

    // the frozen weights stay structurally gradient-free
    lm.for_each_tensor("psi_e", [](const std::string&, TensorT<double>& t) {
        CHECK(t.slot == nullptr);
    });
}

TEST_CASE("cosine similarity: self, orthogonal, scale invariance, degeneracy") {
    TensorD v = TensorD::from_data(1, 3, {1, 2, 2});
    CHECK(cosine_sim(v, v).value() == doctest::Approx(1.0).epsilon(1e-12));

    TensorD a = TensorD::from_data(1, 2, {1, 0});
    TensorD b = TensorD::from_data(1, 2, {0, 1});
    CHECK(cosine_sim(a, b).value() == doctest::Approx(0.0));

    CHECK(cosine_sim(v, scale(v, 2.0)).value() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_sim(scale(v, 3.0), v).value() ==
          doctest::Approx(cosine_sim(v, scale(v, 3.0)).value()).epsilon(1e-12));

    TensorD tiny = TensorD::from_data(1, 3, {0, 0, 0});
    CHECK_THROWS_AS(cosine_sim(v, tiny), numeric_error);
}
