#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <map>

#include "pembed/trainer.hpp"

using namespace pembed;

namespace {

RunConfig micro_cfg(RunMode mode) {
    RunConfig cfg;
    cfg.mode = mode;
    cfg.seed = 5;
    cfg.vocab = 16;
    cfg.d_p = 8;
    cfg.d_e = 10;
    cfg.d_e_prime = 6;
    cfg.layers = 2;
    cfg.ffn = 12;
    cfg.max_len = 32;
    cfg.k = 2;
    cfg.lora_r = 2;
    cfg.batch_size = 2;
    cfg.accum_steps = 1;
    cfg.total_steps = 4;
    cfg.eval_every = 2;
    cfg.eval_c = 4;
    cfg.virtual_tokens = 3;
    cfg.lr = 1e-2;
    cfg.warmup_ratio = 0.0;
    return cfg;
}

std::vector<Triplet> micro_data(std::uint64_t seed, int per_task = 8) {
    DataGenConfig dg;
    dg.seed = seed;
    dg.tasks = 2;
    dg.per_task = per_task;
    dg.vocab = 16;
    dg.tokens_per_class = 2;
    return gen_dataset(dg);
}

std::map<std::string, std::vector<float>> snapshot_named(SystemT<float>& sys,
                                                         const std::string& prefix) {
    std::map<std::string, std::vector<float>> out;
    sys.for_each_tensor([&](const std::string& n, Tensor& t) {
        if (n.rfind(prefix, 0) == 0) out[n] = *t.data;
    });
    return out;
}

long allocated_grad_scalars(SystemT<float>& sys) {
    long n = 0;
    sys.for_each_tensor([&](const std::string&, Tensor& t) {
        if (t.slot && t.slot->allocated) n += static_cast<long>(t.slot->grad.size());
    });
    return n;
}

}  // namespace

TEST_CASE("lr_at: ramp shape and the reference configuration") {
    RunConfig cfg;
    cfg.lr = 1e-4;
    cfg.warmup_ratio = 0.03;
    cfg.total_steps = 1000;
    const long warm = 30;  // ceil(0.03 * 1000)
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(warm, cfg) == doctest::Approx(1e-4));
    CHECK(lr_at(warm / 2, cfg) == doctest::Approx(5e-5));
    CHECK(lr_at(500, cfg) == doctest::Approx(1e-4));
    CHECK(lr_at(1000, cfg) == doctest::Approx(1e-4));
    CHECK_THROWS_AS(lr_at(1001, cfg), contract_error);

    cfg.lr_schedule = "cosine";
    CHECK(lr_at(warm, cfg) == doctest::Approx(1e-4));
    CHECK(lr_at(1000, cfg) == doctest::Approx(0.0));
    CHECK(lr_at((warm + 1000) / 2, cfg) == doctest::Approx(5e-5).epsilon(1e-2));
}

TEST_CASE("frozen tensors stay bit-identical through scratch training") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    auto data = micro_data(3);
    SystemT<float> sys = init_system<float>(cfg);
    auto before_p = snapshot_named(sys, "psi_p.");
    auto before_e = snapshot_named(sys, "psi_e.");
    run_scratch(sys, data, data, nullptr);
    auto after_p = snapshot_named(sys, "psi_p.");
    auto after_e = snapshot_named(sys, "psi_e.");
    CHECK(before_p == after_p);
    CHECK(before_e == after_e);

    // but the masked tensors moved
    auto proj_before = snapshot_named(sys, "align.W_proj");
    SystemT<float> fresh = init_system<float>(cfg);
    auto proj_init = snapshot_named(fresh, "align.W_proj");
    CHECK(proj_before != proj_init);
}

TEST_CASE("two runs with the same seed produce identical loss trajectories") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    auto data = micro_data(3);
    auto run_once = [&]() {
        SystemT<float> sys = init_system<float>(cfg);
        std::vector<MetricsRecord> recs;
        run_scratch(sys, data, data, [&](const MetricsRecord& r) { recs.push_back(r); });
        return recs;
    };
    auto a = run_once();
    auto b = run_once();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].loss == b[i].loss);
        CHECK(a[i].accuracy_at_1 == b[i].accuracy_at_1);
        CHECK(a[i].mrr == b[i].mrr);
        CHECK(metrics_json_line(a[i]) == metrics_json_line(b[i]));
    }
}

TEST_CASE("descent oracle: one step on a fixed toy batch decreases its loss") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    cfg.lr = 2e-3;
    auto data = micro_data(9);
    std::vector<Triplet> batch(data.begin(), data.begin() + 2);
    SystemT<float> sys = init_system<float>(cfg);
    apply_freeze_mask(sys);

    EmbedderT<float> emb(sys, false);
    auto eval_loss = [&]() {
        EmbedderT<float> e2(sys, false);
        return static_cast<double>(batch_loss(e2, batch, cfg.tau).loss.value());
    };
    const double before = eval_loss();
    zero_gradients(sys);
    {
        Tape tape;
        TapeScope<float> scope(tape);
        auto out = batch_loss(emb, batch, cfg.tau);
        tape.backward(out.loss);
    }
    AdamW<float> opt;
    opt.step(sys, cfg.lr, 1);
    const double after = eval_loss();
    CHECK(after < before);
}

TEST_CASE("gradient accumulation equals the mean of micro-batch gradients") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    auto data = micro_data(11);
    std::vector<Triplet> b0(data.begin(), data.begin() + 2);
    std::vector<Triplet> b1(data.begin() + 2, data.begin() + 4);

    auto grads_for = [&](const std::vector<std::vector<Triplet>>& batches) {
        SystemT<float> sys = init_system<float>(cfg);
        apply_freeze_mask(sys);
        zero_gradients(sys);
        for (const auto& b : batches) {
            EmbedderT<float> emb(sys, false);
            Tape tape;
            TapeScope<float> scope(tape);
            auto out = batch_loss(emb, b, cfg.tau);
            tape.backward(out.loss);
        }
        std::map<std::string, std::vector<float>> out;
        sys.for_each_tensor([&](const std::string& n, Tensor& t) {
            if (t.slot && t.slot->allocated) out[n] = t.slot->grad;
        });
        return out;
    };

    auto accumulated = grads_for({b0, b1});
    auto g0 = grads_for({b0});
    auto g1 = grads_for({b1});
    REQUIRE(!accumulated.empty());
    for (const auto& [name, acc] : accumulated) {
        REQUIRE(g0.count(name));
        REQUIRE(g1.count(name));
        for (std::size_t i = 0; i < acc.size(); ++i) {
            const double mean_sep = (static_cast<double>(g0[name][i]) + g1[name][i]) / 2.0;
            const double mean_acc = static_cast<double>(acc[i]) / 2.0;
            CHECK(std::abs(mean_sep - mean_acc) < 1e-5);
        }
    }
}

TEST_CASE("runtime gradient-buffer audit equals trainable_param_count per mode") {
    auto data = micro_data(13);
    for (RunMode mode : {RunMode::scratch, RunMode::transfer, RunMode::baseline}) {
        RunConfig cfg = micro_cfg(mode);
        SystemT<float> sys = init_system<float>(cfg);
        if (mode == RunMode::transfer) {
            // transfer restores from a source checkpoint in production; here the
            // randomly initialized tensors stand in for it
        }
        apply_freeze_mask(sys);
        zero_gradients(sys);
        EmbedderT<float> emb(sys, false);
        std::vector<Triplet> batch(data.begin(), data.begin() + 2);
        Tape tape;
        TapeScope<float> scope(tape);
        auto out = batch_loss(emb, batch, cfg.tau);
        tape.backward(out.loss);
        CHECK(allocated_grad_scalars(sys) == trainable_param_count(cfg));
        audit_gradient_buffers(sys, /*strict=*/true);
    }
}

TEST_CASE("transfer trains only W_adp and leaves everything else bit-identical") {
    RunConfig scratch_cfg = micro_cfg(RunMode::scratch);
    auto data = micro_data(17);
    SystemT<float> source = init_system<float>(scratch_cfg);
    run_scratch(source, data, data, nullptr);
    Checkpoint ckpt = snapshot_system(source);

    RunConfig cfg = micro_cfg(RunMode::transfer);
    SystemT<float> sys = init_system<float>(cfg);
    run_transfer(sys, ckpt, data, data, nullptr);

    // psi_p, lora, W_proj, psi_e' all bit-unchanged relative to the restored state
    SystemT<float> reference = init_system<float>(cfg);
    restore_system(reference, ckpt, {"psi_p.", "lora.", "align.W_proj"});
    for (const char* prefix : {"psi_p.", "lora.", "align.W_proj", "psi_e_prime."}) {
        auto got = snapshot_named(sys, prefix);
        auto want = snapshot_named(reference, prefix);
        CHECK(got == want);
    }
    auto adp_now = snapshot_named(sys, "align.W_adp");
    auto adp_init = snapshot_named(reference, "align.W_adp");
    CHECK(adp_now != adp_init);
}

TEST_CASE("a gradient-free configuration leaves parameters untouched (k = 0)") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    cfg.k = 0;
    cfg.total_steps = 2;
    auto data = micro_data(19);
    SystemT<float> sys = init_system<float>(cfg);
    auto before = snapshot_named(sys, "");
    run_scratch(sys, data, data, nullptr);
    auto after = snapshot_named(sys, "");
    CHECK(before == after);
}

TEST_CASE("checkpoint restore rejects missing and mis-shaped tensors") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    SystemT<float> sys = init_system<float>(cfg);
    Checkpoint ckpt = snapshot_system(sys);

    Checkpoint missing = ckpt;
    missing.tensors.erase(missing.tensors.begin());  // drops a psi_p tensor
    SystemT<float> fresh = init_system<float>(cfg);
    CHECK_THROWS_AS(restore_system(fresh, missing, {"psi_p."}), checkpoint_error);

    Checkpoint bad = ckpt;
    for (auto& [name, t] : bad.tensors) {
        if (name == "align.W_proj") t = Tensor(1, 1);
    }
    try {
        restore_system(fresh, bad, {});
        FAIL("expected dim mismatch");
    } catch (const checkpoint_error& e) {
        CHECK(e.kind == checkpoint_error::code::dim_mismatch);
        CHECK(std::string(e.what()).find("align.W_proj") != std::string::npos);
    }
}

TEST_CASE("gradcheck harness passes on micro dims") {
    RunConfig cfg = micro_cfg(RunMode::scratch);
    cfg.k = 2;
    GradCheckReport rep = gradcheck_pipeline(cfg, 2, 7);
    CHECK(rep.scalars == trainable_param_count(cfg));
    CHECK(rep.max_rel < 1e-4);
}
