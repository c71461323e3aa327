#include "pembed/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>

namespace pembed {

namespace {

std::vector<Triplet> take_batch(const std::vector<Triplet>& data, long cursor, int n) {
    std::vector<Triplet> batch;
    batch.reserve(static_cast<std::size_t>(n));
    const long size = static_cast<long>(data.size());
    for (int i = 0; i < n; ++i) {
        batch.push_back(data[static_cast<std::size_t>((cursor + i) % size)]);
    }
    return batch;
}

void dump_sims(const Tensor& sims) {
    std::fprintf(stderr, "similarity matrix at failure (%d x %d):\n", sims.rows, sims.cols);
    for (int i = 0; i < sims.rows; ++i) {
        for (int j = 0; j < sims.cols; ++j) std::fprintf(stderr, " % .6f", sims.at(i, j));
        std::fprintf(stderr, "\n");
    }
}

}  // namespace

EvalResult evaluate_system(SystemT<float>& sys, const std::vector<Triplet>& eval_set) {
    EmbedderT<float> emb(sys, /*cache_prompts=*/true);
    QueryEmbedFn qf = [&](const Triplet& t) {
        Tensor v = emb.embed_query(t);
        return *v.data;
    };
    DocEmbedFn df = [&](const Triplet& owner, const TokenSeq& doc) {
        Tensor v = emb.embed_doc(owner, doc);
        return *v.data;
    };
    return eval_retrieval(eval_set, sys.cfg.eval_c, mix_seed(sys.cfg.seed, seed_stream::eval), qf, df);
}

TrainResult train_loop(SystemT<float>& sys, const std::vector<Triplet>& train_set,
                       const std::vector<Triplet>& eval_set, const MetricsSink& sink) {
    const RunConfig& cfg = sys.cfg;
    if (train_set.empty()) throw data_error("train: empty dataset");
    // per-forward prompt recomputation is only skippable when the prompt inputs
    // cannot change during the run
    const bool prompts_static = cfg.mode == RunMode::transfer || cfg.mode == RunMode::baseline ||
                                cfg.mode == RunMode::vanilla_eval;

    AdamW<float> opt;
    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    long cursor = 0;

    auto emit = [&](long step, double loss_value) {
        EvalResult ev = evaluate_system(sys, eval_set);
        MetricsRecord rec;
        rec.step = step;
        rec.loss = loss_value;
        rec.accuracy_at_1 = ev.accuracy_at_1;
        rec.mrr = ev.mrr;
        rec.mode = mode_name(cfg.mode);
        rec.config_hash = config_hash(cfg);
        if (cfg.log_wall_time) {
            rec.has_wall_time = true;
            rec.wall_time_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        result.metrics.push_back(rec);
        if (sink) sink(rec);
        result.final_accuracy = ev.accuracy_at_1;
        result.final_mrr = ev.mrr;
        return ev.accuracy_at_1;
    };

    double last_loss = 0.0;
    for (long step = 0; step < cfg.total_steps; ++step) {
        zero_gradients(sys);
        EmbedderT<float> emb(sys, prompts_static);
        double step_loss = 0.0;
        bool any_grad = false;
        for (int a = 0; a < cfg.accum_steps; ++a) {
            std::vector<Triplet> batch = take_batch(train_set, cursor, cfg.batch_size);
            cursor += cfg.batch_size;
            Tape tape;
            TapeScope<float> scope(tape);
            BatchLossResult<float> out = batch_loss(emb, batch, cfg.tau);
            const double lv = static_cast<double>(out.loss.value());
            if (!std::isfinite(lv)) {
                dump_sims(out.sims);
                throw numeric_error("train: non-finite loss at step " + std::to_string(step));
            }
            step_loss += lv;
            if (out.loss.has_node()) {
                tape.backward(out.loss);
                any_grad = true;
            }
        }
        last_loss = step_loss / cfg.accum_steps;
        // a k=0 (or otherwise gradient-free) configuration leaves the mask untouched
        audit_gradient_buffers(sys, /*strict=*/any_grad);
        opt.step(sys, lr_at(std::min(step + 1, static_cast<long>(cfg.total_steps)), cfg),
                 cfg.accum_steps);
        result.steps_run = step + 1;

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps) {
            const double acc = emit(step + 1, last_loss);
            if (cfg.target_accuracy > 0.0 && acc >= cfg.target_accuracy) break;
        }
    }
    if (cfg.total_steps == 0) emit(0, 0.0);
    return result;
}

TrainResult run_scratch(SystemT<float>& sys, const std::vector<Triplet>& train_set,
                        const std::vector<Triplet>& eval_set, const MetricsSink& sink) {
    if (sys.cfg.mode != RunMode::scratch) throw config_error("run_scratch: config mode is not scratch");
    apply_freeze_mask(sys);
    return train_loop(sys, train_set, eval_set, sink);
}

TrainResult run_transfer(SystemT<float>& sys, const Checkpoint& source,
                         const std::vector<Triplet>& train_set,
                         const std::vector<Triplet>& eval_set, const MetricsSink& sink) {
    if (sys.cfg.mode != RunMode::transfer) throw config_error("run_transfer: config mode is not transfer");
    restore_system(sys, source, {"psi_p.", "lora.", "align.W_proj"});
    apply_freeze_mask(sys);
    return train_loop(sys, train_set, eval_set, sink);
}

TrainResult run_prompt_tuning_baseline(SystemT<float>& sys, const std::vector<Triplet>& train_set,
                                       const std::vector<Triplet>& eval_set, const MetricsSink& sink) {
    if (sys.cfg.mode != RunMode::baseline) {
        throw config_error("run_prompt_tuning_baseline: config mode is not prompt-tuning-baseline");
    }
    apply_freeze_mask(sys);
    return train_loop(sys, train_set, eval_set, sink);
}

Checkpoint snapshot_system(SystemT<float>& sys) {
    Checkpoint ckpt;
    ckpt.config_hash = config_hash(sys.cfg);
    sys.for_each_tensor([&](const std::string& name, Tensor& t) {
        Tensor copy(t.rows, t.cols);
        *copy.data = *t.data;
        ckpt.tensors.emplace_back(name, std::move(copy));
    });
    return ckpt;
}

void restore_system(SystemT<float>& sys, const Checkpoint& ckpt,
                    const std::vector<std::string>& required_prefixes) {
    sys.for_each_tensor([&](const std::string& name, Tensor& t) {
        const Tensor* src = ckpt.find(name);
        if (!src) {
            for (const auto& p : required_prefixes) {
                if (name.rfind(p, 0) == 0) {
                    throw checkpoint_error(checkpoint_error::code::missing_tensor,
                                           "checkpoint: required tensor '" + name + "' is missing");
                }
            }
            return;
        }
        if (src->rows != t.rows || src->cols != t.cols) {
            throw checkpoint_error(checkpoint_error::code::dim_mismatch,
                                   "checkpoint: tensor '" + name + "' has shape " + src->shape_str() +
                                       ", expected " + t.shape_str());
        }
        *t.data = *src->data;
    });
}

std::vector<AblationRow> ablate_k(const RunConfig& base_cfg, const std::vector<int>& ks,
                                  const std::vector<Triplet>& train_set,
                                  const std::vector<Triplet>& eval_set) {
    if (ks.empty()) throw config_error("ablate-k: empty k list");
    std::vector<int> sorted = ks;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<AblationRow> rows;
    for (int k : sorted) {
        RunConfig cfg = base_cfg;
        cfg.mode = RunMode::scratch;
        cfg.k = k;
        SystemT<float> sys = init_system<float>(cfg);
        TrainResult res = run_scratch(sys, train_set, eval_set, nullptr);
        AblationRow row;
        row.k = k;
        row.accuracy_at_1 = res.final_accuracy;
        row.mrr = res.final_mrr;
        row.steps = res.steps_run;
        rows.push_back(row);
    }
    return rows;
}

GradCheckReport gradcheck_pipeline(const RunConfig& cfg, int batch_size, std::uint64_t data_seed) {
    const auto t0 = std::chrono::steady_clock::now();

    DataGenConfig dg;
    dg.seed = data_seed;
    dg.tasks = std::min(2, std::max(1, batch_size));
    dg.per_task = std::max(1, batch_size);
    dg.vocab = cfg.vocab;
    dg.tokens_per_class = 2;
    dg.junk_tokens = 2;
    std::vector<Triplet> data = gen_dataset(dg);
    std::vector<Triplet> batch(data.begin(), data.begin() + batch_size);

    SystemT<double> sys = init_system<double>(cfg);
    apply_freeze_mask(sys);

    auto loss_value = [&]() {
        EmbedderT<double> emb(sys, /*cache_prompts=*/false);
        return batch_loss(emb, batch, cfg.tau).loss.value();
    };

    // analytic gradients
    zero_gradients(sys);
    {
        EmbedderT<double> emb(sys, false);
        TapeD tape;
        TapeScope<double> scope(tape);
        BatchLossResult<double> out = batch_loss(emb, batch, cfg.tau);
        tape.backward(out.loss);
    }

    const double h = 1e-4;
    GradCheckReport report;
    const auto mask = freeze_mask_names(sys);
    for (const auto& name : mask) {
        TensorT<double>* t = sys.find_tensor(name);
        if (!t || !t->slot) throw contract_error("gradcheck: masked tensor " + name + " not found");
        GradCheckEntry entry;
        entry.name = name;
        const bool have_grad = t->slot->allocated;
        for (std::size_t i = 0; i < t->numel(); ++i) {
            const double orig = (*t->data)[i];
            (*t->data)[i] = orig + h;
            const double lp = loss_value();
            (*t->data)[i] = orig - h;
            const double lm = loss_value();
            (*t->data)[i] = orig;
            const double fd = (lp - lm) / (2 * h);
            const double an = have_grad ? t->slot->grad[i] : 0.0;
            const double diff = std::abs(an - fd);
            const double denom = std::max(std::abs(an), std::abs(fd));
            // near-zero pairs compare absolutely; everything else relatively
            const double rel = diff <= 1e-8 ? 0.0 : diff / std::max(denom, 1e-8);
            entry.max_rel = std::max(entry.max_rel, rel);
            entry.max_abs_diff = std::max(entry.max_abs_diff, diff);
            ++entry.scalars;
        }
        report.scalars += entry.scalars;
        report.max_rel = std::max(report.max_rel, entry.max_rel);
        report.per_tensor.push_back(std::move(entry));
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace pembed
