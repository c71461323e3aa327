// pembed: soft-prompt contrastive embedding workbench
//
// Subcommands: gen-data, train, transfer, eval, ablate-k, gradcheck, inspect-ckpt.
// Every RunConfig field is exposed as a flag; --config loads a key=value file
// and flags override it.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pembed/checkpoint.hpp"
#include "pembed/config.hpp"
#include "pembed/dataset.hpp"
#include "pembed/evalrank.hpp"
#include "pembed/system.hpp"
#include "pembed/trainer.hpp"

namespace {

using namespace pembed;

// flag overrides captured as key/value pairs so they share the config parser
struct ConfigCli {
    std::string config_path;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        static const char* keys[] = {
            "mode", "seed", "vocab", "d_p", "d_e", "d_e_prime", "layers", "ffn", "max_len",
            "k", "gen_temperature", "pos_on_soft_tokens", "tau", "symmetric_docs", "lr",
            "warmup_ratio", "lr_schedule", "batch_size", "accum_steps", "total_steps",
            "lora_r", "lora_alpha", "virtual_tokens", "eval_every", "eval_c",
            "target_accuracy", "use_prime_backbone", "log_wall_time"};
        for (const char* key : keys) {
            cmd->add_option_function<std::string>(
                "--" + std::string(key),
                [this, key](const std::string& v) { overrides[key] = v; },
                "override config key '" + std::string(key) + "'");
        }
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        for (const auto& [k, v] : overrides) apply_config_line(cfg, k, v);
        cfg.validate();
        return cfg;
    }
};

std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error(std::string("cannot write ") + what + " '" + path + "'");
    return out;
}

MetricsSink file_sink(std::ofstream& out) {
    return [&out](const MetricsRecord& rec) {
        out << metrics_json_line(rec) << '\n';
        out.flush();
    };
}

void print_final(const TrainResult& res) {
    std::printf("steps=%ld accuracy_at_1=%.4f mrr=%.4f\n", res.steps_run, res.final_accuracy,
                res.final_mrr);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"soft-prompt contrastive embedding workbench"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic triplet dataset");
    DataGenConfig dg;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output triplet file")->required();
    gen->add_option("--seed", dg.seed, "generation seed");
    gen->add_option("--tasks", dg.tasks, "number of tasks (1..4)");
    gen->add_option("--per-task", dg.per_task, "records per task");
    gen->add_option("--vocab", dg.vocab, "vocabulary size");
    gen->add_option("--tokens-per-class", dg.tokens_per_class, "query tokens per class");
    gen->add_option("--junk-tokens", dg.junk_tokens, "junk padding tokens per query");
    gen->add_option("--doc-junk", dg.doc_junk, "hash-derived junk tokens per document");

    // train (scratch or prompt-tuning-baseline, per config mode)
    auto* train = app.add_subcommand("train", "scratch training or the prompt-tuning baseline");
    ConfigCli train_cfg;
    train_cfg.attach(train);
    std::string train_data, train_eval, train_ckpt, train_metrics;
    train->add_option("--data", train_data, "training triplet file")->required();
    train->add_option("--eval-data", train_eval, "evaluation triplet file")->required();
    train->add_option("--out", train_ckpt, "output checkpoint");
    train->add_option("--metrics", train_metrics, "metrics log (one JSON object per line)");

    // transfer
    auto* transfer = app.add_subcommand("transfer", "adapter-only transfer to the prime backbone");
    ConfigCli transfer_cfg;
    transfer_cfg.attach(transfer);
    std::string tr_source, tr_data, tr_eval, tr_ckpt, tr_metrics;
    transfer->add_option("--source", tr_source, "trained source checkpoint")->required();
    transfer->add_option("--data", tr_data, "training triplet file")->required();
    transfer->add_option("--eval-data", tr_eval, "evaluation triplet file")->required();
    transfer->add_option("--out", tr_ckpt, "output checkpoint");
    transfer->add_option("--metrics", tr_metrics, "metrics log");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or the untrained system)");
    ConfigCli eval_cfg;
    eval_cfg.attach(eval);
    std::string ev_ckpt, ev_data, ev_metrics;
    eval->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate (omit for untrained)");
    eval->add_option("--data", ev_data, "evaluation triplet file")->required();
    eval->add_option("--metrics", ev_metrics, "append one metrics record");

    // ablate-k
    auto* ablate = app.add_subcommand("ablate-k", "scratch-train per k and tabulate accuracy");
    ConfigCli ablate_cfg;
    ablate_cfg.attach(ablate);
    std::string ab_data, ab_eval, ab_out, ab_klist = "0,1,3,5";
    ablate->add_option("--data", ab_data, "training triplet file")->required();
    ablate->add_option("--eval-data", ab_eval, "evaluation triplet file")->required();
    ablate->add_option("--k-list", ab_klist, "comma-separated k values");
    ablate->add_option("--out", ab_out, "output CSV (k,accuracy_at_1,mrr,steps)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full pipeline");
    ConfigCli gc_cfg;
    gc_cfg.attach(gc);
    int gc_batch = 2;
    double gc_tol = 1e-4;
    bool gc_full = false;
    gc->add_option("--batch", gc_batch, "batch size (N_b)");
    gc->add_option("--tol", gc_tol, "relative tolerance");
    gc->add_flag("--full-dims", gc_full, "use the configured dims instead of the micro dims");

    // inspect-ckpt
    auto* inspect = app.add_subcommand("inspect-ckpt", "print checkpoint header and tensor table");
    std::string in_ckpt;
    inspect->add_option("--ckpt", in_ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (gen->parsed()) {
        std::vector<Triplet> records = gen_dataset(dg);
        save_triplets(gen_out, records);
        std::printf("wrote %zu records to %s\n", records.size(), gen_out.c_str());
        return 0;
    }

    if (train->parsed()) {
        RunConfig cfg = train_cfg.resolve();
        if (cfg.mode != RunMode::scratch && cfg.mode != RunMode::baseline) {
            throw config_error("train: mode must be scratch or prompt-tuning-baseline");
        }
        std::vector<Triplet> data = load_triplets(train_data);
        std::vector<Triplet> evals = load_triplets(train_eval);
        SystemT<float> sys = init_system<float>(cfg);
        std::ofstream mf;
        MetricsSink sink;
        if (!train_metrics.empty()) {
            mf = open_out(train_metrics, "metrics log");
            sink = file_sink(mf);
        }
        TrainResult res = cfg.mode == RunMode::scratch
                              ? run_scratch(sys, data, evals, sink)
                              : run_prompt_tuning_baseline(sys, data, evals, sink);
        if (!train_ckpt.empty()) save_checkpoint(train_ckpt, snapshot_system(sys));
        print_final(res);
        return 0;
    }

    if (transfer->parsed()) {
        RunConfig cfg = transfer_cfg.resolve();
        if (cfg.mode != RunMode::transfer) cfg.mode = RunMode::transfer;
        cfg.validate();
        std::vector<Triplet> data = load_triplets(tr_data);
        std::vector<Triplet> evals = load_triplets(tr_eval);
        // the source checkpoint was written by a scratch run: same structural
        // config except mode-dependent tensors
        RunConfig source_cfg = cfg;
        source_cfg.mode = RunMode::scratch;
        source_cfg.use_prime_backbone = false;
        Checkpoint source = load_checkpoint(tr_source, config_hash(source_cfg));
        SystemT<float> sys = init_system<float>(cfg);
        std::ofstream mf;
        MetricsSink sink;
        if (!tr_metrics.empty()) {
            mf = open_out(tr_metrics, "metrics log");
            sink = file_sink(mf);
        }
        TrainResult res = run_transfer(sys, source, data, evals, sink);
        if (!tr_ckpt.empty()) save_checkpoint(tr_ckpt, snapshot_system(sys));
        print_final(res);
        return 0;
    }

    if (eval->parsed()) {
        RunConfig cfg = eval_cfg.resolve();
        std::vector<Triplet> evals = load_triplets(ev_data);
        SystemT<float> sys = init_system<float>(cfg);
        if (!ev_ckpt.empty()) {
            Checkpoint ckpt = load_checkpoint(ev_ckpt, config_hash(cfg));
            restore_system(sys, ckpt, {"psi_p.", "psi_e", "align.", "lora."});
        }
        EvalResult res = evaluate_system(sys, evals);
        std::printf("queries=%d accuracy_at_1=%.4f mrr=%.4f\n", res.queries, res.accuracy_at_1,
                    res.mrr);
        if (!ev_metrics.empty()) {
            std::ofstream mf(ev_metrics, std::ios::binary | std::ios::app);
            if (!mf) throw data_error("cannot write metrics log '" + ev_metrics + "'");
            MetricsRecord rec;
            rec.step = 0;
            rec.loss = 0.0;
            rec.accuracy_at_1 = res.accuracy_at_1;
            rec.mrr = res.mrr;
            rec.mode = mode_name(cfg.mode);
            rec.config_hash = config_hash(cfg);
            mf << metrics_json_line(rec) << '\n';
        }
        return 0;
    }

    if (ablate->parsed()) {
        RunConfig cfg = ablate_cfg.resolve();
        std::vector<int> ks;
        std::stringstream ss(ab_klist);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            try {
                ks.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw config_error("ablate-k: bad k value '" + item + "'");
            }
        }
        std::vector<Triplet> data = load_triplets(ab_data);
        std::vector<Triplet> evals = load_triplets(ab_eval);
        std::vector<AblationRow> rows = ablate_k(cfg, ks, data, evals);
        std::ostringstream csv;
        csv << "k,accuracy_at_1,mrr,steps\n";
        for (const auto& r : rows) {
            char line[128];
            std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%ld\n", r.k, r.accuracy_at_1, r.mrr,
                          r.steps);
            csv << line;
        }
        if (!ab_out.empty()) {
            auto out = open_out(ab_out, "ablation CSV");
            out << csv.str();
        }
        std::fputs(csv.str().c_str(), stdout);
        return 0;
    }

    if (gc->parsed()) {
        RunConfig cfg = gc_cfg.resolve();
        if (!gc_full) {
            cfg.vocab = 16;
            cfg.d_p = 8;
            cfg.d_e = 10;
            cfg.d_e_prime = 6;
            cfg.layers = 2;
            cfg.ffn = 12;
            cfg.max_len = 32;
            cfg.k = 3;
            cfg.lora_r = 2;
        }
        GradCheckReport report = gradcheck_pipeline(cfg, gc_batch, /*data_seed=*/7);
        for (const auto& e : report.per_tensor) {
            std::printf("%-24s scalars=%-6ld max_rel=%.3e max_abs_diff=%.3e\n", e.name.c_str(),
                        e.scalars, e.max_rel, e.max_abs_diff);
        }
        std::printf("total scalars=%ld max_rel=%.3e (%.2fs) -> %s\n", report.scalars,
                    report.max_rel, report.seconds, report.passed(gc_tol) ? "PASS" : "FAIL");
        if (!report.passed(gc_tol)) {
            throw numeric_error("gradcheck failed at tolerance " + std::to_string(gc_tol));
        }
        return 0;
    }

    if (inspect->parsed()) {
        Checkpoint ckpt = load_checkpoint(in_ckpt, 0);
        std::printf("version=%u config_hash=%s tensors=%zu\n", ckpt.version,
                    hash_hex(ckpt.config_hash).c_str(), ckpt.tensors.size());
        for (const auto& [name, t] : ckpt.tensors) {
            double ss = 0;
            for (float v : *t.data) ss += static_cast<double>(v) * v;
            std::printf("  %-28s [%d x %d] l2=%.6f\n", name.c_str(), t.rows, t.cols, std::sqrt(ss));
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const pembed::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const pembed::data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const pembed::numeric_error& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const pembed::checkpoint_error& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return 5;
    } catch (const pembed::error& e) {
        // dim/length/lookup/contract errors trace back to configuration misuse
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
