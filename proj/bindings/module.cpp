// pembed._core: python bindings over the main operations — dataset generation,
// training in every mode, retrieval evaluation, checkpoints, soft-prompt
// generation, and the numeric primitives used by the objective.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "pembed/checkpoint.hpp"
#include "pembed/config.hpp"
#include "pembed/dataset.hpp"
#include "pembed/evalrank.hpp"
#include "pembed/softprompt.hpp"
#include "pembed/system.hpp"
#include "pembed/trainer.hpp"

namespace py = pybind11;
using namespace pembed;

namespace {

RunConfig config_from_dict(const py::dict& d) {
    RunConfig cfg;
    for (auto item : d) {
        const std::string key = py::cast<std::string>(item.first);
        const std::string value = py::cast<std::string>(py::str(item.second));
        apply_config_line(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

py::array_t<float> tensor_to_array(const Tensor& t) {
    py::array_t<float> out({t.rows, t.cols});
    std::memcpy(out.mutable_data(), t.data->data(), t.numel() * sizeof(float));
    return out;
}

Tensor array_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw dim_error("expected a 2-D array");
    Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(t.data->data(), a.data(), t.numel() * sizeof(float));
    t.ensure_finite("array input");
    return t;
}

py::dict metrics_to_dict(const MetricsRecord& rec) {
    py::dict d;
    d["step"] = rec.step;
    d["loss"] = rec.loss;
    d["accuracy_at_1"] = rec.accuracy_at_1;
    d["mrr"] = rec.mrr;
    d["mode"] = rec.mode;
    d["config_hash"] = hash_hex(rec.config_hash);
    if (rec.has_wall_time) d["wall_time_ms"] = rec.wall_time_ms;
    return d;
}

// full system with the run configuration; the python surface for train/eval
class PySystem {
public:
    explicit PySystem(const py::dict& cfg) : sys_(init_system<float>(config_from_dict(cfg))) {}

    py::dict train(const std::string& data_path, const std::string& eval_path,
                   const std::optional<std::string>& source_ckpt) {
        auto data = load_triplets(data_path);
        auto evals = load_triplets(eval_path);
        std::vector<MetricsRecord> recs;
        MetricsSink sink = [&](const MetricsRecord& r) { recs.push_back(r); };
        TrainResult res;
        switch (sys_.cfg.mode) {
            case RunMode::scratch:
                res = run_scratch(sys_, data, evals, sink);
                break;
            case RunMode::transfer: {
                if (!source_ckpt) throw config_error("transfer requires a source checkpoint");
                RunConfig src_cfg = sys_.cfg;
                src_cfg.mode = RunMode::scratch;
                src_cfg.use_prime_backbone = false;
                Checkpoint source = load_checkpoint(*source_ckpt, config_hash(src_cfg));
                res = run_transfer(sys_, source, data, evals, sink);
                break;
            }
            case RunMode::baseline:
                res = run_prompt_tuning_baseline(sys_, data, evals, sink);
                break;
            case RunMode::vanilla_eval:
                throw config_error("vanilla-eval mode does not train");
        }
        py::dict out;
        out["steps"] = res.steps_run;
        out["final_accuracy_at_1"] = res.final_accuracy;
        out["final_mrr"] = res.final_mrr;
        py::list ms;
        for (const auto& r : recs) ms.append(metrics_to_dict(r));
        out["metrics"] = ms;
        return out;
    }

    py::dict evaluate(const std::string& eval_path) {
        auto evals = load_triplets(eval_path);
        EvalResult res = evaluate_system(sys_, evals);
        py::dict out;
        out["queries"] = res.queries;
        out["accuracy_at_1"] = res.accuracy_at_1;
        out["mrr"] = res.mrr;
        return out;
    }

    py::array_t<float> generate_prompts_py(const std::vector<int>& instruction) {
        SoftPromptSeqT<float> gen = generate_prompts(sys_.psi_p, &sys_.lora, instruction,
                                                     sys_.cfg.k, sys_.cfg.gen_temperature);
        return tensor_to_array(gen.states);
    }

    py::array_t<float> embed_query(const std::vector<int>& instruction,
                                   const std::vector<int>& text) {
        EmbedderT<float> emb(sys_, true);
        Triplet t;
        t.instruction = instruction;
        t.query = text;
        return tensor_to_array(emb.embed_query(t));
    }

    py::array_t<float> embed_document(const std::vector<int>& text) {
        EmbedderT<float> emb(sys_, true);
        Triplet owner;
        return tensor_to_array(emb.embed_doc(owner, text));
    }

    void save(const std::string& path) { save_checkpoint(path, snapshot_system(sys_)); }

    void load(const std::string& path) {
        Checkpoint ckpt = load_checkpoint(path, config_hash(sys_.cfg));
        restore_system(sys_, ckpt, {"psi_p.", "psi_e", "lora.", "align."});
    }

    std::string config_hash_hex() const { return hash_hex(config_hash(sys_.cfg)); }
    long trainable_params() const { return trainable_param_count(sys_.cfg); }

private:
    SystemT<float> sys_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "soft-prompt contrastive embedding core";

    py::register_exception<config_error>(m, "ConfigError");
    py::register_exception<data_error>(m, "DataError");
    py::register_exception<numeric_error>(m, "NumericError");
    py::register_exception<checkpoint_error>(m, "CheckpointError");

    m.def(
        "softmax",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
            return tensor_to_array(softmax_lastdim(array_to_tensor(a)));
        },
        py::arg("x"), "rowwise max-subtracted softmax");

    m.def(
        "info_nce",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& sims, double tau) {
            return static_cast<double>(info_nce(array_to_tensor(sims), tau).value());
        },
        py::arg("sims"), py::arg("tau") = 0.2,
        "InfoNCE loss over per-query candidate similarities (positive at column 0)");

    m.def(
        "cosine_sim",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
            return static_cast<double>(cosine_sim(array_to_tensor(a), array_to_tensor(b)).value());
        },
        py::arg("a"), py::arg("b"), "cosine similarity of two [1 x d] vectors");

    m.def(
        "gen_dataset",
        [](const std::string& path, std::uint64_t seed, int tasks, int per_task, int vocab,
           int tokens_per_class, int junk_tokens, int doc_junk) {
            DataGenConfig dg;
            dg.seed = seed;
            dg.tasks = tasks;
            dg.per_task = per_task;
            dg.vocab = vocab;
            dg.tokens_per_class = tokens_per_class;
            dg.junk_tokens = junk_tokens;
            dg.doc_junk = doc_junk;
            auto records = gen_dataset(dg);
            save_triplets(path, records);
            return static_cast<long>(records.size());
        },
        py::arg("path"), py::arg("seed") = 1, py::arg("tasks") = 4, py::arg("per_task") = 500,
        py::arg("vocab") = 64, py::arg("tokens_per_class") = 3, py::arg("junk_tokens") = 4, py::arg("doc_junk") = 2,
        "generate a synthetic triplet dataset and write it as TSV");

    m.def(
        "gradcheck",
        [](const py::dict& cfg_dict, int batch, std::uint64_t seed) {
            RunConfig cfg = config_from_dict(cfg_dict);
            GradCheckReport rep = gradcheck_pipeline(cfg, batch, seed);
            py::dict out;
            out["max_rel"] = rep.max_rel;
            out["scalars"] = rep.scalars;
            out["seconds"] = rep.seconds;
            return out;
        },
        py::arg("config"), py::arg("batch") = 2, py::arg("seed") = 7,
        "finite-difference check of the full pipeline loss (double precision)");

    m.def("inspect_checkpoint", [](const std::string& path) {
        Checkpoint ckpt = load_checkpoint(path, 0);
        py::dict out;
        out["version"] = ckpt.version;
        out["config_hash"] = hash_hex(ckpt.config_hash);
        py::list tensors;
        for (const auto& [name, t] : ckpt.tensors) {
            py::dict entry;
            entry["name"] = name;
            entry["rows"] = t.rows;
            entry["cols"] = t.cols;
            tensors.append(entry);
        }
        out["tensors"] = tensors;
        return out;
    });

    py::class_<PySystem>(m, "System")
        .def(py::init<const py::dict&>(), py::arg("config"))
        .def("train", &PySystem::train, py::arg("data_path"), py::arg("eval_path"),
             py::arg("source_checkpoint") = std::nullopt)
        .def("evaluate", &PySystem::evaluate, py::arg("eval_path"))
        .def("generate_prompts", &PySystem::generate_prompts_py, py::arg("instruction"))
        .def("embed_query", &PySystem::embed_query, py::arg("instruction"), py::arg("text"))
        .def("embed_document", &PySystem::embed_document, py::arg("text"))
        .def("save", &PySystem::save, py::arg("path"))
        .def("load", &PySystem::load, py::arg("path"))
        .def("config_hash", &PySystem::config_hash_hex)
        .def("trainable_params", &PySystem::trainable_params);
}
