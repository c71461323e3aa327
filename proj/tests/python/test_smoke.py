"""Smoke tests for the pembed python surface and the CLI binary."""

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "..", "python"))

import pembed  # noqa: E402

MICRO_CFG = {
    "vocab": "16",
    "d_p": "8",
    "d_e": "10",
    "d_e_prime": "6",
    "layers": "2",
    "ffn": "12",
    "max_len": "32",
    "k": "2",
    "lora_r": "2",
    "batch_size": "4",
    "total_steps": "30",
    "eval_every": "10",
    "eval_c": "4",
    "lr": "0.01",
    "warmup_ratio": "0.0",
}


def micro_dataset(tmp_path, name, seed):
    path = str(tmp_path / name)
    n = pembed.gen_dataset(path, seed=seed, tasks=2, per_task=16, vocab=16, tokens_per_class=2)
    assert n == 32
    return path


def test_softmax_rows_sum_to_one():
    x = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 999.0]], dtype=np.float32)
    y = pembed.softmax(x)
    assert y.shape == (2, 3)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), [1.0, 1.0], atol=1e-6)


def test_info_nce_equal_sims_is_log_c():
    sims = np.full((3, 5), 0.25, dtype=np.float32)
    loss = pembed.info_nce(sims, tau=0.2)
    assert abs(loss - math.log(5)) < 1e-6


def test_cosine_sim_scale_invariance():
    a = np.array([[1.0, 2.0, 2.0]], dtype=np.float32)
    assert abs(pembed.cosine_sim(a, 3 * a) - 1.0) < 1e-6


def test_dataset_determinism(tmp_path):
    p1 = micro_dataset(tmp_path, "a.tsv", seed=5)
    p2 = micro_dataset(tmp_path, "b.tsv", seed=5)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_train_eval_checkpoint_roundtrip(tmp_path):
    data = micro_dataset(tmp_path, "train.tsv", seed=5)
    evals = micro_dataset(tmp_path, "eval.tsv", seed=6)

    sys_obj = pembed.System(MICRO_CFG)
    assert sys_obj.trainable_params() == 2 * 2 * (2 * 2 * 8) + 10 * 8
    out = sys_obj.train(data, evals)
    assert out["steps"] == 30
    assert len(out["metrics"]) >= 3
    first_loss = out["metrics"][0]["loss"]
    assert math.isfinite(first_loss)

    ckpt = str(tmp_path / "sys.pemb")
    sys_obj.save(ckpt)
    score = sys_obj.evaluate(evals)

    fresh = pembed.System(MICRO_CFG)
    fresh.load(ckpt)
    score2 = fresh.evaluate(evals)
    assert score2 == score

    info = pembed.inspect_checkpoint(ckpt)
    names = {t["name"] for t in info["tensors"]}
    assert "align.W_proj" in names
    assert info["config_hash"] == sys_obj.config_hash()


def test_prompt_generation_shape_and_determinism():
    sys_obj = pembed.System(MICRO_CFG)
    p1 = sys_obj.generate_prompts([12, 13])
    p2 = sys_obj.generate_prompts([12, 13])
    assert p1.shape == (2, 8)  # k x d_p
    assert np.array_equal(p1, p2)
    v = sys_obj.embed_query([12, 13], [1, 2, 3])
    d = sys_obj.embed_document([1, 2, 3])
    assert v.shape == (1, 10)
    assert d.shape == (1, 10)


def test_gradcheck_micro():
    cfg = dict(MICRO_CFG)
    cfg["k"] = "2"
    rep = pembed.gradcheck(cfg, batch=2, seed=7)
    assert rep["max_rel"] < 1e-4


def test_config_error_surfaces():
    with pytest.raises(pembed.ConfigError):
        pembed.System({"tau": "-1"})


@pytest.mark.skipif("PEMBED_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_end_to_end(tmp_path):
    cli = os.environ["PEMBED_CLI"]
    data = str(tmp_path / "train.tsv")
    evals = str(tmp_path / "eval.tsv")
    subprocess.run(
        [cli, "gen-data", "--out", data, "--seed", "5", "--tasks", "2", "--per-task", "16",
         "--vocab", "16", "--tokens-per-class", "2"],
        check=True,
    )
    subprocess.run(
        [cli, "gen-data", "--out", evals, "--seed", "6", "--tasks", "2", "--per-task", "16",
         "--vocab", "16", "--tokens-per-class", "2"],
        check=True,
    )
    ckpt = str(tmp_path / "run.pemb")
    metrics = str(tmp_path / "metrics.jsonl")
    args = [cli, "train", "--data", data, "--eval-data", evals, "--out", ckpt, "--metrics", metrics]
    for key, value in MICRO_CFG.items():
        args += [f"--{key}", value]
    subprocess.run(args, check=True)

    lines = [json.loads(line) for line in open(metrics)]
    assert lines, "metrics log should hold at least one record"
    assert {"step", "loss", "accuracy_at_1", "mrr", "mode", "config_hash"} <= set(lines[0])

    out = subprocess.run([cli, "inspect-ckpt", "--ckpt", ckpt], check=True, capture_output=True,
                         text=True)
    assert "align.W_proj" in out.stdout

    # exit code contract: unknown config key -> 2
    bad = subprocess.run([cli, "train", "--data", data, "--eval-data", evals, "--config",
                          str(tmp_path / "missing.cfg")], capture_output=True)
    assert bad.returncode == 2
    # missing data file -> 3
    bad = subprocess.run([cli, "train", "--data", str(tmp_path / "nope.tsv"), "--eval-data", evals],
                         capture_output=True)
    assert bad.returncode == 3
    # corrupt checkpoint -> 5
    corrupt = tmp_path / "bad.pemb"
    corrupt.write_bytes(b"NOPE")
    bad = subprocess.run([cli, "inspect-ckpt", "--ckpt", str(corrupt)], capture_output=True)
    assert bad.returncode == 5
