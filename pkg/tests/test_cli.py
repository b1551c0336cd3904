import json
import re
import subprocess
import sys

import numpy as np
import pytest

from unrealnas.cli import main
from unrealnas.datagen import build_rlrn, load_dataset
from unrealnas.engine import TrainReport
from unrealnas.searchspace import derive_genotype, load_genotype


TINY = ["--channels", "2", "--cells", "3", "--steps", "2", "--batch-size", "32"]


def run(*argv):
    return main([str(a) for a in argv])


def strip_timestamp(path):
    payload = json.loads(path.read_text())
    payload["meta"].pop("timestamp")
    return payload


@pytest.fixture(scope="module")
def rlrn(tmp_path_factory):
    prefix = tmp_path_factory.mktemp("data") / "rlrn"
    assert main(["gen", "rlrn", "--n", "64", "--classes", "5", "--seed", "1", "--out", str(prefix)]) == 0
    return prefix


# -------------------------------------------------------------------- gen


def test_gen_rlrn_writes_three_files(tmp_path, capsys):
    prefix = tmp_path / "rlrn"
    assert run("gen", "rlrn", "--n", 2000, "--classes", 50, "--seed", 1, "--out", prefix) == 0
    for suffix in ("manifest.json", "images.bin", "labels.bin"):
        assert (tmp_path / f"rlrn.{suffix}").is_file()
    ds = load_dataset(prefix)
    assert ds == build_rlrn(2000, 50, 1)
    out = capsys.readouterr().out
    assert "n=2000" in out and "d_rand=50" in out and "sha256=" in out


def test_gen_rlgd_sample_count(tmp_path):
    assert run("gen", "rlgd", "--categories", 10, "--instances", 20, "--classes", 100, "--seed", 3, "--out", tmp_path / "g") == 0
    ds = load_dataset(tmp_path / "g")
    assert ds.n == 200 and ds.num_classes == 100


def test_gen_rlrd_without_source_names_the_flag(tmp_path, capsys):
    assert run("gen", "rlrd", "--classes", 10, "--out", tmp_path / "r") == 2
    assert "--source" in capsys.readouterr().err
    assert not list(tmp_path.iterdir())


def test_gen_rlrd_and_real_from_sources(tmp_path):
    assert run("gen", "rlrd", "--source", "sklearn:photos", "--n", 40, "--classes", 4, "--out", tmp_path / "r") == 0
    assert load_dataset(tmp_path / "r").kind == "RLRD"
    np.save(tmp_path / "imgs.npy", np.zeros((5, 32, 32, 3), np.float32))
    assert run("gen", "rlrd", "--source", tmp_path / "imgs.npy", "--classes", 2, "--out", tmp_path / "z") == 0
    assert load_dataset(tmp_path / "z").n == 5
    assert run("gen", "real", "--source", "sklearn:digits", "--n", 50, "--out", tmp_path / "d") == 0
    ds = load_dataset(tmp_path / "d")
    assert ds.kind == "REAL" and ds.n == 50
    # unlabelled source cannot make a REAL set
    assert run("gen", "real", "--source", "sklearn:photos", "--out", tmp_path / "x") == 2


def test_usage_errors_exit_2(tmp_path):
    assert run("gen", "mnist") == 2
    assert run("gen", "rlrn", "--n", "lots") == 2
    assert run("gen", "rlrn", "--n", 0, "--out", tmp_path / "x") == 2
    assert run("frobnicate") == 2
    assert run("search", tmp_path / "missing") == 2


# ---------------------------------------------------------------- config


def test_config_precedence_and_echo(tmp_path, rlrn, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"search_epochs": 0, "warmup_epochs": 1, "seed": 5, "channels": 2, "cells": 3, "steps": 2}))
    monkeypatch.setenv("UNREALNAS_SEED", "9")
    assert run("search", rlrn, "--config", cfg, "--seed", 7, "--out", tmp_path / "a") == 0
    echo = json.loads((tmp_path / "a" / "config.json").read_text())
    assert echo["seed"] == 7 and echo["search_epochs"] == 0 and echo["batch_size"] == 64
    assert run("search", rlrn, "--config", cfg, "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / "config.json").read_text())["seed"] == 5
    assert run("search", rlrn, "--search-epochs", 0, "--warmup-epochs", 1, *TINY, "--out", tmp_path / "c") == 0
    assert json.loads((tmp_path / "c" / "config.json").read_text())["seed"] == 9


def test_config_echo_reruns_identically(tmp_path, rlrn):
    assert run("search", rlrn, "--warmup-epochs", 1, "--search-epochs", 1, *TINY, "--out", tmp_path / "a") == 0
    assert run("search", "--config", tmp_path / "a" / "config.json", "--out", tmp_path / "b") == 0
    assert strip_timestamp(tmp_path / "a" / "genotype.json") == strip_timestamp(tmp_path / "b" / "genotype.json")


def test_bad_config_files_exit_2(tmp_path, rlrn):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("search", rlrn, "--config", bad) == 2
    bad.write_text(json.dumps({"serch_epochs": 3}))
    assert run("search", rlrn, "--config", bad) == 2
    bad.write_text(json.dumps({"command": "retrain"}))
    assert run("search", rlrn, "--config", bad) == 2
    assert run("search", rlrn, "--config", tmp_path / "nope.json") == 2


def test_bad_seed_env(monkeypatch, rlrn):
    monkeypatch.setenv("UNREALNAS_SEED", "abc")
    assert run("search", rlrn) == 2


# ---------------------------------------------------------------- search


def test_search_outputs_and_zero_search_epochs(tmp_path, rlrn):
    out = tmp_path / "s"
    assert run("search", rlrn, "--warmup-epochs", 1, "--search-epochs", 0, *TINY, "--out", out) == 0
    for name in ("genotype.json", "trace.ndjson", "config.json", "checkpoint/alpha.npz", "checkpoint/weights.pt"):
        assert (out / name).is_file()
    zeros = np.zeros((5, 8))
    assert load_genotype(out / "genotype.json") == derive_genotype(zeros, zeros, steps=2)
    assert len((out / "trace.ndjson").read_text().splitlines()) == 1


def test_search_rerun_is_byte_identical(tmp_path, rlrn):
    args = ["--warmup-epochs", 1, "--search-epochs", 2, *TINY, "--seed", 3]
    assert run("search", rlrn, *args, "--out", tmp_path / "a") == 0
    assert run("search", rlrn, *args, "--out", tmp_path / "b") == 0
    ga = (tmp_path / "a" / "genotype.json").read_text()
    gb = (tmp_path / "b" / "genotype.json").read_text()
    drop = lambda s: re.sub(r'"timestamp": "[^"]*"', "", s)
    assert drop(ga) == drop(gb)
    assert (tmp_path / "a" / "checkpoint" / "alpha.npz").read_bytes() == (tmp_path / "b" / "checkpoint" / "alpha.npz").read_bytes()
    trace = lambda d: [{**json.loads(l), "wallclock": 0} for l in (d / "trace.ndjson").read_text().splitlines()]
    assert trace(tmp_path / "a") == trace(tmp_path / "b")


def test_search_divergence_exits_3_with_trace(tmp_path, rlrn):
    out = tmp_path / "s"
    code = run("search", rlrn, "--warmup-epochs", 1, "--search-epochs", 2, *TINY, "--w-lr", 1e30, "--grad-clip", 1e30, "--out", out)
    assert code == 3
    assert (out / "trace.ndjson").is_file() and (out / "config.json").is_file()
    assert not (out / "genotype.json").exists()


@pytest.mark.slow
def test_micro_search_on_2000_rlrn(tmp_path):
    assert run("gen", "rlrn", "--n", 2000, "--classes", 10, "--out", tmp_path / "d") == 0
    out = tmp_path / "s"
    assert run("search", tmp_path / "d", "--warmup-epochs", 1, "--search-epochs", 1, "--channels", 4, "--cells", 3, "--steps", 2, "--out", out) == 0
    payload = json.loads((out / "genotype.json").read_text())
    assert set(payload) == {"normal", "normal_concat", "reduce", "reduce_concat", "meta"}
    load_genotype(out / "genotype.json")  # validates
    assert payload["meta"]["dataset"]["n"] == 2000


# --------------------------------------------------------------- retrain


@pytest.fixture(scope="module")
def genotype_file(tmp_path_factory, rlrn):
    out = tmp_path_factory.mktemp("search")
    assert main(["search", str(rlrn), "--warmup-epochs", "1", "--search-epochs", "0", *TINY, "--out", str(out)]) == 0
    return out / "genotype.json"


def test_retrain_report_and_determinism(tmp_path, genotype_file):
    args = ["retrain", genotype_file, "--data", "sklearn:digits", "--limit", 60, "--epochs", 3, "--channels", 2, "--cells", 3, "--batch-size", 30]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    csv_a = (tmp_path / "a" / "report.csv").read_text()
    assert csv_a == (tmp_path / "b" / "report.csv").read_text()
    assert len(TrainReport.from_csv(csv_a).epochs) == 3
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["num_classes"] == 10 and summary["final"]["epoch"] == 2


def test_retrain_errors(tmp_path, genotype_file, rlrn):
    assert run("retrain", tmp_path / "none.json", "--data", rlrn) == 2
    assert run("retrain", genotype_file) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"normal": [["conv_99", 0]]}))
    assert run("retrain", bad, "--data", rlrn) == 2
    code = run("retrain", genotype_file, "--data", rlrn, "--epochs", 2, "--lr", 1e30, "--grad-clip", 1e30, "--channels", 2, "--cells", 3, "--out", tmp_path / "r")
    assert code == 3


# --------------------------------------------------------------- analyze


def test_analyze_skip_dynamics_one_point_per_epoch(tmp_path, rlrn):
    assert run("search", rlrn, "--warmup-epochs", 1, "--search-epochs", 2, *TINY, "--out", tmp_path / "s") == 0
    assert run("analyze", "skip-dynamics", tmp_path / "s" / "trace.ndjson", "--out", tmp_path / "k") == 0
    svg = (tmp_path / "k" / "skip_dynamics.svg").read_text()
    group = re.search(r'<g id="skip-trace">(.*?)</g>\s*</g>', svg, re.S).group(1)
    assert group.count("<use ") == 3
    assert json.loads((tmp_path / "k" / "skip_counts.json").read_text())["trace"].__len__() == 3


def test_analyze_difficulty_orders_kinds(tmp_path, capsys):
    paths = []
    for kind, t in [("REAL", 31), ("RLGD", 71), ("RLRD", 36), ("RLRN", 94)]:
        acc = 0.99 * np.minimum(np.arange(100) / t, 1.0)
        rows = [{"epoch": e, "lr": 0.0, "train_loss": 0.0, "train_acc": a, "val_loss": 0.0, "val_acc": a} for e, a in enumerate(acc)]
        (tmp_path / f"{kind}.csv").write_text(TrainReport(epochs=rows).to_csv())
        paths.append(f"{kind}={tmp_path / f'{kind}.csv'}")
    assert run("analyze", "difficulty", *paths, "--num-classes", 10, "--out", tmp_path / "o") == 0
    scores = json.loads((tmp_path / "o" / "difficulty.json").read_text())["scores"]
    assert [s["kind"] for s in scores] == ["REAL", "RLRD", "RLGD", "RLRN"]
    assert [s["convergence_epoch"] for s in scores] == [31, 36, 71, 94]
    assert (tmp_path / "o" / "accuracy.svg").is_file()


def test_analyze_distinguish_reports_tau(tmp_path):
    assert run("gen", "rlrd", "--source", "sklearn:photos", "--n", 64, "--classes", 4, "--out", tmp_path / "u") == 0
    code = run(
        "analyze", "distinguish", "--unreal", tmp_path / "u", "--target-limit", 200, "--n-arch", 4, "--probe-epoch", 2,
        "--channels", 4, "--cells", 3, "--batch-size", 32, "--out", tmp_path / "o",
    )
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["n"] + summary["failures"] == 4
    assert summary["tau"] is not None and -1.0 <= summary["tau"] <= 1.0
    assert (tmp_path / "o" / "study.csv").read_text().count("\n") == 5


def test_analyze_ablate_classes_smoke(tmp_path):
    code = run(
        "analyze", "ablate-classes", "--kind", "rlrn", "--d-values", "2,50", "--seeds", "0", "--n", 32,
        "--warmup-epochs", 1, "--search-epochs", 1, "--search-batch-size", 32, "--supernet-channels", 2,
        "--supernet-cells", 3, "--target-limit", 40, "--eval-epochs", 1, "--channels", 2, "--cells", 3,
        "--out", tmp_path / "o",
    )
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert set(summary["mean_accuracy"]) == {"2", "50"} and summary["failures"] == 0
    assert (tmp_path / "o" / "ablation.svg").is_file()
    assert (tmp_path / "o" / "grid.csv").read_text().count("\n") == 3


def test_analyze_silhouette(tmp_path, rlrn):
    assert run("analyze", "silhouette", rlrn, "--out", tmp_path / "o") == 0
    payload = json.loads((tmp_path / "o" / "silhouette.json").read_text())
    assert -1.0 <= payload["silhouette"] <= 1.0 and payload["n"] == 64


def test_analyze_malformed_inputs_exit_2(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    junk = tmp_path / "junk.ndjson"
    junk.write_text("{not json}\n")
    assert run("analyze", "skip-dynamics", junk, "--out", tmp_path / "o") == 2
    assert run("analyze", "skip-dynamics", tmp_path / "missing.ndjson") == 2
    bad = tmp_path / "r.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("analyze", "difficulty", f"x={bad}") == 2
    assert run("analyze", "difficulty") == 2
    assert run("analyze", "distinguish", "--unreal", tmp_path / "none") == 2
    assert run("analyze") == 2
    assert not (tmp_path / "runs").exists()


def test_console_script_entry_point(tmp_path):
    env = {"UNREALNAS_SEED": "4", "PATH": "/usr/local/bin:/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "unrealnas.cli", "gen", "rlrn", "--n", "8", "--classes", "2", "--out", str(tmp_path / "d")],
        env=env, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "d.manifest.json").read_text())["seed"] == 4
    assert json.loads((tmp_path / "d.config.json").read_text())["seed"] == 4
    proc = subprocess.run(["unrealnas", "--version"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "unrealnas" in proc.stdout
