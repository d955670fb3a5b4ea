import csv
import json

import pytest

from diffret.cli import run
from diffret.corpus import load
from diffret.pipeline.checkpoint import load_checkpoint
from diffret.pipeline.reports import read_reports_jsonl

DATA = ["--classes", "3", "--pairs-per-class", "4", "--d-in", "6", "--words", "3", "--frames", "3"]
TRAIN = ["--epochs", "2", "--batch-size", "4", "--dim", "8", "--steps", "10"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "-o", str(root / "data"), "--seed", "2", "--train-fraction", "0.75"] + DATA) == 0
    assert run(["train", "-c", str(root / "data"), "-o", str(root / "train")] + TRAIN) == 0
    return root


def test_help_and_usage_errors(capsys):
    assert run(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out
    assert run(["train", "--no-such-flag"]) == 2
    assert run(["teleport"]) == 2
    assert run([]) == 2


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert run(["eval", "-m", str(tmp_path / "missing")]) == 1
    assert "error" in capsys.readouterr().err
    assert run(["gen-data", "-o", str(tmp_path), "--classes", "1"]) == 1


def test_gen_data_outputs(workspace):
    data = workspace / "data"
    for name in ("corpus", "train", "test", "shifted_test"):
        assert (data / f"{name}.dfcx").exists()
    assert len(load(data / "train.dfcx")) == 9 and len(load(data / "test.dfcx")) == 3
    assert "classes = 3" in (data / "data.ini").read_text()


def test_train_outputs(workspace):
    out = workspace / "train"
    ckpt = load_checkpoint(out / "model.dfrt")
    assert ckpt.config.train.epochs == 2 and ckpt.config.train.dim == 8
    assert [r["epoch"] for r in rows(out / "loss_curve.csv")] == ["0", "1"]
    assert "epochs = 2" in (out / "config.ini").read_text()
    assert json.loads((out / "run.json").read_text())["corpus"].endswith("data")


def test_eval_and_config_echo(workspace, tmp_path):
    out = tmp_path / "eval"
    assert run(["eval", "-m", str(workspace / "train"), "-o", str(out), "--direction", "both",
                "-w", "0.25", "--eval-steps", "5"]) == 0
    got = rows(out / "report.csv")
    assert [r["direction"] for r in got] == ["t2v", "v2t"]
    assert float(got[0]["fusion_weight"]) == 0.25
    assert len(read_reports_jsonl(out / "report.jsonl")[0].ranks) == 3
    assert {r["label"] for r in rows(out / "histograms.csv")} == {"test"}
    again = tmp_path / "again"
    assert run(["eval", "-m", str(workspace / "train"), "-o", str(again), "--direction", "both",
                "--set", f"eval_seed={0}", "--set", "fusion_weight=0.25", "--set", "eval_steps=5"]) == 0
    assert (again / "report.jsonl").read_bytes() == (out / "report.jsonl").read_bytes()
    assert (again / "config.ini").read_text() == (out / "config.ini").read_text()


def test_training_fields_are_frozen_after_training(workspace, tmp_path):
    assert run(["eval", "-m", str(workspace / "train"), "-o", str(tmp_path), "--set", "epochs=9"]) == 1


def test_out_domain(workspace, tmp_path):
    assert run(["out-domain", "-m", str(workspace / "train"), "-o", str(tmp_path), "-w", "0"]) == 0
    labels = [(r["label"], r["direction"]) for r in rows(tmp_path / "report.csv")]
    assert labels == [("in-domain", "t2v"), ("in-domain", "v2t"), ("out-domain", "t2v"), ("out-domain", "v2t")]


def test_trace(workspace, tmp_path):
    assert run(["trace", "-m", str(workspace / "train"), "-o", str(tmp_path), "--query", "1",
                "--eval-steps", "4"]) == 0
    table = rows(tmp_path / "trace.csv")
    assert len(table) == 5 * 3
    assert sum(r["is_ground_truth"] == "1" for r in table) == 5
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 5
    assert run(["trace", "-m", str(workspace / "train"), "-o", str(tmp_path), "--query", "zzz"]) == 1


def test_env_output_root(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("DIFFRET_OUTPUT_ROOT", str(tmp_path))
    assert run(["eval", "-m", str(workspace / "train"), "-w", "0"]) == 0
    assert (tmp_path / "eval" / "report.csv").exists()


def test_ablate_steps_marks_infeasible_points(workspace, tmp_path):
    argv = ["ablate", "--axis", "steps", "-c", str(workspace / "data"), "-o", str(tmp_path),
            "--train-steps", "5", "--eval-grid", "2,8", "-w", "1"] + TRAIN[:-2]
    assert run(argv) == 0
    summary = rows(tmp_path / "steps" / "summary.csv")
    assert [(r["point"], r["eval"], r["status"]) for r in summary] == [
        ("train5", "eval2", "ok"), ("train5", "eval8", "infeasible")]
    assert (tmp_path / "steps" / "train5" / "model.dfrt").exists()


def test_ablate_strategy_in_parallel(workspace, tmp_path):
    argv = ["ablate", "--axis", "strategy", "--values", "gen,dis", "-c", str(workspace / "data"),
            "-o", str(tmp_path), "--workers", "2"] + TRAIN
    assert run(argv) == 0
    summary = rows(tmp_path / "strategy" / "summary.csv")
    assert [r["point"] for r in summary] == ["gen", "dis"]
    assert [float(r["fusion_weight"]) for r in summary] == [0.5, 0.0]
    assert len((tmp_path / "strategy" / "summary.jsonl").read_text().splitlines()) == 2


def test_ablate_sampling_shares_one_model(workspace, tmp_path):
    argv = ["ablate", "--axis", "sampling", "-c", str(workspace / "data"), "-o", str(tmp_path)] + TRAIN
    assert run(argv) == 0
    summary = rows(tmp_path / "sampling" / "summary.csv")
    assert [(r["point"], r["eval"]) for r in summary] == [("model", "ddpm"), ("model", "ddim")]
