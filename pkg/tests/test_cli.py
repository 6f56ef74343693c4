import json

import pytest

from evpo.cli import FAULT_ENV, OUT_ENV, RunManifest, main
from evpo.config import parse_config
from evpo.metrics import MetricsFormatError, read_metrics

FAST = ["--set", "iterations=6", "--set", "eval_interval=3", "--set", "val_tasks=2",
        "--set", "val_rollouts=2", "--set", "n_tasks=2", "--set", "group_size=4"]


def train(tmp_path, *extra):
    return main(["train", "--config", "frozenlake_evpo", "--out", str(tmp_path), *FAST, *extra])


def test_train_writes_run_directory(tmp_path, capsys):
    assert train(tmp_path, "--seed", "1") == 0
    run = tmp_path / "frozenlake_evpo-evpo-s1"
    assert {p.name for p in run.iterdir()} == {"manifest.json", "config.conf", "metrics.jsonl",
                                               "summary.json", "checkpoints"}
    manifest = RunManifest.read(run / "manifest.json")
    assert manifest.seed == 1 and manifest.run_id == run.name
    assert parse_config(manifest.config_snapshot).train.iterations == 6
    stream = read_metrics(run / "metrics.jsonl")
    assert len(stream.records) == 6 and stream.header["fields"][0] == "step"
    assert (run / "checkpoints" / "final.ckpt").is_file()
    assert json.loads((run / "summary.json").read_text())["steps"] == 6


def test_same_seed_is_byte_identical(tmp_path):
    assert train(tmp_path, "--seed", "1") == 0
    assert train(tmp_path, "--seed", "1") == 0
    a = (tmp_path / "frozenlake_evpo-evpo-s1" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "frozenlake_evpo-evpo-s1-2" / "metrics.jsonl").read_bytes()
    assert a == b


def test_override_recorded_in_manifest(tmp_path):
    assert train(tmp_path, "--set", "ev_threshold=0.1") == 0
    manifest = RunManifest.read(tmp_path / "frozenlake_evpo-evpo-s0" / "manifest.json")
    assert parse_config(manifest.config_snapshot).train.ev_threshold == 0.1


def test_snapshot_reproduces_run(tmp_path):
    assert train(tmp_path, "--seed", "2") == 0
    run = tmp_path / "frozenlake_evpo-evpo-s2"
    assert main(["train", "--config", str(run / "config.conf"), "--out", str(tmp_path)]) == 0
    assert (run / "metrics.jsonl").read_bytes() == \
           (tmp_path / "frozenlake_evpo-evpo-s2-2" / "metrics.jsonl").read_bytes()


def test_unknown_key(tmp_path, capsys):
    assert train(tmp_path, "--set", "bogus=1") != 0
    assert "bogus" in capsys.readouterr().err


def test_parse_error_has_position(tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("train.seed = 1\ntrain.iterations = many\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) != 0
    assert "line 2, column 20" in capsys.readouterr().err


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "root"))
    assert main(["train", "--config", "frozenlake_grpo", *FAST]) == 0
    assert (tmp_path / "root" / "frozenlake_grpo-grpo-s0" / "metrics.jsonl").is_file()


def test_sweep(tmp_path, capsys):
    assert main(["sweep", "--config", "frozenlake_evpo", "--out", str(tmp_path), *FAST,
                 "--thresholds", "{-0.1,0,0.1}", "--seeds", "2"]) == 0
    sweep = tmp_path / "frozenlake_evpo-sweep"
    assert len(list(sweep.glob("*/metrics.jsonl"))) == 6
    assert "mean_best_val" in (sweep / "sweep_summary.txt").read_text()
    assert main(["report", str(sweep)]) == 0
    assert "Threshold sweep" in capsys.readouterr().out


def test_sweep_single_zero_matches_train(tmp_path):
    assert main(["sweep", "--config", "frozenlake_evpo", "--out", str(tmp_path), *FAST,
                 "--thresholds", "0", "--seed", "0"]) == 0
    assert train(tmp_path) == 0
    a = json.loads((tmp_path / "frozenlake_evpo-sweep" / "tau+0-s0" / "summary.json").read_text())
    b = json.loads((tmp_path / "frozenlake_evpo-evpo-s0" / "summary.json").read_text())
    assert a == b


def test_sweep_empty_thresholds(tmp_path):
    assert main(["sweep", "--config", "frozenlake_evpo", "--out", str(tmp_path),
                 "--thresholds", "{}"]) != 0


def test_intervene_and_noise(tmp_path):
    assert main(["intervene", "--config", "frozenlake_ppo", "--kind", "warmup", "--k", "3",
                 "--out", str(tmp_path), *FAST]) == 0
    run = tmp_path / "frozenlake_ppo-warmup3-s0"
    assert len(read_metrics(run).records) == 9
    ckpt = run / "checkpoints" / "final.ckpt"
    assert main(["noise-inject", "--config", "frozenlake_ppo", "--checkpoint", str(ckpt),
                 "--sigma", "0,10", "--out", str(tmp_path), *FAST]) == 0
    assert (tmp_path / "frozenlake_ppo-noise10-s0" / "metrics.jsonl").is_file()
    assert main(["noise-inject", "--config", "frozenlake_ppo", "--checkpoint",
                 str(tmp_path / "missing"), "--sigma", "1", "--out", str(tmp_path)]) != 0


def test_report_three_methods(tmp_path, capsys):
    for name in ("frozenlake_ppo", "frozenlake_grpo", "frozenlake_evpo"):
        assert main(["train", "--config", name, "--out", str(tmp_path), *FAST]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "report.md")]) == 0
    out = capsys.readouterr().out
    table = out.split("## Method comparison (seed means)")[1].strip().splitlines()
    assert len(table) == 2 + 3 and "best_val" in table[0]
    assert (tmp_path / "report.md").read_text() == out


def test_report_errors(tmp_path, capsys):
    assert main(["report"]) != 0
    assert train(tmp_path) == 0
    path = tmp_path / "frozenlake_evpo-evpo-s0" / "metrics.jsonl"
    lines = path.read_text().splitlines()
    lines[3] = lines[3][:20]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MetricsFormatError) as exc:
        read_metrics(path)
    assert exc.value.line == 4
    assert main(["report", str(path)]) != 0
    assert ":4:" in capsys.readouterr().err


def test_verify_gain_lists_minimizers(tmp_path, capsys):
    assert main(["verify", "gain", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "p_a=1 p_b=3 r=1: minimizing gain 0.25" in out
    recs = [json.loads(line) for line in (tmp_path / "verify.jsonl").read_text().splitlines()]
    assert all("minimizing_gain" in r for r in recs)


def test_verify_fault_injection(monkeypatch, capsys):
    monkeypatch.setenv(FAULT_ENV, "1")
    assert main(["verify", "theorem1"]) == 1
    assert "failing" in capsys.readouterr().out
