from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from slr.cli import EXIT_CONFIG, EXIT_NUMERIC, main
from slr.runner import read_summary

TINY = [
    "--set", "env.num_envs=4",
    "--set", "env.horizon=6",
    "--set", "networks.encoder_hidden=[16]",
    "--set", "networks.actor_hidden=[16]",
    "--set", "networks.critic_hidden=[16]",
    "--set", "networks.transition_hidden=[16]",
    "--set", "ppo.epochs=1",
    "--set", "ppo.minibatches=2",
    "--set", "train.iterations=2",
    "--set", "train.checkpoint_every=1",
    "--set", "eval.num_envs=2",
    "--set", "eval.steps=5",
    "--set", "eval.command_points=3",
]


def _train(tmp_path, *extra):
    assert main(["train", *TINY, "--out", str(tmp_path), *extra]) == 0


def test_smoke_train_layout(tmp_path):
    _train(tmp_path)
    run = tmp_path / "slr-0"
    assert (run / "config.toml").exists()
    rows = list(csv.DictReader((run / "metrics.csv").open()))
    assert len(rows) == 2
    assert list(rows[0])[:9] == ["iter", "mean_reward", "mean_ep_len", "surrogate", "value_loss",
                                 "triplet_loss", "kl", "lr", "terrain_level"]
    assert (run / "checkpoints" / "iter_000001.json").exists()
    assert (run / "checkpoints" / "final.json").exists()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 0 and "wall_clock_s" in manifest


def test_variant_flag_removes_the_encoder(tmp_path):
    _train(tmp_path, "--variant", "slr_without_latent", "--seed", "3")
    manifest = json.loads((tmp_path / "slr_without_latent-3" / "checkpoints" / "final.json").read_text())
    names = [n["name"] for n in manifest["networks"]]
    assert "encoder" not in names and "transition" not in names


def test_same_seed_gives_identical_metrics(tmp_path):
    _train(tmp_path / "a")
    _train(tmp_path / "b")
    a = (tmp_path / "a" / "slr-0" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "slr-0" / "metrics.csv").read_bytes()
    assert a == b


def test_eval_writes_per_command_rows(tmp_path, capsys):
    _train(tmp_path)
    ckpt = tmp_path / "slr-0" / "checkpoints" / "final"
    assert main(["eval", "--checkpoint", str(ckpt)]) == 0
    result = json.loads((tmp_path / "slr-0" / "eval.json").read_text())
    assert [r["command_vx"] for r in result["per_command"]] == [-1.0, 0.0, 1.0]
    assert set(result["aggregate"]) >= {"lvte", "avte", "mean_reward"}
    assert np.isclose(result["aggregate"]["lvte"], np.mean([r["lvte"] for r in result["per_command"]]))


def test_eval_rejects_mismatched_checkpoint(tmp_path, capsys):
    _train(tmp_path)
    ckpt = tmp_path / "slr-0" / "checkpoints" / "final"
    assert main(["eval", "--checkpoint", str(ckpt), "--set", "slr.history_len=4"]) == EXIT_CONFIG
    assert "do not match" in capsys.readouterr().err


def test_analyze_writes_trace_and_summary(tmp_path):
    _train(tmp_path)
    ckpt = tmp_path / "slr-0" / "checkpoints" / "final"
    out = tmp_path / "analysis"
    code = main(["analyze", "--checkpoint", str(ckpt), "--out", str(out), "--set", "analysis.steps_per_terrain=20",
                 "--set", "analysis.episodes=2", "--set", "analysis.null_shuffles=2", "--set", "analysis.boundary_window=2"])
    assert code == 0
    summary = json.loads((out / "analysis.json").read_text())
    assert set(summary) >= {"lvte", "avte", "silhouette", "tail_stats"}
    header = (out / "latent_trace.csv").read_text().splitlines()[0]
    assert header.startswith("episode,step,terrain,boundary,z0,") and header.endswith("z19")


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--set", "ppo.clip_range=7", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "ppo.clip_range" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert main(["ablate", "--variants", "slr,bogus", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_numeric_abort_exits_3_and_keeps_last_good_checkpoint(tmp_path, monkeypatch, capsys):
    from slr import runner

    real = runner.update
    calls = {"n": 0}

    def poisoned(buffer, agent, *args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            agent.actor.layers[0][0][0, 0] = np.nan
        return real(buffer, agent, *args, **kw)

    monkeypatch.setattr(runner, "update", poisoned)
    code = main(["train", *TINY, "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    manifest = json.loads((tmp_path / "slr-0" / "manifest.json").read_text())
    assert manifest["status"] == "numeric_abort" and manifest["last_good_checkpoint"] == "iter_000001"
    assert (tmp_path / "slr-0" / "checkpoints" / "iter_000001.bin").exists()


def test_ablate_summary_and_failure_handling(tmp_path):
    code = main(["ablate", *TINY, "--variants", "slr,slr_without_latent", "--seeds", "0,1", "--jobs", "2",
                 "--out", str(tmp_path)])
    assert code == 0
    for kind in ("slr", "slr_without_latent"):
        for seed in (0, 1):
            assert (tmp_path / f"{kind}-{seed}" / "metrics.csv").exists()
    summary = read_summary(tmp_path / "ablation_summary.csv")
    from slr.runner import final_window_reward

    for kind in ("slr", "slr_without_latent"):
        finals = [final_window_reward(tmp_path / f"{kind}-{s}" / "metrics.csv", 50) for s in (0, 1)]
        assert summary[kind]["mean"] == pytest.approx(np.mean(finals), abs=1e-12)
        assert summary[kind]["std"] == pytest.approx(np.std(finals), abs=1e-12)
        assert summary[kind]["failed"] == []


def test_ablate_records_a_failed_run(tmp_path, monkeypatch):
    # one (variant, seed) run is swapped for a process that exits nonzero
    from slr import runner
    from slr.config import load_config

    cfg = load_config(None, [a for a in TINY if a != "--set"])
    real_launch = runner.subprocess.Popen

    def flaky(cmd, *a, **kw):
        if "slr_without_latent-1" in " ".join(map(str, cmd)):
            cmd = [sys.executable, "-c", "import sys; sys.exit(3)"]
        return real_launch(cmd, *a, **kw)

    monkeypatch.setattr(runner.subprocess, "Popen", flaky)
    summary_path = runner.ablate(cfg, ["slr", "slr_without_latent"], [0, 1], tmp_path)
    summary = read_summary(summary_path)
    assert summary["slr_without_latent"]["failed"] == [1]
    assert set(summary["slr_without_latent"]["per_seed"]) == {0}
    assert set(summary["slr"]["per_seed"]) == {0, 1}


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "slr.cli", "train", "--set", "env.num_envs=0"], capture_output=True, text=True)
    assert out.returncode == EXIT_CONFIG and "config error" in out.stderr
