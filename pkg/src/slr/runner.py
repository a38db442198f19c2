"""Training loop, evaluation and multi-seed ablation."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import subprocess
import sys
import time
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .analysis import TrackingRecord, tracking_error
from .config import RunConfig, config_from_dict
from .core import ObservationHistory, SlrDims, gaussian_log_prob
from .env import ACTION_DIM, OBS_DIM, PRIVILEGED_DIM, RoverEnv
from .ppo import LossWeights, NumericAbort, Optimizers, RolloutBuffer, update
from .rewards import TERMS
from .variants import AgentWiring, build_variant

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["iter", "mean_reward", "mean_ep_len", "surrogate", "value_loss", "triplet_loss", "kl", "lr", "terrain_level"]
REWARD_COLUMNS = [f"rew_{t}" for t in TERMS]


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "action", "shuffle", "negative")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def env_seed(seed: int) -> int:
    # env i of run seed s uses default_rng(s * 1_000_003 + i)
    return seed * 1_000_003


def make_agent(cfg: RunConfig, rng: np.random.Generator | None = None) -> AgentWiring:
    dims = SlrDims(OBS_DIM, ACTION_DIM, cfg.slr.history_len, cfg.slr.latent_dim)
    rng = rng if rng is not None else _streams(cfg.seed)["init"]
    return build_variant(replace(cfg.variant, privileged_dim=PRIVILEGED_DIM), dims, cfg.networks, rng)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class Rollout:
    """Live state carried between iterations."""

    env: RoverEnv
    history: ObservationHistory
    obs: np.ndarray
    privileged: np.ndarray


def start_rollout(cfg: RunConfig, num_envs: int | None = None, seed: int | None = None) -> Rollout:
    env = RoverEnv(cfg.env, num_envs=num_envs, seed=env_seed(cfg.seed) if seed is None else seed, reward_cfg=cfg.reward)
    obs = env.reset().astype(np.float32)
    hist = ObservationHistory(env.num_envs, cfg.slr.history_len, OBS_DIM)
    hist.push(obs)
    return Rollout(env, hist, obs, env.privileged().astype(np.float32))


def collect(
    ro: Rollout, agent: AgentWiring, buffer: RolloutBuffer, gamma: float, rng: np.random.Generator
) -> dict:
    """Fill ``buffer`` with one horizon of on-policy experience."""
    env = ro.env
    lim = env.cfg.action_limit
    std = np.exp(agent.log_std.astype(np.float64))
    rewards, lengths, returns = [], [], []
    term_sums = {t: 0.0 for t in TERMS}
    for _ in range(buffer.horizon):
        h = ro.history.flat()
        fw = agent.forward(ro.obs, h, ro.privileged)
        mean = fw.mean.astype(np.float64)
        actions = mean + std * rng.standard_normal(mean.shape)
        logp = gaussian_log_prob(mean, agent.log_std, actions)
        out = env.step(actions)
        r = out.reward.copy()
        rewards.append(float(r.mean()))
        for t in TERMS:
            term_sums[t] += float(np.mean(env.reward_cfg.weights.get(t, 0.0) * out.reward_terms[t]))
        # bootstrap through time limits, which are not true terminals
        r = r + gamma * fw.value * out.time_out
        buffer.add(ro.obs, h, ro.privileged, actions, np.clip(actions, -lim, lim), fw.mean, r, out.done, logp, fw.value)
        ids = np.flatnonzero(out.done)
        ro.obs = out.obs.astype(np.float32)
        ro.privileged = out.privileged.astype(np.float32)
        ro.history.reset(ids)
        ro.history.push(ro.obs)
        lengths += out.finished_lengths
        returns += out.finished_returns
    last = agent.forward(ro.obs, ro.history.flat(), ro.privileged).value
    buffer.finish(ro.obs, ro.history.flat(), ro.privileged, last, agent.log_std)
    return {
        "mean_reward": float(np.mean(rewards)),
        "lengths": lengths,
        "returns": returns,
        "terms": {t: v / buffer.horizon for t, v in term_sums.items()},
    }


class MetricsWriter:
    def __init__(self, path: Path):
        self.path = path
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRIC_COLUMNS + REWARD_COLUMNS)

    def write(self, row: dict) -> None:
        self.writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS + REWARD_COLUMNS])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def run_dir(cfg: RunConfig, out: str | Path | None = None) -> Path:
    return Path(out or cfg.output_dir) / f"{cfg.run_name}-{cfg.seed}"


def _manifest(cfg: RunConfig, path: Path, **fields) -> None:
    data = {
        "name": cfg.run_name,
        "seed": cfg.seed,
        "variant": cfg.variant.kind,
        "config_hash": cfg.hash(),
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if path.exists():
        old = json.loads(path.read_text())
        old.update(data)
        data = old
    data.update(fields)
    path.write_text(json.dumps(data, indent=2, sort_keys=True))


def train(cfg: RunConfig, out: str | Path | None = None, progress: bool = False) -> Path:
    """Run the full loop; returns the run directory.

    metrics.csv is a pure function of (config, seed); timing lives only in
    manifest.json.
    """
    cfg.validate()
    root = run_dir(cfg, out)
    (root / "checkpoints").mkdir(parents=True, exist_ok=True)
    (root / "traces").mkdir(exist_ok=True)
    cfg.save(root / "config.toml")
    manifest = root / "manifest.json"
    t0 = time.time()
    _manifest(cfg, manifest, status="running", started=time.strftime("%Y-%m-%dT%H:%M:%S"), iterations_done=0)

    rngs = _streams(cfg.seed)
    agent = make_agent(cfg, rngs["init"])
    optim = Optimizers.for_agent(agent, cfg.ppo)
    ro = start_rollout(cfg)
    n, horizon = ro.env.num_envs, cfg.env.horizon
    buffer = RolloutBuffer(n, horizon, OBS_DIM, agent.dims.history_dim, PRIVILEGED_DIM, ACTION_DIM)
    weights = LossWeights(
        triplet_coef=cfg.slr.triplet_coef, margin=cfg.slr.margin, estimator_coef=cfg.variant.estimator_coef
    )
    lr = cfg.ppo.learning_rate
    ep_lengths: deque[int] = deque(maxlen=100)
    writer = MetricsWriter(root / "metrics.csv")
    ckpt = root / "checkpoints"
    last_good = None
    try:
        for it in range(1, cfg.train.iterations + 1):
            stats = collect(ro, agent, buffer, cfg.ppo.gamma, rngs["action"])
            ep_lengths.extend(stats["lengths"])
            m = update(buffer, agent, optim, cfg.ppo, lr, rngs["shuffle"], rngs["negative"], weights)
            lr = m.lr
            row = {
                "iter": it,
                "mean_reward": stats["mean_reward"],
                "mean_ep_len": float(np.mean(ep_lengths)) if ep_lengths else 0.0,
                "surrogate": m.surrogate,
                "value_loss": m.value_loss,
                "triplet_loss": m.triplet_loss,
                "kl": m.kl,
                "lr": m.lr,
                "terrain_level": float(ro.env.terrain_level.mean()),
            }
            row.update({f"rew_{t}": v for t, v in stats["terms"].items()})
            writer.write(row)
            if not all(p.is_finite() for p in agent.networks()) or not np.isfinite(agent.log_std).all():
                raise NumericAbort(f"non-finite parameters after iteration {it}")
            if it % cfg.train.checkpoint_every == 0 or it == cfg.train.iterations:
                name = "final" if it == cfg.train.iterations else f"iter_{it:06d}"
                agent.save(ckpt / name, {"iteration": it, "config_hash": cfg.hash()})
                last_good = name
            if progress and (it % 10 == 0 or it == 1):
                print(
                    f"[{cfg.run_name}-{cfg.seed}] iter {it}/{cfg.train.iterations} reward {row['mean_reward']:.4f} "
                    f"len {row['mean_ep_len']:.1f} kl {m.kl:.4f} lr {m.lr:.2e} trip {m.triplet_loss:.3f} "
                    f"({time.time() - t0:.0f}s)",
                    file=sys.stderr,
                    flush=True,
                )
            _manifest(cfg, manifest, iterations_done=it, wall_clock_s=round(time.time() - t0, 3))
    except NumericAbort as exc:
        _manifest(cfg, manifest, status="numeric_abort", error=str(exc), last_good_checkpoint=last_good)
        raise
    finally:
        writer.close()
    _manifest(
        cfg,
        manifest,
        status="ok",
        finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
        wall_clock_s=round(time.time() - t0, 3),
        last_good_checkpoint=last_good,
    )
    return root


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {c: np.zeros(0) for c in METRIC_COLUMNS}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def final_window_reward(metrics_path: str | Path, window: int) -> float:
    r = read_metrics(metrics_path)["mean_reward"]
    return float(np.mean(r[-window:]))


# -- evaluation -------------------------------------------------------------------------


def command_grid(cfg: RunConfig) -> np.ndarray:
    lo, hi = cfg.eval.command_range
    return np.linspace(lo, hi, cfg.eval.command_points)


def evaluate(agent: AgentWiring, cfg: RunConfig) -> dict:
    """Deterministic (mean-action, noise-free) episodes for each command on the grid."""
    ecfg = replace(
        cfg.env,
        obs_noise=0.0,
        curriculum=False,
        randomize_start_step=False,
        episode_length=max(cfg.env.episode_length, cfg.eval.steps),
    )
    rows = []
    for c in command_grid(cfg):
        env = RoverEnv(ecfg, num_envs=cfg.eval.num_envs, seed=cfg.eval.seed, reward_cfg=cfg.reward)
        env.terrain_level[:] = cfg.eval.terrain_level
        env.commands[:] = 0.0
        obs = env.reset()
        env.commands[:, 0] = c
        env.commands[:, 1] = 0.0
        obs = env.observe()
        hist = ObservationHistory(env.num_envs, cfg.slr.history_len, OBS_DIM)
        hist.push(obs.astype(np.float32))
        priv = env.privileged()
        v_fwd, pitch_rate, rew, falls = [], [], [], 0
        for _ in range(cfg.eval.steps):
            fw = agent.forward(obs.astype(np.float32), hist.flat(), priv.astype(np.float32))
            out = env.step(fw.mean.astype(np.float64))
            # velocities of the step just taken, measured before any auto-reset
            v_fwd.append(out.measured["v_fwd"])
            pitch_rate.append(out.measured["pitch_rate"])
            rew.append(out.reward)
            falls += int((out.done & ~out.time_out).sum())
            env.commands[:, 0] = c
            env.commands[:, 1] = 0.0
            ids = np.flatnonzero(out.done)
            obs = env.observe() if len(ids) else out.obs
            hist.reset(ids)
            hist.push(obs.astype(np.float32))
            priv = env.privileged()
        v = np.concatenate(v_fwd)
        # planar rover: lateral velocity is identically 0 and pitch rate stands in for yaw rate
        record = TrackingRecord(
            v_xy=np.stack([v, np.zeros_like(v)], axis=1),
            v_cmd=np.tile([c, 0.0], (len(v), 1)),
            yaw_rate=np.concatenate(pitch_rate),
            yaw_cmd=np.zeros(len(v)),
        )
        lvte, avte = tracking_error(record)
        rows.append(
            {
                "command_vx": float(c),
                "lvte": lvte,
                "avte": avte,
                "mean_reward": float(np.mean(rew)),
                "falls": falls,
            }
        )
    agg = {
        "lvte": float(np.mean([r["lvte"] for r in rows])),
        "avte": float(np.mean([r["avte"] for r in rows])),
        "mean_reward": float(np.mean([r["mean_reward"] for r in rows])),
        "falls": int(sum(r["falls"] for r in rows)),
    }
    return {"per_command": rows, "aggregate": agg, "variant": agent.kind}


# -- ablation -----------------------------------------------------------------------------


def ablate(
    cfg: RunConfig,
    variants: list[str],
    seeds: list[int],
    out: str | Path | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> Path:
    """Train every (variant, seed) pair in its own process; summarize the final-window reward."""
    root = Path(out or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    runs = []
    for kind in variants:
        for seed in seeds:
            rc = config_from_dict(cfg.to_dict())
            rc.variant.kind = kind
            rc.seed = seed
            rc.name = kind
            rc.validate()
            runs.append(rc)

    def launch(rc: RunConfig) -> subprocess.Popen:
        d = run_dir(rc, root)
        d.mkdir(parents=True, exist_ok=True)
        cfg_path = d / "requested.toml"
        rc.save(cfg_path)
        cmd = [sys.executable, "-m", "slr.cli", "train", "--config", str(cfg_path), "--out", str(root)]
        if progress:
            cmd.append("--progress")
        return subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=None if progress else subprocess.DEVNULL)

    status: dict[tuple[str, int], int] = {}
    pending = list(runs)
    active: list[tuple[RunConfig, subprocess.Popen]] = []
    while pending or active:
        while pending and len(active) < max(jobs, 1):
            rc = pending.pop(0)
            active.append((rc, launch(rc)))
        time.sleep(0.2)
        still = []
        for rc, proc in active:
            code = proc.poll()
            if code is None:
                still.append((rc, proc))
            else:
                status[(rc.variant.kind, rc.seed)] = code
        active = still

    summary = root / "ablation_summary.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seeds_ok", "seeds_failed", "mean_final_reward", "std_final_reward", "per_seed"])
    for kind in variants:
        finals, failed = [], []
        for seed in seeds:
            metrics = root / f"{kind}-{seed}" / "metrics.csv"
            ok = status.get((kind, seed)) == 0 and metrics.exists()
            if ok:
                finals.append((seed, final_window_reward(metrics, cfg.train.final_window)))
            else:
                failed.append(seed)
        vals = np.array([v for _, v in finals])
        w.writerow(
            [
                kind,
                len(finals),
                ";".join(str(s) for s in failed),
                _fmt(vals.mean()) if len(vals) else "nan",
                _fmt(vals.std()) if len(vals) else "nan",
                ";".join(f"{s}:{_fmt(v)}" for s, v in finals),
            ]
        )
    summary.write_text(buf.getvalue())
    return summary


def read_summary(path: str | Path) -> dict[str, dict]:
    with open(path) as fh:
        out = {}
        for row in csv.DictReader(fh):
            per = {}
            for item in filter(None, row["per_seed"].split(";")):
                s, v = item.split(":")
                per[int(s)] = float(v)
            out[row["variant"]] = {
                "mean": float(row["mean_final_reward"]),
                "std": float(row["std_final_reward"]),
                "per_seed": per,
                "failed": [int(s) for s in filter(None, row["seeds_failed"].split(";"))],
            }
    return out
