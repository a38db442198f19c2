"""Latent traces over a terrain sequence, their separability, and tracking error."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import ObservationHistory
from .env import OBS_DIM, RoverEnv
from .kernels.layout import TERRAIN_NAMES

TRACE_HEADER = ["episode", "step", "terrain", "boundary"]


@dataclass
class LatentTrace:
    """One row per env step: latent, ground-truth terrain label and boundary flag."""

    z: np.ndarray  # (R, d) float32
    terrain: np.ndarray  # (R,) str
    boundary: np.ndarray  # (R,) bool
    step: np.ndarray  # (R,) int
    episode: np.ndarray  # (R,) int

    def __len__(self) -> int:
        return len(self.step)

    @property
    def latent_dim(self) -> int:
        return self.z.shape[1]


@dataclass
class TrackingRecord:
    v_xy: np.ndarray  # (T, 2)
    v_cmd: np.ndarray  # (T, 2)
    yaw_rate: np.ndarray  # (T,)
    yaw_cmd: np.ndarray  # (T,)


def boundary_flags(step: np.ndarray, episode: np.ndarray, labels: np.ndarray, window: int) -> np.ndarray:
    """True within ``window`` steps on either side of every label change of an episode.

    A change at step c (label differs from the row before) flags steps
    c - window .. c + window - 1.
    """
    step, episode, labels = np.asarray(step), np.asarray(episode), np.asarray(labels)
    flags = np.zeros(len(step), dtype=bool)
    for e in np.unique(episode):
        rows = np.flatnonzero(episode == e)
        rows = rows[np.argsort(step[rows], kind="stable")]
        s, lab = step[rows], labels[rows]
        for c in s[1:][lab[1:] != lab[:-1]]:
            flags[rows] |= (s >= c - window) & (s < c + window)
    return flags


def transitions(trace: LatentTrace) -> list[tuple[int, int, str, str]]:
    """(episode, step, from, to) for every label change, in episode then step order."""
    out = []
    for e in np.unique(trace.episode):
        rows = np.flatnonzero(trace.episode == e)
        rows = rows[np.argsort(trace.step[rows], kind="stable")]
        lab = trace.terrain[rows]
        for i in np.flatnonzero(lab[1:] != lab[:-1]) + 1:
            out.append((int(e), int(trace.step[rows[i]]), str(lab[i - 1]), str(lab[i])))
    return out


def record_latents(agent, cfg: RunConfig, seed: int | None = None) -> LatentTrace:
    """Deterministic traversal of ``cfg.analysis.terrain_sequence``, one episode per env.

    Every ``steps_per_terrain`` steps the next terrain is joined just ahead
    of the front wheel.  Each row is labelled with the terrain under the
    body at that step, and the boundary flag marks the ``boundary_window``
    steps on either side of every label change within an episode.  An
    episode that falls stops contributing rows at that step.
    """
    acfg = cfg.analysis
    if not agent.latent_dim:
        raise ValueError(f"variant {agent.kind!r} has no self-learned latent to record")
    if agent.dims.obs_dim != OBS_DIM or agent.dims.history_len != cfg.slr.history_len:
        raise ValueError(
            f"checkpoint dims (obs {agent.dims.obs_dim}, history {agent.dims.history_len}) do not match "
            f"config (obs {OBS_DIM}, history {cfg.slr.history_len})"
        )
    seq = list(acfg.terrain_sequence)
    total = acfg.steps_per_terrain * len(seq)
    ecfg = replace(
        cfg.env,
        obs_noise=0.0,
        curriculum=False,
        randomize_start_step=False,
        episode_length=total + 1,
        command_vx=(acfg.command_vx, acfg.command_vx),
        command_ang=(0.0, 0.0),
    )
    env = RoverEnv(
        ecfg,
        num_envs=acfg.episodes,
        seed=acfg.seed if seed is None else seed,
        reward_cfg=cfg.reward,
        max_segments=len(seq),
    )
    scales = ecfg.terrain_scales(acfg.terrain_level)
    env.reset()
    for n in range(env.num_envs):
        env.place_on_terrain(n, seq[0], scales[seq[0]])
    phys = ecfg.physics
    lead = phys.half_base + phys.wheel_radius
    hist = ObservationHistory(env.num_envs, cfg.slr.history_len, OBS_DIM)
    obs = env.observe().astype(np.float32)
    hist.push(obs)
    priv = env.privileged().astype(np.float32)
    alive = np.ones(env.num_envs, dtype=bool)
    zs, codes, steps, eps = [], [], [], []
    for t in range(total):
        seg = t // acfg.steps_per_terrain
        if t > 0 and t % acfg.steps_per_terrain == 0:
            for n in np.flatnonzero(alive):
                k = int(env.terrain.count[n])
                x0 = env.state[n, 0] + lead
                if k > 1:
                    # a rover that has not advanced still gets segments in increasing x
                    x0 = max(x0, env.terrain.start[n, k - 1] + 1e-3)
                env.terrain.append(n, seq[seg], scales[seq[seg]], x0)
        h = hist.flat()
        z = np.asarray(agent.encode(h), dtype=np.float32)
        live = np.flatnonzero(alive)
        zs.append(z[live])
        codes.append(env.terrain.current_mode(env.state[:, 0])[live])
        steps.append(np.full(len(live), t))
        eps.append(live)
        fw = agent.forward(obs, h, priv)
        out = env.step(fw.mean.astype(np.float64))
        alive &= ~out.done
        obs = out.obs.astype(np.float32)
        hist.push(obs)
        priv = out.privileged.astype(np.float32)
    step = np.concatenate(steps)
    episode = np.concatenate(eps)
    code = np.concatenate(codes)
    return LatentTrace(
        z=np.concatenate(zs).astype(np.float32),
        terrain=np.array([TERRAIN_NAMES[c] for c in code]),
        boundary=boundary_flags(step, episode, code, acfg.boundary_window),
        step=step,
        episode=episode,
    )


# -- separability ---------------------------------------------------------------------


def silhouette(points: np.ndarray, labels: np.ndarray, chunk: int = 1024) -> float:
    """Mean silhouette coefficient with Euclidean distance.

    Points in singleton clusters score 0, and so does any point whose
    intra- and nearest-cluster distances are both 0.
    """
    x = np.asarray(points, dtype=np.float64)
    _, codes = np.unique(np.asarray(labels), return_inverse=True)
    k = codes.max() + 1 if len(codes) else 0
    if k < 2:
        raise ValueError(f"silhouette needs at least 2 labels, got {k}")
    counts = np.bincount(codes, minlength=k).astype(np.float64)
    onehot = np.zeros((len(x), k))
    onehot[np.arange(len(x)), codes] = 1.0
    sq = np.einsum("ij,ij->i", x, x)
    s = np.empty(len(x))
    for lo in range(0, len(x), chunk):
        hi = min(lo + chunk, len(x))
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (x[lo:hi] @ x.T)
        d = np.sqrt(np.maximum(d2, 0.0))
        d[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        sums = d @ onehot  # (chunk, k) distance totals per cluster
        own = codes[lo:hi]
        rows = np.arange(hi - lo)
        n_own = counts[own]
        a = sums[rows, own] / np.maximum(n_own - 1, 1)
        mean_other = sums / counts
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            si = np.where(denom > 0, (b - a) / denom, 0.0)
        si[n_own <= 1] = 0.0
        s[lo:hi] = si
    return float(s.mean())


def separability_score(trace: LatentTrace) -> float:
    """Silhouette of the latents over terrain labels, boundary rows excluded."""
    keep = ~trace.boundary
    labels = trace.terrain[keep]
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise ValueError(f"separability needs at least 2 terrain labels, got {len(uniq)}")
    if counts.min() < 2:
        raise ValueError("separability needs at least 2 points per label")
    return silhouette(trace.z[keep], labels)


def shuffled_null(trace: LatentTrace, shuffles: int, rng: np.random.Generator) -> np.ndarray:
    """Silhouettes of the same (non-boundary) latents under random label permutations."""
    keep = ~trace.boundary
    z, labels = trace.z[keep], trace.terrain[keep]
    return np.array([silhouette(z, rng.permutation(labels)) for _ in range(shuffles)])


def tail_stats(trace: LatentTrace, window: int) -> list[dict]:
    """Per terrain pair: mean distance of boundary latents to the next and previous terrain centroids.

    Rows within ``window`` steps of a change from terrain a to terrain b
    are pooled over episodes; centroids use non-boundary rows only.
    """
    core = ~trace.boundary
    centroids = {m: trace.z[core & (trace.terrain == m)].mean(axis=0) for m in np.unique(trace.terrain[core])}
    pooled: dict[tuple[str, str], list[np.ndarray]] = {}
    for e, c, prev, nxt in transitions(trace):
        near = (trace.episode == e) & (trace.step >= c - window) & (trace.step < c + window)
        pooled.setdefault((prev, nxt), []).append(trace.z[near])
    out = []
    for (prev, nxt), parts in pooled.items():
        z = np.concatenate(parts)
        row = {"transition": f"{prev}->{nxt}", "count": len(parts), "rows": len(z)}
        for key, mode in (("to_next", nxt), ("to_prev", prev)):
            c = centroids.get(mode)
            row[key] = float(np.linalg.norm(z - c, axis=1).mean()) if c is not None and len(z) else float("nan")
        out.append(row)
    return out


# -- tracking -------------------------------------------------------------------------


def tracking_error(record: TrackingRecord) -> tuple[float, float]:
    """(LVTE, AVTE): mean squared linear and yaw-rate tracking errors."""
    v = np.asarray(record.v_xy, dtype=np.float64)
    if v.shape[0] == 0:
        raise ValueError("tracking_error: empty record")
    dv = np.asarray(record.v_cmd, dtype=np.float64) - v
    dw = np.asarray(record.yaw_cmd, dtype=np.float64) - np.asarray(record.yaw_rate, dtype=np.float64)
    lvte = float(np.mean(np.sum(dv * dv, axis=-1)))
    avte = float(np.mean(dw * dw))
    if not (np.isfinite(lvte) and np.isfinite(avte)):
        raise ValueError("tracking_error: non-finite record")
    return lvte, avte


# -- export ---------------------------------------------------------------------------


def export_trace(trace: LatentTrace, path: str | Path, latent_dim: int | None = None) -> Path:
    path = Path(path)
    d = trace.z.shape[1] if trace.z.ndim == 2 else (latent_dim or 0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER + [f"z{i}" for i in range(d)])
        for i in range(len(trace)):
            w.writerow(
                [int(trace.episode[i]), int(trace.step[i]), trace.terrain[i], int(bool(trace.boundary[i]))]
                + [format(float(v), ".9g") for v in trace.z[i]]
            )
    return path


def read_trace(path: str | Path) -> LatentTrace:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = len(header) - len(TRACE_HEADER)
    return LatentTrace(
        z=np.array([[float(v) for v in r[4:]] for r in body], dtype=np.float32).reshape(len(body), d),
        terrain=np.array([r[2] for r in body], dtype=str),
        boundary=np.array([r[3] == "1" for r in body], dtype=bool),
        step=np.array([int(r[1]) for r in body], dtype=np.int64),
        episode=np.array([int(r[0]) for r in body], dtype=np.int64),
    )


def analyze(agent, cfg: RunConfig) -> tuple[LatentTrace, dict]:
    """Trace, separability against the shuffled null, tail statistics and tracking error."""
    from .runner import evaluate

    acfg = cfg.analysis
    trace = record_latents(agent, cfg)
    ev = evaluate(agent, cfg)["aggregate"]
    summary = {"lvte": ev["lvte"], "avte": ev["avte"]}
    try:
        s = separability_score(trace)
    except ValueError as exc:
        # e.g. a rover that never left the first terrain: no score, but the trace is still exported
        summary.update(silhouette=None, null_mean=None, null_p95=None, separability_error=str(exc))
    else:
        null = shuffled_null(trace, acfg.null_shuffles, np.random.default_rng(acfg.seed))
        summary.update(silhouette=s, null_mean=float(null.mean()), null_p95=float(np.quantile(null, 0.95)))
    summary["tail_stats"] = tail_stats(trace, acfg.boundary_window)
    summary["transitions"] = len(transitions(trace))
    summary["rows"] = len(trace)
    return trace, summary
