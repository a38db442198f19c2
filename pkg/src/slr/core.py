"""Self-learned latent: history encoder, transition model and triplet loss.

Gradient-flow contract: the actor sees the latent only through a
stop-gradient, while the critic, the transition model and the triplet
loss all backpropagate into the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Node, ParamSet, Tape, init_mlp, mlp_forward, ops
from .tensor.mlp import ShapeError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class NetworkConfig:
    encoder_hidden: tuple[int, ...] = (256, 128)
    actor_hidden: tuple[int, ...] = (512, 256, 128)
    critic_hidden: tuple[int, ...] = (512, 256, 128)
    transition_hidden: tuple[int, ...] = (256, 128)
    activation: str = "elu"
    init_log_std: float = 0.0
    actor_full_history: bool = False

    def validate(self) -> None:
        for name in ("encoder_hidden", "actor_hidden", "critic_hidden", "transition_hidden"):
            sizes = getattr(self, name)
            if not sizes or any(int(s) < 1 for s in sizes):
                raise ValueError(f"networks.{name} must be a non-empty list of positive sizes")
        if self.activation not in ("elu", "tanh", "identity"):
            raise ValueError(f"networks.activation: unknown activation {self.activation!r}")
        if not math.isfinite(self.init_log_std):
            raise ValueError("networks.init_log_std must be finite")


@dataclass
class SlrDims:
    obs_dim: int
    action_dim: int
    history_len: int = 10
    latent_dim: int = 20

    @property
    def history_dim(self) -> int:
        return self.history_len * self.obs_dim


class ObservationHistory:
    """Per-env ring of the last H frames, flattened oldest-first.

    A fresh episode starts from zeros, so until H frames have been pushed
    the leading slots are exactly zero.
    """

    def __init__(self, num_envs: int, history_len: int, obs_dim: int, dtype=np.float32):
        self.frames = np.zeros((num_envs, history_len, obs_dim), dtype=dtype)

    @property
    def history_len(self) -> int:
        return self.frames.shape[1]

    def reset(self, env_ids=None) -> None:
        if env_ids is None:
            self.frames[:] = 0
        else:
            self.frames[np.asarray(env_ids)] = 0

    def push(self, obs: np.ndarray) -> None:
        self.frames[:, :-1] = self.frames[:, 1:]
        self.frames[:, -1] = obs

    def flat(self) -> np.ndarray:
        n, h, d = self.frames.shape
        return self.frames.reshape(n, h * d).copy()


@dataclass
class SlrNetworks:
    encoder: ParamSet
    actor: ParamSet
    critic: ParamSet
    transition: ParamSet
    log_std: np.ndarray


def build_slr_networks(dims: SlrDims, cfg: NetworkConfig, rng: np.random.Generator) -> SlrNetworks:
    act = cfg.activation
    actor_in = (dims.history_dim if cfg.actor_full_history else dims.obs_dim) + dims.latent_dim
    return SlrNetworks(
        encoder=init_mlp("encoder", [dims.history_dim, *cfg.encoder_hidden, dims.latent_dim], rng, act),
        actor=init_mlp("actor", [actor_in, *cfg.actor_hidden, dims.action_dim], rng, act, output_gain=0.01),
        critic=init_mlp("critic", [dims.obs_dim + dims.latent_dim, *cfg.critic_hidden, 1], rng, act),
        transition=init_mlp(
            "transition", [dims.latent_dim + dims.action_dim, *cfg.transition_hidden, dims.latent_dim], rng, act
        ),
        log_std=np.full(dims.action_dim, cfg.init_log_std, dtype=np.float32),
    )


def _cat(parts, tape: Tape | None):
    if tape is None:
        return np.concatenate([np.asarray(p) for p in parts], axis=-1)
    return ops.concat([tape.lift(p) for p in parts], axis=-1)


def encode(history, nets: SlrNetworks, tape: Tape | None = None):
    """z_t = phi(o^H_t)."""
    return mlp_forward(nets.encoder, history, tape)


def policy_forward(obs, z, nets: SlrNetworks, tape: Tape | None = None, log_std=None):
    """Mean action from pi(o_t, sg[z_t]) and the state-independent log std.

    ``log_std`` may be a tape node (so it can be learned); by default the
    stored array is returned.
    """
    if tape is not None and isinstance(z, Node):
        z = ops.stop_gradient(z)
    mean = mlp_forward(nets.actor, _cat([obs, z], tape), tape)
    return mean, nets.log_std if log_std is None else log_std


def value_forward(obs, z, nets: SlrNetworks, tape: Tape | None = None):
    """v_t = V(o_t, z_t); the latent is NOT stopped, so the critic trains phi."""
    v = mlp_forward(nets.critic, _cat([obs, z], tape), tape)
    return v[..., 0] if tape is None else ops.take(v, (slice(None), 0))


def predict_next_latent(z, action, nets: SlrNetworks, tape: Tape | None = None):
    """z~_{t+1} = mu(z_t, a_t), differentiable into phi through z_t."""
    return mlp_forward(nets.transition, _cat([z, action], tape), tape)


def triplet_loss(anchor, positive, negative, margin: float = 1.0, tape: Tape | None = None):
    """Per-row hinge max(|a - p|^2 - |a - n|^2 + m, 0).

    Works on plain arrays (returns the per-row values) or on tape nodes
    (returns a node).  At the kink the subgradient is 0.
    """
    shapes = {np.shape(x.value if isinstance(x, Node) else x) for x in (anchor, positive, negative)}
    if len(shapes) != 1:
        raise ShapeError(f"triplet_loss: latent shapes differ {sorted(shapes)}")
    if tape is None:
        a, p, n = (np.asarray(x, dtype=np.float64) for x in (anchor, positive, negative))
        pos = np.sum((a - p) ** 2, axis=-1)
        neg = np.sum((a - n) ** 2, axis=-1)
        return np.maximum(pos - neg + margin, 0.0)
    pos = ops.sum(ops.square(anchor - positive), axis=-1)
    neg = ops.sum(ops.square(anchor - negative), axis=-1)
    return ops.maximum(pos - neg + margin, 0.0)


def sample_negative_slots(
    num_slots: int, num_envs: int, anchor_slot: np.ndarray, anchor_env: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (slot, env) pairs over the whole buffer, never the anchor's own.

    The anchor for transition t is slot t+1 of the same env, so excluding it
    enforces n != 1.  Other envs are eligible.
    """
    total = num_slots * num_envs
    if total < 2:
        raise ValueError(f"buffer too small for negative sampling ({total} slot)")
    anchor_slot = np.asarray(anchor_slot)
    anchor_env = np.asarray(anchor_env)
    flat_anchor = anchor_slot * num_envs + anchor_env
    draw = rng.integers(0, total - 1, size=flat_anchor.shape)
    draw = draw + (draw >= flat_anchor)
    return draw // num_envs, draw % num_envs


def sample_negative(histories: np.ndarray, env: int, anchor_slot: int, rng: np.random.Generator):
    """One negative history from a (slots, envs, dim) buffer; returns (history, slot, env)."""
    slots, envs = histories.shape[:2]
    s, e = sample_negative_slots(slots, envs, np.array(anchor_slot), np.array(env), rng)
    return histories[s, e], int(s), int(e)


# -- diagonal Gaussian policy --------------------------------------------------------


def gaussian_log_prob(mean, log_std, actions, tape: Tape | None = None):
    """Sum over action dims of log N(a; mean, exp(log_std)^2)."""
    d = np.shape(actions)[-1]
    if tape is None:
        z = (np.asarray(actions, np.float64) - mean) / np.exp(np.asarray(log_std, np.float64))
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * d * LOG_2PI
    inv_std = ops.exp(-tape.lift(log_std))
    z = (tape.lift(actions) - mean) * inv_std
    return ops.sum(ops.square(z), axis=-1) * -0.5 - ops.sum(tape.lift(log_std)) - 0.5 * d * LOG_2PI


def gaussian_entropy(log_std, tape: Tape | None = None):
    d = np.shape(log_std.value if isinstance(log_std, Node) else log_std)[-1]
    const = 0.5 * d * (1.0 + LOG_2PI)
    if tape is None:
        return float(np.sum(log_std)) + const
    return ops.sum(tape.lift(log_std)) + const


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new) -> np.ndarray:
    """Analytic KL(old || new) per row for diagonal Gaussians."""
    mean_old, mean_new = np.asarray(mean_old, np.float64), np.asarray(mean_new, np.float64)
    lo, ln = np.asarray(log_std_old, np.float64), np.asarray(log_std_new, np.float64)
    var_old, var_new = np.exp(2 * lo), np.exp(2 * ln)
    return np.sum(ln - lo + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5, axis=-1)
