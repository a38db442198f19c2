"""Ablation wirings: which latent (if any) the actor and critic receive.

============================  ========================================
kind                          actor input
============================  ========================================
slr                           o_t, sg[z_t]
implicit                      o_t, l_t = psi(e_t)
explicit                      o_t, sg[e^_t],  e^_t = phi(o^H_t) by MSE
slr_with_explicit             o_t, sg[z_t], sg[e^_t] (one shared phi)
slr_with_implicit             o_t, sg[z_t], l_t
slr_without_latent            o_t
baseline                      o_t
============================  ========================================

The critic sees the same parts without the stop-gradient on z_t, so it
trains the encoder; the explicit estimate is trained by its MSE only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import NetworkConfig, SlrDims
from .tensor import Node, ParamSet, Tape, init_mlp, load_checkpoint, mlp_forward, ops, save_checkpoint
from .tensor.mlp import ShapeError

KINDS = (
    "slr",
    "implicit",
    "explicit",
    "slr_with_explicit",
    "slr_with_implicit",
    "slr_without_latent",
    "baseline",
)


@dataclass
class VariantConfig:
    kind: str = "slr"
    privileged_dim: int = 10
    teacher_hidden: tuple[int, ...] = (64, 32)
    teacher_latent: int = 8
    estimator_coef: float = 1.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"variant.kind: unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.privileged_dim < 1 or self.teacher_latent < 1:
            raise ValueError("variant: privileged_dim and teacher_latent must be >= 1")
        if self.estimator_coef < 0:
            raise ValueError("variant.estimator_coef must be >= 0")


@dataclass
class Forward:
    mean: object
    value: object
    z: object | None = None
    estimate: object | None = None


@dataclass
class AgentWiring:
    kind: str
    dims: SlrDims
    actor: ParamSet
    critic: ParamSet
    log_std: np.ndarray
    encoder: ParamSet | None = None
    transition: ParamSet | None = None
    teacher: ParamSet | None = None
    latent_dim: int = 0
    estimate_dim: int = 0
    actor_full_history: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def uses_triplet(self) -> bool:
        return self.transition is not None

    @property
    def uses_estimator(self) -> bool:
        return self.estimate_dim > 0

    def networks(self) -> list[ParamSet]:
        nets = [self.encoder, self.teacher, self.actor, self.critic, self.transition]
        return [n for n in nets if n is not None]

    def actor_input_dim(self) -> int:
        return self.actor.in_dim

    def forward(self, obs, history, privileged, tape: Tape | None = None, log_std=None) -> Forward:
        """Actor mean and critic value for a batch; optionally recorded on ``tape``."""
        sg = (lambda x: ops.stop_gradient(x)) if tape is not None else (lambda x: x)
        actor_parts = [history if self.actor_full_history else obs]
        critic_parts = [obs]
        z = estimate = None
        if self.encoder is not None:
            enc = mlp_forward(self.encoder, history, tape)
            z = _cols(enc, 0, self.latent_dim, tape) if self.latent_dim else None
            if self.estimate_dim:
                estimate = _cols(enc, self.latent_dim, self.latent_dim + self.estimate_dim, tape)
            if z is not None:
                actor_parts.append(sg(z))
                critic_parts.append(z)
            if estimate is not None:
                actor_parts.append(sg(estimate))
                critic_parts.append(sg(estimate))
        if self.teacher is not None:
            lat = mlp_forward(self.teacher, privileged, tape)
            actor_parts.append(lat)
            critic_parts.append(lat)
        mean = mlp_forward(self.actor, _cat(actor_parts, tape), tape)
        v = mlp_forward(self.critic, _cat(critic_parts, tape), tape)
        value = v[..., 0] if tape is None else ops.take(v, (slice(None), 0))
        return Forward(mean=mean, value=value, z=z, estimate=estimate)

    def encode(self, history, tape: Tape | None = None):
        """The self-learned latent part z of the encoder output."""
        if not self.latent_dim:
            raise ValueError(f"variant {self.kind!r} has no self-learned latent")
        return _cols(mlp_forward(self.encoder, history, tape), 0, self.latent_dim, tape)

    def predict_next_latent(self, z, action, tape: Tape | None = None):
        return mlp_forward(self.transition, _cat([z, action], tape), tape)

    # -- persistence ------------------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> tuple[Path, Path]:
        info = {
            "variant": self.kind,
            "obs_dim": self.dims.obs_dim,
            "action_dim": self.dims.action_dim,
            "history_len": self.dims.history_len,
            "slr_latent_dim": self.dims.latent_dim,
            "latent_dim": self.latent_dim,
            "estimate_dim": self.estimate_dim,
            "actor_full_history": self.actor_full_history,
        }
        info.update(self.meta)
        info.update(meta or {})
        return save_checkpoint(path, self.networks(), {"log_std": self.log_std}, info)

    @classmethod
    def load(cls, path: str | Path) -> AgentWiring:
        nets, extras, meta = load_checkpoint(path)
        dims = SlrDims(meta["obs_dim"], meta["action_dim"], meta["history_len"], meta["slr_latent_dim"])
        return cls(
            kind=meta["variant"],
            dims=dims,
            actor=nets["actor"],
            critic=nets["critic"],
            log_std=extras["log_std"].astype(np.float32),
            encoder=nets.get("encoder"),
            transition=nets.get("transition"),
            teacher=nets.get("teacher"),
            latent_dim=meta["latent_dim"],
            estimate_dim=meta["estimate_dim"],
            actor_full_history=meta["actor_full_history"],
        )


def _cat(parts, tape):
    if len(parts) == 1:
        return parts[0]
    if tape is None:
        return np.concatenate([np.asarray(p) for p in parts], axis=-1)
    return ops.concat([tape.lift(p) for p in parts], axis=-1)


def _cols(x, lo: int, hi: int, tape):
    if (x.value if isinstance(x, Node) else x).shape[-1] == hi - lo:
        return x
    if tape is None:
        return x[..., lo:hi]
    return ops.take(x, (slice(None), slice(lo, hi)))


def build_variant(
    cfg: VariantConfig, dims: SlrDims, net_cfg: NetworkConfig, rng: np.random.Generator
) -> AgentWiring:
    cfg.validate()
    kind = cfg.kind
    act = net_cfg.activation
    uses_z = kind in ("slr", "slr_with_explicit", "slr_with_implicit")
    est = cfg.privileged_dim if kind in ("explicit", "slr_with_explicit") else 0
    teacher_out = cfg.teacher_latent if kind in ("implicit", "slr_with_implicit") else 0
    latent = dims.latent_dim if uses_z else 0

    encoder = transition = teacher = None
    if latent or est:
        encoder = init_mlp("encoder", [dims.history_dim, *net_cfg.encoder_hidden, latent + est], rng, act)
    if teacher_out:
        teacher = init_mlp("teacher", [cfg.privileged_dim, *cfg.teacher_hidden, teacher_out], rng, act)
    base = dims.history_dim if net_cfg.actor_full_history else dims.obs_dim
    actor_in = base + latent + est + teacher_out
    critic_in = dims.obs_dim + latent + est + teacher_out
    actor = init_mlp("actor", [actor_in, *net_cfg.actor_hidden, dims.action_dim], rng, act, output_gain=0.01)
    critic = init_mlp("critic", [critic_in, *net_cfg.critic_hidden, 1], rng, act)
    if uses_z:
        transition = init_mlp(
            "transition", [latent + dims.action_dim, *net_cfg.transition_hidden, latent], rng, act
        )
    return AgentWiring(
        kind=kind,
        dims=dims,
        actor=actor,
        critic=critic,
        log_std=np.full(dims.action_dim, net_cfg.init_log_std, dtype=np.float32),
        encoder=encoder,
        transition=transition,
        teacher=teacher,
        latent_dim=latent,
        estimate_dim=est,
        actor_full_history=net_cfg.actor_full_history,
    )


def explicit_estimator_loss(estimate, target, tape: Tape | None = None):
    """Mean squared error between the estimate and the privileged vector."""
    shape_e = (estimate.value if isinstance(estimate, Node) else np.asarray(estimate)).shape
    shape_t = np.shape(target)
    if shape_e != shape_t:
        raise ShapeError(f"explicit_estimator_loss: estimate {shape_e} vs target {shape_t}")
    if tape is None:
        diff = np.asarray(estimate, np.float64) - np.asarray(target, np.float64)
        return float(np.mean(diff * diff))
    return ops.mean(ops.square(estimate - target))
