"""PPO with GAE, adaptive learning rate and the joint latent losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import gaussian_entropy, gaussian_kl, gaussian_log_prob, sample_negative_slots, triplet_loss
from .tensor import AdamState, Tape, adam_update, clip_grad_norm, ops
from .variants import AgentWiring, explicit_estimator_loss


class NumericAbort(FloatingPointError):
    """A loss or gradient went non-finite during an update."""


@dataclass
class PpoConfig:
    clip_range: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99
    lam: float = 0.95
    desired_kl: float = 0.01
    learning_rate: float = 1e-3
    adam_eps: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 5
    minibatches: int = 4
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    schedule: str = "adaptive"
    lr_min: float = 1e-5
    lr_max: float = 1e-2

    def validate(self) -> None:
        if not 0 < self.clip_range < 1:
            raise ValueError("ppo.clip_range must be in (0, 1)")
        for name in ("gamma", "lam"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"ppo.{name} must be in (0, 1]")
        for name in ("desired_kl", "learning_rate", "adam_eps", "lr_min", "lr_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ppo.{name} must be positive")
        for name in ("entropy_coef", "value_coef", "max_grad_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"ppo.{name} must be >= 0")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("ppo.epochs and ppo.minibatches must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("ppo adam betas must be in [0, 1)")
        if self.schedule not in ("adaptive", "fixed"):
            raise ValueError("ppo.schedule must be 'adaptive' or 'fixed'")
        if self.lr_min > self.lr_max:
            raise ValueError("ppo.lr_min must be <= ppo.lr_max")


class RolloutBuffer:
    """One iteration of on-policy data, ``horizon`` steps x ``num_envs``.

    Slot ``horizon`` of the observation arrays holds the frame after the
    last action, which supplies the bootstrap value and the final triplet
    anchor.  :meth:`clear` wipes everything; an update refuses a buffer
    that is not exactly full.
    """

    def __init__(self, num_envs: int, horizon: int, obs_dim: int, history_dim: int, priv_dim: int, action_dim: int):
        self.num_envs, self.horizon = num_envs, horizon
        t, n = horizon, num_envs
        self.obs = np.zeros((t + 1, n, obs_dim), np.float32)
        self.history = np.zeros((t + 1, n, history_dim), np.float32)
        self.privileged = np.zeros((t + 1, n, priv_dim), np.float32)
        self.actions = np.zeros((t, n, action_dim), np.float32)
        self.applied_actions = np.zeros((t, n, action_dim), np.float32)
        self.means = np.zeros((t, n, action_dim), np.float32)
        self.rewards = np.zeros((t, n))
        self.dones = np.zeros((t, n))
        self.log_probs = np.zeros((t, n))
        self.values = np.zeros((t, n))
        self.last_values = np.zeros(n)
        self.log_std = np.zeros(action_dim, np.float32)
        self.step = 0
        self.has_final = False
        self.fills = 0
        self.clears = 0

    def __len__(self) -> int:
        return self.step * self.num_envs

    @property
    def full(self) -> bool:
        return self.step == self.horizon and self.has_final

    def add(self, obs, history, privileged, actions, applied, means, rewards, dones, log_probs, values) -> None:
        if self.step >= self.horizon:
            raise RuntimeError("rollout buffer overflow; it must be cleared by an update first")
        t = self.step
        self.obs[t], self.history[t], self.privileged[t] = obs, history, privileged
        self.actions[t], self.applied_actions[t], self.means[t] = actions, applied, means
        self.rewards[t], self.dones[t] = rewards, dones
        self.log_probs[t], self.values[t] = log_probs, values
        self.step += 1

    def finish(self, obs, history, privileged, last_values, log_std) -> None:
        if self.step != self.horizon:
            raise RuntimeError(f"finish() after {self.step} of {self.horizon} steps")
        t = self.horizon
        self.obs[t], self.history[t], self.privileged[t] = obs, history, privileged
        self.last_values[:] = last_values
        self.log_std[:] = log_std
        self.has_final = True
        self.fills += 1

    def clear(self) -> None:
        for arr in (self.obs, self.history, self.privileged, self.actions, self.applied_actions, self.means):
            arr.fill(np.nan)
        for arr in (self.rewards, self.dones, self.log_probs, self.values, self.last_values):
            arr.fill(np.nan)
        self.step = 0
        self.has_final = False
        self.clears += 1


def compute_gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Advantages and returns by the backward GAE recursion.

    Accepts (T,) sequences with a scalar bootstrap or (T, N) batches with an
    (N,) bootstrap.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not r.shape == v.shape == d.shape:
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    single = r.ndim == 1
    if single:
        r, v, d = r[:, None], v[:, None], d[:, None]
    last = np.atleast_1d(np.asarray(bootstrap, dtype=np.float64))
    if last.shape != (r.shape[1],):
        raise ValueError(f"bootstrap shape {last.shape} does not match {r.shape[1]} sequences")
    adv = np.empty_like(r)
    kernels.gae(
        np.ascontiguousarray(r), np.ascontiguousarray(v), np.ascontiguousarray(d), np.ascontiguousarray(last), gamma, lam, adv
    )
    ret = adv + v
    if single:
        return adv[:, 0], ret[:, 0]
    return adv, ret


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_surrogate(ratio, advantages, clip_range: float, tape: Tape | None = None):
    """-mean(min(rho A, clip(rho, 1 - eps, 1 + eps) A))."""
    if tape is None:
        ratio = np.asarray(ratio, np.float64)
        a = np.asarray(advantages, np.float64)
        return -float(np.mean(np.minimum(ratio * a, np.clip(ratio, 1 - clip_range, 1 + clip_range) * a)))
    a = np.asarray(advantages, dtype=ratio.value.dtype)
    unclipped = ratio * a
    clipped = ops.clip(ratio, 1 - clip_range, 1 + clip_range) * a
    return -ops.mean(ops.minimum(unclipped, clipped))


def adapt_learning_rate(kl: float, lr: float, desired_kl: float, lr_min: float = 1e-5, lr_max: float = 1e-2) -> float:
    if kl < 0:
        raise ValueError("KL estimate must be non-negative")
    if kl > 2.0 * desired_kl:
        lr = lr / 1.5
    elif 0.0 < kl < desired_kl / 2.0:
        lr = lr * 1.5
    return min(max(lr, lr_min), lr_max)


@dataclass
class Optimizers:
    """One Adam state per network plus one for the policy log std."""

    states: dict[str, AdamState]

    @classmethod
    def for_agent(cls, agent: AgentWiring, cfg: PpoConfig) -> Optimizers:
        states = {}
        for net in agent.networks():
            st = AdamState.zeros_like(net.arrays(), cfg.adam_eps)
            st.beta1, st.beta2 = cfg.adam_beta1, cfg.adam_beta2
            states[net.name] = st
        st = AdamState.zeros_like([agent.log_std], cfg.adam_eps)
        st.beta1, st.beta2 = cfg.adam_beta1, cfg.adam_beta2
        states["log_std"] = st
        return cls(states)

    def step(self, agent: AgentWiring, grads: dict[str, np.ndarray], lr: float) -> None:
        for net in agent.networks():
            named = net.named_arrays()
            names = list(named)
            adam_update(list(named.values()), [grads[n] for n in names], self.states[net.name], lr, names)
        adam_update([agent.log_std], [grads["log_std"]], self.states["log_std"], lr, ["log_std"])


@dataclass
class UpdateMetrics:
    surrogate: float = 0.0
    value_loss: float = 0.0
    triplet_loss: float = 0.0
    estimator_loss: float = 0.0
    entropy: float = 0.0
    kl: float = 0.0
    lr: float = 0.0
    grad_norm: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class LossWeights:
    triplet_coef: float = 1.0
    margin: float = 1.0
    estimator_coef: float = 1.0
    use_triplet: bool = True


def minibatch_loss(
    agent: AgentWiring,
    batch: dict[str, np.ndarray],
    cfg: PpoConfig,
    weights: LossWeights,
    tape: Tape,
    parts: tuple[str, ...] = ("ppo", "triplet", "estimator"),
):
    """Record the combined loss on ``tape``; returns (loss node, diagnostics)."""
    log_std = tape.parameter(agent.log_std, "log_std")
    for net in agent.networks():
        tape.watch(net)  # networks the loss does not reach still get (zero) gradients
    fw = agent.forward(batch["obs"], batch["history"], batch["privileged"], tape)
    logp = gaussian_log_prob(fw.mean, log_std, batch["actions"], tape)
    ratio = ops.exp(logp - batch["old_log_probs"].astype(logp.value.dtype))
    surrogate = ppo_surrogate(ratio, batch["advantages"], cfg.clip_range, tape)
    value_loss = ops.mean(ops.square(fw.value - batch["returns"]))
    entropy = gaussian_entropy(log_std, tape)
    total = None
    if "ppo" in parts:
        total = surrogate + value_loss * cfg.value_coef - entropy * cfg.entropy_coef
    info = {
        "surrogate": float(surrogate.value),
        "value_loss": float(value_loss.value),
        "entropy": float(entropy.value),
        "mean": fw.mean.value,
        "triplet_loss": 0.0,
        "estimator_loss": 0.0,
    }

    if agent.uses_triplet and weights.use_triplet:
        mask = batch["anchor_mask"]
        denom = max(float(mask.sum()), 1.0)
        if weights.triplet_coef != 0.0 and "triplet" in parts:
            b = len(mask)
            pair = agent.encode(np.concatenate([batch["next_history"], batch["neg_history"]]), tape)
            anchor = ops.take(pair, slice(0, b))
            negative = ops.take(pair, slice(b, 2 * b))
            positive = agent.predict_next_latent(fw.z, batch["applied_actions"], tape)
            hinge = triplet_loss(anchor, positive, negative, weights.margin, tape)
            trip = ops.sum(hinge * mask.astype(hinge.value.dtype)) * (1.0 / denom)
            info["triplet_loss"] = float(trip.value)
            term = trip * weights.triplet_coef
            total = term if total is None else total + term
        else:
            anchor = agent.encode(batch["next_history"])
            negative = agent.encode(batch["neg_history"])
            positive = agent.predict_next_latent(fw.z.value, batch["applied_actions"])
            info["triplet_loss"] = float(np.sum(triplet_loss(anchor, positive, negative, weights.margin) * mask) / denom)

    if agent.uses_estimator:
        target = batch["privileged"]
        if "estimator" in parts:
            mse = explicit_estimator_loss(fw.estimate, target, tape)
            info["estimator_loss"] = float(mse.value)
            term = mse * weights.estimator_coef
            total = term if total is None else total + term
        else:
            info["estimator_loss"] = explicit_estimator_loss(fw.estimate.value, target)
    if total is None:
        total = surrogate * 0.0
    return total, info


def update(
    buffer: RolloutBuffer,
    agent: AgentWiring,
    optim: Optimizers,
    cfg: PpoConfig,
    lr: float,
    rng: np.random.Generator,
    neg_rng: np.random.Generator,
    weights: LossWeights | None = None,
) -> UpdateMetrics:
    """Epochs of shuffled minibatch steps on L_ppo + alpha L_trip (+ MSE), then empty the buffer."""
    weights = weights or LossWeights()
    if not buffer.full:
        raise RuntimeError("update() needs a full rollout buffer")
    t, n = buffer.horizon, buffer.num_envs
    adv, ret = compute_gae(buffer.rewards, buffer.values, buffer.dones, buffer.last_values, cfg.gamma, cfg.lam)
    adv = normalize_advantages(adv)

    def flat(a):
        return a.reshape(t * n, *a.shape[2:])

    data = {
        "obs": flat(buffer.obs[:t]),
        "history": flat(buffer.history[:t]),
        "privileged": flat(buffer.privileged[:t]),
        "next_history": flat(buffer.history[1:]),
        "actions": flat(buffer.actions),
        "applied_actions": flat(buffer.applied_actions),
        "old_means": flat(buffer.means),
        "old_log_probs": flat(buffer.log_probs),
        "advantages": flat(adv).astype(np.float32),
        "returns": flat(ret).astype(np.float32),
        "anchor_mask": flat(1.0 - buffer.dones),
    }
    step_idx = np.repeat(np.arange(t), n)
    env_idx = np.tile(np.arange(n), t)
    total = t * n
    mb = total // cfg.minibatches
    if mb < 1:
        raise ValueError(f"{cfg.minibatches} minibatches for only {total} samples")
    old_log_std = buffer.log_std.copy()

    sums = dict(surrogate=0.0, value_loss=0.0, triplet_loss=0.0, estimator_loss=0.0, entropy=0.0, kl=0.0, grad_norm=0.0)
    count = 0
    for _ in range(cfg.epochs):
        neg_slot, neg_env = sample_negative_slots(t + 1, n, step_idx + 1, env_idx, neg_rng)
        neg_hist = buffer.history[neg_slot, neg_env]
        perm = rng.permutation(total)
        for k in range(cfg.minibatches):
            idx = perm[k * mb : (k + 1) * mb]
            batch = {key: val[idx] for key, val in data.items()}
            batch["neg_history"] = neg_hist[idx]
            tape = Tape()
            loss, info = minibatch_loss(agent, batch, cfg, weights, tape)
            if not np.isfinite(loss.value).all():
                raise NumericAbort(
                    f"non-finite loss {float(loss.value)} (surrogate {info['surrogate']}, value {info['value_loss']}, "
                    f"triplet {info['triplet_loss']})"
                )
            grads = tape.backward(loss)
            norm = clip_grad_norm(grads, cfg.max_grad_norm) if cfg.max_grad_norm > 0 else float("nan")
            kl = float(np.mean(gaussian_kl(batch["old_means"], old_log_std, info["mean"], agent.log_std)))
            if cfg.schedule == "adaptive" and math.isfinite(kl):
                lr = adapt_learning_rate(max(kl, 0.0), lr, cfg.desired_kl, cfg.lr_min, cfg.lr_max)
            try:
                optim.step(agent, grads, lr)
            except FloatingPointError as exc:
                raise NumericAbort(str(exc)) from exc
            for key in ("surrogate", "value_loss", "triplet_loss", "estimator_loss", "entropy"):
                sums[key] += info[key]
            sums["kl"] += kl
            sums["grad_norm"] += norm
            count += 1
    buffer.clear()
    out = UpdateMetrics(**{k: v / count for k, v in sums.items()})
    out.lr = lr
    return out
