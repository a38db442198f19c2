from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import ParamSet


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: list[np.ndarray], eps: float = 1e-8) -> AdamState:
        return cls(
            [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], eps=eps
        )


def adam_update(
    arrays: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    names: list[str] | None = None,
) -> None:
    """In-place bias-corrected Adam step over parallel lists of arrays."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    for i, g in enumerate(grads):
        if g.shape != arrays[i].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {arrays[i].shape}")
        if not np.isfinite(g).all():
            name = names[i] if names else f"#{i}"
            raise NonFiniteGradient(f"non-finite gradient for parameter {name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def adam_step(
    params: ParamSet, grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> tuple[ParamSet, AdamState]:
    """Adam step for one network; ``grads`` is keyed by tape parameter name.

    Updates ``params`` in place and also returns it with the state.
    """
    named = params.named_arrays()
    names = list(named)
    missing = [n for n in names if n not in grads]
    if missing:
        raise KeyError(f"no gradient for {missing}")
    adam_update(list(named.values()), [grads[n] for n in names], state, lr, names)
    return params, state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients together so their global L2 norm is ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if np.isfinite(total) and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for key in grads:
            grads[key] = grads[key] * np.asarray(scale, dtype=grads[key].dtype)
    return total
