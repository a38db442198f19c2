from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as ops
from .tape import Node, Tape

ACTIVATION_NAMES = ("elu", "tanh", "identity")


class ShapeError(ValueError):
    """Input or parameter dimensions do not chain."""


def _elu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.expm1(np.minimum(x, 0)))


_NUMPY_ACT = {"elu": _elu, "tanh": np.tanh, "identity": lambda x: x}


@dataclass
class ParamSet:
    """Weights of one multilayer perceptron.

    ``layers[k]`` is ``(weight[out, in], bias[out])``.  Hidden layers use
    ``activation``; the last layer is always linear.
    """

    name: str
    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "elu"
    layer_sizes: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATION_NAMES:
            raise ValueError(f"unknown activation {self.activation!r}")
        sizes = [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]
        for k, (w, b) in enumerate(self.layers):
            if w.shape[1] != sizes[k]:
                raise ShapeError(
                    f"{self.name}: layer {k} expects {w.shape[1]} inputs, "
                    f"previous layer gives {sizes[k]}"
                )
            if b.shape != (w.shape[0],):
                raise ShapeError(f"{self.name}: layer {k} bias shape {b.shape}")
        if self.layer_sizes and list(self.layer_sizes) != sizes:
            raise ShapeError(f"{self.name}: layer_sizes {self.layer_sizes} != {sizes}")
        self.layer_sizes = sizes

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        """Flat list in manifest order: W0, b0, W1, b1, ..."""
        return [a for layer in self.layers for a in layer]

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(self.layers):
            out[f"{self.name}.{k}.weight"] = w
            out[f"{self.name}.{k}.bias"] = b
        return out

    def copy(self) -> ParamSet:
        return ParamSet(
            self.name,
            [(w.copy(), b.copy()) for w, b in self.layers],
            self.activation,
            list(self.layer_sizes),
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    name: str,
    sizes: list[int],
    rng: np.random.Generator,
    activation: str = "elu",
    output_gain: float = 1.0,
    hidden_gain: float = np.sqrt(2.0),
    dtype=np.float32,
) -> ParamSet:
    """Orthogonal init, zero biases."""
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"bad layer sizes {sizes}")
    layers = []
    for k in range(len(sizes) - 1):
        gain = output_gain if k == len(sizes) - 2 else hidden_gain
        w = np.ascontiguousarray(_orthogonal(rng, sizes[k + 1], sizes[k], gain), dtype=dtype)
        layers.append((w, np.zeros(sizes[k + 1], dtype=dtype)))
    return ParamSet(name, layers, activation, list(sizes))


def mlp_forward(params: ParamSet, x, tape: Tape | None = None):
    """Evaluate the network on a vector or a (batch, in) array.

    With ``tape`` the input may be a :class:`Node` (or a plain array, which
    is lifted to a constant) and every intermediate is recorded; the
    result is a Node.  Without a tape this is a plain numpy pass.
    """
    value = x.value if isinstance(x, Node) else np.asarray(x)
    if value.shape[-1] != params.in_dim:
        raise ShapeError(
            f"{params.name}: layer 0 expects input dim {params.in_dim}, got {value.shape[-1]}"
        )
    last = len(params.layers) - 1
    if tape is None:
        h = value
        act = _NUMPY_ACT[params.activation]
        for k, (w, b) in enumerate(params.layers):
            h = h @ w.T + b
            if k < last:
                h = act(h)
        return h

    h = tape.lift(x)
    act = ops.ACTIVATIONS[params.activation]
    for k, (w, b) in enumerate(tape.watch(params)):
        h = ops.linear(h, w, b)
        if k < last:
            h = act(h)
    return h
