"""Array-level reverse-mode differentiation on an explicit tape.

A :class:`Tape` records every primitive applied to :class:`Node` objects in
execution order.  Because a node can only be built from nodes that already
exist, the record is topologically sorted by construction and the reverse
pass is a single backwards sweep.

Example::

    tape = Tape()
    w = tape.parameter(np.ones(3), "w")
    loss = ops.sum(ops.square(w * 2.0))
    grads = tape.backward(loss)   # {"w": array([8., 8., 8.])}
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class TapeError(RuntimeError):
    pass


class Node:
    """A value living on a tape."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None  # make ndarray <op> Node defer to Node

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a node is not a supported primitive")
        return mul(self, 1.0 / np.asarray(other))

    def __getitem__(self, key):
        return take(self, key)


class Tape:
    """Ordered record of primitive operations plus their backward rules."""

    def __init__(self) -> None:
        self._values: list[np.ndarray] = []
        # whether a node depends on some parameter through differentiable ops
        self._live: list[bool] = []
        # (output index, input indices, backward rule); None rule = no flow
        self._ops: list[tuple[int, tuple[int, ...], Backward | None]] = []
        self._params: dict[str, int] = {}
        self._watched: dict[int, list[tuple[Node, Node]]] = {}

    def __len__(self) -> int:
        return len(self._values)

    def _new(self, value: np.ndarray, live: bool = False) -> Node:
        node = Node(self, len(self._values), value)
        self._values.append(value)
        self._live.append(live)
        return node

    def requires_grad(self, node: Node) -> bool:
        return self._live[node.index]

    def constant(self, value) -> Node:
        return self._new(np.asarray(value))

    def parameter(self, value: np.ndarray, name: str) -> Node:
        if name in self._params:
            raise TapeError(f"parameter {name!r} already on tape")
        node = self._new(value, live=True)
        self._params[name] = node.index
        return node

    def watch(self, params) -> list[tuple[Node, Node]]:
        """Register every layer of a ParamSet once and return (W, b) nodes.

        Repeated calls for the same ParamSet return the same nodes, so a
        network evaluated several times accumulates into one gradient.
        """
        key = id(params)
        if key not in self._watched:
            self._watched[key] = [
                (
                    self.parameter(w, f"{params.name}.{k}.weight"),
                    self.parameter(b, f"{params.name}.{k}.bias"),
                )
                for k, (w, b) in enumerate(params.layers)
            ]
        return self._watched[key]

    def record(self, value, inputs: Sequence[Node], backward: Backward | None) -> Node:
        for node in inputs:
            if node.tape is not self:
                raise TapeError("node belongs to a different tape")
        live = backward is not None and any(self._live[n.index] for n in inputs)
        out = self._new(np.asarray(value), live)
        if live:
            self._ops.append((out.index, tuple(n.index for n in inputs), backward))
        return out

    def lift(self, x) -> Node:
        return x if isinstance(x, Node) else self.constant(x)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every registered parameter.

        Parameters the loss does not reach (including those reached only
        through :func:`stop_gradient`) get an exact zero array.
        """
        if loss.tape is not self:
            raise TapeError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[loss.index] = np.ones_like(loss.value, dtype=np.float64)
        for out, inputs, rule in reversed(self._ops):
            if out > loss.index:
                continue
            g = grads[out]
            if g is None or rule is None:
                continue
            for i, gi in zip(inputs, rule(g)):
                assert i < out, "tape is not topologically ordered"
                if gi is None or not self._live[i]:
                    continue
                grads[i] = gi if grads[i] is None else grads[i] + gi
        result = {}
        for name, idx in self._params.items():
            value = self._values[idx]
            g = grads[idx]
            if g is None:
                result[name] = np.zeros_like(value)
            else:
                result[name] = np.asarray(g, dtype=value.dtype).reshape(value.shape)
        return result


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TapeError("at least one operand must be a tape node")


def _pair(a, b) -> tuple[Node, Node]:
    # constants adopt the node's float dtype so float32 graphs stay float32
    tape = _tape_of(a, b)
    if not isinstance(a, Node):
        a = tape.constant(np.asarray(a, dtype=b.value.dtype))
    elif not isinstance(b, Node):
        b = tape.constant(np.asarray(b, dtype=a.value.dtype))
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitives ---------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _pair(a, b)
    tape = a.tape
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Node:
    a, b = _pair(a, b)
    tape = a.tape
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a, b) -> Node:
    a, b = _pair(a, b)
    tape = a.tape
    va, vb = a.value, b.value
    return tape.record(
        va * vb,
        (a, b),
        lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)),
    )


def matmul(a, b) -> Node:
    """Plain ``a @ b`` for 2-d operands."""
    a, b = _pair(a, b)
    tape = a.tape
    va, vb = a.value, b.value
    return tape.record(va @ vb, (a, b), lambda g: (g @ vb.T, va.T @ g))


def linear(x: Node, weight: Node, bias: Node) -> Node:
    """``x @ weight.T + bias`` for a batch (B, in) or a single vector (in,)."""
    vx, vw = x.value, weight.value
    out = vx @ vw.T + bias.value
    need_x = x.tape.requires_grad(x)

    def rule(g):
        gx = g @ vw if need_x else None
        if vx.ndim == 1:
            return gx, np.outer(g, vx), g
        return gx, g.T @ vx, g.sum(axis=0)

    return x.tape.record(out, (x, weight, bias), rule)


def elu(x: Node) -> Node:
    # expm1(v) >= v everywhere, so the max picks v for v > 0 and expm1 below
    v = x.value
    y = np.maximum(v, np.expm1(np.minimum(v, 0)))

    def rule(g):
        # dy/dv is 1 above zero and exp(v) = y + 1 below
        d = np.minimum(y, 0)
        d += 1
        d *= g
        return (d,)

    return x.tape.record(y, (x,), rule)


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return x.tape.record(y, (x,), lambda g: (g * (1 - y * y),))


def identity(x: Node) -> Node:
    return x


def exp(x: Node) -> Node:
    y = np.exp(x.value)
    return x.tape.record(y, (x,), lambda g: (g * y,))


def log(x: Node) -> Node:
    v = x.value
    return x.tape.record(np.log(v), (x,), lambda g: (g / v,))


def square(x: Node) -> Node:
    v = x.value
    return x.tape.record(v * v, (x,), lambda g: (2 * g * v,))


def sum(x: Node, axis: int | None = None) -> Node:  # noqa: A001
    shape = x.shape
    out = np.sum(x.value, axis=axis, dtype=np.float64)

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.value.dtype),)

    return x.tape.record(out, (x,), rule)


def mean(x: Node, axis: int | None = None) -> Node:
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def maximum(a, b) -> Node:
    """Elementwise max; on ties the gradient goes to ``b``."""
    a, b = _pair(a, b)
    tape = a.tape
    va, vb = a.value, b.value
    pick_a = va > vb
    return tape.record(
        np.where(pick_a, va, vb),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(pick_a, g, 0.0), va.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), vb.shape),
        ),
    )


def minimum(a, b) -> Node:
    """Elementwise min; on ties the gradient goes to ``b``."""
    a, b = _pair(a, b)
    tape = a.tape
    va, vb = a.value, b.value
    pick_a = va < vb
    return tape.record(
        np.where(pick_a, va, vb),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(pick_a, g, 0.0), va.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), vb.shape),
        ),
    )


def clip(x: Node, lo: float, hi: float) -> Node:
    v = x.value
    inside = (v >= lo) & (v <= hi)
    return x.tape.record(np.clip(v, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),))


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return tape.record(
        np.concatenate([x.value for x in xs], axis=axis),
        xs,
        lambda g: np.split(g, splits, axis=axis),
    )


def take(x: Node, key) -> Node:
    v = x.value

    def rule(g):
        full = np.zeros(v.shape, dtype=np.result_type(g, v))
        full[key] = g
        return (full,)

    return x.tape.record(v[key], (x,), rule)


def stop_gradient(x: Node) -> Node:
    """Same value, but nothing flows back into ``x``."""
    return x.tape.record(x.value, (x,), None)


ACTIVATIONS: dict[str, Callable[[Node], Node]] = {
    "elu": elu,
    "tanh": tanh,
    "identity": identity,
}
