"""Minimal dense 2-D arrays with reverse-mode automatic differentiation.

Arrays are float64 and immutable after construction. A ``Tape`` records the
forward pass; ``backward`` walks it once in reverse and frees nothing until
the tape itself is dropped, so gradients for identical tapes are bit-identical.
Broadcasting is restricted to row vectors ``(1, C)`` and column vectors
``(B, 1)`` against ``(B, C)``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError


class Tape:
    """Single-pass operation record. One tape per forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Array2] = []

    def leaf(self, value) -> "Array2":
        return Array2(value, tape=self)


class Array2:
    __slots__ = ("value", "tape", "parents", "_backward", "grad")

    def __init__(self, value, tape: Tape | None = None,
                 parents: Sequence["Array2"] = (),
                 backward: Callable | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Array2 requires 2-D data, got shape {arr.shape}")
        self.value = arr
        self.tape = tape
        self.parents = tuple(parents)
        self._backward = backward
        self.grad: np.ndarray | None = None
        if tape is not None:
            tape.nodes.append(self)

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise UsageError(f"item() on non-scalar array of shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Array2(shape={self.shape}, traced={self.tape is not None})"

    # Operator sugar; plain numbers/ndarrays are lifted to constants.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Array2:
    if isinstance(x, Array2):
        return x
    return Array2(x)


def _join_tape(*arrays: Array2) -> Tape | None:
    tape = None
    for a in arrays:
        if a.tape is not None:
            if tape is not None and a.tape is not tape:
                raise UsageError("operands recorded on different tapes")
            tape = a.tape
    return tape


def _node(value, backward, *parents: Array2) -> Array2:
    tape = _join_tape(*parents)
    if tape is None:
        return Array2(value)
    return Array2(value, tape=tape, parents=parents, backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise DimensionError(f"cannot reduce gradient {grad.shape} to {shape}")
    return out


def _check_broadcast(a: Array2, b: Array2, op: str) -> None:
    ra, ca = a.shape
    rb, cb = b.shape
    if (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1):
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Array2, b: Array2) -> Array2:
    _check_broadcast(a, b, "add")
    out = a.value + b.value

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, bw, a, b)


def mul(a: Array2, b: Array2) -> Array2:
    _check_broadcast(a, b, "mul")
    out = a.value * b.value

    def bw(g):
        return (_unbroadcast(g * b.value, a.shape),
                _unbroadcast(g * a.value, b.shape))

    return _node(out, bw, a, b)


def div(a: Array2, b: Array2) -> Array2:
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def bw(g):
        return (_unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * a.value / (b.value ** 2), b.shape))

    return _node(out, bw, a, b)


def neg(a: Array2) -> Array2:
    return _node(-a.value, lambda g: (-g,), a)


def matmul(a: Array2, b: Array2) -> Array2:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return _node(out, bw, a, b)


def relu(a: Array2) -> Array2:
    mask = a.value > 0.0

    def bw(g):
        return (g * mask,)

    return _node(a.value * mask, bw, a)


def exp(a: Array2) -> Array2:
    out = np.exp(a.value)

    def bw(g):
        return (g * out,)

    return _node(out, bw, a)


def log(a: Array2) -> Array2:
    if np.any(a.value <= 0.0):
        raise NumericError("log of non-positive input")
    out = np.log(a.value)

    def bw(g):
        return (g / a.value,)

    return _node(out, bw, a)


def tanh(a: Array2) -> Array2:
    out = np.tanh(a.value)

    def bw(g):
        return (g * (1.0 - out ** 2),)

    return _node(out, bw, a)


def sigmoid(a: Array2) -> Array2:
    out = 1.0 / (1.0 + np.exp(-np.clip(a.value, -500.0, 500.0)))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _node(out, bw, a)


def absolute(a: Array2) -> Array2:
    sign = np.sign(a.value)

    def bw(g):
        return (g * sign,)

    return _node(np.abs(a.value), bw, a)


def clip(a: Array2, lo: float, hi: float) -> Array2:
    """Clamp with straight-zero gradient outside [lo, hi]."""
    inside = (a.value > lo) & (a.value < hi)

    def bw(g):
        return (g * inside,)

    return _node(np.clip(a.value, lo, hi), bw, a)


def pow_const(a: Array2, p: float) -> Array2:
    out = a.value ** p

    def bw(g):
        return (g * p * a.value ** (p - 1.0),)

    return _node(out, bw, a)


def sqrt(a: Array2) -> Array2:
    return pow_const(a, 0.5)


def transpose(a: Array2) -> Array2:
    def bw(g):
        return (g.T,)

    return _node(a.value.T, bw, a)


def concat_cols(parts: Sequence[Array2]) -> Array2:
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise DimensionError(
                f"concat_cols: row counts differ, {p.shape} vs {(rows, parts[0].cols)}")
    widths = [p.cols for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)

    def bw(g):
        grads = []
        at = 0
        for w in widths:
            grads.append(g[:, at:at + w])
            at += w
        return tuple(grads)

    return _node(out, bw, *parts)


def slice_cols(a: Array2, start: int, stop: int) -> Array2:
    out = a.value[:, start:stop]

    def bw(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return _node(out, bw, a)


def slice_rows(a: Array2, start: int, stop: int) -> Array2:
    out = a.value[start:stop, :]

    def bw(g):
        full = np.zeros_like(a.value)
        full[start:stop, :] = g
        return (full,)

    return _node(out, bw, a)


def sum_all(a: Array2) -> Array2:
    out = np.array([[a.value.sum()]])

    def bw(g):
        return (np.full_like(a.value, g[0, 0]),)

    return _node(out, bw, a)


def mean_all(a: Array2) -> Array2:
    n = a.value.size
    out = np.array([[a.value.sum() / n]])

    def bw(g):
        return (np.full_like(a.value, g[0, 0] / n),)

    return _node(out, bw, a)


def sum_rows(a: Array2) -> Array2:
    """Row-wise sum, shape (B, 1)."""
    out = a.value.sum(axis=1, keepdims=True)

    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, bw, a)


def sum_cols(a: Array2) -> Array2:
    """Column-wise sum, shape (1, C)."""
    out = a.value.sum(axis=0, keepdims=True)

    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, bw, a)


def logsumexp_rows(a: Array2, mask: np.ndarray | None = None) -> Array2:
    """Row-wise log-sum-exp with max subtraction, shape (B, 1).

    ``mask`` (constant 0/1) drops entries from the sum; each row must keep at
    least one entry. Needed for temperature-scaled logits reaching +-20.
    """
    if mask is None:
        mask = np.ones_like(a.value)
    if mask.shape != a.value.shape:
        raise DimensionError(f"mask shape {mask.shape} != array shape {a.shape}")
    if np.any(mask.sum(axis=1) < 1):
        raise UsageError("logsumexp_rows: a row has no unmasked entry")
    shifted = np.where(mask > 0, a.value, -np.inf)
    m = shifted.max(axis=1, keepdims=True)
    # m is treated as a detached constant; the gradient identity still holds.
    e = mask * np.exp(a.value - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)

    def bw(g):
        return (g * e / s,)

    return _node(out, bw, a)


def backward(root: Array2) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every traced node.

    Unreachable leaves on the same tape get zero gradient.
    """
    if root.tape is None:
        raise UsageError("backward on an untraced array")
    if root.value.shape != (1, 1):
        raise UsageError(f"backward root must be scalar, got shape {root.shape}")
    tape = root.tape
    for node in tape.nodes:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones((1, 1))
    for node in reversed(tape.nodes):
        if node._backward is None or not np.any(node.grad):
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.tape is tape:
                parent.grad = parent.grad + g
