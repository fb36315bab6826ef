"""Dense float64 tensors with a reverse-mode gradient tape.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block) whenever at least one input requires a gradient.  Outside a
tape, every op is a plain numpy computation, which is what inference uses.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "battrack_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class EmptySetError(ValueError):
    """Raised when an op needs at least one element and got none."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of differentiable operations.

    Insertion order is a valid topological order, so backward is a single
    reverse sweep.
    """

    def __init__(self):
        self.nodes: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: tuple[Tensor, ...], out: Tensor, backward: Callable) -> None:
        out.tape_id = len(self.nodes)
        self.nodes.append((kind, inputs, out, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id is None:
            return
        loss.grad = np.ones_like(loss.data)
        for _, inputs, out, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, tuple(inputs), out, backward)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias add: ``x[n, d] + b[d]``."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    return _emit("add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


broadcast_add_bias = add_bias


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a matrix, got {x.shape}")
    norm = np.maximum(np.linalg.norm(x.data, axis=1, keepdims=True), eps)
    y = x.data / norm

    def backward(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norm,)

    return _emit("l2_normalize_rows", y, (x,), backward)


# --------------------------------------------------------------------------
# linear algebra and reshaping


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def concat_last_dim(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise EmptySetError("concat_last_dim: nothing to concatenate")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_last_dim: leading shapes {lead} and {p.shape[:-1]} differ")
    widths = np.cumsum([p.shape[-1] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, widths, axis=-1))

    return _emit("concat", np.concatenate([p.data for p in parts], axis=-1), parts, backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a matrix, got {x.shape}")
    n, d = x.shape

    def backward(g):
        full = np.zeros((n, d))
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_cols", x.data[:, start:stop], (x,), backward)


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows by a constant integer index; backward scatters additively."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit("gather_rows", x.data[index], (x,), backward)


# --------------------------------------------------------------------------
# reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _emit("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g.item()),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, max(x.data.size, 1)
    return _emit("mean", np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g.item() / n),))


def sum_cols(x: Tensor) -> Tensor:
    """Per-row sum of a matrix, kept as an ``[n, 1]`` column."""
    if x.data.ndim != 2:
        raise ShapeError(f"sum_cols expects a matrix, got {x.shape}")
    d = x.shape[1]
    return _emit("sum_cols", x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, d, axis=1),))


def max_pool_over_points(x: Tensor) -> Tensor:
    """Column-wise max of an ``[n, d]`` matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"max_pool_over_points expects a matrix, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptySetError("max_pool_over_points: no points to pool")
    return reshape(max_pool_groups(x, x.shape[0]), (x.shape[1],))


def max_pool_groups(x: Tensor, group_size: int) -> Tensor:
    """Max over consecutive row groups: ``[g*k, d] -> [g, d]``.

    Gradient goes to the first maximal row of each group.
    """
    n, d = x.shape
    if group_size < 1 or n == 0:
        raise EmptySetError("max_pool_groups: empty group")
    if n % group_size:
        raise ShapeError(f"max_pool_groups: {n} rows do not split into groups of {group_size}")
    g_count = n // group_size
    grouped = x.data.reshape(g_count, group_size, d)
    arg = grouped.argmax(axis=1)
    out = np.take_along_axis(grouped, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        full = np.zeros((g_count, group_size, d))
        np.put_along_axis(full, arg[:, None, :], g[:, None, :], axis=1)
        return (full.reshape(n, d),)

    return _emit("max_pool_groups", out, (x,), backward)


# --------------------------------------------------------------------------
# losses


def _row_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape != (n,):
        raise ShapeError(f"row weights of length {w.size} do not match {n} rows")
    return w


def _as_matrix(t: Tensor) -> Tensor:
    return reshape(t, (t.shape[0], 1)) if t.data.ndim == 1 else t


def weighted_smooth_l1(pred: Tensor, target, weights, delta: float = 1.0) -> Tensor:
    """``sum_i w_i * sum_c h(pred_ic - target_ic)`` with the Huber kernel ``h``."""
    target = _as_tensor(target)
    _same_shape("smooth_l1", pred, target)
    pred, target = _as_matrix(pred), _as_matrix(target)
    w = _row_weights(weights, pred.shape[0])
    diff = pred.data - target.data
    ad = np.abs(diff)
    small = ad < delta
    h = np.where(small, 0.5 * diff * diff, delta * (ad - 0.5 * delta))
    out = np.asarray(np.sum(h.sum(axis=1) * w))

    def backward(g):
        dh = np.where(small, diff, delta * np.sign(diff)) * w[:, None] * g.item()
        return dh, -dh

    return _emit("smooth_l1", out, (pred, target), backward)


def smooth_l1(pred: Tensor, target, mask, delta: float = 1.0) -> Tensor:
    """Huber loss summed over masked rows and divided by the mask count.

    Returns exactly zero when the mask is empty.
    """
    m = _row_weights(mask, pred.shape[0])
    total = m.sum()
    return weighted_smooth_l1(pred, target, m / total if total > 0 else m * 0.0, delta)


def weighted_bce_with_logits(logits: Tensor, labels, weights) -> Tensor:
    """Weighted binary cross-entropy on raw logits (numerically stable form)."""
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    w = _row_weights(weights, z.shape[0])
    if y.shape != z.shape:
        raise ShapeError(f"bce: labels {y.shape} do not match logits {z.shape}")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    shape = logits.shape

    def backward(g):
        return ((w * (_sigmoid(z) - y) * g.item()).reshape(shape),)

    return _emit("bce_logits", np.asarray(np.sum(w * per)), (logits,), backward)


def binary_cross_entropy(prob: Tensor, labels, weights=None, eps: float = 1e-12) -> Tensor:
    """Weighted BCE on probabilities; mean over rows when no weights are given."""
    p = prob.data.reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise ShapeError(f"bce: labels {y.shape} do not match probabilities {p.shape}")
    w = np.full(p.shape, 1.0 / max(p.size, 1)) if weights is None else _row_weights(weights, p.size)
    pc = np.clip(p, eps, 1.0 - eps)
    per = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    shape = prob.shape

    def backward(g):
        d = w * (pc - y) / (pc * (1.0 - pc)) * g.item()
        return (d.reshape(shape),)

    return _emit("bce", np.asarray(np.sum(w * per)), (prob,), backward)
