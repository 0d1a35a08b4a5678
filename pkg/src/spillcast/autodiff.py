"""Dense rank-2 tensors with reverse-mode differentiation.

Every tensor is a 2-D float64 array.  Each primitive records its parents
and a closure that maps the upstream gradient to per-parent contributions.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


def _as2d(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim > 2:
        raise ShapeError(f"rank {arr.ndim} > 2")
    return arr


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = _as2d(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on shape {self.shape}")
        return float(self.value[0, 0])

    def backward(self) -> None:
        backward(self)

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _node(value: np.ndarray, op: str, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.name = None
    out.op = op
    out._parents = tuple(parents)
    out._backward = fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    av, bv = a.value, b.value
    return _node(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, "sub", (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting of unit dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _node(
        av * bv, "mul", (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(a.value * c, "scale", (a,), lambda g: (g * c,))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    """Join along columns (``axis=1``, the ``‖`` operator) or rows."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    other = 1 - axis
    if len({t.shape[other] for t in ts}) != 1:
        raise ShapeError(f"concat(axis={axis}): shapes {[t.shape for t in ts]}")
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    value = np.concatenate([t.value for t in ts], axis=axis)
    return _node(value, "concat", ts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    d = np.where(a.value > 0, 1.0, slope)
    return _node(a.value * d, "leaky_relu", (a,), lambda g: (g * d,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return _node(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.value)
    return _node(e, "exp", (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    if np.any(x <= 0):
        raise ValueError("log of non-positive value")
    return _node(np.log(x), "log", (a,), lambda g: (g / x,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), "clip", (a,), lambda g: (g * inside,))


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _node(a.value.sum().reshape(1, 1), "reduce_sum", (a,), lambda g: (np.full(shape, g[0, 0]),))
    return _node(a.value.sum(axis=axis, keepdims=True), "reduce_sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(reduce_sum(a), 1.0 / a.value.size)


def l2norm(a, eps: float = 1e-12) -> Tensor:
    """Euclidean (Frobenius) norm as a 1x1 tensor."""
    a = as_tensor(a)
    n = float(np.sqrt(np.sum(a.value * a.value)))
    x = a.value
    return _node(np.array([[n]]), "l2norm", (a,), lambda g: (g[0, 0] * x / max(n, eps),))


def _scatter_matrix(index: np.ndarray, n: int) -> csr_matrix:
    m = index.size
    return csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))


def gather(a, index) -> Tensor:
    """Rows ``a[index]``; repeated indices accumulate gradient."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("gather: index must be 1-D")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather: index out of range for {a.shape[0]} rows")
    n = a.shape[0]
    return _node(a.value[index], "gather", (a,), lambda g: (_scatter_matrix(index, n) @ g,))


def segment_sum(a, segments, n: int) -> Tensor:
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: {segments.shape[0]} segment ids for {a.shape[0]} rows")
    s = _scatter_matrix(segments, n)
    return _node(np.asarray(s @ a.value), "segment_sum", (a,), lambda g: (np.asarray(s.T @ g),))


def segment_mean(a, segments, n: int) -> Tensor:
    """Row means per segment; empty segments give zero rows."""
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (a.shape[0],):
        raise ShapeError(f"segment_mean: {segments.shape[0]} segment ids for {a.shape[0]} rows")
    counts = np.bincount(segments, minlength=n).astype(np.float64)
    w = 1.0 / np.maximum(counts, 1.0)
    s = csr_matrix((w[segments], (segments, np.arange(segments.size))), shape=(n, segments.size))
    return _node(np.asarray(s @ a.value), "segment_mean", (a,), lambda g: (np.asarray(s.T @ g),))


def neighbor_softmax(scores, dst, n: int) -> Tensor:
    """Softmax of per-edge scores ``(E, 1)`` over the edges sharing a destination."""
    scores = as_tensor(scores)
    dst = np.asarray(dst, dtype=np.int64)
    if scores.shape != (dst.size, 1):
        raise ShapeError(f"neighbor_softmax: scores {scores.shape} for {dst.size} edges")
    x = scores.value[:, 0]
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, dst, x)
    e = np.exp(x - peak[dst])
    denom = np.bincount(dst, weights=e, minlength=n)
    w = (e / denom[dst]).reshape(-1, 1)

    def fn(g):
        dot = np.bincount(dst, weights=(g * w)[:, 0], minlength=n)
        return (w * (g - dot[dst].reshape(-1, 1)),)

    return _node(w, "neighbor_softmax", (scores,), fn)


# ---------------------------------------------------------------- backward


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Accumulate ``d loss / d leaf`` into every ``requires_grad`` leaf.

    Tensors in ``params`` that the loss does not reach get a zero gradient.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    for t in reversed(_topo(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if not t._parents:
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if not p.requires_grad:
                continue
            if pg.shape != p.shape:
                pg = np.asarray(pg).reshape(p.shape)
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.value)


# ---------------------------------------------------------------- parameters


class ParameterSet(OrderedDict):
    """Named trainable tensors."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.value) if p.grad is None else p.grad) for k, p in self.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for k, p in self.items():
            v = _as2d(values[k])
            if v.shape != p.shape:
                raise ShapeError(f"parameter {k!r}: shape {v.shape} != {p.shape}")
            p.value = v.copy()

    def num_values(self) -> int:
        return sum(p.value.size for p in self.values())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"SPILLCAST-CKPT 1\n"


def save_checkpoint(path, params: ParameterSet | dict, meta: dict | None = None) -> None:
    """Header line of JSON (names, shapes, metadata) then little-endian float64 payloads."""
    values = params.snapshot() if isinstance(params, ParameterSet) else {k: _as2d(v) for k, v in params.items()}
    header = {
        "meta": meta or {},
        "params": [{"name": k, "shape": list(v.shape)} for k, v in values.items()],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in values.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    values, offset = OrderedDict(), 0
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        chunk = payload[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ValueError(f"{path}: truncated payload for {spec['name']}")
        values[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing bytes")
    return values, header["meta"]


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad and not t._parents]
