"""Dense tensors with tape-based reverse-mode differentiation.

Every model weight and activation is a :class:`Tensor`. Operations record
themselves on the innermost active :class:`Tape`; outside a tape nothing is
recorded, which is how inference runs without bookkeeping::

    x = Tensor([3.0], requires_grad=True)
    with Tape():
        loss = x * x
    loss.backward()
    x.grad  # array([6.])

Gradients accumulate. Calling ``backward`` twice without :meth:`Tensor.zero_grad`
doubles them; the trainer owns zeroing.
"""

from __future__ import annotations

import math

import numpy as np

MAX_RANK = 3

_dtype = np.float64
_tapes: list["Tape"] = []


class NumericsError(Exception):
    """Base class for errors raised by tensor operations."""


class ShapeError(NumericsError, ValueError):
    pass


class DomainError(NumericsError, ValueError):
    pass


class NonFiniteError(NumericsError, FloatingPointError):
    pass


class TapeError(NumericsError, RuntimeError):
    pass


def set_default_dtype(dtype) -> None:
    """Select float64 (default, required for gradient checks) or float32."""
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _dtype = dtype


def get_default_dtype():
    return _dtype


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.requires_grad = requires_grad
        self._grad = None
        self._tape = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self):
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.array(value, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: ``g`` may be shared with other nodes' buffers
        self._grad = g if self._grad is None else self._grad + g

    def backward(self) -> None:
        backward(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward = backward_fn


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order and one reverse sweep visits each node once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self and not (loss.requires_grad and loss._tape is None):
            raise TapeError("loss was not recorded on this tape")
        pending = {id(loss): (loss, np.ones_like(loss.data))}
        for node in reversed(self.nodes):
            entry = pending.pop(id(node.out), None)
            if entry is None:
                continue
            out, g = entry
            out._accumulate(g)
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = pending.get(key)
                pending[key] = (parent, pg if prev is None else prev[1] + pg)
        for leaf, g in pending.values():
            leaf._accumulate(g)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if not loss.requires_grad:
            raise TapeError("loss is not on any tape")
        loss._accumulate(np.ones_like(loss.data))
        return
    loss._tape.backward(loss)


class no_grad:
    """Suspend recording inside an active tape."""

    def __enter__(self):
        self._saved = list(_tapes)
        _tapes.clear()

    def __exit__(self, *exc):
        _tapes.extend(self._saved)
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    # a finite sum rules out inf/nan; overflow of the sum falls through to the full check
    if not math.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    return arr


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _finite(data, op)
    out._grad = None
    out._tape = None
    out.name = None
    out.requires_grad = False
    if _tapes and any(p.requires_grad for p in parents):
        tape = _tapes[-1]
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, parents, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``(m, k) @ (k, n)``; ``a`` may carry a leading batch axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T
        if ad.ndim == 3:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = ad.T @ g
        return ga, gb

    return _make(ad @ bd, (a, b), back, "matmul")


# ------------------------------------------------------------------- unary

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid_np(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    if (xd <= 0).any():
        raise DomainError("log of a non-positive element")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def dropout(x, mask, p: float, train: bool = True) -> Tensor:
    """Inverted dropout with a caller-supplied binary keep-mask.

    In inference mode (``train=False``) the input is returned unchanged.
    """
    x = _as_tensor(x)
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    m = np.asarray(mask, dtype=x.data.dtype)
    if m.shape != x.shape:
        raise ShapeError(f"dropout mask shape {m.shape} does not match input {x.shape}")
    scale = m * (1.0 / (1.0 - p))
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def apply_unary(x, f: str, **kwargs) -> Tensor:
    """Dispatch an elementwise function by name (sigmoid, tanh, exp, log, dropout)."""
    fns = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log, "dropout": dropout}
    try:
        fn = fns[f]
    except KeyError:
        raise ValueError(f"unknown unary function {f!r}") from None
    return fn(x, **kwargs)


# ------------------------------------------------------------- reductions

def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis (shape {x.shape})")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back, "softmax")


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, target, weights=None) -> Tensor:
    """Negative log-likelihood of ``target`` under ``softmax(logits)``.

    For a vector of logits ``target`` is an index and the result is a scalar.
    For a ``(B, n)`` matrix ``target`` holds one index per row and the result
    is the ``weights``-weighted sum over rows (weights default to 1), which is
    how padded target positions are excluded.
    """
    logits = _as_tensor(logits)
    ld = logits.data
    n = ld.shape[-1]
    tgt = np.atleast_1d(np.asarray(target))
    if tgt.dtype.kind not in "iu":
        raise TypeError("target ids must be integers")
    if ((tgt < 0) | (tgt >= n)).any():
        raise IndexError(f"target id out of range for {n} classes: {tgt.tolist()}")
    rows = ld.reshape(-1, n)
    if rows.shape[0] != tgt.shape[0]:
        raise ShapeError(f"{rows.shape[0]} logit rows but {tgt.shape[0]} targets")
    w = np.ones(len(tgt), dtype=ld.dtype) if weights is None else np.asarray(weights, dtype=ld.dtype)
    lsm = log_softmax_np(rows, axis=-1)
    idx = np.arange(len(tgt))
    loss = -(w * lsm[idx, tgt]).sum()

    def back(g):
        p = np.exp(lsm)
        p[idx, tgt] -= 1.0
        return ((g * w[:, None] * p).reshape(ld.shape),)

    return _make(np.asarray(loss).reshape(()), (logits,), back, "cross_entropy")


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), back, "sum")


def mean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),), "mean")


# ---------------------------------------------------------------- structure

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat of shapes {[t.shape for t in ts]}: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(data, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors, axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return _make(data, tuple(ts),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def slice_last(x, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    x = _as_tensor(x)
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _make(x.data[..., start:stop], (x,), back, "slice")


def select_step(x, t: int) -> Tensor:
    """``x[:, t]`` for a rank-2 or rank-3 tensor."""
    x = _as_tensor(x)
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, t] = g
        return (full,)

    return _make(x.data[:, t], (x,), back, "select_step")


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table``; repeated ids accumulate their gradients."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range for {n} rows")
    shape = table.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), back, "embedding")


def where(mask, a, b) -> Tensor:
    """Elementwise ``a`` where ``mask`` is true, else ``b`` (mask is constant)."""
    a, b = _as_tensor(a), _as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    data = np.where(m, a.data, b.data)
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(np.where(m, g, 0.0), sa),
                            _unbroadcast(np.where(m, 0.0, g), sb)), "where")
