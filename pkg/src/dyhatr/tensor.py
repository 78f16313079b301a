"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record themselves while a :class:`Tape` is active and at
least one input requires a gradient.  Outside a tape every operation is a
plain numpy computation, which is what evaluation and inference use.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> tape.backward(loss)[w]
    array([[2., 4.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import ContractError, DegenerateMaskError, NumericError, ShapeError

_TAPES: list["Tape"] = []


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {what}")


class Tensor:
    """A float64 array plus a flag saying whether gradients are wanted."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, name or "Tensor()")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag}{label})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Gradients:
    """Gradient buffers keyed by tensor identity."""

    def __init__(self):
        self._buf: dict[int, np.ndarray] = {}
        self._keep: dict[int, Tensor] = {}

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._buf.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._buf

    def __len__(self):
        return len(self._buf)

    def _accumulate(self, t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        cur = self._buf.get(key)
        if cur is None:
            self._buf[key] = np.array(g, dtype=np.float64, copy=True)
            self._keep[key] = t
        else:
            cur += g


class Tape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, so the list is already a
    topological order and backward just walks it in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.records.append(_Record(out, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> Gradients:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = Gradients()
        grads._accumulate(loss, np.ones_like(loss.data))
        for rec in reversed(self.records):
            g = grads._buf.get(id(rec.out))
            if g is None:
                continue
            parts = rec.backward(g)
            for inp, gi in zip(rec.inputs, parts):
                if gi is not None and inp.requires_grad:
                    grads._accumulate(inp, gi)
        return grads


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _result(arr: np.ndarray, inputs: Sequence[Tensor], backward: Callable, what: str) -> Tensor:
    _check_finite(arr, what)
    out = Tensor._wrap(arr)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _result(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions of 3-d operands act as a batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        if ga is not None:
            ga = _unbroadcast(ga, a.shape)
        if gb is not None:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# nonlinearities


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)) without overflow for large |a|."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _result(out, (a,), lambda g: (g * _sigmoid(-a.data),), "log_sigmoid")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return _result(out, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    em1 = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, alpha * em1)
    return _result(out, (a,), lambda g: (np.where(pos, g, g * alpha * (em1 + 1.0)),), "elu")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _result(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes"
    )


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(out, ts, backward, "stack")


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)


def _row_accumulate(n: int, rows: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Sum rows of ``g`` into an ``n``-row buffer at positions ``rows`` (repeats add up)."""
    flat = rows.reshape(-1)
    g2 = g.reshape(len(flat), -1)
    hits = sparse.csr_matrix(
        (np.ones(len(flat)), (flat, np.arange(len(flat)))), shape=(n, len(flat))
    )
    return np.asarray(hits @ g2)


def take(a, index) -> Tensor:
    """Numpy-style indexing; repeated integer indices accumulate on backward."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise ContractError("index with integer arrays, not tensors")
    if isinstance(index, list):
        index = np.asarray(index)
    out = a.data[index]

    if _is_basic(index):
        def backward(g):
            full = np.zeros_like(a.data)
            full[index] = g
            return (full,)
    elif isinstance(index, np.ndarray) and index.dtype.kind in "iu":
        def backward(g):
            return (_row_accumulate(a.shape[0], index, g).reshape(a.shape),)
    else:
        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            return (full,)

    return _result(np.array(out, copy=True), (a,), backward, "take")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def scatter_rows(a, rows: np.ndarray, n: int) -> Tensor:
    """Place the rows of ``a`` at positions ``rows`` of an ``n``-row zero tensor."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    if len(rows) != a.shape[0]:
        raise ShapeError(f"{len(rows)} row positions for {a.shape[0]} rows")
    if len(np.unique(rows)) != len(rows):
        raise ContractError("scatter_rows positions must be unique")
    out = np.zeros((n,) + a.shape[1:])
    out[rows] = a.data
    return _result(out, (a,), lambda g: (g[rows],), "scatter_rows")


# ---------------------------------------------------------------------------
# softmax


def _mask_bool(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if m.dtype == bool:
        keep = m
    else:
        if np.isnan(m).any() or np.isposinf(m).any() or (np.isfinite(m) & (m != 0)).any():
            raise ContractError("additive mask entries must be 0 or -inf")
        keep = m == 0
    try:
        return np.broadcast_to(keep, shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {keep.shape} does not fit {shape}") from exc


def masked_softmax(x, mask=None, axis: int = -1) -> Tensor:
    """Softmax of ``x + mask`` along ``axis``.

    ``mask`` holds 0 for kept cells and ``-inf`` for dropped ones (a boolean
    keep-mask is accepted too).  Dropped cells come out exactly 0.
    """
    x = as_tensor(x)
    keep = _mask_bool(mask, x.shape)
    z = x.data
    if keep is not None:
        if not keep.any(axis=axis).all():
            raise DegenerateMaskError("softmax row has every entry masked")
        z = np.where(keep, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "masked_softmax")


def softmax(x, axis: int = -1) -> Tensor:
    return masked_softmax(x, None, axis=axis)
