"""Dense float64 tensors with a recording tape for reverse-mode gradients.

Operations are plain functions over :class:`Tensor`.  When a :class:`Tape`
is active (``with Tape() as tape:``) and any input requires a gradient, the
operation appends a record holding a vector-Jacobian product closure.
``tape.backward(loss)`` then walks the records in reverse.

Shapes are checked explicitly.  The only implicit broadcast allowed is a
0-d scalar tensor against an array (used for the fusion weight).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class ContractError(ValueError):
    pass


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor that accumulates gradients."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    return _lift(x)


@dataclass
class _Record:
    out: int
    inputs: tuple[int, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive operations.

    Node ids are assigned on first sight, so every record's inputs carry
    smaller ids than its output and the list is topologically ordered.
    A tape is single-writer: do not share one between threads.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._ids: dict[int, int] = {}
        self._tensors: list[Tensor] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def node_id(self, t: Tensor) -> int:
        key = id(t)
        nid = self._ids.get(key)
        if nid is None:
            nid = len(self._tensors)
            self._ids[key] = nid
            self._tensors.append(t)
        return nid

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp) -> None:
        in_ids = tuple(self.node_id(t) for t in inputs)
        self.records.append(_Record(self.node_id(out), in_ids, vjp))

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(param) into every Parameter reached.

        Returns the gradients contributed by this call, keyed by name.
        """
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {}
        key = self._ids.get(id(loss))
        if key is not None:
            grads[key] = np.ones_like(loss.data)
        for rec in reversed(self.records):
            g = grads.pop(rec.out, None)
            if g is None:
                continue
            for nid, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not self._tensors[nid].requires_grad:
                    continue
                prev = grads.get(nid)
                grads[nid] = gi if prev is None else prev + gi
        out: dict[str, np.ndarray] = {}
        for nid, g in grads.items():
            t = self._tensors[nid]
            if isinstance(t, Parameter):
                t.grad = t.grad + g
                out[t.name] = out[t.name] + g if t.name in out else g
        for t in self._tensors:
            if isinstance(t, Parameter) and t.name not in out:
                out[t.name] = np.zeros_like(t.data)
        return out


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, like: Tensor) -> np.ndarray:
    if like.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


# --- elementwise ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a), _unbroadcast(g * ad, b)))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _emit(out, (a,), lambda g: (-g * out * out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = a.data
    return _emit(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),))


def elu_plus_one(a: Tensor) -> Tensor:
    # strictly positive feature map for kernelised attention
    x = a.data
    neg = np.exp(np.minimum(x, 0.0))
    out = np.where(x > 0, x + 1.0, neg)
    return _emit(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# --- reductions / shape -------------------------------------------------

def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.asarray(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return _emit(np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full(shape, float(g) / n),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


# --- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """x[i, :] + b for every row i."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: {x.shape} and {b.shape}")
    return _emit(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """x[i, :] * s[i]."""
    if x.ndim != 2 or s.ndim != 1 or x.shape[0] != s.shape[0]:
        raise ShapeError(f"scale_rows: {x.shape} and {s.shape}")
    xd, sd = x.data, s.data
    return _emit(xd * sd[:, None], (x, s),
                 lambda g: (g * sd[:, None], (g * xd).sum(axis=1)))


def softmax_rows(m: Tensor) -> Tensor:
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {m.shape}")
    if np.isnan(m.data).any():
        raise NumericError("softmax_rows: NaN in input")
    z = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (m,), vjp)


def spmm(s: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    if s.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: {s.shape} x {x.shape}")
    s = s.tocsr()
    return _emit(np.asarray(s @ x.data), (x,), lambda g: (np.asarray(s.T @ g),))


# --- indexing -------------------------------------------------------------

def _scatter_matrix(index: np.ndarray, n: int, weights=None) -> sp.csr_matrix:
    m = index.shape[0]
    w = np.ones(m) if weights is None else weights
    return sp.csr_matrix((w, (index, np.arange(m))), shape=(n, m))


def gather_rows(x: Tensor, index) -> Tensor:
    """x[index] along the first axis; repeated indices accumulate in backward."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")
    rest = x.shape[1:]

    def vjp(g):
        s = _scatter_matrix(idx, n)
        flat = np.asarray(s @ g.reshape(idx.size, -1))
        return (flat.reshape((n,) + rest),)

    return _emit(x.data[idx], (x,), vjp)


def segment_sum(values: Tensor, index, n: int, weights=None) -> Tensor:
    """out[v] = sum_e weights[e] * values[e] over all e with index[e] == v."""
    idx = np.asarray(index, dtype=np.int64)
    if values.ndim != 2 or idx.shape != (values.shape[0],):
        raise ShapeError(f"segment_sum: values {values.shape}, index {idx.shape}")
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    s = _scatter_matrix(idx, n, w)
    scale = np.ones(idx.size) if w is None else w

    def vjp(g):
        return (g[idx] * scale[:, None],)

    return _emit(np.asarray(s @ values.data), (values,), vjp)
