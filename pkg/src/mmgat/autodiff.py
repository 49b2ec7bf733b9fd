"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every differentiable operation computes its forward value immediately and, when
one of its inputs lives on a :class:`Tape`, appends a record holding a
vector-Jacobian product closure.  ``Tape.backward`` walks the records in exact
reverse order, once each.

    tape = Tape()
    w = tape.var(np.ones((2, 2)))
    loss = (w @ w).sum()
    grads = tape.backward(loss)
    grads[w]            # d loss / d w
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _dtype_of(value) -> type:
    # float64 everywhere; extended precision passes through for reference evaluations
    return np.longdouble if getattr(value, "dtype", None) == np.longdouble else np.float64


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Var:
    __slots__ = ("value", "tape", "name")
    __array_priority__ = 1000  # make ndarray <op> Var dispatch to Var

    def __init__(self, value, tape: "Tape | None" = None, name: str | None = None):
        self.value = np.asarray(value, dtype=_dtype_of(value))
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Var":
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Var":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


@dataclass
class _Record:
    out: Var
    inputs: tuple[Var, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)
    visits: int = 0

    def var(self, value, name: str | None = None) -> Var:
        return Var(np.array(value, dtype=np.float64, copy=True), self, name)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, out: Var, seed: np.ndarray | None = None) -> "Gradients":
        """Accumulate adjoints of every tape variable w.r.t. ``out``.

        ``seed`` defaults to ones, which for a scalar output gives the plain
        gradient.  Variables the output does not depend on get zero adjoints.
        """
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        adj: dict[int, np.ndarray] = {id(out): np.ones_like(out.value) if seed is None
                                      else np.asarray(seed, dtype=np.float64)}
        self.visits = 0
        for rec in reversed(self.records):
            self.visits += 1
            g = adj.pop(id(rec.out), None)
            if g is None:
                continue
            for x, gx in zip(rec.inputs, rec.vjp(g)):
                if gx is None or x.tape is not self:
                    continue
                key = id(x)
                if key in adj:
                    adj[key] = adj[key] + gx
                else:
                    adj[key] = gx
        return Gradients(adj)


class Gradients:
    """Adjoint lookup keyed by variable; missing entries are zero."""

    def __init__(self, adj: dict[int, np.ndarray]):
        self._adj = adj

    def __getitem__(self, x: Var) -> np.ndarray:
        g = self._adj.get(id(x))
        return np.zeros_like(x.value) if g is None else g


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return None


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _emit(op: str, value: np.ndarray, inputs: tuple, vjp) -> Var:
    _check_finite(value, op)
    tape = _tape_of(*inputs)
    out = Var(value, tape)
    if tape is not None:
        tape.records.append(_Record(out, tuple(_as_var(x) for x in inputs), vjp, op))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=_dtype_of(x))


# -- arithmetic ----------------------------------------------------------------

def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit("add", av + bv, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit("sub", av - bv, (a, b),
                 lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = av / bv
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def matmul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def sum_(a, axis=None, keepdims: bool = False) -> Var:
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), vjp)


def transpose(a) -> Var:
    return _emit("transpose", _val(a).T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> Var:
    av = _val(a)
    return _emit("reshape", av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def getitem(a, index) -> Var:
    av = _val(a)
    basic = isinstance(index, (slice, int)) or (
        isinstance(index, tuple) and all(isinstance(i, (slice, int)) for i in index))

    def vjp(g):
        full = np.zeros_like(av)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _emit("getitem", np.array(av[index]), (a,), vjp)


def concat(xs: Sequence, axis: int = 0) -> Var:
    vals = [_val(x) for x in xs]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _emit("concat", np.concatenate(vals, axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


# -- activations -----------------------------------------------------------------

def leaky_relu(x, slope: float = 0.2) -> Var:
    """max(x, slope*x).  The derivative at exactly 0 is ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    xv = _val(x)
    pos = xv > 0
    return _emit("leaky_relu", np.where(pos, xv, slope * xv), (x,),
                 lambda g: (np.where(pos, g, slope * g),))


def elu(x) -> Var:
    xv = _val(x)
    pos = xv > 0
    neg = np.expm1(np.minimum(xv, 0.0))
    return _emit("elu", np.where(pos, xv, neg), (x,),
                 lambda g: (np.where(pos, g, g * (neg + 1.0)),))


def sigmoid(x) -> Var:
    xv = _val(x)
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def identity(x) -> Var:
    return _as_var(x)


ACTIVATIONS: dict[str, Callable] = {"elu": elu, "sigmoid": sigmoid, "identity": identity}


def softmax(x, axis: int = -1) -> Var:
    xv = _val(x)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", out, (x,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def masked_softmax(logits, mask: np.ndarray, mode: str = "soft",
                   soft_logit: float = -1e4, allow_empty_rows: bool = False) -> Var:
    """Row-wise softmax over the last axis restricted by a boolean mask.

    ``hard``: masked entries are excluded and come out exactly 0.  A row with
    no unmasked entries raises unless ``allow_empty_rows``, in which case it
    is all zeros.  The row maximum is taken over unmasked
    entries only, so masked logits cannot influence the result.

    ``soft``: ``soft_logit`` is added to masked logits and a plain softmax
    follows, keeping every entry differentiable.
    """
    lv = _val(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), lv.shape)
    if mode == "hard":
        shifted = np.where(mask, lv, -np.inf)
        row_max = shifted.max(axis=-1, keepdims=True)
        empty = ~mask.any(axis=-1, keepdims=True)
        if empty.any() and not allow_empty_rows:
            raise ValueError("hard-mode softmax row has no unmasked entries")
        row_max = np.where(empty, 0.0, row_max)
        e = np.where(mask, np.exp(np.where(mask, lv, 0.0) - row_max), 0.0)
        denom = e.sum(axis=-1, keepdims=True)
        out = e / np.where(empty, 1.0, denom)
    elif mode == "soft":
        z = np.where(mask, lv, lv + soft_logit)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        out = e / e.sum(axis=-1, keepdims=True)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return _emit(f"masked_softmax[{mode}]", out, (logits,),
                 lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))
