"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Var

REL_FLOOR = 1e-8


@dataclass
class EntryError:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    tol: float
    h: float
    worst: dict[str, EntryError] = field(default_factory=dict)  # per parameter tensor
    entries_checked: int = 0

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.worst.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def by_group(self, group_of: Callable[[str], str] | None = None) -> dict[str, float]:
        group_of = group_of or (lambda name: name.split("/")[0])
        out: dict[str, float] = {}
        for name, err in self.worst.items():
            g = group_of(name)
            out[g] = max(out.get(g, 0.0), err.rel_error)
        return out


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def gradcheck(f: Callable[[dict[str, Var]], Var], params: Mapping[str, np.ndarray],
              h: float = 1e-6, tol: float = 1e-6, fd_dtype=np.float64) -> GradcheckReport:
    """Compare reverse-mode gradients of scalar ``f`` against central differences.

    ``f`` receives one :class:`Var` per named parameter and must return a
    scalar Var.  Every entry of every parameter is perturbed by ``±h``.
    Gradients are always taken in float64.  ``fd_dtype=np.longdouble``
    evaluates the difference quotients in extended precision: in float64
    their rounding noise is about ``eps * |f| / h`` (~1e-10 for ``h=1e-6``),
    which swamps a 1e-6 relative budget on entries below ~1e-4.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    leaves = {k: tape.var(v, name=k) for k, v in params.items()}
    out = f(leaves)
    if out.value.size != 1:
        raise ValueError(f"gradcheck needs a scalar function, got shape {out.shape}")
    grads = tape.backward(out)

    def evaluate(values: dict[str, np.ndarray]):
        val = f({k: Var(v) for k, v in values.items()}).value.reshape(())[()]
        if not np.isfinite(val):
            raise FloatingPointError("function evaluation is not finite")
        return val

    fd_params = {k: v.astype(fd_dtype) for k, v in params.items()}
    report = GradcheckReport(tol=tol, h=h)
    for name, base in fd_params.items():
        analytic = grads[leaves[name]]
        numeric = np.zeros(base.shape)
        for idx in np.ndindex(base.shape):
            probe = dict(fd_params)
            plus, minus = base.copy(), base.copy()
            plus[idx] += h
            minus[idx] -= h
            probe[name] = plus
            f_plus = evaluate(probe)
            probe[name] = minus
            f_minus = evaluate(probe)
            numeric[idx] = float((f_plus - f_minus) / (2 * h))
            report.entries_checked += 1
        if base.size == 0:
            continue
        rel = relative_error(analytic, numeric)
        worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
        report.worst[name] = EntryError(name, tuple(int(i) for i in worst),
                                        float(analytic[worst]), float(numeric[worst]),
                                        float(rel[worst]))
    return report
