"""Directional derivative tables along the plant vector field.

For a plant dx/dt = f(x), the directional (Lie) derivative of a scalar
g is sum_i (dg/dx_i) * f_i; iterating it on the measured outputs yields
the table of output derivatives that the functional tests and the observer
synthesis both consume.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .expr import (
    Const,
    Expr,
    Product,
    Sum,
    differentiate,
    evaluate,
    free_symbols,
    simplify,
)
from .system import SystemDef


class LieError(ValueError):
    pass


def lie_derivative(sys: SystemDef, g: Expr) -> Expr:
    """One application of the plant's directional derivative to g."""
    names, wvars = free_symbols(g)
    if wvars:
        i, j = sorted(wvars)[0]
        raise LieError(
            f"measurement derivative w{i}_{j} is not a state-space quantity"
        )
    terms = []
    for nm, fi in zip(sys.state_names, sys.f):
        dg = differentiate(g, nm)
        if isinstance(dg, Const) and dg.value == 0:
            continue
        terms.append(Product((dg, fi)))
    if not terms:
        return Const(0)
    return simplify(terms[0] if len(terms) == 1 else Sum(tuple(terms)))


@dataclass
class ObservabilitySet:
    """Derivatives of every measured output up to order m-1.

    table[i][j] is the i-th derivative of output j+1 along the flow;
    grads[i][j][k] its partial derivative with respect to state k.
    """

    sys: SystemDef
    m: int
    table: list[list[Expr]]
    grads: list[list[tuple[Expr, ...]]] = field(repr=False)

    def rows(self, m: int | None = None):
        """Flattened (i, j, expr) rows ordered by derivative order, then output."""
        m = self.m if m is None else m
        out = []
        for i in range(m):
            for j, e in enumerate(self.table[i], start=1):
                out.append((i, j, e))
        return out


def observability_set(sys: SystemDef, m: int) -> ObservabilitySet:
    if m < 1:
        raise LieError("derivative table needs m >= 1")
    table = [list(sys.h)]
    for _ in range(m - 1):
        table.append([lie_derivative(sys, e) for e in table[-1]])
    grads = [
        [tuple(differentiate(e, nm) for nm in sys.state_names) for e in row]
        for row in table
    ]
    return ObservabilitySet(sys=sys, m=m, table=table, grads=grads)


def observability_jacobian(os_: ObservabilitySet, x) -> np.ndarray:
    """Stacked gradient matrix of the derivative table at a point.

    Rows follow `ObservabilitySet.rows` order.  Points outside the sampling
    box are allowed but warned about, since the local tests only certify
    behaviour on the box.
    """
    sys = os_.sys
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise LieError(f"expected a point with {sys.n} coordinates")
    for nm, val in zip(sys.state_names, x):
        lo, hi = sys.box[nm]
        if val < lo or val > hi:
            warnings.warn(
                f"evaluation point has {nm}={val:g} outside the box [{lo:g}, {hi:g}]",
                stacklevel=2,
            )
            break
    b = sys.bindings(x)
    rows = []
    for i in range(os_.m):
        for grad in os_.grads[i]:
            rows.append([evaluate(g, b) for g in grad])
    return np.asarray(rows, dtype=float)


@dataclass
class QDerivatives:
    """Derivatives of the estimation target along the flow, orders 0..v."""

    sys: SystemDef
    v: int
    Q: list[Expr]
    grads: list[tuple[Expr, ...]] = field(repr=False)


def q_derivatives(sys: SystemDef, v: int) -> QDerivatives:
    if v < 0:
        raise LieError("derivative order must be >= 0")
    Q = [simplify(sys.q)]
    for _ in range(v):
        Q.append(lie_derivative(sys, Q[-1]))
    grads = [tuple(differentiate(e, nm) for nm in sys.state_names) for e in Q]
    return QDerivatives(sys=sys, v=v, Q=Q, grads=grads)


def lie_series_predict(sys: SystemDef, x0, t: float, m: int) -> list[float]:
    """Taylor prediction of each output at time t from the point x0,
    truncated after the t^m term (error is O(t^(m+1)) for smooth flows)."""
    if m < 0:
        raise LieError("series order must be >= 0")
    os_ = observability_set(sys, m + 1)
    b = sys.bindings(x0)
    out = []
    for j in range(sys.p):
        acc = 0.0
        for i in range(m + 1):
            acc += evaluate(os_.table[i][j], b) * t**i / math.factorial(i)
        out.append(acc)
    return out
