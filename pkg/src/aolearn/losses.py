"""Convex surrogate losses and their conditional risk calculators.

Each loss phi maps the signed margin u to [0, inf). For a pair of
nonnegative weights (eta1, eta2) the conditional risk is

    Q(alpha) = eta1 * phi(alpha) + eta2 * phi(-alpha)

and ``H = min_alpha Q(alpha)``. The closed forms for the minimizer and for
``H`` are implemented per loss; a bracketed golden-section search serves
arbitrary callables and is used in the tests as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Union

import numpy as np

__all__ = [
    "LossKind",
    "SurrogateLoss",
    "ConditionalRisk",
    "loss_value",
    "loss_derivative",
    "fisher_consistent",
    "conditional_risk",
    "optimal_conditional_risk",
    "excess_bound_check",
    "excess_bound_sweep",
    "minimize_scalar_convex",
    "EQUALITY_LOSSES",
]


class LossKind(str, Enum):
    HINGE = "hinge"
    SQUARED_HINGE = "squared_hinge"
    LEAST_SQUARES = "least_squares"
    HUBERIZED_HINGE = "huberized_hinge"
    LOGISTIC = "logistic"
    DWD = "dwd"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class SurrogateLoss:
    kind: LossKind = LossKind.HUBERIZED_HINGE

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))

    def value(self, u):
        return loss_value(self, u)

    def derivative(self, u):
        return loss_derivative(self, u)

    def __str__(self):
        return self.kind.value


@dataclass(frozen=True)
class ConditionalRisk:
    eta1: float
    eta2: float

    def __post_init__(self):
        if not (self.eta1 >= 0 and self.eta2 >= 0):
            raise ValueError(f"eta1 and eta2 must be nonnegative, got ({self.eta1}, {self.eta2})")


LossLike = Union[SurrogateLoss, LossKind, str]

# Losses whose excess-risk relation in the sweep is an identity, not a bound.
EQUALITY_LOSSES = frozenset({LossKind.HINGE, LossKind.SQUARED_HINGE, LossKind.LEAST_SQUARES, LossKind.HUBERIZED_HINGE})


def _kind(loss) -> LossKind:
    if isinstance(loss, SurrogateLoss):
        return loss.kind
    return LossKind(loss)


def _scalar_or_array(out, u):
    return float(out) if np.ndim(u) == 0 else out


def loss_value(loss: LossLike, u):
    kind = _kind(loss)
    u = np.asarray(u, dtype=float)
    if kind is LossKind.HINGE:
        out = np.maximum(1.0 - u, 0.0)
    elif kind is LossKind.SQUARED_HINGE:
        out = np.maximum(1.0 - u, 0.0) ** 2
    elif kind is LossKind.LEAST_SQUARES:
        out = (1.0 - u) ** 2
    elif kind is LossKind.HUBERIZED_HINGE:
        out = np.where(u >= 1.0, 0.0, np.where(u >= -1.0, 0.25 * (1.0 - u) ** 2, -u))
    elif kind is LossKind.LOGISTIC:
        out = np.logaddexp(0.0, -u)
    elif kind is LossKind.DWD:
        with np.errstate(divide="ignore"):
            out = np.where(u >= 1.0, 1.0 / np.maximum(u, 1.0), 2.0 - u)
    else:
        out = np.exp(-u)
    return _scalar_or_array(out, u)


def loss_derivative(loss: LossLike, u):
    """phi'(u); at kinks the right-hand derivative is returned."""
    kind = _kind(loss)
    u = np.asarray(u, dtype=float)
    if kind is LossKind.HINGE:
        out = np.where(u >= 1.0, 0.0, -1.0)
    elif kind is LossKind.SQUARED_HINGE:
        out = -2.0 * np.maximum(1.0 - u, 0.0)
    elif kind is LossKind.LEAST_SQUARES:
        out = -2.0 * (1.0 - u)
    elif kind is LossKind.HUBERIZED_HINGE:
        out = np.where(u >= 1.0, 0.0, np.where(u >= -1.0, -0.5 * (1.0 - u), -1.0))
    elif kind is LossKind.LOGISTIC:
        # -1 / (1 + e^u), written to avoid overflow
        out = -np.exp(-np.logaddexp(0.0, u))
    elif kind is LossKind.DWD:
        out = np.where(u >= 1.0, -1.0 / np.maximum(u, 1.0) ** 2, -1.0)
    else:
        out = -np.exp(-u)
    return _scalar_or_array(out, u)


def _as_callable(loss) -> Callable[[float], float]:
    if callable(loss) and not isinstance(loss, (SurrogateLoss, LossKind, str)):
        return lambda u: float(loss(u))
    return lambda u: loss_value(loss, u)


def fisher_consistent(loss, h: float = 1e-4, tol: float = 1e-8) -> bool:
    """True iff phi'(0) exists and is negative.

    Existence is judged numerically: second-order one-sided difference
    quotients from the left and right must agree within ``tol``. ``loss``
    may be a :class:`SurrogateLoss`, a kind name, or any scalar callable.
    """
    phi = _as_callable(loss)
    f0, fp1, fp2 = phi(0.0), phi(h), phi(2 * h)
    fm1, fm2 = phi(-h), phi(-2 * h)
    right = (-3.0 * f0 + 4.0 * fp1 - fp2) / (2.0 * h)
    left = (3.0 * f0 - 4.0 * fm1 + fm2) / (2.0 * h)
    return abs(right - left) <= tol and 0.5 * (left + right) < 0.0


def conditional_risk(loss: LossLike, cr: ConditionalRisk, alpha):
    return cr.eta1 * loss_value(loss, alpha) + cr.eta2 * loss_value(loss, -np.asarray(alpha))


def _golden(func, a, b, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    x = 0.5 * (a + b)
    return x, func(x)


def minimize_scalar_convex(func: Callable[[float], float], lo: float = -50.0, hi: float = 50.0,
                           tol: float = 1e-10, limit: float = 1e6) -> tuple[float, float]:
    """Golden-section minimization of a convex scalar function.

    The bracket [lo, hi] is widened on whichever side the minimum lands
    against. Returns ``(alpha, value)``; ``alpha`` is +-inf when the
    minimizer runs past ``limit`` (infimum not attained).
    """
    while True:
        x, fx = _golden(func, lo, hi, tol)
        edge = 1e-6 * (hi - lo)
        if x - lo < edge and func(lo) <= fx:
            if lo <= -limit:
                return -math.inf, fx
            lo = 2.0 * lo
        elif hi - x < edge and func(hi) <= fx:
            if hi >= limit:
                return math.inf, fx
            hi = 2.0 * hi
        else:
            return x, fx


def _closed_form(kind: LossKind, e1: float, e2: float) -> tuple[float, float]:
    s = e1 + e2
    if s == 0.0:
        return 0.0, 0.0
    if kind is LossKind.HINGE:
        return float(np.sign(e1 - e2)), 2.0 * min(e1, e2)
    if kind in (LossKind.SQUARED_HINGE, LossKind.LEAST_SQUARES):
        return (e1 - e2) / s, 4.0 * e1 * e2 / s
    if kind is LossKind.HUBERIZED_HINGE:
        return (e1 - e2) / s, e1 * e2 / s
    if kind is LossKind.LOGISTIC:
        if e1 == 0.0 or e2 == 0.0:
            return (math.inf if e1 > 0 else -math.inf), 0.0
        return math.log(e1 / e2), e1 * math.log1p(e2 / e1) + e2 * math.log1p(e1 / e2)
    if kind is LossKind.DWD:
        if e1 == 0.0 or e2 == 0.0:
            return (math.inf if e1 > 0 else -math.inf), 0.0
        if e1 > e2:
            return math.sqrt(e1 / e2), 2.0 * e2 + 2.0 * math.sqrt(e1 * e2)
        if e2 > e1:
            return -math.sqrt(e2 / e1), 2.0 * e1 + 2.0 * math.sqrt(e1 * e2)
        return 0.0, 4.0 * e1
    # exponential
    if e1 == 0.0 or e2 == 0.0:
        return (math.inf if e1 > 0 else -math.inf), 0.0
    return 0.5 * math.log(e1 / e2), 2.0 * math.sqrt(e1 * e2)


def optimal_conditional_risk(loss, cr: ConditionalRisk) -> tuple[float, float]:
    """Minimizer ``alpha*`` and minimum ``H`` of the conditional risk.

    ``alpha*`` is +-inf when the infimum is approached only at infinity
    (e.g. the logistic loss with one weight zero). Where the minimizer is
    a whole interval, a representative point is returned: the midpoint 0
    for ties, or +-1 at the edge of a flat region.
    """
    if isinstance(loss, (SurrogateLoss, LossKind, str)):
        return _closed_form(_kind(loss), float(cr.eta1), float(cr.eta2))
    phi = _as_callable(loss)
    return minimize_scalar_convex(lambda t: cr.eta1 * phi(t) + cr.eta2 * phi(-t))


_BOUND_FACTORS = {
    LossKind.SQUARED_HINGE: 1.0,
    LossKind.LEAST_SQUARES: 1.0,
    LossKind.HUBERIZED_HINGE: 4.0,
    LossKind.LOGISTIC: 8.0,
    LossKind.EXPONENTIAL: 2.0,
}


def excess_bound_check(loss: LossLike, cr: ConditionalRisk, rtol: float = 1e-9) -> tuple[float, float, bool]:
    """Evaluate the loss-specific relation between |eta1 - eta2| and dQ(0).

    With ``dQ(0) = Q(0) - H``: hinge and DWD use ``|eta1-eta2| <= dQ(0)``;
    the other five use ``(eta1-eta2)**2 <= c (eta1+eta2) dQ(0)`` with
    c = 1 (squared hinge, least squares), 4 (huberized hinge), 8 (logistic)
    or 2 (exponential). Returns ``(lhs, rhs, holds)``.
    """
    kind = _kind(loss)
    e1, e2 = float(cr.eta1), float(cr.eta2)
    _, H = _closed_form(kind, e1, e2)
    dq0 = (e1 + e2) * loss_value(kind, 0.0) - H
    if kind in (LossKind.HINGE, LossKind.DWD):
        lhs, rhs = abs(e1 - e2), dq0
    else:
        lhs, rhs = (e1 - e2) ** 2, _BOUND_FACTORS[kind] * (e1 + e2) * dq0
    holds = lhs <= rhs + rtol * max(1.0, abs(rhs))
    return lhs, rhs, bool(holds)


def excess_bound_sweep(losses=None, eta_max: float = 10.0, grid_size: int = 200) -> list[dict]:
    """Evaluate :func:`excess_bound_check` on a square (eta1, eta2) grid.

    The grid is ``linspace(0, eta_max, grid_size)`` in each coordinate.
    Each record holds the loss name, both weights, both sides, the verdict
    and, for the losses whose relation is an identity, ``|lhs - rhs|``
    (NaN otherwise).
    """
    kinds = [_kind(l) for l in (losses if losses is not None else list(LossKind))]
    etas = np.linspace(0.0, eta_max, grid_size)
    records = []
    for kind in kinds:
        for e1 in etas:
            for e2 in etas:
                lhs, rhs, holds = excess_bound_check(kind, ConditionalRisk(float(e1), float(e2)))
                gap = abs(lhs - rhs) if kind in EQUALITY_LOSSES else math.nan
                records.append({"loss": kind.value, "eta1": float(e1), "eta2": float(e2),
                                "lhs": lhs, "rhs": rhs, "holds": holds, "equality_gap": gap})
    return records
