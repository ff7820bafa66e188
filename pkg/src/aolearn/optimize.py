"""First-order solvers used to fit decision rules.

* :func:`lbfgs_minimize` -- limited-memory BFGS with a strong-Wolfe line
  search (cubic interpolation), for smooth unconstrained problems.
* :func:`pss_minimize` -- smooth part plus an L1 penalty on a subset of
  coordinates, solved by orthant-wise limited-memory quasi-Newton steps
  (pseudo-gradient, orthant projection).
* :func:`lbfgsb_minimize` -- box constraints, delegated to SciPy's
  L-BFGS-B with this module's stopping rule and status reporting.

Objectives are callables ``fun(x) -> (value, gradient)``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize as _sciopt

from .exceptions import SolverError

__all__ = [
    "SolverOptions",
    "OptimizeResult",
    "lbfgs_minimize",
    "pss_minimize",
    "lbfgsb_minimize",
    "check_gradient",
]

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

CONVERGED = "converged"
MAX_ITER = "max_iter"
# line search could not make progress (usually rounding noise near the optimum)
STALLED = "stalled"


@dataclass(frozen=True)
class SolverOptions:
    memory: int = 10
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 40

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if not (self.gradient_tolerance > 0 and self.max_iterations >= 1):
            raise ValueError("tolerances and iteration caps must be positive")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants need 0 < c1 < c2 < 1")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    status: str
    n_iter: int
    n_eval: int
    grad: np.ndarray
    history: list

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def __iter__(self):
        # allows ``x, f, status = lbfgs_minimize(...)``
        return iter((self.x, self.fun, self.status))


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        f, g = self.fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if math.isnan(f) or np.isnan(g).any():
            raise SolverError(f"objective returned NaN at x = {np.array2string(x, precision=6)}")
        return f, g


def _stationary(gnorm: float, x: np.ndarray, tol: float) -> bool:
    return gnorm <= tol * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)


def _two_loop(q: np.ndarray, S, Y, rho) -> np.ndarray:
    """Apply the inverse-Hessian approximation to q."""
    q = q.copy()
    k = len(S)
    alpha = [0.0] * k
    for i in range(k - 1, -1, -1):
        alpha[i] = rho[i] * (S[i] @ q)
        q -= alpha[i] * Y[i]
    if k:
        q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    for i in range(k):
        beta = rho[i] * (Y[i] @ q)
        q += (alpha[i] - beta) * S[i]
    return q


def _cubic_min(t1, f1, g1, t2, f2, g2, lo, hi):
    """Minimizer of the cubic interpolating two points, clamped to [lo, hi]."""
    if not (math.isfinite(f1) and math.isfinite(f2)) or t1 == t2:
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (t1 - t2)
    disc = d1 * d1 - g1 * g2
    if disc < 0:
        return 0.5 * (lo + hi)
    d2 = math.copysign(math.sqrt(disc), t2 - t1)
    denom = g2 - g1 + 2.0 * d2
    if denom == 0:
        return 0.5 * (lo + hi)
    t = t2 - (t2 - t1) * (g2 + d2 - d1) / denom
    if not math.isfinite(t):
        return 0.5 * (lo + hi)
    return min(max(t, lo), hi)


def _strong_wolfe(fun, x, f0, g0, d, t, c1, c2, max_evals):
    """Step length satisfying the strong Wolfe conditions.

    Returns ``(t, f, g)`` or ``None`` when no acceptable step was found.
    Steps with a non-finite value are treated as too long.
    """
    dphi0 = float(g0 @ d)
    t_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    lo = hi = None
    evals = 0
    while evals < max_evals:
        f_t, g_t = fun(x + t * d)
        evals += 1
        dphi_t = float(g_t @ d) if math.isfinite(f_t) else math.inf
        if not math.isfinite(f_t) or f_t > f0 + c1 * t * dphi0 or (evals > 1 and f_t >= f_prev):
            lo, hi = (t_prev, f_prev, dphi_prev), (t, f_t, dphi_t)
            break
        if abs(dphi_t) <= -c2 * dphi0:
            return t, f_t, g_t
        if dphi_t >= 0:
            lo, hi = (t, f_t, dphi_t), (t_prev, f_prev, dphi_prev)
            break
        t_next = _cubic_min(t_prev, f_prev, dphi_prev, t, f_t, dphi_t, t + 0.01 * (t - t_prev), 10.0 * t)
        t_prev, f_prev, dphi_prev = t, f_t, dphi_t
        t = t_next
    else:
        return None

    best = lo
    best_g = None
    while evals < max_evals:
        (tl, fl, gl), (th, fh, gh) = lo, hi
        a, b = min(tl, th), max(tl, th)
        if b - a <= 1e-12 * max(1.0, b):
            break
        t = _cubic_min(tl, fl, gl, th, fh, gh, a + 0.1 * (b - a), b - 0.1 * (b - a))
        f_t, g_t = fun(x + t * d)
        evals += 1
        if not math.isfinite(f_t) or f_t > f0 + c1 * t * dphi0 or f_t >= fl:
            hi = (t, f_t, math.inf if not math.isfinite(f_t) else float(g_t @ d))
            continue
        dphi_t = float(g_t @ d)
        if abs(dphi_t) <= -c2 * dphi0:
            return t, f_t, g_t
        if dphi_t * (th - tl) >= 0:
            hi = lo
        lo = (t, f_t, dphi_t)
        best, best_g = lo, g_t
    # fall back to the best sufficient-decrease point seen in the bracket
    if best[0] > 0 and best[1] < f0:
        if best_g is None:
            _, best_g = fun(x + best[0] * d)
        return best[0], best[1], best_g
    return None


def lbfgs_minimize(fun: Objective, x0, options: SolverOptions | None = None) -> OptimizeResult:
    """Minimize a smooth function with L-BFGS.

    Stops when ``max|grad| <= tol * max(1, max|x|)``. Accepted iterates
    never increase the objective.
    """
    opts = options or SolverOptions()
    fun = _Counter(fun)
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not math.isfinite(f):
        raise SolverError(f"non-finite objective {f} at the starting point")
    S, Y, rho = deque(maxlen=opts.memory), deque(maxlen=opts.memory), deque(maxlen=opts.memory)
    history = [f]
    status = MAX_ITER
    it = 0
    while True:
        if _stationary(float(np.max(np.abs(g))) if g.size else 0.0, x, opts.gradient_tolerance):
            status = CONVERGED
            break
        if it >= opts.max_iterations:
            break
        d = -_two_loop(g, S, Y, rho) if S else -g
        if g @ d >= 0:
            S.clear(), Y.clear(), rho.clear()
            d = -g
        t0 = 1.0 if S else min(1.0, 1.0 / max(float(np.max(np.abs(g))), 1e-300))
        step = _strong_wolfe(fun, x, f, g, d, t0, opts.c1, opts.c2, opts.max_linesearch)
        if step is None:
            if S:
                S.clear(), Y.clear(), rho.clear()
                continue
            status = STALLED
            break
        t, f_new, g_new = step
        s = t * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            S.append(s), Y.append(y), rho.append(1.0 / sy)
        x = x + s
        f, g = f_new, g_new
        history.append(f)
        it += 1
    return OptimizeResult(x, f, status, it, fun.n, g, history)


def _pseudo_gradient(x, g, lam):
    pg = g.copy()
    nz = x != 0
    pg[nz] += lam[nz] * np.sign(x[nz])
    z = ~nz & (lam > 0)
    gz, lz = g[z], lam[z]
    pg[z] = np.where(gz + lz < 0, gz + lz, np.where(gz - lz > 0, gz - lz, 0.0))
    return pg


def pss_minimize(fun: Objective, l1_weight: float, penalized_mask, x0,
                 options: SolverOptions | None = None) -> OptimizeResult:
    """Minimize ``smooth(x) + l1_weight * sum_{mask} |x_j|``.

    The search direction is the quasi-Newton image of the pseudo-gradient
    with sign-inconsistent entries removed; each trial point is projected
    onto the current orthant, so coordinates that would cross zero land
    exactly on zero. Converged when the pseudo-gradient (the minimum-norm
    subgradient) satisfies the gradient tolerance.
    """
    opts = options or SolverOptions()
    if l1_weight < 0:
        raise ValueError("l1_weight must be >= 0")
    fun = _Counter(fun)
    x = np.array(x0, dtype=float)
    mask = np.asarray(penalized_mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError("penalized_mask must match the parameter vector")
    lam = np.where(mask, float(l1_weight), 0.0)
    active = lam > 0

    def total(xv, fv):
        return fv + float(lam @ np.abs(xv))

    f, g = fun(x)
    if not math.isfinite(f):
        raise SolverError(f"non-finite objective {f} at the starting point")
    F = total(x, f)
    S, Y, rho = deque(maxlen=opts.memory), deque(maxlen=opts.memory), deque(maxlen=opts.memory)
    history = [F]
    status = MAX_ITER
    it = 0
    while True:
        pg = _pseudo_gradient(x, g, lam)
        pgmax = float(np.max(np.abs(pg))) if pg.size else 0.0
        if _stationary(pgmax, x, opts.gradient_tolerance):
            status = CONVERGED
            break
        if it >= opts.max_iterations:
            break
        d = -_two_loop(pg, S, Y, rho) if S else -pg
        d[active & (d * pg >= 0)] = 0.0
        if not np.any(d):
            S.clear(), Y.clear(), rho.clear()
            d = -pg
        orthant = np.where(x != 0, np.sign(x), -np.sign(pg))
        t = 1.0 if S else min(1.0, 1.0 / max(pgmax, 1e-300))
        accepted = False
        for _ in range(opts.max_linesearch):
            x_new = x + t * d
            cross = active & (np.sign(x_new) != orthant)
            x_new[cross] = 0.0
            f_new, g_new = fun(x_new)
            if math.isfinite(f_new):
                F_new = total(x_new, f_new)
                if F_new <= F + opts.c1 * float(pg @ (x_new - x)):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            if S:
                S.clear(), Y.clear(), rho.clear()
                continue
            status = STALLED
            break
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            S.append(s), Y.append(y), rho.append(1.0 / sy)
        x, f, g, F = x_new, f_new, g_new, F_new
        history.append(F)
        it += 1
    return OptimizeResult(x, F, status, it, fun.n, g, history)


def _projected_gradient(x, g, lower, upper):
    return np.clip(x - g, lower, upper) - x


def lbfgsb_minimize(fun: Objective, lower, upper, x0, options: SolverOptions | None = None) -> OptimizeResult:
    """Minimize subject to ``lower <= x <= upper`` (infinite bounds allowed).

    Backed by SciPy's L-BFGS-B. ``converged`` means the projected gradient
    ``P(x - grad) - x`` meets the gradient tolerance.
    """
    opts = options or SolverOptions()
    x0 = np.array(x0, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape).copy()
    if np.any(lower > upper):
        raise SolverError("lower bound exceeds upper bound")
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise SolverError("starting point lies outside the box")
    counted = _Counter(fun)
    history = []

    def wrapped(x):
        f, g = counted(x)
        if not math.isfinite(f):
            raise SolverError(f"non-finite objective {f} at x = {np.array2string(x, precision=6)}")
        return f, g

    f0, _ = wrapped(x0)
    history.append(f0)
    bounds = list(zip(np.where(np.isfinite(lower), lower, None), np.where(np.isfinite(upper), upper, None)))
    res = _sciopt.minimize(
        wrapped, x0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxcor": opts.memory, "maxiter": opts.max_iterations, "gtol": opts.gradient_tolerance,
                 "ftol": 1e-15, "maxls": opts.max_linesearch},
    )
    x = np.clip(res.x, lower, upper)
    f, g = counted(x)
    history.append(f)
    pgn = float(np.max(np.abs(_projected_gradient(x, g, lower, upper)))) if x.size else 0.0
    if _stationary(pgn, x, opts.gradient_tolerance):
        status = CONVERGED
    elif res.nit >= opts.max_iterations:
        status = MAX_ITER
    else:
        status = STALLED
    return OptimizeResult(x, f, status, int(res.nit), counted.n, g, history)


def check_gradient(fun: Objective, x, h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient and its central-difference estimate at ``x``."""
    x = np.asarray(x, dtype=float)
    _, g = fun(x)
    num = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        num[j] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * h)
    return np.asarray(g, dtype=float), num
