"""Fitting AOL decision rules on a reflected weighted classification problem.

All objectives have the form

    (1/n) sum_i w_i phi(y_i f(x_i)) + penalty(f)

with labels ``y`` and weights ``w`` from :func:`aolearn.residuals.reflect`.
Covariates are standardized inside every fit and the transform is stored
on the returned rule, so rules are applied to raw covariates.

Kernel fits with a fixed kernel are solved in spectral coordinates: with
``K = U diag(s) U'`` and ``theta = diag(sqrt(s)) U' v`` the problem becomes
a linear fit on the features ``U diag(sqrt(s))`` with penalty
``lam/2 |theta|^2``. The minimizer is the same (up to eigen-directions
below ``spectral_cutoff * max(s)``, which are dropped); the problem is far
better conditioned for L-BFGS than the raw ``(v, b)`` parametrization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .kernels import KernelSpec, kernel_matrix, median_heuristic
from .losses import LossKind, loss_derivative, loss_value
from .optimize import SolverOptions, lbfgs_minimize, lbfgsb_minimize, pss_minimize
from .residuals import WeightedClassificationProblem

__all__ = [
    "METHODS",
    "FitConfig",
    "Standardizer",
    "LinearRule",
    "KernelRule",
    "linear_objective",
    "kernel_objective",
    "scaled_kernel_objective",
    "standardize_problem",
    "fit_linear_aol",
    "fit_kernel_aol",
    "fit_linear_aol_vs",
    "fit_kernel_aol_vs",
    "fit_rule",
    "kernel_features",
    "default_eta0",
    "predict",
    "decision_values",
    "rule_from_dict",
    "save_rule",
    "load_rule",
    "RULE_VERSION",
]

METHODS = ("aol_linear", "aol_gaussian", "aol_vs_linear", "aol_vs_gaussian")
RULE_VERSION = "aol-rule/1"


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters for one fit.

    ``lam`` is the ridge/RKHS penalty of the plain fits; ``lambda1`` and
    ``lambda2`` are the L1 and quadratic penalties of the variable
    selection fits. For kernel fits ``kernel`` wins over ``sigma``; with
    neither, an RBF kernel with the median-heuristic width is used.
    """

    loss: str = "huberized_hinge"
    lam: float = 1e-2
    lambda1: float | None = None
    lambda2: float | None = None
    sigma: float | None = None
    sigma_scale: float = 1.0
    kernel: KernelSpec | None = None
    eta0: tuple[float, ...] | None = None
    n_starts: int = 1
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)
    spectral_cutoff: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss).value)
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.lambda1 is not None and not self.lambda1 >= 0:
            raise ValueError("lambda1 must be >= 0")
        if self.lambda2 is not None and not self.lambda2 >= 0:
            raise ValueError("lambda2 must be >= 0")
        if not self.sigma_scale > 0:
            raise ValueError("sigma_scale must be > 0")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(X.mean(axis=0), sd)

    @classmethod
    def identity(cls, p: int) -> "Standardizer":
        return cls(np.zeros(p), np.ones(p))

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.mean.shape[0]:
            raise DataError(f"rule expects p = {self.mean.shape[0]} covariates, got {X.shape[1]}")
        return (X - self.mean) / self.scale


def standardize_problem(problem: WeightedClassificationProblem):
    """Standardized copy of ``problem`` and the transform used."""
    st = Standardizer.fit(problem.covariates)
    return WeightedClassificationProblem(st.transform(problem.covariates), problem.labels, problem.weights), st


# -- objectives ------------------------------------------------------------------


def linear_objective(problem: WeightedClassificationProblem, lam: float, loss="huberized_hinge"):
    """J(w, b) over ``theta = (w, b)``; returns ``fun(theta) -> (J, grad)``."""
    X, y, wt = problem.covariates, problem.labels, problem.weights
    n, p = X.shape
    kind = LossKind(loss)
    XT = np.ascontiguousarray(X.T)

    def fun(theta):
        w, b = theta[:p], theta[p]
        u = y * (X @ w + b)
        val = float(wt @ loss_value(kind, u)) / n + 0.5 * lam * float(w @ w)
        c = wt * y * loss_derivative(kind, u) / n
        grad = np.empty(p + 1)
        grad[:p] = XT @ c + lam * w
        grad[p] = c.sum()
        return val, grad

    return fun


def kernel_objective(K, labels, weights, lam: float, loss="huberized_hinge"):
    """J(v, b) with ``f = K v + b`` and penalty ``lam/2 v'Kv``."""
    K = np.asarray(K, dtype=float)
    y = np.asarray(labels, dtype=float)
    wt = np.asarray(weights, dtype=float)
    n = K.shape[0]
    kind = LossKind(loss)

    def fun(theta):
        v, b = theta[:n], theta[n]
        Kv = K @ v
        u = y * (Kv + b)
        val = float(wt @ loss_value(kind, u)) / n + 0.5 * lam * float(v @ Kv)
        c = wt * y * loss_derivative(kind, u) / n
        grad = np.empty(n + 1)
        grad[:n] = K @ (c + lam * v)
        grad[n] = c.sum()
        return val, grad

    return fun


def scaled_kernel_objective(X, labels, weights, lambda1: float, lambda2: float, loss="huberized_hinge"):
    """Joint objective over ``theta = (v, b, eta)`` for the scaled RBF kernel.

    ``J = (1/n) sum w_i phi(y_i f_i) + lambda1 sum(eta) + lambda2/2 v'K v``
    with ``K_il = exp(-sum_j eta_j (x_ij - x_lj)^2)``; the L1 norm of eta
    is its sum on the feasible set eta >= 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=float)
    wt = np.asarray(weights, dtype=float)
    n, p = X.shape
    kind = LossKind(loss)
    X2 = X * X
    # squared differences per coordinate, (p, n, n); n <= a few hundred here
    D = (X.T[:, :, None] - X.T[:, None, :]) ** 2

    def fun(theta):
        v, b, eta = theta[:n], theta[n], theta[n + 1:]
        K = np.exp(-np.tensordot(eta, D, axes=1))
        Kv = K @ v
        u = y * (Kv + b)
        val = float(wt @ loss_value(kind, u)) / n + lambda1 * float(eta.sum()) + 0.5 * lambda2 * float(v @ Kv)
        c = wt * y * loss_derivative(kind, u) / n
        a = c + 0.5 * lambda2 * v
        Ka = K @ a
        KvX = K @ (v[:, None] * X)
        # sum_il K_il a_i v_l (x_ij - x_lj)^2, for every j
        s = X2.T @ (a * Kv) + X2.T @ (v * Ka) - 2.0 * np.einsum("i,ij,ij->j", a, X, KvX)
        grad = np.empty(n + 1 + p)
        grad[:n] = K @ (c + lambda2 * v)
        grad[n] = c.sum()
        grad[n + 1:] = lambda1 - s
        return val, grad

    return fun


# -- rules ------------------------------------------------------------------------


def _ensure_2d(X, p):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != p:
        raise DataError(f"rule expects p = {p} covariates, got {X.shape[1]}")
    return X


@dataclass(frozen=True, eq=False)
class LinearRule:
    w: np.ndarray
    b: float
    standardizer: Standardizer
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.w.shape[0]

    def decision_values(self, X) -> np.ndarray:
        Xs = self.standardizer.transform(_ensure_2d(X, self.p))
        return Xs @ self.w + self.b

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_values(X) > 0, 1.0, -1.0)

    @property
    def selected(self) -> np.ndarray:
        """Indices of covariates with a nonzero coefficient."""
        return np.flatnonzero(self.w != 0)

    def to_dict(self) -> dict:
        return {
            "version": RULE_VERSION,
            "rule": "linear",
            "w": self.w.tolist(),
            "b": float(self.b),
            "standardization": {"mean": self.standardizer.mean.tolist(), "scale": self.standardizer.scale.tolist()},
            "info": _jsonable(self.info),
        }


@dataclass(frozen=True, eq=False)
class KernelRule:
    v: np.ndarray
    b: float
    support: np.ndarray
    kernel: KernelSpec
    standardizer: Standardizer
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.support.shape[1]

    def decision_values(self, X) -> np.ndarray:
        Xs = self.standardizer.transform(_ensure_2d(X, self.p))
        Ss = self.standardizer.transform(self.support)
        return kernel_matrix(self.kernel, Xs, Ss) @ self.v + self.b

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_values(X) > 0, 1.0, -1.0)

    @property
    def selected(self) -> np.ndarray:
        if self.kernel.kind == "scaled_rbf":
            return np.flatnonzero(np.asarray(self.kernel.eta) > 0)
        return np.arange(self.p)

    def to_dict(self) -> dict:
        return {
            "version": RULE_VERSION,
            "rule": "kernel",
            "v": self.v.tolist(),
            "b": float(self.b),
            "support": self.support.tolist(),
            "kernel": self.kernel.to_dict(),
            "standardization": {"mean": self.standardizer.mean.tolist(), "scale": self.standardizer.scale.tolist()},
            "info": _jsonable(self.info),
        }


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


def rule_from_dict(d: dict):
    if d.get("version") != RULE_VERSION:
        raise DataError(f"unsupported model version {d.get('version')!r}; expected {RULE_VERSION!r}")
    st = Standardizer(np.array(d["standardization"]["mean"], dtype=float),
                      np.array(d["standardization"]["scale"], dtype=float))
    if d["rule"] == "linear":
        return LinearRule(np.array(d["w"], dtype=float), float(d["b"]), st, d.get("info", {}))
    if d["rule"] == "kernel":
        support = np.array(d["support"], dtype=float).reshape(-1, st.mean.shape[0])
        return KernelRule(np.array(d["v"], dtype=float), float(d["b"]), support,
                          KernelSpec.from_dict(d["kernel"]), st, d.get("info", {}))
    raise DataError(f"unknown rule kind {d['rule']!r}")


def save_rule(rule, path) -> None:
    Path(path).write_text(json.dumps(rule.to_dict(), indent=1), encoding="utf-8")


def load_rule(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read model ({exc})") from exc
    return rule_from_dict(d)


def decision_values(rule, X) -> np.ndarray:
    return rule.decision_values(X)


def predict(rule, X) -> np.ndarray:
    """+1 where the decision value is strictly positive, else -1."""
    return rule.predict(X)


# -- fits --------------------------------------------------------------------------


def _info(res, objective=None) -> dict:
    return {"objective": float(res.fun if objective is None else objective), "n_iter": int(res.n_iter),
            "status": res.status}


def fit_linear_aol(problem: WeightedClassificationProblem, cfg: FitConfig | None = None) -> LinearRule:
    cfg = cfg or FitConfig()
    sp, st = standardize_problem(problem)
    fun = linear_objective(sp, cfg.lam, cfg.loss)
    res = lbfgs_minimize(fun, np.zeros(sp.p + 1), cfg.solver)
    return LinearRule(res.x[: sp.p].copy(), float(res.x[sp.p]), st, _info(res))


def _spectral_features(K, cutoff):
    s, U = np.linalg.eigh(K)
    keep = s > cutoff * max(float(s[-1]), 0.0)
    if not np.any(keep):
        return np.zeros((K.shape[0], 0)), np.zeros((K.shape[0], 0))
    s, U = s[keep], U[:, keep]
    root = np.sqrt(s)
    return U * root, U / root


def _resolve_kernel(cfg: FitConfig, Xs) -> KernelSpec:
    if cfg.kernel is not None:
        return cfg.kernel
    sigma = cfg.sigma if cfg.sigma is not None else cfg.sigma_scale * median_heuristic(Xs)
    return KernelSpec("rbf", sigma=float(sigma))


def kernel_features(problem: WeightedClassificationProblem, cfg: FitConfig):
    """The kernel a fixed-kernel fit would use, and its spectral features.

    Callers fitting several penalties with one kernel pass the result to
    :func:`fit_kernel_aol` as ``spectral`` to avoid repeated eigensolves.
    """
    sp, _ = standardize_problem(problem)
    kernel = _resolve_kernel(cfg, sp.covariates)
    return kernel, _spectral_features(kernel_matrix(kernel, sp.covariates), cfg.spectral_cutoff)


def fit_kernel_aol(problem: WeightedClassificationProblem, cfg: FitConfig | None = None,
                   features=None) -> KernelRule:
    """Kernel AOL with a fixed kernel.

    ``features`` is an optional ``(kernel, spectral)`` pair from
    :func:`kernel_features` computed for the same problem and config.
    """
    cfg = cfg or FitConfig()
    sp, st = standardize_problem(problem)
    if features is None:
        kernel = _resolve_kernel(cfg, sp.covariates)
        spectral = _spectral_features(kernel_matrix(kernel, sp.covariates), cfg.spectral_cutoff)
    else:
        kernel, spectral = features
    F, back = spectral
    feat = WeightedClassificationProblem(F, sp.labels, sp.weights)
    fun = linear_objective(feat, cfg.lam, cfg.loss)
    r = F.shape[1]
    # diagonal preconditioning: solve in psi with theta = d * psi, where
    # 1/d^2 approximates the Hessian diagonal at the zero start
    d = _diagonal_scaling(feat, cfg.lam, cfg.loss)
    res = lbfgs_minimize(_rescaled(fun, d), np.zeros(r + 1), cfg.solver)
    theta = d * res.x
    v = back @ theta[:r]
    info = _info(res)
    info["rank"] = r
    return KernelRule(v, float(theta[r]), np.array(problem.covariates), kernel, st, info)


def _diagonal_scaling(problem: WeightedClassificationProblem, lam: float, loss) -> np.ndarray:
    h = 1e-4
    curv = (loss_derivative(loss, h) - loss_derivative(loss, -h)) / (2 * h)
    if not curv > 0:
        curv = 1.0
    n = problem.n
    diag = np.empty(problem.p + 1)
    diag[:-1] = curv * (problem.weights @ problem.covariates**2) / n + lam
    diag[-1] = curv * problem.weights.sum() / n
    return np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)


def _rescaled(fun, d):
    def wrapped(psi):
        val, grad = fun(d * psi)
        return val, d * grad

    return wrapped


def fit_linear_aol_vs(problem: WeightedClassificationProblem, cfg: FitConfig | None = None) -> LinearRule:
    """Elastic-net linear AOL: L1 on w (not b) plus ``lambda2/2 |w|^2``."""
    cfg = cfg or FitConfig(lambda1=1e-2, lambda2=0.0)
    if cfg.lambda1 is None or not cfg.lambda1 > 0:
        raise ValueError("variable selection needs lambda1 > 0")
    lambda2 = 0.0 if cfg.lambda2 is None else cfg.lambda2
    sp, st = standardize_problem(problem)
    fun = linear_objective(sp, lambda2, cfg.loss)
    mask = np.r_[np.ones(sp.p, dtype=bool), False]
    res = pss_minimize(fun, cfg.lambda1, mask, np.zeros(sp.p + 1), cfg.solver)
    return LinearRule(res.x[: sp.p].copy(), float(res.x[sp.p]), st, _info(res))


def default_eta0(Xs) -> np.ndarray:
    p = Xs.shape[1]
    sigma = median_heuristic(Xs)
    return np.full(p, sigma**2 / p)


def fit_kernel_aol_vs(problem: WeightedClassificationProblem, cfg: FitConfig | None = None) -> KernelRule:
    """Scaled-RBF AOL with an L1 penalty on the scaling factors eta >= 0.

    Non-convex: each start runs L-BFGS-B from ``v = 0, b = 0`` and an eta
    start (``eta0`` first, then seeded log-normal perturbations of it); the
    start with the lowest objective wins.
    """
    cfg = cfg or FitConfig(lambda1=1e-2, lambda2=1e-2)
    if cfg.lambda1 is None or not cfg.lambda1 > 0 or cfg.lambda2 is None or not cfg.lambda2 > 0:
        raise ValueError("scaled-kernel variable selection needs lambda1 > 0 and lambda2 > 0")
    sp, st = standardize_problem(problem)
    n, p = sp.covariates.shape
    eta0 = default_eta0(sp.covariates) if cfg.eta0 is None else np.asarray(cfg.eta0, dtype=float)
    if eta0.shape != (p,) or np.any(eta0 < 0):
        raise ValueError(f"eta0 must be a nonnegative vector of length {p}")
    fun = scaled_kernel_objective(sp.covariates, sp.labels, sp.weights, cfg.lambda1, cfg.lambda2, cfg.loss)
    lower = np.r_[np.full(n + 1, -np.inf), np.zeros(p)]
    upper = np.full(n + 1 + p, np.inf)
    rng = np.random.default_rng(cfg.seed)
    best = None
    for k in range(cfg.n_starts):
        start_eta = eta0 if k == 0 else eta0 * np.exp(rng.normal(0.0, 1.0, p))
        res = lbfgsb_minimize(fun, lower, upper, np.r_[np.zeros(n + 1), start_eta], cfg.solver)
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    eta = np.maximum(x[n + 1:], 0.0)
    kernel = KernelSpec("scaled_rbf", eta=tuple(eta))
    return KernelRule(x[:n].copy(), float(x[n]), np.array(problem.covariates), kernel, st, _info(best))


def fit_rule(method: str, problem: WeightedClassificationProblem, cfg: FitConfig | None = None, **cache):
    if method == "aol_linear":
        return fit_linear_aol(problem, cfg)
    if method == "aol_gaussian":
        return fit_kernel_aol(problem, cfg, **cache)
    if method == "aol_vs_linear":
        return fit_linear_aol_vs(problem, cfg)
    if method == "aol_vs_gaussian":
        return fit_kernel_aol_vs(problem, cfg)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def with_params(cfg: FitConfig, params: dict) -> FitConfig:
    return replace(cfg, **params)
