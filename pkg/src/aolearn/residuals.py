"""Outcome baselines (g-functions), residuals, propensities and reflection.

Three baselines are supported, each a mixture of the arm means
mu_{+1}, mu_{-1} with weights depending on P(A=+1|x) = pi_+:

========  ==========================  ============================
kind      g(x)                        pooled regression weight
========  ==========================  ============================
g_tilde   (1-pi_+) mu_+1 + pi_+ mu_-1  pi(-a, x) / pi(a, x)
g1        (mu_+1 + mu_-1) / 2          1 / (2 pi(a, x))
g2        pi_+ mu_+1 + (1-pi_+) mu_-1  1
========  ==========================  ============================

``g_tilde`` is the mean outcome a subject would have had under the arm
they did not receive.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import TrialDataset, oracle_mu
from .exceptions import DataError

__all__ = [
    "GVariant",
    "LinearRegressionModel",
    "FittedG",
    "OracleG",
    "ConstantG",
    "PropensityModel",
    "WeightedClassificationProblem",
    "regression_weight",
    "fit_weighted_least_squares",
    "fit_g",
    "compute_residuals",
    "reflect",
    "estimate_propensity",
    "with_estimated_propensity",
    "reflection_identity_check",
    "g_from_dict",
    "PROPENSITY_CLIP",
]

G_KINDS = ("g_tilde", "g1", "g2")
G_ESTIMATORS = ("pooled_weighted", "armwise_plugin")
PROPENSITY_CLIP = 1e-3


@dataclass(frozen=True)
class GVariant:
    kind: str = "g_tilde"
    estimator: str = "pooled_weighted"

    def __post_init__(self):
        if self.kind not in G_KINDS:
            raise ValueError(f"unknown g kind {self.kind!r}; expected one of {G_KINDS}")
        if self.estimator not in G_ESTIMATORS:
            raise ValueError(f"unknown g estimator {self.estimator!r}; expected one of {G_ESTIMATORS}")


def regression_weight(variant: GVariant | str, a, pi_a):
    """Weight of a subject in the pooled regression for ``variant``."""
    kind = variant.kind if isinstance(variant, GVariant) else variant
    pi_a = np.asarray(pi_a, dtype=float)
    if np.any((pi_a <= 0) | (pi_a >= 1)):
        raise DataError("propensity must lie in (0, 1)")
    if kind == "g_tilde":
        w = (1.0 - pi_a) / pi_a
    elif kind == "g1":
        w = 1.0 / (2.0 * pi_a)
    elif kind == "g2":
        w = np.ones_like(pi_a)
    else:
        raise ValueError(f"unknown g kind {kind!r}")
    return float(w) if w.ndim == 0 else w


def _arm_mixture(kind: str, pi_plus):
    """(weight on mu_+1, weight on mu_-1) for a baseline kind."""
    pi_plus = np.asarray(pi_plus, dtype=float)
    if kind == "g_tilde":
        return 1.0 - pi_plus, pi_plus
    if kind == "g1":
        half = np.full_like(pi_plus, 0.5)
        return half, half
    return pi_plus, 1.0 - pi_plus


# -- least squares -------------------------------------------------------------


@dataclass(frozen=True)
class LinearRegressionModel:
    """Linear model with the intercept stored first."""

    coefficients: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        beta = np.asarray(self.coefficients)
        if X.shape[1] != beta.shape[0] - 1:
            raise DataError(f"model expects {beta.shape[0] - 1} covariates, got {X.shape[1]}")
        return beta[0] + X @ beta[1:]


def _design(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([np.ones(X.shape[0]), X])


def fit_weighted_least_squares(X, y, weights=None) -> LinearRegressionModel:
    """Minimize sum_i w_i (y_i - b0 - b'x_i)^2.

    A rank-deficient weighted design falls back to a tiny ridge penalty
    ``1e-8 * trace(X'WX) / p`` (intercept unpenalized) with a warning.
    """
    Z = _design(X)
    y = np.asarray(y, dtype=float)
    w = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    Zw = Z * sw[:, None]
    yw = y * sw
    beta, _, rank, _ = np.linalg.lstsq(Zw, yw, rcond=None)
    if rank < Z.shape[1]:
        warnings.warn("rank-deficient regression design; using a ridge fallback", RuntimeWarning, stacklevel=2)
        A = Zw.T @ Zw
        p = Z.shape[1] - 1
        pen = 1e-8 * np.trace(A[1:, 1:]) / max(p, 1)
        if not pen > 0:
            pen = 1e-8
        R = np.eye(Z.shape[1]) * pen
        R[0, 0] = 0.0
        try:
            beta = np.linalg.solve(A + R, Zw.T @ yw)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(A + R, Zw.T @ yw, rcond=None)[0]
    return LinearRegressionModel(beta)


# -- baseline models -----------------------------------------------------------


@dataclass(frozen=True)
class FittedG:
    """A baseline fitted from data (pooled or arm-wise)."""

    variant: GVariant
    pooled: LinearRegressionModel | None = None
    plus: LinearRegressionModel | None = None
    minus: LinearRegressionModel | None = None

    def predict(self, X, pi_plus=None) -> np.ndarray:
        if self.pooled is not None:
            return self.pooled.predict(X)
        if pi_plus is None:
            raise DataError("arm-wise baseline needs P(A=+1|x) to combine the arm means")
        wp, wm = _arm_mixture(self.variant.kind, pi_plus)
        return wp * self.plus.predict(X) + wm * self.minus.predict(X)

    def to_dict(self) -> dict:
        d = {"kind": self.variant.kind, "estimator": self.variant.estimator}
        if self.pooled is not None:
            d["coefficients"] = [float(c) for c in self.pooled.coefficients]
        else:
            d["coefficients"] = None
            d["arms"] = {
                "+1": [float(c) for c in self.plus.coefficients],
                "-1": [float(c) for c in self.minus.coefficients],
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class OracleG:
    """Baseline built from a scenario's true arm means."""

    scenario_id: int
    kind: str = "g_tilde"

    def predict(self, X, pi_plus=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if pi_plus is None:
            raise DataError("oracle baseline needs P(A=+1|x)")
        wp, wm = _arm_mixture(self.kind, pi_plus)
        return wp * oracle_mu(self.scenario_id, X, 1.0) + wm * oracle_mu(self.scenario_id, X, -1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "estimator": "oracle", "scenario": self.scenario_id, "coefficients": None}


@dataclass(frozen=True)
class ConstantG:
    value: float = 0.0

    def predict(self, X, pi_plus=None) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], float(self.value))

    def to_dict(self) -> dict:
        return {"kind": "constant", "estimator": "constant", "coefficients": [float(self.value)]}


def g_from_dict(d: dict):
    est = d["estimator"]
    if est == "oracle":
        return OracleG(int(d["scenario"]), d["kind"])
    if est == "constant":
        return ConstantG(d["coefficients"][0])
    variant = GVariant(d["kind"], est)
    if est == "pooled_weighted":
        return FittedG(variant, pooled=LinearRegressionModel(np.array(d["coefficients"], dtype=float)))
    arms = d["arms"]
    return FittedG(variant, plus=LinearRegressionModel(np.array(arms["+1"], dtype=float)),
                   minus=LinearRegressionModel(np.array(arms["-1"], dtype=float)))


def fit_g(dataset: TrialDataset, variant: GVariant | None = None) -> FittedG:
    variant = variant or GVariant()
    X, a, r = dataset.covariates, dataset.treatments, dataset.outcomes
    if variant.estimator == "pooled_weighted":
        w = regression_weight(variant, a, dataset.propensities)
        return FittedG(variant, pooled=fit_weighted_least_squares(X, r, w))
    need = dataset.p + 2
    models = {}
    for arm in (1.0, -1.0):
        m = a == arm
        if m.sum() < need:
            raise DataError(f"arm {int(arm):+d} has {int(m.sum())} subjects; arm-wise fit needs at least {need}")
        models[arm] = fit_weighted_least_squares(X[m], r[m])
    return FittedG(variant, plus=models[1.0], minus=models[-1.0])


def compute_residuals(dataset: TrialDataset, g_model) -> np.ndarray:
    return dataset.outcomes - g_model.predict(dataset.covariates, dataset.pi_plus)


# -- reflection ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightedClassificationProblem:
    """Covariates with labels a*sign(r~) in {+1,-1} and weights |r~|/pi >= 0."""

    covariates: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        y = np.asarray(self.labels, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (X.shape[0] == y.shape[0] == w.shape[0]):
            raise DataError("covariates, labels and weights must have matching lengths")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be +1 or -1")
        if not np.all(np.isfinite(w) & (w >= 0)):
            raise DataError("weights must be finite and nonnegative")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


def reflect(dataset: TrialDataset, residuals) -> WeightedClassificationProblem:
    """Flip the treatment label wherever the residual is negative.

    A residual of exactly zero gets weight 0 and label +1.
    """
    res = np.asarray(residuals, dtype=float)
    if res.shape != (dataset.n,):
        raise DataError(f"expected {dataset.n} residuals, got {res.shape}")
    sign = np.where(res < 0, -1.0, 1.0)
    labels = np.where(res == 0, 1.0, dataset.treatments * sign)
    weights = np.abs(res) / dataset.propensities
    return WeightedClassificationProblem(dataset.covariates, labels, weights)


def reflection_identity_check(dataset: TrialDataset, residuals, regime) -> tuple[float, float, float]:
    """Both sides of the reflection identity, averaged over subjects.

    lhs = mean(|r~|/pi * 1[a*sign(r~) != d]);
    rhs = mean(r~/pi * 1[a != d]) + mean(max(-r~, 0)/pi).
    """
    res = np.asarray(residuals, dtype=float)
    d = np.asarray(regime, dtype=float)
    if res.shape != (dataset.n,) or d.shape != (dataset.n,):
        raise DataError("residuals and regime must have one entry per subject")
    prob = reflect(dataset, res)
    pi = dataset.propensities
    lhs = float(np.mean(prob.weights * (prob.labels != d)))
    rhs = float(np.mean(res / pi * (dataset.treatments != d)) + np.mean(np.maximum(-res, 0.0) / pi))
    return lhs, rhs, abs(lhs - rhs)


# -- propensity ---------------------------------------------------------------


@dataclass(frozen=True)
class PropensityModel:
    """Logistic model for P(A=+1 | x), intercept first."""

    coefficients: np.ndarray
    clip: float = PROPENSITY_CLIP
    converged: bool = True
    n_iter: int = 0

    def prob_plus(self, X) -> np.ndarray:
        eta = _design(X) @ np.asarray(self.coefficients)
        p = 1.0 / (1.0 + np.exp(-eta))
        return np.clip(p, self.clip, 1.0 - self.clip)

    def propensities(self, X, a) -> np.ndarray:
        p = self.prob_plus(X)
        return np.where(np.asarray(a) > 0, p, 1.0 - p)

    def to_dict(self) -> dict:
        return {"kind": "propensity", "estimator": "logistic",
                "coefficients": [float(c) for c in self.coefficients]}


def estimate_propensity(dataset: TrialDataset, tol: float = 1e-8, max_iter: int = 100) -> PropensityModel:
    """Logistic regression of 1[A=+1] on X by damped Newton iterations."""
    a = dataset.treatments
    if np.all(a > 0) or np.all(a < 0):
        raise DataError("propensity estimation needs subjects in both arms")
    Z = _design(dataset.covariates)
    t = (a > 0).astype(float)
    n = Z.shape[0]
    beta = np.zeros(Z.shape[1])
    pbar = t.mean()
    beta[0] = np.log(pbar / (1.0 - pbar))

    def nll(b):
        eta = Z @ b
        return float(np.sum(np.logaddexp(0.0, eta) - t * eta)) / n

    f = nll(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 1.0 / (1.0 + np.exp(-(Z @ beta)))
        grad = Z.T @ (mu - t) / n
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        W = mu * (1.0 - mu)
        H = (Z * W[:, None]).T @ Z / n
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(H.shape[0]), grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        s = 1.0
        while s > 1e-10:
            cand = beta - s * step
            fc = nll(cand)
            if fc <= f:
                break
            s *= 0.5
        if fc > f:
            break
        beta, f = cand, fc
    model = PropensityModel(beta, converged=converged, n_iter=it)
    p = model.prob_plus(dataset.covariates)
    at_bound = np.mean((p <= PROPENSITY_CLIP) | (p >= 1.0 - PROPENSITY_CLIP))
    if at_bound > 0.5:
        warnings.warn("propensity model looks perfectly separated: most fitted probabilities sit at the clip bound",
                      RuntimeWarning, stacklevel=2)
    return model


def with_estimated_propensity(dataset: TrialDataset, model: PropensityModel | None = None) -> TrialDataset:
    """Copy of ``dataset`` whose propensities come from a logistic fit."""
    model = model or estimate_propensity(dataset)
    return dataset.replace(propensities=model.propensities(dataset.covariates, dataset.treatments))
