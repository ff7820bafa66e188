"""Trial datasets, CSV ingestion and the four simulation scenarios.

Simulated data are drawn from a ``numpy.random.Generator`` backed by PCG64
in a fixed order, so a (spec, seed) pair reproduces a dataset bit for bit:

1. covariates ``X``: ``uniform(-1, 1, size=(n, p))`` (row-major)
2. treatments: ``uniform(size=n)``; arm +1 where the draw is below
   ``P(A=+1 | x)``
3. outcome noise: ``standard_normal(n)`` added to the scenario mean
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

__all__ = [
    "TrialDataset",
    "ScenarioSpec",
    "load_dataset",
    "load_covariates",
    "write_dataset",
    "simulate_scenario",
    "simulate_covariates",
    "oracle_mu",
    "oracle_contrast",
    "treatment_probability",
    "OPTIMAL_VALUES",
]

# Optimal regime values quoted for p = 5 in the simulation tables.
OPTIMAL_VALUES = {1: 1.001, 2: 3.659, 3: 0.848, 4: 3.237}


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Covariates, treatments in {+1, -1}, outcomes and received-arm propensities."""

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    propensities: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        a = np.asarray(self.treatments, dtype=float).ravel()
        r = np.asarray(self.outcomes, dtype=float).ravel()
        pi = np.asarray(self.propensities, dtype=float).ravel()
        n = X.shape[0]
        if X.ndim != 2 or n < 1 or X.shape[1] < 1:
            raise DataError("covariates must be an n x p matrix with n >= 1, p >= 1")
        if not (a.shape[0] == r.shape[0] == pi.shape[0] == n):
            raise DataError(
                f"length mismatch: X has {n} rows, a {a.shape[0]}, r {r.shape[0]}, pi {pi.shape[0]}"
            )
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(r)):
            raise DataError("covariates and outcomes must be finite")
        if not np.all((a == 1.0) | (a == -1.0)):
            bad = int(np.flatnonzero((a != 1.0) & (a != -1.0))[0])
            raise DataError(f"treatment must be +1 or -1 (row {bad + 1})")
        if not np.all((pi > 0.0) & (pi < 1.0)):
            bad = int(np.flatnonzero(~((pi > 0.0) & (pi < 1.0)))[0])
            raise DataError(f"propensity must lie in (0, 1) (row {bad + 1})")
        for name, value in (("covariates", X), ("treatments", a), ("outcomes", r), ("propensities", pi)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def pi_plus(self) -> np.ndarray:
        """P(A=+1 | x_i) reconstructed from the received-arm propensities."""
        return np.where(self.treatments > 0, self.propensities, 1.0 - self.propensities)

    def subset(self, idx) -> "TrialDataset":
        return TrialDataset(
            self.covariates[idx], self.treatments[idx], self.outcomes[idx], self.propensities[idx]
        )

    def replace(self, **changes) -> "TrialDataset":
        fields = {
            "covariates": self.covariates,
            "treatments": self.treatments,
            "outcomes": self.outcomes,
            "propensities": self.propensities,
        }
        fields.update(changes)
        return TrialDataset(**fields)


@dataclass(frozen=True)
class ScenarioSpec:
    """Simulation settings.

    ``allocation`` is P(A=+1). ``propensity_coef`` optionally adds a
    covariate-dependent tilt on the logit scale,
    ``logit P(A=+1|x) = logit(allocation) + sum_j coef_j x_j``, which gives
    a confounded observational variant of a scenario.
    """

    scenario_id: int = 1
    p: int = 5
    allocation: float = 0.5
    n: int = 100
    seed: int = 0
    propensity_coef: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3, 4):
            raise DataError(f"scenario_id must be 1-4, got {self.scenario_id}")
        if not 0.0 < self.allocation < 1.0:
            raise DataError(f"allocation must lie in (0, 1), got {self.allocation}")
        if self.p < 5:
            raise DataError(f"scenarios use x1..x5, so p must be >= 5 (got {self.p})")
        if self.n < 1:
            raise DataError("n must be >= 1")
        if len(self.propensity_coef) > self.p:
            raise DataError("propensity_coef is longer than p")


# -- scenario means ----------------------------------------------------------


def _main_and_contrast(scenario_id: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = [X[..., j] for j in range(5)]
    if scenario_id in (1, 2):
        main = 0.5 + 0.5 * x[0] + 0.8 * x[1] + 0.3 * x[2] - 0.5 * x[3] + 0.7 * x[4]
        inter = 0.2 - 0.6 * x[0] - 0.8 * x[1]
    elif scenario_id in (3, 4):
        main = 0.5 + 0.6 * x[0] + 0.8 * x[1] + 0.3 * x[2] - 0.5 * x[3] + 0.7 * x[4]
        inter = 0.6 - x[0] ** 2 - x[1] ** 2
    else:
        raise DataError(f"scenario_id must be 1-4, got {scenario_id}")
    return main, inter


def _check_x(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] < 5:
        raise DataError(f"scenarios use x1..x5, got {X.shape[-1]} covariates")
    return X


def oracle_mu(scenario_id: int, X, arm) -> np.ndarray | float:
    """Mean outcome E(R | X=x, A=arm) for a scenario.

    Works on a single p-vector or on an n x p matrix; ``arm`` may be a
    scalar or a per-row array of +-1.
    """
    X = _check_x(X)
    main, inter = _main_and_contrast(scenario_id, X)
    q = main + np.asarray(arm, dtype=float) * inter
    if scenario_id in (2, 4):
        q = np.exp(q)
    return float(q) if np.ndim(q) == 0 else q


def oracle_contrast(scenario_id: int, X) -> np.ndarray | float:
    """delta(x) = mu_{+1}(x) - mu_{-1}(x), computed as that difference."""
    return oracle_mu(scenario_id, X, 1.0) - oracle_mu(scenario_id, X, -1.0)


def treatment_probability(spec: ScenarioSpec, X: np.ndarray) -> np.ndarray:
    """P(A=+1 | x) under the spec's allocation (and optional tilt)."""
    X = np.asarray(X, dtype=float)
    if not spec.propensity_coef:
        return np.full(X.shape[0], spec.allocation)
    coef = np.zeros(X.shape[1])
    coef[: len(spec.propensity_coef)] = spec.propensity_coef
    alloc = spec.allocation
    eta = math.log(alloc / (1.0 - alloc)) + X @ coef
    return 1.0 / (1.0 + np.exp(-eta))


def simulate_covariates(n: int, p: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n, p))


def simulate_scenario(spec: ScenarioSpec) -> TrialDataset:
    rng = np.random.default_rng(spec.seed)
    X = rng.uniform(-1.0, 1.0, size=(spec.n, spec.p))
    pi_plus = treatment_probability(spec, X)
    a = np.where(rng.uniform(size=spec.n) < pi_plus, 1.0, -1.0)
    r = oracle_mu(spec.scenario_id, X, a) + rng.standard_normal(spec.n)
    pi = np.where(a > 0, pi_plus, 1.0 - pi_plus)
    return TrialDataset(X, a, np.atleast_1d(r), pi)


# -- CSV ---------------------------------------------------------------------


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [(i + 1, line) for i, line in enumerate(fh) if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file")
    reader = csv.reader([line for _, line in lines])
    rows = list(reader)
    header = [h.strip() for h in rows[0]]
    return path, header, [(lines[k][0], rows[k]) for k in range(1, len(rows))]


def _covariate_columns(path, header) -> list[int]:
    xcols = {}
    for j, name in enumerate(header):
        if len(name) > 1 and name[0] == "x" and name[1:].isdigit():
            xcols[int(name[1:])] = j
    p = len(xcols)
    if p == 0 or sorted(xcols) != list(range(1, p + 1)):
        raise DataError(f"{path}: header must name covariate columns x1..xp, got {header}")
    return [xcols[k] for k in range(1, p + 1)]


def _parse_float(path, lineno, row, j, name) -> float:
    try:
        return float(row[j])
    except (ValueError, IndexError):
        raise DataError(f"{path}: row {lineno}: malformed value for column '{name}'") from None


def load_dataset(path, has_propensity: bool | None = None, default_propensity: float | None = None) -> TrialDataset:
    """Read a trial CSV with header ``x1,...,xp,a,r[,pi]``.

    ``has_propensity=None`` autodetects the ``pi`` column. Without one,
    ``default_propensity`` is used as P(A=+1) for every subject.
    """
    path, header, rows = _read_rows(path)
    xidx = _covariate_columns(path, header)
    for required in ("a", "r"):
        if required not in header:
            raise DataError(f"{path}: missing required column '{required}'")
    if has_propensity is None:
        has_propensity = "pi" in header
    if has_propensity and "pi" not in header:
        raise DataError(f"{path}: missing required column 'pi'")
    if not has_propensity:
        if default_propensity is None:
            raise DataError(f"{path}: no 'pi' column; supply a default propensity")
        if not 0.0 < default_propensity < 1.0:
            raise DataError(f"default propensity must lie in (0, 1), got {default_propensity}")
    ia, ir = header.index("a"), header.index("r")
    ipi = header.index("pi") if has_propensity else None
    width = len(header)
    X, a, r, pi = [], [], [], []
    for lineno, row in rows:
        if len(row) != width:
            raise DataError(f"{path}: row {lineno}: expected {width} fields, got {len(row)}")
        X.append([_parse_float(path, lineno, row, j, header[j]) for j in xidx])
        ai = _parse_float(path, lineno, row, ia, "a")
        if ai not in (1.0, -1.0):
            raise DataError(f"{path}: row {lineno}: treatment must be +1 or -1, got {row[ia].strip()}")
        a.append(ai)
        r.append(_parse_float(path, lineno, row, ir, "r"))
        if ipi is not None:
            pii = _parse_float(path, lineno, row, ipi, "pi")
            if not 0.0 < pii < 1.0:
                raise DataError(f"{path}: row {lineno}: propensity must lie in (0, 1), got {row[ipi].strip()}")
        else:
            pii = default_propensity if ai > 0 else 1.0 - default_propensity
        pi.append(pii)
    if not X:
        raise DataError(f"{path}: no data rows")
    bad = [k for k, row in enumerate(X) if not all(map(math.isfinite, row))]
    if bad:
        raise DataError(f"{path}: row {rows[bad[0]][0]}: non-finite covariate")
    return TrialDataset(np.array(X), np.array(a), np.array(r), np.array(pi))


def load_covariates(path) -> np.ndarray:
    """Read only the x1..xp columns of a CSV (other columns are ignored)."""
    path, header, rows = _read_rows(path)
    xidx = _covariate_columns(path, header)
    X = [[_parse_float(path, lineno, row, j, header[j]) for j in xidx] for lineno, row in rows]
    if not X:
        raise DataError(f"{path}: no data rows")
    return np.array(X)


def write_dataset(dataset: TrialDataset, path, include_propensity: bool = True) -> None:
    path = Path(path)
    header = [f"x{j + 1}" for j in range(dataset.p)] + ["a", "r"] + (["pi"] if include_propensity else [])
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(dataset.n):
                row = [f"{v:.17g}" for v in dataset.covariates[i]]
                row += [str(int(dataset.treatments[i])), f"{dataset.outcomes[i]:.17g}"]
                if include_propensity:
                    row.append(f"{dataset.propensities[i]:.17g}")
                w.writerow(row)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
