"""Value estimation, cross-validated tuning and the simulation benchmark.

A regime is scored by the normalized IPW value

    sum_i r_i 1[a_i = d_i] / pi_i  /  sum_i 1[a_i = d_i] / pi_i

on data, or, in simulations, by the mean of the true arm means
``oracle_mu(x, d(x))`` over a large independent covariate sample.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import ScenarioSpec, TrialDataset, oracle_mu, simulate_covariates, simulate_scenario
from .exceptions import DataError
from .learner import METHODS, FitConfig, fit_rule, kernel_features
from .residuals import (
    ConstantG,
    GVariant,
    OracleG,
    compute_residuals,
    fit_g,
    reflect,
    with_estimated_propensity,
)

__all__ = [
    "ValueEstimate",
    "CvReport",
    "BenchmarkRow",
    "GSource",
    "ipw_value",
    "aipwe_value",
    "aipwe_identity_check",
    "stratified_folds",
    "default_grid",
    "fit_regime",
    "cross_validate",
    "nested_cv",
    "regime_value",
    "run_benchmark",
]


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    n_matched: int


def ipw_value(dataset: TrialDataset, recommendations, normalized: bool = True) -> ValueEstimate:
    d = np.asarray(recommendations, dtype=float)
    if d.shape != (dataset.n,):
        raise DataError(f"expected {dataset.n} recommendations, got shape {d.shape}")
    match = dataset.treatments == d
    w = match / dataset.propensities
    num = math.fsum(dataset.outcomes * w)
    n_matched = int(match.sum())
    if normalized:
        if n_matched == 0:
            raise DataError("no matched subjects: the normalized value is undefined")
        return ValueEstimate(num / math.fsum(w), n_matched)
    return ValueEstimate(num / dataset.n, n_matched)


def _aipwe_terms(dataset: TrialDataset, d, mu_plus, mu_minus):
    m = np.where(d > 0, mu_plus, mu_minus)
    match = dataset.treatments == d
    return (dataset.outcomes - m) / dataset.propensities * match + m


def aipwe_value(dataset: TrialDataset, recommendations, mu_plus, mu_minus) -> float:
    """(1/n) sum [(r - m(x, d)) / pi * 1[a = d] + m(x, d)], m = mu_{d}."""
    d = np.asarray(recommendations, dtype=float)
    mu_plus = np.broadcast_to(np.asarray(mu_plus, dtype=float), (dataset.n,))
    mu_minus = np.broadcast_to(np.asarray(mu_minus, dtype=float), (dataset.n,))
    if d.shape != (dataset.n,):
        raise DataError(f"expected {dataset.n} recommendations, got shape {d.shape}")
    return math.fsum(_aipwe_terms(dataset, d, mu_plus, mu_minus)) / dataset.n


def aipwe_identity_check(dataset: TrialDataset, recommendations, mu_plus, mu_minus):
    """Per-subject AIPWE terms in two algebraically equal forms.

    ``lhs_i = (r - m(x,d)) / pi * 1[a=d] + m(x,d)`` and
    ``rhs_i = (r - g~(x)) / pi * 1[a=d] + mu_{-a}(x)`` with
    ``g~ = pi(-1|x) mu_+ + pi(+1|x) mu_-``. Returns ``(lhs, rhs, gap)``
    where ``gap`` is the largest absolute difference.
    """
    d = np.asarray(recommendations, dtype=float)
    mu_plus = np.asarray(mu_plus, dtype=float)
    mu_minus = np.asarray(mu_minus, dtype=float)
    lhs = _aipwe_terms(dataset, d, mu_plus, mu_minus)
    pi_plus = dataset.pi_plus
    g = (1.0 - pi_plus) * mu_plus + pi_plus * mu_minus
    mu_other = np.where(dataset.treatments > 0, mu_minus, mu_plus)
    rhs = (dataset.outcomes - g) / dataset.propensities * (dataset.treatments == d) + mu_other
    return lhs, rhs, float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


# -- baselines ---------------------------------------------------------------------


@dataclass(frozen=True)
class GSource:
    """Where the baseline g comes from when fitting a regime.

    ``fitted`` refits ``variant`` on each training set; ``oracle`` uses the
    true arm means of ``scenario_id``; ``zero`` uses g = 0.
    """

    kind: str = "fitted"
    variant: GVariant = field(default_factory=GVariant)
    scenario_id: int | None = None

    def __post_init__(self):
        if self.kind not in ("fitted", "oracle", "zero"):
            raise ValueError(f"g source must be fitted, oracle or zero, got {self.kind!r}")
        if self.kind == "oracle" and self.scenario_id is None:
            raise ValueError("an oracle baseline needs a scenario id")

    def build(self, train: TrialDataset):
        if self.kind == "fitted":
            return fit_g(train, self.variant)
        if self.kind == "oracle":
            return OracleG(self.scenario_id, self.variant.kind)
        return ConstantG(0.0)

    @property
    def label(self) -> str:
        if self.kind == "zero":
            return "zero"
        return self.variant.kind if self.kind == "fitted" else f"oracle_{self.variant.kind}"


def _as_source(g) -> GSource:
    if g is None:
        return GSource()
    if isinstance(g, GSource):
        return g
    if isinstance(g, GVariant):
        return GSource("fitted", g)
    raise TypeError(f"expected GSource or GVariant, got {type(g).__name__}")


# -- grids -------------------------------------------------------------------------

SIGMA_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


def default_grid(method: str, n: int) -> list[dict]:
    """Default tuning grid for ``method`` at training size ``n``."""
    if method == "aol_linear":
        return [{"lam": 2.0**k / n} for k in range(-8, 9)]
    if method == "aol_gaussian":
        return [{"lam": 2.0**k / n, "sigma_scale": s} for s in SIGMA_SCALES for k in range(-8, 9, 2)]
    if method == "aol_vs_linear":
        return [{"lambda1": 2.0**k1 / n, "lambda2": 2.0**k2 / n} for k2 in (-4, 0, 4) for k1 in range(-8, 9, 2)]
    if method == "aol_vs_gaussian":
        return [{"lambda1": 2.0**k1 / n, "lambda2": 2.0**k2 / n} for k2 in (-4, 0, 4) for k1 in range(-4, 5, 2)]
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _regularization_key(cfg: FitConfig) -> tuple:
    """Larger tuples mean more regularization (smoother rules)."""
    width = cfg.sigma if cfg.sigma is not None else cfg.sigma_scale
    return (cfg.lam, cfg.lambda1 or 0.0, cfg.lambda2 or 0.0, -width)


# -- folds -------------------------------------------------------------------------


def stratified_folds(treatments, k: int, seed, max_attempts: int = 10) -> np.ndarray:
    """Fold index per subject, balanced within each arm.

    Every held-out fold must contain both arms; otherwise the assignment is
    redrawn with an incremented seed offset, up to ``max_attempts`` times.
    """
    a = np.asarray(treatments)
    n = a.shape[0]
    if k < 2 or k > n:
        raise DataError(f"need 2 <= folds <= n, got folds={k}, n={n}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng([int(seed), attempt])
        fold = np.empty(n, dtype=int)
        for arm in (1, -1):
            idx = np.flatnonzero(a == arm)
            perm = rng.permutation(idx)
            fold[perm] = (np.arange(idx.size) + rng.integers(k)) % k
        ok = all(np.any(a[fold == f] == 1) and np.any(a[fold == f] == -1) for f in range(k))
        if ok:
            return fold
    raise DataError(f"could not form {k} folds that each contain both arms after {max_attempts} attempts")


# -- fitting -----------------------------------------------------------------------


def _configs(base: FitConfig, grid) -> list[FitConfig]:
    return [replace(base, **params) for params in grid]


def _problem(train: TrialDataset, source: GSource):
    g = source.build(train)
    return reflect(train, compute_residuals(train, g))


def fit_regime(train: TrialDataset, method: str, cfg: FitConfig | None = None, g=None):
    """Baseline, reflection and rule fit on one training set."""
    return fit_rule(method, _problem(train, _as_source(g)), cfg or FitConfig())


def _fit_many(problem, method: str, configs: list[FitConfig]):
    """Fit every config on one problem, sharing kernel eigensolves."""
    cache = {}
    rules = []
    for cfg in configs:
        if method == "aol_gaussian":
            key = (cfg.kernel, cfg.sigma, cfg.sigma_scale, cfg.spectral_cutoff)
            if key not in cache:
                cache[key] = kernel_features(problem, cfg)
            rules.append(fit_rule(method, problem, cfg, features=cache[key]))
        else:
            rules.append(fit_rule(method, problem, cfg))
    return rules


def _fold_job(args):
    dataset, train_idx, test_idx, method, configs, source = args
    train = dataset.subset(train_idx)
    problem = _problem(train, source)
    rules = _fit_many(problem, method, configs)
    Xt = dataset.covariates[test_idx]
    return np.array([rule.predict(Xt) for rule in rules])


def _map(func, jobs_args, jobs: int):
    if jobs <= 1 or len(jobs_args) <= 1:
        return [func(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(func, jobs_args))


@dataclass(frozen=True, eq=False)
class CvReport:
    grid: list
    values: np.ndarray
    chosen_index: int
    seed: int
    folds: int
    method: str

    @property
    def chosen(self) -> dict:
        return dict(self.grid[self.chosen_index])

    @property
    def best_value(self) -> float:
        return float(self.values[self.chosen_index])


def _choose(values, configs) -> int:
    best = max(values)
    tied = [i for i, v in enumerate(values) if v == best]
    top = max(_regularization_key(configs[i]) for i in tied)
    return next(i for i in tied if _regularization_key(configs[i]) == top)


def cross_validate(dataset: TrialDataset, g=None, method: str = "aol_linear", grid=None, folds: int = 10,
                   seed: int = 0, base: FitConfig | None = None, jobs: int = 1) -> CvReport:
    """Tune ``method`` over ``grid`` by arm-stratified K-fold CV.

    The baseline g is refit inside each training part. Held-out
    recommendations are pooled over folds and each config is scored by the
    normalized IPW value on the full dataset. The highest value wins; ties
    go to the more regularized config, then to grid order.
    """
    source = _as_source(g)
    grid = default_grid(method, dataset.n) if grid is None else [dict(c) for c in grid]
    if not grid:
        raise ValueError("the tuning grid is empty")
    configs = _configs(base or FitConfig(), grid)
    fold = stratified_folds(dataset.treatments, folds, seed)
    tasks = []
    for f in range(folds):
        test_idx = np.flatnonzero(fold == f)
        train_idx = np.flatnonzero(fold != f)
        tasks.append((dataset, train_idx, test_idx, method, configs, source))
    results = _map(_fold_job, tasks, jobs)
    recs = np.empty((len(configs), dataset.n))
    for f, block in enumerate(results):
        recs[:, fold == f] = block
    values = []
    for row in recs:
        try:
            values.append(ipw_value(dataset, row).value)
        except DataError:
            values.append(-math.inf)
    idx = _choose(values, configs)
    return CvReport(grid, np.array(values), idx, int(seed), folds, method)


def _child_seed(seed, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


def nested_cv(dataset: TrialDataset, g=None, method: str = "aol_linear", grid=None, outer_folds: int = 10,
              inner_folds: int = 10, seed: int = 0, base: FitConfig | None = None, jobs: int = 1) -> ValueEstimate:
    """Honest value of the tuned procedure.

    Each outer training part is tuned by an inner CV, refit at the chosen
    config, and used to recommend treatments for the outer held-out part;
    the pooled recommendations are scored by the normalized IPW value.
    """
    source = _as_source(g)
    base = base or FitConfig()
    fold = stratified_folds(dataset.treatments, outer_folds, seed)
    recs = np.empty(dataset.n)
    for f in range(outer_folds):
        train = dataset.subset(np.flatnonzero(fold != f))
        inner_grid = default_grid(method, train.n) if grid is None else grid
        rep = cross_validate(train, source, method, inner_grid, inner_folds, _child_seed(seed, f), base, jobs)
        rule = fit_regime(train, method, replace(base, **rep.chosen), source)
        recs[fold == f] = rule.predict(dataset.covariates[fold == f])
    return ipw_value(dataset, recs)


# -- benchmark ---------------------------------------------------------------------


def regime_value(scenario_id: int, rule, X) -> float:
    """Mean true outcome of following ``rule`` on the covariates ``X``."""
    d = rule.predict(X)
    mu = oracle_mu(scenario_id, X, d)
    return math.fsum(np.atleast_1d(mu)) / len(d)


@dataclass(frozen=True)
class BenchmarkRow:
    scenario: int
    n: int
    p: int
    allocation: float
    method: str
    g: str
    mean: float
    sd: float
    replications: int
    seed: int
    values: tuple = field(default=(), repr=False)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("values")
        return d


def _replication_job(args):
    spec, methods, source, grids, test_n, child, folds, base, propensity = args
    train_seed, cv_seed, test_seed = (int(s) for s in child.generate_state(3))
    train = simulate_scenario(replace(spec, seed=train_seed))
    if propensity == "estimated":
        train = with_estimated_propensity(train)
    Xt = simulate_covariates(test_n, spec.p, test_seed)
    out = []
    for method in methods:
        grid = grids.get(method) or default_grid(method, train.n)
        if len(grid) == 1:
            chosen = dict(grid[0])
        else:
            chosen = cross_validate(train, source, method, grid, folds, cv_seed, base).chosen
        rule = fit_regime(train, method, replace(base, **chosen), source)
        out.append(regime_value(spec.scenario_id, rule, Xt))
    return out


def _mean_sd(values) -> tuple[float, float]:
    m = math.fsum(values) / len(values)
    if len(values) < 2:
        return m, 0.0
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in values) / (len(values) - 1))


def run_benchmark(spec: ScenarioSpec, methods=("aol_linear",), g="fitted", replications: int = 100,
                  test_n: int = 10_000, seed: int = 0, grids: dict | None = None, folds: int = 10,
                  base: FitConfig | None = None, propensity: str = "given", jobs: int = 1,
                  variant: GVariant | None = None) -> list[BenchmarkRow]:
    """Simulate, tune, fit and score ``replications`` times per method.

    ``g`` is ``fitted``, ``oracle`` or ``zero`` (or a :class:`GSource`);
    ``propensity="estimated"`` replaces the true propensities of each
    training set by a logistic fit. Each replication draws its training
    data, fold seed and test covariates from its own spawned seed, so the
    rows do not depend on ``jobs``.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    if propensity not in ("given", "estimated"):
        raise ValueError("propensity must be 'given' or 'estimated'")
    if isinstance(g, GSource):
        source = g
    else:
        source = GSource(g, variant or GVariant(), spec.scenario_id)
    base = base or FitConfig()
    children = np.random.SeedSequence(int(seed)).spawn(replications)
    tasks = [(spec, tuple(methods), source, dict(grids or {}), test_n, c, folds, base, propensity) for c in children]
    per_rep = _map(_replication_job, tasks, jobs)
    rows = []
    for j, method in enumerate(methods):
        vals = [rep[j] for rep in per_rep]
        mean, sd = _mean_sd(vals)
        rows.append(BenchmarkRow(spec.scenario_id, spec.n, spec.p, spec.allocation, method, source.label,
                                 mean, sd, replications, int(seed), tuple(vals)))
    return rows
