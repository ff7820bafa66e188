import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aolearn.data import ScenarioSpec, TrialDataset, simulate_scenario

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scenario1_400():
    return simulate_scenario(ScenarioSpec(1, n=400, seed=2024))


def random_dataset(rng, n=10, p=3, allocation=None) -> TrialDataset:
    X = rng.uniform(-1, 1, (n, p))
    a = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
    pi_plus = rng.uniform(0.2, 0.8, n) if allocation is None else np.full(n, allocation)
    pi = np.where(a > 0, pi_plus, 1 - pi_plus)
    r = rng.normal(size=n)
    return TrialDataset(X, a, r, pi)
