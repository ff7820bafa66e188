import math

import numpy as np
import pytest
from scipy import stats

from aolearn.data import (
    ScenarioSpec,
    TrialDataset,
    load_covariates,
    load_dataset,
    oracle_contrast,
    oracle_mu,
    simulate_scenario,
    write_dataset,
)
from aolearn.exceptions import DataError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDataset:
    def test_round_trip_with_pi(self, tmp_path):
        f = _write(tmp_path / "d.csv", "x1,x2,a,r,pi\n0.5,-1,1,2.25,0.6\n0,0,-1,-3,0.4\n1e-3,2,1,0,0.9\n")
        ds = load_dataset(f)
        assert ds.n == 3 and ds.p == 2
        np.testing.assert_array_equal(ds.covariates, [[0.5, -1], [0, 0], [1e-3, 2]])
        np.testing.assert_array_equal(ds.treatments, [1, -1, 1])
        np.testing.assert_array_equal(ds.outcomes, [2.25, -3, 0])
        np.testing.assert_array_equal(ds.propensities, [0.6, 0.4, 0.9])

    def test_default_propensity_fill(self, tmp_path):
        f = _write(tmp_path / "d.csv", "x1,a,r\n0.1,1,1\n0.2,-1,2\n")
        ds = load_dataset(f, default_propensity=0.5)
        np.testing.assert_array_equal(ds.propensities, [0.5, 0.5])

    def test_default_propensity_is_for_arm_plus(self, tmp_path):
        f = _write(tmp_path / "d.csv", "x1,a,r\n0.1,1,1\n0.2,-1,2\n")
        ds = load_dataset(f, default_propensity=0.75)
        np.testing.assert_array_equal(ds.propensities, [0.75, 0.25])

    def test_bad_treatment_names_row(self, tmp_path):
        f = _write(tmp_path / "d.csv", "x1,a,r,pi\n0.1,1,1,0.5\n0.2,0,2,0.5\n")
        with pytest.raises(DataError, match="row 3"):
            load_dataset(f)

    def test_comment_lines_ignored_and_row_numbers_are_file_lines(self, tmp_path):
        f = _write(tmp_path / "d.csv", "# trial\nx1,a,r,pi\n# note\n0.1,1,1,0.5\n0.2,1,2,1.5\n")
        with pytest.raises(DataError, match="row 5"):
            load_dataset(f)

    @pytest.mark.parametrize("text,msg", [
        ("x1,a,pi\n0.1,1,0.5\n", "missing required column 'r'"),
        ("x1,x3,a,r\n0,0,1,1\n", "x1..xp"),
        ("x1,a,r,pi\n0.1,1,abc,0.5\n", "row 2"),
        ("x1,a,r,pi\n0.1,1,1\n", "row 2"),
        ("x1,a,r,pi\n0.1,1,1,0\n", "propensity"),
        ("x1,a,r,pi\nnan,1,1,0.5\n", "non-finite"),
    ])
    def test_validation_errors(self, tmp_path, text, msg):
        with pytest.raises(DataError, match=msg):
            load_dataset(_write(tmp_path / "d.csv", text))

    def test_missing_pi_without_default_is_an_error(self, tmp_path):
        with pytest.raises(DataError, match="pi"):
            load_dataset(_write(tmp_path / "d.csv", "x1,a,r\n0,1,1\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_dataset(tmp_path / "nope.csv")

    def test_write_then_load_is_exact(self, tmp_path):
        ds = simulate_scenario(ScenarioSpec(2, p=6, allocation=0.3, n=25, seed=4))
        write_dataset(ds, tmp_path / "s.csv")
        back = load_dataset(tmp_path / "s.csv")
        for name in ("covariates", "treatments", "outcomes", "propensities"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
        np.testing.assert_array_equal(load_covariates(tmp_path / "s.csv"), ds.covariates)


class TestTrialDataset:
    def test_rejects_bad_propensity(self):
        with pytest.raises(DataError):
            TrialDataset(np.zeros((2, 1)), np.array([1.0, -1.0]), np.zeros(2), np.array([0.5, 1.0]))

    def test_rejects_bad_treatment(self):
        with pytest.raises(DataError):
            TrialDataset(np.zeros((2, 1)), np.array([1.0, 2.0]), np.zeros(2), np.array([0.5, 0.5]))

    def test_arrays_are_read_only(self):
        ds = simulate_scenario(ScenarioSpec(n=5))
        with pytest.raises(ValueError):
            ds.outcomes[0] = 1.0

    def test_pi_plus(self):
        ds = TrialDataset(np.zeros((2, 1)), np.array([1.0, -1.0]), np.zeros(2), np.array([0.7, 0.2]))
        np.testing.assert_allclose(ds.pi_plus, [0.7, 0.8])


class TestScenarios:
    def test_scenario1_mean_at_origin(self):
        assert oracle_mu(1, np.zeros(5), 1) == pytest.approx(0.7, abs=1e-15)
        assert oracle_mu(1, np.zeros(5), -1) == pytest.approx(0.3, abs=1e-15)

    def test_scenario3_contrast_at_origin(self):
        assert oracle_contrast(3, np.zeros(5)) == pytest.approx(1.2, abs=1e-15)

    def test_contrast_examples(self):
        assert oracle_contrast(1, np.zeros(5)) == pytest.approx(0.4, abs=1e-15)
        assert oracle_contrast(1, np.array([1.0, 1, 0, 0, 0])) == pytest.approx(-2.4, abs=1e-14)
        assert oracle_contrast(2, np.zeros(5)) == pytest.approx(math.exp(0.7) - math.exp(0.3), abs=1e-14)

    def test_mu_examples(self):
        assert oracle_mu(4, np.zeros(5), 1) == pytest.approx(math.exp(1.1), rel=1e-15)
        assert oracle_mu(3, np.array([1.0, 0, 0, 0, 0]), 1) == pytest.approx(0.7, abs=1e-15)

    def test_contrast_is_difference_of_means(self, rng):
        X = rng.uniform(-1, 1, (200, 7))
        for s in (1, 2, 3, 4):
            assert np.array_equal(oracle_contrast(s, X), oracle_mu(s, X, 1) - oracle_mu(s, X, -1))

    def test_determinism(self):
        spec = ScenarioSpec(3, p=6, allocation=0.25, n=50, seed=99)
        a, b = simulate_scenario(spec), simulate_scenario(spec)
        for name in ("covariates", "treatments", "outcomes", "propensities"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_different_seeds_differ(self):
        a = simulate_scenario(ScenarioSpec(seed=1))
        b = simulate_scenario(ScenarioSpec(seed=2))
        assert not np.array_equal(a.outcomes, b.outcomes)

    def test_p_below_five_rejected(self):
        with pytest.raises(DataError, match="p must be >= 5"):
            ScenarioSpec(p=4)

    @pytest.mark.parametrize("kw", [{"scenario_id": 5}, {"allocation": 1.0}, {"allocation": 0.0}, {"n": 0}])
    def test_invalid_specs(self, kw):
        with pytest.raises(DataError):
            ScenarioSpec(**kw)

    def test_allocation_propensities(self):
        ds = simulate_scenario(ScenarioSpec(allocation=0.75, n=200, seed=3))
        assert set(np.unique(ds.propensities)) <= {0.75, 0.25}
        np.testing.assert_array_equal(ds.propensities == 0.75, ds.treatments == 1)

    def test_treatment_frequency_matches_allocation(self):
        n = 100_000
        ds = simulate_scenario(ScenarioSpec(allocation=0.3, n=n, seed=11))
        k = int(np.sum(ds.treatments == 1))
        lo, hi = stats.binom.interval(0.99, n, 0.3)
        assert lo <= k <= hi

    def test_outcome_means_match_q0_near_origin(self):
        ds = simulate_scenario(ScenarioSpec(1, n=100_000, seed=12))
        near = np.max(np.abs(ds.covariates), axis=1) < 0.5
        for arm in (1, -1):
            m = near & (ds.treatments == arm)
            resid = ds.outcomes[m] - oracle_mu(1, ds.covariates[m], arm)
            z = resid.mean() / (1.0 / math.sqrt(m.sum()))
            assert abs(z) < 3.5

    def test_confounded_variant_tilts_assignment(self):
        ds = simulate_scenario(ScenarioSpec(1, n=20_000, seed=5, propensity_coef=(2.0,)))
        x1 = ds.covariates[:, 0]
        assert np.mean(ds.treatments[x1 > 0.5] == 1) > 0.75
        assert np.mean(ds.treatments[x1 < -0.5] == 1) < 0.25
