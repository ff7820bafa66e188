import math

import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from aolearn.exceptions import SolverError
from aolearn.optimize import (
    SolverOptions,
    check_gradient,
    lbfgs_minimize,
    lbfgsb_minimize,
    pss_minimize,
)


def quad(center, scale=None):
    center = np.asarray(center, dtype=float)
    scale = np.ones_like(center) if scale is None else np.asarray(scale, dtype=float)

    def fun(x):
        d = x - center
        return 0.5 * float(np.sum(scale * d * d)), scale * d

    return fun


def rosenbrock(x):
    return float(rosen(x)), rosen_der(x)


class TestLbfgs:
    def test_one_dimensional(self):
        res = lbfgs_minimize(lambda x: (float((x[0] - 3) ** 2), np.array([2 * (x[0] - 3)])), [0.0])
        assert res.converged
        assert res.x[0] == pytest.approx(3.0, abs=1e-6) and res.fun == pytest.approx(0.0, abs=1e-10)

    def test_quadratic_stationarity(self):
        def fun(v):
            x, y = v
            return 0.5 * (x * x + 10 * y * y) - (x + y), np.array([x - 1, 10 * y - 1])

        res = lbfgs_minimize(fun, [0.0, 0.0])
        np.testing.assert_allclose(res.x, [1.0, 0.1], atol=1e-6)

    def test_rosenbrock(self):
        res = lbfgs_minimize(rosenbrock, [-1.2, 1.0])
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)

    def test_monotone_history(self):
        res = lbfgs_minimize(rosenbrock, [-1.2, 1.0])
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 0)

    def test_deterministic(self):
        a = lbfgs_minimize(rosenbrock, [-1.2, 1.0])
        b = lbfgs_minimize(rosenbrock, [-1.2, 1.0])
        assert np.array_equal(a.x, b.x) and a.history == b.history

    def test_max_iterations_status(self):
        res = lbfgs_minimize(rosenbrock, [-1.2, 1.0], SolverOptions(max_iterations=3))
        assert res.status == "max_iter" and res.n_iter == 3

    def test_tuple_unpacking(self):
        x, f, status = lbfgs_minimize(quad([1.0, 2.0]), [0.0, 0.0])
        assert status == "converged" and f == pytest.approx(0.0, abs=1e-12)

    def test_nan_objective_raises(self):
        def fun(x):
            return (math.nan if x[0] > 0.5 else float(-x[0])), np.array([-1.0])

        with pytest.raises(SolverError):
            lbfgs_minimize(fun, [0.0])

    def test_convex_final_not_above_start(self, rng):
        for _ in range(10):
            A = rng.normal(size=(6, 6))
            H = A @ A.T + 0.1 * np.eye(6)
            b = rng.normal(size=6)

            def fun(x):
                return 0.5 * float(x @ H @ x) - float(b @ x), H @ x - b

            x0 = rng.normal(size=6)
            res = lbfgs_minimize(fun, x0)
            assert res.fun <= fun(x0)[0]
            np.testing.assert_allclose(res.x, np.linalg.solve(H, b), atol=1e-4)

    @pytest.mark.parametrize("kw", [{"memory": 0}, {"gradient_tolerance": 0.0}, {"max_iterations": -1}])
    def test_invalid_options(self, kw):
        with pytest.raises(ValueError):
            SolverOptions(**kw)


class TestPss:
    def test_soft_threshold(self):
        res = pss_minimize(quad([2.0]), 1.0, [True], [0.0])
        assert res.converged and res.x[0] == pytest.approx(1.0, abs=1e-7)

    def test_thresholded_to_exact_zero(self):
        res = pss_minimize(quad([0.5]), 1.0, [True], [0.0])
        assert res.x[0] == 0.0

    def test_mask(self):
        res = pss_minimize(quad([0.5, 0.5]), 1.0, [True, False], [0.0, 0.0])
        assert res.x[0] == 0.0 and res.x[1] == pytest.approx(0.5, abs=1e-7)

    def test_optimality_conditions(self, rng):
        for _ in range(10):
            p = 8
            A = rng.normal(size=(30, p))
            y = rng.normal(size=30)

            def fun(w):
                r = A @ w - y
                return 0.5 * float(r @ r) / 30, A.T @ r / 30

            lam = 0.05
            mask = np.ones(p, dtype=bool)
            mask[0] = False
            res = pss_minimize(fun, lam, mask, np.zeros(p), SolverOptions(gradient_tolerance=1e-9))
            g = fun(res.x)[1]
            tol = 1e-6
            for j in range(p):
                if not mask[j]:
                    assert abs(g[j]) <= tol
                elif res.x[j] == 0:
                    assert abs(g[j]) <= lam + tol
                else:
                    assert abs(g[j] + lam * np.sign(res.x[j])) <= tol

    def test_zero_weight_matches_lbfgs(self):
        a = pss_minimize(rosenbrock, 0.0, [True, True], [-1.2, 1.0])
        np.testing.assert_allclose(a.x, [1.0, 1.0], atol=1e-5)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            pss_minimize(quad([1.0]), -1.0, [True], [0.0])


class TestLbfgsb:
    def test_boundary_solution(self):
        res = lbfgsb_minimize(quad([3.0], [2.0]), [0.0], [1.0], [0.5])
        assert res.converged and res.x[0] == pytest.approx(1.0)

    def test_interior_solution(self):
        res = lbfgsb_minimize(quad([3.0], [2.0]), [0.0], [10.0], [0.5])
        assert res.x[0] == pytest.approx(3.0, abs=1e-6)

    def test_half_bounded(self):
        res = lbfgsb_minimize(quad([0.0, 0.0]), [1.0, -np.inf], [np.inf, np.inf], [2.0, 3.0])
        np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-6)

    def test_iterates_stay_in_box(self):
        seen = []

        def fun(x):
            seen.append(x.copy())
            return quad([5.0, -5.0])(x)

        lbfgsb_minimize(fun, [0.0, -1.0], [1.0, 0.0], [0.5, -0.5])
        seen = np.array(seen)
        assert np.all(seen[:, 0] >= 0) and np.all(seen[:, 0] <= 1)
        assert np.all(seen[:, 1] >= -1) and np.all(seen[:, 1] <= 0)

    def test_infeasible_start(self):
        with pytest.raises(SolverError, match="box"):
            lbfgsb_minimize(quad([0.0]), [0.0], [1.0], [2.0])


class TestGradientHarness:
    def test_detects_wrong_gradient(self):
        analytic, numeric = check_gradient(lambda x: (float(x @ x), 3 * x), np.array([1.0, -2.0]))
        assert not np.allclose(analytic, numeric)

    def test_accepts_right_gradient(self):
        analytic, numeric = check_gradient(rosenbrock, np.array([0.3, 0.7]))
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)
