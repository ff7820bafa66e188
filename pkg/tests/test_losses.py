import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aolearn.losses import (
    EQUALITY_LOSSES,
    ConditionalRisk,
    LossKind,
    SurrogateLoss,
    conditional_risk,
    excess_bound_check,
    excess_bound_sweep,
    fisher_consistent,
    loss_derivative,
    loss_value,
    minimize_scalar_convex,
    optimal_conditional_risk,
)

ALL = list(LossKind)
KINKS = {LossKind.HINGE: [1.0], LossKind.SQUARED_HINGE: [1.0], LossKind.HUBERIZED_HINGE: [1.0, -1.0],
         LossKind.DWD: [1.0]}


class TestValues:
    @pytest.mark.parametrize("u,expected", [(2.0, 0.0), (0.0, 0.25), (-3.0, 3.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_huberized_hinge(self, u, expected):
        assert loss_value("huberized_hinge", u) == expected

    def test_other_losses_at_zero(self):
        assert loss_value("hinge", 0.0) == 1.0
        assert loss_value("squared_hinge", 0.0) == 1.0
        assert loss_value("least_squares", 2.0) == 1.0
        assert loss_value("logistic", 0.0) == pytest.approx(math.log(2))
        assert loss_value("dwd", 0.0) == 2.0
        assert loss_value("dwd", 2.0) == 0.5
        assert loss_value("exponential", 0.0) == 1.0

    def test_vectorized_and_finite(self):
        u = np.array([-1e3, -5.0, 0.0, 5.0, 1e3])
        for kind in ALL:
            if kind is LossKind.EXPONENTIAL:
                continue
            v = loss_value(kind, u)
            assert v.shape == u.shape and np.all(np.isfinite(v)) and np.all(v >= 0)

    def test_surrogate_loss_object(self):
        loss = SurrogateLoss("logistic")
        assert loss.kind is LossKind.LOGISTIC
        assert loss.value(0.0) == pytest.approx(math.log(2))
        assert str(loss) == "logistic"
        with pytest.raises(ValueError):
            SurrogateLoss("ramp")


class TestDerivatives:
    def test_examples(self):
        assert loss_derivative("huberized_hinge", 0.0) == -0.5
        assert loss_derivative("huberized_hinge", 1.0) == 0.0
        assert loss_derivative("exponential", 0.0) == -1.0

    def test_kink_conventions(self):
        assert loss_derivative("hinge", 1.0) == 0.0
        assert loss_derivative("dwd", 1.0) == -1.0

    def test_logistic_derivative_is_overflow_safe(self):
        with np.errstate(over="raise", invalid="raise"):
            d = loss_derivative("logistic", np.array([-1e4, 1e4]))
        np.testing.assert_allclose(d, [-1.0, 0.0])

    @pytest.mark.parametrize("kind", ALL)
    def test_matches_central_differences(self, kind, rng):
        u = rng.uniform(-4, 4, 1000)
        for k in KINKS.get(kind, []):
            u = u[np.abs(u - k) > 1e-3]
        h = 1e-6
        fd = (loss_value(kind, u + h) - loss_value(kind, u - h)) / (2 * h)
        np.testing.assert_allclose(loss_derivative(kind, u), fd, atol=1e-6)


class TestConvexity:
    @pytest.mark.parametrize("kind", ALL)
    def test_midpoint_inequality(self, kind, rng):
        u, v = rng.uniform(-6, 6, (2, 10_000))
        t = rng.uniform(0, 1, 10_000)
        lhs = loss_value(kind, t * u + (1 - t) * v)
        rhs = t * loss_value(kind, u) + (1 - t) * loss_value(kind, v)
        assert np.all(lhs <= rhs + 1e-12)


class TestFisherConsistency:
    @pytest.mark.parametrize("kind", ALL)
    def test_all_seven_are_consistent(self, kind):
        assert fisher_consistent(kind)

    def test_kink_at_zero_is_not(self):
        assert not fisher_consistent(lambda u: max(0.0, -u))

    def test_increasing_at_zero_is_not(self):
        assert not fisher_consistent(lambda u: math.exp(u))

    def test_flat_at_zero_is_not(self):
        assert not fisher_consistent(lambda u: u * u)


class TestConditionalRisk:
    def test_examples(self):
        assert conditional_risk("hinge", ConditionalRisk(1, 0), 1.0) == 0.0
        assert conditional_risk("huberized_hinge", ConditionalRisk(1, 1), 0.0) == 0.5
        for kind in ALL:
            assert conditional_risk(kind, ConditionalRisk(2, 1), 0.0) == pytest.approx(3 * loss_value(kind, 0.0))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            ConditionalRisk(-1.0, 1.0)


class TestOptimalConditionalRisk:
    def test_hinge(self):
        assert optimal_conditional_risk("hinge", ConditionalRisk(3, 1))[1] == 2.0

    def test_huberized(self):
        alpha, H = optimal_conditional_risk("huberized_hinge", ConditionalRisk(1, 3))
        assert alpha == pytest.approx(-0.5) and H == pytest.approx(0.75)

    def test_exponential(self):
        alpha, H = optimal_conditional_risk("exponential", ConditionalRisk(4, 1))
        assert alpha == pytest.approx(0.5 * math.log(4)) and H == pytest.approx(4.0)

    @pytest.mark.parametrize("kind", [LossKind.LOGISTIC, LossKind.DWD, LossKind.EXPONENTIAL])
    def test_unbounded_minimizer_when_one_weight_is_zero(self, kind):
        alpha, H = optimal_conditional_risk(kind, ConditionalRisk(1, 0))
        assert alpha == math.inf and H == 0.0
        alpha, _ = optimal_conditional_risk(kind, ConditionalRisk(0, 2))
        assert alpha == -math.inf

    @pytest.mark.parametrize("kind", ALL)
    def test_closed_form_matches_golden_section(self, kind, rng):
        for e1, e2 in rng.uniform(0.05, 10, (25, 2)):
            cr = ConditionalRisk(e1, e2)
            _, H = optimal_conditional_risk(kind, cr)
            _, H_num = minimize_scalar_convex(lambda t: float(conditional_risk(kind, cr, t)))
            assert H == pytest.approx(H_num, rel=1e-8, abs=1e-10)

    def test_callable_loss_uses_numeric_minimization(self):
        alpha, H = optimal_conditional_risk(lambda u: (1 - u) ** 2, ConditionalRisk(3, 1))
        assert alpha == pytest.approx(0.5, abs=1e-6) and H == pytest.approx(3.0, abs=1e-8)

    @pytest.mark.parametrize("kind", ALL)
    def test_H_is_a_lower_bound(self, kind, rng):
        etas = rng.uniform(0, 10, (1000, 2))
        alphas = rng.uniform(-20, 20, 1000)
        for e1, e2 in etas:
            _, H = optimal_conditional_risk(kind, ConditionalRisk(e1, e2))
            q = e1 * loss_value(kind, alphas) + e2 * loss_value(kind, -alphas)
            assert np.min(q - H) >= -1e-9

    @pytest.mark.parametrize("kind", ALL)
    def test_sign_agreement(self, kind, rng):
        for e1, e2 in rng.uniform(0.01, 10, (500, 2)):
            if e1 == e2:
                continue
            alpha, _ = optimal_conditional_risk(kind, ConditionalRisk(e1, e2))
            assert np.sign(alpha) == np.sign(e1 - e2)

    @given(st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.sampled_from(ALL))
    def test_minimizer_attains_H(self, e1, e2, kind):
        alpha, H = optimal_conditional_risk(kind, ConditionalRisk(e1, e2))
        if math.isfinite(alpha):
            assert float(conditional_risk(kind, ConditionalRisk(e1, e2), alpha)) == pytest.approx(H, rel=1e-9, abs=1e-9)


class TestExcessBound:
    def test_hinge_equality(self):
        lhs, rhs, holds = excess_bound_check("hinge", ConditionalRisk(3, 1))
        assert (lhs, rhs, holds) == (2.0, 2.0, True)

    def test_huberized_equality(self):
        lhs, rhs, holds = excess_bound_check("huberized_hinge", ConditionalRisk(2, 1))
        assert lhs == pytest.approx(1.0) and rhs == pytest.approx(1.0) and holds

    def test_logistic_with_zero_weight(self):
        assert excess_bound_check("logistic", ConditionalRisk(0, 1))[2]

    def test_grid_sweep(self):
        recs = excess_bound_sweep(grid_size=60)
        assert len(recs) == 7 * 60 * 60
        assert all(r["holds"] for r in recs)
        for r in recs:
            if LossKind(r["loss"]) in EQUALITY_LOSSES:
                assert r["equality_gap"] <= 1e-9

    def test_sweep_subset(self):
        recs = excess_bound_sweep(["dwd"], eta_max=2.0, grid_size=5)
        assert {r["loss"] for r in recs} == {"dwd"} and len(recs) == 25
        assert all(math.isnan(r["equality_gap"]) for r in recs)


def test_minimize_scalar_convex_expands_bracket():
    x, fx = minimize_scalar_convex(lambda t: (t - 120.0) ** 2)
    assert x == pytest.approx(120.0, abs=1e-6) and fx == pytest.approx(0.0, abs=1e-9)


def test_minimize_scalar_convex_reports_unbounded():
    # convex, decreasing, infimum 0 approached only as t -> inf
    x, _ = minimize_scalar_convex(lambda t: 1.0 / (math.sqrt(1.0 + t * t) + t))
    assert x == math.inf
