"""Dual binary search, the PULSE wrapper, and the primal oracle."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulse_iv import inference
from pulse_iv.data import Dataset, DesignView
from pulse_iv.estimators import EstimatorSpec, fuller_estimate
from pulse_iv.exceptions import OutOfDomain
from pulse_iv.inference import PLAIN, TestConfig, chi2_quantile
from pulse_iv.pulse import (
    MESSAGE_TEXT,
    PulseConfig,
    PulseMessage,
    lambda_star_search,
    primal_solve,
    pulse_estimate,
    t_star,
)

from conftest import make_instance, oracle_lambda_bisection


def weak_confounding_view(seed: int = 1) -> DesignView:
    """Instance where the OLS solution passes the test."""
    return make_instance(seed, n=50, d1=1, q=1, confounding=0.05, instrument_strength=0.25)


def invalid_instrument_view(seed: int = 0, n: int = 400) -> DesignView:
    """Over-identified instance whose instruments enter the target equation."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 2))
    x = a @ np.array([1.0, 0.5]) + rng.normal(size=n)
    y = 0.5 * x + a @ np.array([0.9, -0.7]) + rng.normal(size=n)
    return DesignView(Dataset(y=y, x=x[:, None], a=a))


class TestLambdaStarSearch:
    def test_zero_when_ols_accepted(self):
        view = weak_confounding_view()
        cfg = PulseConfig()
        stat_ols = inference.test_statistic(view, view.kclass_solve(0.0), cfg.test_cfg)
        assert stat_ols.accepted
        assert lambda_star_search(view, cfg) == 0.0

    def test_infinite_when_tsls_rejected(self):
        view = invalid_instrument_view()
        assert lambda_star_search(view, PulseConfig()) == math.inf

    def test_matches_fine_oracle(self):
        view = make_instance(40, n=120, d1=1, q=1, confounding=0.9)
        cfg = PulseConfig(precision_n=10**6)
        result = lambda_star_search(view, cfg)
        oracle = oracle_lambda_bisection(view, cfg.test_cfg, precision=1e-7)
        assert abs(result - oracle) <= 2e-6
        stat = inference.test_statistic(view, view.kclass_solve(result / (1 + result)), cfg.test_cfg)
        assert abs(stat.statistic - stat.threshold) <= 1e-6 * stat.threshold

    def test_finite_in_under_identified_setup(self):
        view = make_instance(41, n=100, d1=2, q=1, confounding=0.9)
        lam = lambda_star_search(view, PulseConfig())
        assert math.isfinite(lam)

    def test_fast_init_agrees_with_doubling(self):
        view = make_instance(42, n=90, d1=1, q=1, confounding=0.9)
        slow = lambda_star_search(view, PulseConfig(precision_n=2**20))
        fast = lambda_star_search(view, PulseConfig(precision_n=2**20, fast_init=True))
        assert abs(slow - fast) <= 2.0 / 2**20


class TestPulseEstimate:
    def test_ols_branch_returns_exact_ols(self):
        view = weak_confounding_view()
        res = pulse_estimate(view)
        assert res.message is PulseMessage.OLS_ACCEPTED
        assert res.lambda_star == 0.0 and res.kappa_star == 0.0
        assert not res.fallback_used
        np.testing.assert_array_equal(res.alpha, view.kclass_solve(0.0))

    def test_fallback_branch(self):
        view = invalid_instrument_view()
        res = pulse_estimate(view)
        assert res.message is PulseMessage.TSLS_REJECTED_FALLBACK
        assert res.fallback_used and math.isinf(res.lambda_star)
        np.testing.assert_allclose(res.alpha, fuller_estimate(view, 4.0).alpha, atol=1e-12)

    def test_fallback_spec_is_honoured(self):
        view = invalid_instrument_view()
        cfg = PulseConfig(fallback=EstimatorSpec.tsls())
        res = pulse_estimate(view, cfg)
        assert res.diagnostics["fallback"] == "tsls"

    def test_interior_branch_invariants(self):
        view = make_instance(43, n=150, d1=1, q=1, confounding=0.9)
        res = pulse_estimate(view)
        assert res.message is PulseMessage.NONE
        assert res.kappa_star == pytest.approx(
            res.lambda_star / (1.0 + res.lambda_star), abs=1e-12
        )
        np.testing.assert_allclose(
            res.alpha, view.kclass_solve(res.kappa_star), atol=1e-10
        )
        # acceptance membership and boundary activity
        assert res.test_at_solution.statistic <= res.test_at_solution.threshold * (1 + 1e-9)
        assert (
            abs(res.test_at_solution.statistic - res.test_at_solution.threshold)
            <= 1e-4 * res.test_at_solution.threshold
        )

    def test_message_strings_match_algorithm(self):
        assert MESSAGE_TEXT[PulseMessage.OLS_ACCEPTED] == "Warning: The OLS is accepted."
        assert (
            MESSAGE_TEXT[PulseMessage.TSLS_REJECTED_FALLBACK]
            == "Warning: TSLS outside interior of acceptance region."
        )

    def test_rejects_inconsistent_config(self):
        with pytest.raises(ValueError, match="disagrees"):
            PulseConfig(p_min=0.05, test_cfg=TestConfig(p_min=0.1))
        with pytest.raises(ValueError, match="consistent estimator"):
            PulseConfig(fallback=EstimatorSpec.ols())


class TestMonotonicity:
    def test_losses_and_statistic_along_path(self):
        view = make_instance(44, n=80, d1=2, q=2, confounding=0.8)
        grid = np.concatenate([[0.0], np.logspace(-2, 2, 60)])
        ols_vals, iv_vals, t_vals = [], [], []
        for lam in grid:
            alpha = view.kclass_solve(lam / (1.0 + lam))
            ols_vals.append(view.ols_loss(alpha))
            iv_vals.append(view.iv_loss(alpha))
            t_vals.append(view.n * iv_vals[-1] / ols_vals[-1])
        for seq, sign in ((ols_vals, 1.0), (iv_vals, -1.0), (t_vals, -1.0)):
            diffs = sign * np.diff(seq)
            slack = 1e-12 * np.maximum(1.0, np.abs(seq[:-1]))
            assert np.all(diffs >= -slack)


class TestPrimal:
    def test_bound_at_ols_returns_ols(self):
        view = make_instance(45, n=70, d1=1, q=2, confounding=0.7)
        iv_at_ols = view.iv_loss(view.kclass_solve(0.0))
        np.testing.assert_allclose(
            primal_solve(view, iv_at_ols), view.kclass_solve(0.0), atol=1e-12
        )

    def test_matches_kclass_along_path(self):
        view = make_instance(46, n=70, d1=1, q=2, confounding=0.7)
        for lam in (0.3, 2.0, 15.0):
            alpha = view.kclass_solve(lam / (1.0 + lam))
            t = view.iv_loss(alpha)
            np.testing.assert_allclose(primal_solve(view, t), alpha, atol=1e-6)

    def test_just_identified_bound_to_zero_approaches_tsls(self):
        view = make_instance(47, n=70, d1=1, q=1, confounding=0.7)
        tsls = view.kclass_solve(1.0)
        close = primal_solve(view, 1e-9 * view.iv_loss(view.kclass_solve(0.0)))
        assert np.linalg.norm(close - tsls) <= 1e-3 * (1.0 + np.linalg.norm(tsls))

    def test_out_of_domain(self):
        view = make_instance(48, n=70, d1=1, q=2, confounding=0.7)
        with pytest.raises(OutOfDomain):
            primal_solve(view, view.iv_loss(view.kclass_solve(0.0)) * 1.5)
        with pytest.raises(OutOfDomain):
            primal_solve(view, view.min_iv_loss() * 0.99 - 1e-12)

    def test_constraint_active(self):
        view = make_instance(49, n=70, d1=2, q=3, confounding=0.8)
        iv_at_ols = view.iv_loss(view.kclass_solve(0.0))
        t = 0.5 * (view.min_iv_loss() + iv_at_ols)
        alpha = primal_solve(view, t)
        assert view.iv_loss(alpha) == pytest.approx(t, abs=1e-8 * max(1.0, t))


class TestTStar:
    def test_ols_accepted_returns_right_endpoint(self):
        view = weak_confounding_view()
        assert t_star(view) == pytest.approx(view.iv_loss(view.kclass_solve(0.0)), rel=1e-12)

    def test_infeasible_returns_neg_infinity(self):
        view = invalid_instrument_view()
        assert t_star(view) == -math.inf

    def test_primal_at_t_star_matches_pulse(self):
        view = make_instance(50, n=120, d1=1, q=1, confounding=0.9)
        res = pulse_estimate(view)
        assert res.message is PulseMessage.NONE
        ts = t_star(view)
        alpha_primal = primal_solve(view, ts)
        scale = 1.0 + float(np.linalg.norm(res.alpha))
        assert np.linalg.norm(alpha_primal - res.alpha) <= 1e-5 * scale


class TestDualIdentityProperty:
    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 500), lam=st.floats(0.01, 50.0))
    def test_primal_reproduces_any_path_point(self, seed, lam):
        view = make_instance(seed % 25, n=60, d1=1 + seed % 2, q=2, confounding=0.7)
        alpha = view.kclass_solve(lam / (1.0 + lam))
        t = view.iv_loss(alpha)
        if t <= view.min_iv_loss() * (1 + 1e-9):
            return  # path already at the IV optimum; bound outside the open domain
        np.testing.assert_allclose(primal_solve(view, t), alpha, atol=1e-6)


class TestPlainScalingPath:
    def test_search_under_plain_scaling(self):
        view = make_instance(51, n=100, d1=1, q=2, confounding=0.9)
        cfg = PulseConfig(test_cfg=TestConfig(p_min=0.05, scaling=PLAIN))
        res = pulse_estimate(view, cfg)
        stat = inference.test_statistic(view, res.alpha, cfg.test_cfg)
        if res.message is PulseMessage.NONE:
            assert abs(stat.statistic - chi2_quantile(view.q, 0.95)) <= 1e-3 * stat.threshold
        assert stat.accepted or res.fallback_used
