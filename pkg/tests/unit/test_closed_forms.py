"""Tests for least-squares closed forms against brute-force refits."""

import numpy as np
import pytest
from hypothesis import assume, given, seed, settings
from hypothesis import strategies as st

from cvlab.core.closed_forms import (
    condition_number,
    downdated_coef,
    gcv_ols,
    gcv_unsquared,
    loo_ols_closed_form,
    loo_ols_linear_leverage,
    loo_ols_refit,
    ols_fold_costs,
    solve_ols,
    woodbury_downdate,
)
from cvlab.core.errors import DegenerateLeverageError, DegenerateSmootherError, ShapeError, SingularityError
from cvlab.core.splits import vfold

LOO_RTOL = 1e-9
WOODBURY_RTOL = 1e-8


def random_instance(rng, n, d):
    X = rng.standard_normal((n, d))
    y = X @ rng.standard_normal(d) + rng.standard_normal(n)
    return X, y


def well_posed(X):
    fit = solve_ols(X, np.zeros(X.shape[0]))
    return condition_number(X.T @ X) < 1e8 and fit.hat_diagonal().max() < 0.99


class TestSolveOLS:
    """Test the least-squares solver."""

    def test_matches_lstsq(self, rng):
        """Coefficients agree with numpy's least squares."""
        X, y = random_instance(rng, 30, 4)
        fit = solve_ols(X, y)
        np.testing.assert_allclose(fit.coef, np.linalg.lstsq(X, y, rcond=None)[0], rtol=1e-10)
        np.testing.assert_allclose(fit.xtx_inv, np.linalg.inv(X.T @ X), rtol=1e-9)
        assert fit.hat_trace() == pytest.approx(4.0)
        np.testing.assert_allclose(np.diag(fit.hat_matrix()), fit.hat_diagonal(), rtol=1e-12)

    def test_rank_deficient(self, rng):
        """n < d and collinear columns raise SingularityError."""
        with pytest.raises(SingularityError):
            solve_ols(rng.standard_normal((2, 3)), np.zeros(2))
        x = rng.standard_normal(10)
        with pytest.raises(SingularityError):
            solve_ols(np.column_stack([x, 2.0 * x]), np.zeros(10))

    def test_shape_checks(self):
        """Row counts must agree."""
        with pytest.raises(ShapeError):
            solve_ols(np.ones((3, 1)), np.ones(4))


class TestLeaveOneOut:
    """Test leave-one-out closed forms."""

    def test_random_instances_match_refit(self):
        """200 random instances (n <= 40, d <= 5) agree with n refits."""
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 200:
            d = int(rng.integers(1, 6))
            n = int(rng.integers(d + 2, 41))
            X, y = random_instance(rng, n, d)
            if not well_posed(X):
                continue
            closed = loo_ols_closed_form(X, y)
            brute = loo_ols_refit(X, y)
            assert closed == pytest.approx(brute, rel=LOO_RTOL)
            checked += 1

    @seed(7)
    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(4, 30), d=st.integers(1, 4), data_seed=st.integers(0, 2**31))
    def test_property_matches_refit(self, n, d, data_seed):
        """Closed form equals brute force on any well-posed instance."""
        assume(n >= d + 2)
        X, y = random_instance(np.random.default_rng(data_seed), n, d)
        assume(well_posed(X))
        assert loo_ols_closed_form(X, y) == pytest.approx(loo_ols_refit(X, y), rel=LOO_RTOL)

    def test_perfect_fit_is_zero(self, rng):
        """Noise-free data gives zero leave-one-out error."""
        X = rng.standard_normal((15, 2))
        y = X @ np.array([1.0, -1.0])
        assert loo_ols_closed_form(X, y) == pytest.approx(0.0, abs=1e-20)

    def test_first_power_variant_differs(self, rng):
        """The first-power denominator underestimates the refit error."""
        X, y = random_instance(rng, 20, 3)
        assert loo_ols_linear_leverage(X, y) < loo_ols_closed_form(X, y)

    def test_degenerate_leverage(self, rng):
        """An observation with leverage 1 raises DegenerateLeverageError."""
        indicator = np.zeros(10)
        indicator[3] = 1.0
        X = np.column_stack([rng.standard_normal(10), indicator])
        y = rng.standard_normal(10)
        with pytest.raises(DegenerateLeverageError) as excinfo:
            loo_ols_closed_form(X, y)
        assert excinfo.value.exit_code == 3


class TestGCV:
    """Test generalized cross-validation."""

    def test_formula(self):
        """(RSS/n) / (1 - tr/n)^2."""
        assert gcv_ols(2.0, 8.0, 10) == pytest.approx(0.8 / 0.64)
        assert gcv_unsquared(2.0, 8.0, 10) == pytest.approx(1.0)

    def test_close_to_loo_for_balanced_design(self):
        """With equal leverages GCV equals leave-one-out."""
        X = np.ones((12, 1))
        y = np.arange(12.0)
        fit = solve_ols(X, y)
        assert gcv_ols(fit.hat_trace(), fit.rss, fit.n) == pytest.approx(loo_ols_closed_form(X, y))

    def test_degenerate_smoother(self):
        """trace(H) >= n raises."""
        with pytest.raises(DegenerateSmootherError):
            gcv_ols(10.0, 1.0, 10)
        with pytest.raises(DegenerateSmootherError):
            gcv_unsquared(11.0, 1.0, 10)


class TestWoodbury:
    """Test rank-q downdates of (X'X)^-1."""

    def test_random_instances(self):
        """200 instances, q in {1, 2, 3}, match direct inversion."""
        rng = np.random.default_rng(99)
        checked = 0
        while checked < 200:
            d = int(rng.integers(1, 6))
            q = int(rng.integers(1, 4))
            n = int(rng.integers(d + q + 2, 41))
            X = rng.standard_normal((n, d))
            removed = rng.choice(n, size=q, replace=False)
            keep = np.setdiff1d(np.arange(n), removed)
            if condition_number(X[keep].T @ X[keep]) > 1e8:
                continue
            updated = woodbury_downdate(np.linalg.inv(X.T @ X), X[removed])
            direct = np.linalg.inv(X[keep].T @ X[keep])
            error = np.linalg.norm(updated - direct) / np.linalg.norm(direct)
            assert error <= WOODBURY_RTOL
            checked += 1

    def test_singular_downdate(self):
        """Removing the only informative row raises SingularityError."""
        X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
        with pytest.raises(SingularityError):
            woodbury_downdate(np.linalg.inv(X.T @ X), X[[0]])

    def test_shape_mismatch(self):
        """Removed rows must have d columns."""
        with pytest.raises(ShapeError):
            woodbury_downdate(np.eye(2), np.ones((1, 3)))


class TestFoldCosts:
    """Test leave-block-out costs from one fit."""

    def test_match_refits(self, rng):
        """Block costs equal explicit refits."""
        X, y = random_instance(rng, 24, 3)
        fit = solve_ols(X, y)
        plan = vfold(24, 4, seed=0)
        blocks = [s.validation_indices for s in plan]
        fast = ols_fold_costs(fit, blocks)
        for block, split, cost in zip(blocks, plan, fast):
            refit = solve_ols(X[split.train_indices], y[split.train_indices])
            expected = np.mean((y[block] - X[block] @ refit.coef) ** 2)
            assert cost == pytest.approx(expected, rel=1e-9)
            np.testing.assert_allclose(downdated_coef(fit, block), refit.coef, rtol=1e-8, atol=1e-12)

    @pytest.mark.parametrize("spread", [1e-8, 1e-2])
    def test_singularity_policy_matches_refit(self, spread):
        """A block is rejected exactly when refitting on its complement is."""
        t = np.linspace(-1.0, 1.0, 6)
        train = np.column_stack([np.ones(6), 1.0 + spread * t])
        validation = np.array([[1.0, 0.0], [1.0, -1.0]])
        X = np.vstack([train, validation])
        y = np.arange(8.0)
        fit = solve_ols(X, y)
        block = np.array([6, 7])
        if spread < 1e-6:
            with pytest.raises(SingularityError):
                solve_ols(train, y[:6])
            with pytest.raises(SingularityError):
                ols_fold_costs(fit, [block])
            with pytest.raises(SingularityError):
                downdated_coef(fit, block)
        else:
            refit = solve_ols(train, y[:6])
            expected = np.mean((y[6:] - validation @ refit.coef) ** 2)
            assert ols_fold_costs(fit, [block])[0] == pytest.approx(expected, rel=1e-6)
