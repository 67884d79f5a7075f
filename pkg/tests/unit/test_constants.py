"""Tests for the analytic variance constants."""

import math

import pytest

from cvlab.core.constants import c1_mc, c1_vf, c2_mc, c2_vf, constants_table, vfold_training_size
from cvlab.core.errors import BoundsError


class TestVFold:
    """V-fold constants."""

    def test_known_values(self):
        """Hand-computed values."""
        assert c2_vf(2, 4) == pytest.approx(2.25)
        assert c1_vf(5, 100) == pytest.approx(2.25)
        assert c2_vf(5, 100) == pytest.approx(1.0125**2)
        assert c1_vf(2, 10**9) == pytest.approx(10.0)

    def test_decreasing_in_v(self):
        """More folds, smaller constants."""
        c1 = [c1_vf(v, 120) for v in (2, 3, 4, 5, 6, 10, 20)]
        c2 = [c2_vf(v, 120) for v in (2, 3, 4, 5, 6, 10, 20)]
        assert c1 == sorted(c1, reverse=True)
        assert c2 == sorted(c2, reverse=True)

    @pytest.mark.parametrize("v, n", [(1, 10), (11, 10)])
    def test_bounds(self, v, n):
        """2 <= V <= n."""
        with pytest.raises(BoundsError):
            c1_vf(v, n)
        with pytest.raises(BoundsError):
            c2_vf(v, n)

    def test_training_size(self):
        """n (V-1) / V rounded down."""
        assert vfold_training_size(5, 100) == 80
        assert vfold_training_size(3, 10) == 6


class TestMonteCarlo:
    """Monte-Carlo constants."""

    def test_single_split_half_sample(self):
        """One split at n_e = n/2 gives C1 close to 12."""
        assert c1_mc(1, 10**6, 5 * 10**5) == pytest.approx(12.0, rel=1e-5)

    def test_affine_in_inverse_v(self):
        """Constants are affine in 1/V, with the leave-p-out limit at V = inf."""
        n, n_e = 100, 80
        for fn in (c1_mc, c2_mc):
            assert fn(2, n, n_e) == pytest.approx((fn(1, n, n_e) + fn(math.inf, n, n_e)) / 2.0)
            assert fn(4, n, n_e) == pytest.approx(0.25 * fn(1, n, n_e) + 0.75 * fn(math.inf, n, n_e))

    def test_limit(self):
        """V = inf values."""
        assert c2_mc(math.inf, 100, 80) == pytest.approx((1.0 + 1.0 / 80) ** 2)
        assert c1_mc(math.inf, 100, 80) == pytest.approx(1.0 + 2.25**2 / 99 - 1.25 / 80)

    def test_more_splits_reduce_variance(self):
        """Monte-Carlo constants decrease towards the limit."""
        values = [c1_mc(v, 100, 80) for v in (1, 2, 5, 20, math.inf)]
        assert values == sorted(values, reverse=True)

    @pytest.mark.parametrize("v, n_e", [(0.5, 50), (2, 0), (2, 100)])
    def test_bounds(self, v, n_e):
        """V >= 1 and 1 <= n_e <= n-1."""
        with pytest.raises(BoundsError):
            c1_mc(v, 100, n_e)


class TestTable:
    """Test constants_table."""

    def test_vfold_table(self):
        """One row per V."""
        table = constants_table("vf", [2, 5, 10], 100)
        assert list(table.columns) == ["V", "n", "C1", "C2"]
        assert table["V"].tolist() == [2, 5, 10]
        assert table.loc[1, "C1"] == pytest.approx(2.25)

    def test_mc_defaults_to_vfold_training_size(self):
        """Without n_e the V-fold training size is used."""
        table = constants_table("mc", [5], 100)
        assert table.loc[0, "n_e"] == 80
        assert table.loc[0, "C2"] == pytest.approx(c2_mc(5, 100, 80))

    def test_mc_limit_needs_training_size(self):
        """V = inf without n_e is rejected."""
        with pytest.raises(BoundsError):
            constants_table("mc", [math.inf], 100)
        table = constants_table("mc", [math.inf], 100, n_e=50)
        assert table.loc[0, "C2"] == pytest.approx((1.0 + 1.0 / 50) ** 2)

    def test_unknown_kind(self):
        """Only vf and mc exist."""
        with pytest.raises(BoundsError):
            constants_table("loo", [2], 10)
