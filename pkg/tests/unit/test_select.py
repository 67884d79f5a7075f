"""Tests for rule menus and selection procedures."""

import math

import numpy as np
import pytest

from cvlab.core.criteria import cv_risk
from cvlab.core.dataset import Dataset, LinearModelSpec, TaskKind, generate
from cvlab.core.errors import (
    BoundsError,
    ConfigurationError,
    RuleFailureError,
    SchemeError,
    UnsupportedTaskError,
)
from cvlab.core.rules import ContrastKind, HistogramDensityRule, KNNRule, MajorityVoteRule, OLSRule
from cvlab.core.select import (
    RuleMenu,
    SelectionRule,
    aggregate_predict,
    cv_select,
    first_argmin,
    one_standard_error_select,
    penalized_select,
    per_split_winners,
    select,
    vote_select,
    wrap_selection_as_rule,
)
from cvlab.core.splits import holdout, parse_plan_spec, vfold
from cvlab.utils.rng import derive_seed

LS = ContrastKind.DENSITY_LS
QUAD = ContrastKind.QUADRATIC


@pytest.fixture
def histogram_menu():
    return RuleMenu.parse(["hist:1", "hist:1/2", "hist:1/4", "hist:1/8"])


@pytest.fixture
def sparse_regression():
    gen = LinearModelSpec(beta_star=[3.0, 0.0, 0.0, 0.0], sigma=0.3, x_law="normal")
    return generate(gen, 60, seed=4)


class TestRuleMenu:
    """Test menus."""

    def test_ids_and_lookup(self, histogram_menu):
        """Identifiers keep menu order."""
        assert histogram_menu.ids == ["hist:1", "hist:1/2", "hist:1/4", "hist:1/8"]
        assert histogram_menu.rule("hist:1/4").cells == 4
        with pytest.raises(ConfigurationError):
            histogram_menu.rule("hist:1/3")

    def test_duplicates_and_empty(self):
        """Menus are non-empty with unique ids."""
        with pytest.raises(ConfigurationError):
            RuleMenu.parse(["ols", "ols"])
        with pytest.raises(ConfigurationError):
            RuleMenu(())

    def test_first_argmin(self):
        """Ties go to the first index; NaN never wins."""
        assert first_argmin([2.0, 1.0, 1.0]) == 1
        assert first_argmin([math.nan, 3.0]) == 1
        assert first_argmin([math.inf, math.inf]) == 0


class TestProcedures:
    """Test selection procedures."""

    def test_cv_select(self, histogram_menu, density_sample):
        """The chosen rule minimizes the CV value."""
        plan = vfold(40, 5, 0)
        result = cv_select(histogram_menu, density_sample, plan, LS)
        expected = {m: cv_risk(r, density_sample, plan, LS).value for m, r in histogram_menu}
        assert result.criterion_values == expected
        assert result.chosen == min(expected, key=expected.get)
        assert result.procedure == "cv"

    def test_corrected_select(self, histogram_menu, density_sample):
        """corrected=True switches criterion."""
        result = cv_select(histogram_menu, density_sample, vfold(40, 5, 0), LS, corrected=True)
        assert result.procedure == "corrected"
        assert set(result.criterion_values) == set(histogram_menu.ids)

    def test_sparse_regression_prefers_small_model(self, sparse_regression):
        """With one active feature, OLS on it beats k-NN."""
        menu = RuleMenu.parse(["ols:1", "knn:15"])
        result = select("cv", menu, sparse_regression, vfold(60, 5, 1), QUAD)
        assert result.chosen == "ols:1"

    def test_vote(self, histogram_menu, density_sample):
        """Votes count per-split winners."""
        plan = vfold(40, 5, 2)
        winners = per_split_winners(histogram_menu, density_sample, plan, LS)
        result = vote_select(histogram_menu, density_sample, plan, LS)
        assert result.per_split_winners == winners
        assert len(winners) == 5
        assert sum(1.0 - v for v in result.criterion_values.values()) == pytest.approx(1.0)
        assert winners.count(result.chosen) == max(winners.count(m) for m in histogram_menu.ids)

    def test_penalized(self, histogram_menu, density_sample):
        """Penalized selection needs V-fold plans and C >= 0."""
        plan = vfold(40, 4, 0)
        at_one = penalized_select(histogram_menu, density_sample, plan, LS, 1.0)
        corrected = cv_select(histogram_menu, density_sample, plan, LS, corrected=True)
        assert at_one.criterion_values == corrected.criterion_values
        assert penalized_select(histogram_menu, density_sample, plan, LS, 0.0).chosen == "hist:1/8"
        with pytest.raises(SchemeError):
            penalized_select(histogram_menu, density_sample, holdout(40, 20, 0), LS, 1.0)
        with pytest.raises(BoundsError):
            penalized_select(histogram_menu, density_sample, plan, LS, -1.0)

    def test_one_standard_error_is_never_more_complex(self, histogram_menu, density_sample):
        """The 1-s.e. choice comes no later in the menu than the argmin."""
        plan = vfold(40, 5, 3)
        plain = cv_select(histogram_menu, density_sample, plan, LS)
        one_se = one_standard_error_select(histogram_menu, density_sample, plan, LS)
        assert histogram_menu.ids.index(one_se.chosen) <= histogram_menu.ids.index(plain.chosen)

    def test_unknown_procedure(self, histogram_menu, density_sample):
        """Unknown names raise."""
        with pytest.raises(ConfigurationError):
            select("bagging", histogram_menu, density_sample, vfold(40, 5, 0), LS)

    def test_rule_failure_names_the_rule(self, density_sample):
        """Failures are wrapped with the offending identifier and keep the exit code."""
        menu = RuleMenu.parse(["hist:1", "ols"])
        with pytest.raises(RuleFailureError) as excinfo:
            cv_select(menu, density_sample, vfold(40, 5, 0), LS)
        assert excinfo.value.rule_id == "ols"
        assert excinfo.value.exit_code == 2


class TestAggregation:
    """Test aggregated predictions."""

    def test_regression_average(self, sparse_regression):
        """Single-rule menus reproduce the full-sample fit."""
        menu = RuleMenu.parse(["ols"])
        x = np.ones((2, 4))
        predicted = aggregate_predict(menu, sparse_regression, vfold(60, 3, 0), QUAD, x)
        expected = OLSRule().fit(sparse_regression).evaluate(x)
        np.testing.assert_allclose(predicted, expected)

    def test_classification_vote(self, bernoulli):
        """Classification aggregates by majority."""
        ds = generate(bernoulli, 30, seed=1)
        menu = RuleMenu.parse(["majority", "majority:randomized"]).with_seed(2)
        labels = aggregate_predict(menu, ds, vfold(30, 3, 0), ContrastKind.ZERO_ONE, np.empty((3, 0)))
        assert labels.shape == (3,)
        assert set(labels.tolist()) <= {0, 1}

    def test_density_unsupported(self, histogram_menu, density_sample):
        """Density data cannot be aggregated."""
        with pytest.raises(UnsupportedTaskError):
            aggregate_predict(histogram_menu, density_sample, vfold(40, 5, 0), LS, np.zeros((1, 1)))


class TestSelectionAsRule:
    """Test selection wrapped as a learning rule."""

    def test_fit_uses_chosen_rule(self, histogram_menu, density_sample):
        """The wrapper fits the rule chosen on the same sample."""
        wrapped = wrap_selection_as_rule(histogram_menu, "vfold:5", LS, seed=3)
        chosen = wrapped.choose(density_sample)
        predictor = wrapped.fit(density_sample)
        expected = histogram_menu.rule(chosen).fit(density_sample)
        np.testing.assert_array_equal(predictor.values, expected.values)
        assert wrapped.rule_id.startswith("select[cv](")

    def test_nested_cv(self, histogram_menu, density_sample):
        """A selection rule can be evaluated by an outer CV."""
        wrapped = wrap_selection_as_rule(histogram_menu, parse_plan_spec("vfold:4"), LS, seed=1)
        estimate = cv_risk(wrapped, density_sample, vfold(40, 5, 0), LS)
        assert len(estimate.per_split) == 5
        assert np.isfinite(estimate.value)

    def test_inner_plan_depends_on_stream(self, histogram_menu):
        """Inner plans are redrawn per stream and reproducible."""
        wrapped = SelectionRule(histogram_menu, parse_plan_spec("vfold:4"), LS, seed=2)
        assert wrapped.inner_plan(20, 0) == wrapped.inner_plan(20, 0)
        assert wrapped.inner_plan(20, 0) != wrapped.inner_plan(20, 1)

    def test_inner_plan_too_small(self, histogram_menu):
        """An inner plan that cannot fit the sub-sample raises BoundsError with context."""
        wrapped = SelectionRule(histogram_menu, parse_plan_spec("vfold:10"), LS)
        with pytest.raises(BoundsError, match="sub-sample of size 5"):
            wrapped.inner_plan(5, 0)

    def test_single_rule_menu_skips_selection(self):
        """One candidate is returned without building a plan."""
        wrapped = SelectionRule(RuleMenu.parse(["hist:1"]), parse_plan_spec("vfold:10"), LS)
        ds = Dataset(TaskKind.DENSITY, np.array([0.2, 0.4, 0.6]))
        assert wrapped.choose(ds) == "hist:1"

    def test_randomized_menu_seeding(self):
        """with_seed gives each rule its own derived seed."""
        menu = RuleMenu.parse(["majority:randomized", "knn:1"]).with_seed(7)
        assert menu.rule("majority:randomized").seed != 7
        assert isinstance(menu.rule("knn:1"), KNNRule)
        assert isinstance(RuleMenu.parse(["hist:1/2"]).with_seed(1).rule("hist:1/2"), HistogramDensityRule)

    def test_with_seed_reseeds_inner_rules(self):
        """Reseeding a selection rule also reseeds its randomized candidates."""
        menu = RuleMenu.parse(["majority:randomized", "majority"])
        wrapped = SelectionRule(menu, parse_plan_spec("vfold:3"), ContrastKind.ZERO_ONE, seed=0)
        first, second = wrapped.with_seed(5), wrapped.with_seed(6)
        inner = first.menu.rule("majority:randomized")
        assert isinstance(inner, MajorityVoteRule)
        assert inner.seed == derive_seed(5, "inner_rule", 0)
        assert second.menu.rule("majority:randomized").seed == derive_seed(6, "inner_rule", 0)
        assert first.menu.ids == menu.ids
        assert wrapped.with_seed(5) == first
        assert first.seed == 5
