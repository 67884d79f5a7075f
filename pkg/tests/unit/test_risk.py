"""Tests for true risks under the synthetic laws."""

import math

import numpy as np
import pytest

from cvlab.core.dataset import BernoulliLabelsSpec, LinearModelSpec, PiecewiseConstantDensitySpec
from cvlab.core.errors import ContrastMismatchError
from cvlab.core.risk import (
    bayes_risk,
    conditional_cost_variance,
    criterion_offset,
    default_contrast,
    excess_risk,
    expected_contrast,
    true_risk,
    true_risk_with_error,
)
from cvlab.core.rules import (
    ConstantClassifier,
    ContrastKind,
    HistogramDensityPredictor,
    KNNPredictor,
    LinearPredictor,
    RegressogramPredictor,
)


def histogram(values):
    values = np.asarray(values, dtype=np.float64)
    return HistogramDensityPredictor(cells=len(values), values=values)


class TestDensityRisk:
    """Exact risks of histograms under piecewise-constant densities."""

    def test_flat_histogram_on_half_supported_density(self):
        """A flat estimate of density 2 on [0, 1/2] is at squared distance 1."""
        gen = PiecewiseConstantDensitySpec(breakpoints=[0.0, 0.5, 1.0], densities=[2.0, 0.0])
        assert true_risk(histogram([1.0]), gen) == pytest.approx(1.0, abs=1e-15)

    def test_exact_match_has_zero_risk(self, step_density):
        """The true density itself has zero excess risk."""
        assert true_risk(histogram([1.5, 0.5]), step_density) == pytest.approx(0.0, abs=1e-15)
        assert excess_risk(histogram([1.5, 0.5]), step_density) == pytest.approx(0.0, abs=1e-15)

    def test_expected_contrast_subtracts_norm(self, step_density):
        """Expected contrast is the risk minus ||f*||^2."""
        assert criterion_offset(step_density) == pytest.approx(1.25)
        predictor = histogram([1.0])
        assert expected_contrast(predictor, step_density) == pytest.approx(
            true_risk(predictor, step_density) - 1.25
        )

    def test_loglik(self, step_density):
        """Log-likelihood risk is infinite when a charged cell is empty."""
        assert true_risk(histogram([2.0, 0.0]), step_density, ContrastKind.DENSITY_LOGLIK) == math.inf
        value = true_risk(histogram([1.0]), step_density, ContrastKind.DENSITY_LOGLIK)
        assert value == pytest.approx(0.0, abs=1e-15)
        assert criterion_offset(step_density, ContrastKind.DENSITY_LOGLIK) == 0.0

    def test_bayes_entropy(self, step_density):
        """Bayes log-likelihood risk is the entropy."""
        expected = -(0.75 * math.log(1.5) + 0.25 * math.log(0.5))
        assert bayes_risk(step_density, ContrastKind.DENSITY_LOGLIK) == pytest.approx(expected)
        assert bayes_risk(step_density) == 0.0

    def test_cost_variance(self, step_density):
        """Var(||f||^2 - 2 f(X)) = 4 Var(f(X))."""
        predictor = histogram([1.5, 0.5])
        # f(X) is 1.5 w.p. 3/4 and 0.5 w.p. 1/4: variance 3/16
        assert conditional_cost_variance(predictor, step_density) == pytest.approx(0.75)


class TestRegressionRisk:
    """Risks under the linear model."""

    def test_true_coefficients(self, linear_model):
        """The regression function reaches the noise level."""
        predictor = LinearPredictor(coef=np.asarray(linear_model.beta_star))
        assert true_risk(predictor, linear_model) == pytest.approx(0.25)
        assert bayes_risk(linear_model) == pytest.approx(0.25)
        assert excess_risk(predictor, linear_model) == pytest.approx(0.0, abs=1e-15)

    def test_uniform_design(self):
        """Uniform features have second moment 11'/4 + I/12."""
        gen = LinearModelSpec(beta_star=[1.0, 0.0], sigma=0.0, x_law="uniform")
        predictor = LinearPredictor(coef=np.zeros(2))
        assert true_risk(predictor, gen) == pytest.approx(1.0 / 4.0 + 1.0 / 12.0)

    def test_truncated_coefficients(self, linear_model):
        """Missing coefficients count as zero."""
        predictor = LinearPredictor(coef=np.array([1.0]))
        assert true_risk(predictor, linear_model) == pytest.approx(0.25 + 4.0 + 0.25)

    def test_regressogram(self):
        """One cell predicting 1 under Y = 2x: integral of (1 - 2x)^2 is 1/3."""
        gen = LinearModelSpec(beta_star=[2.0], sigma=0.1, x_law="uniform")
        predictor = RegressogramPredictor(edges=np.array([0.0, 1.0]), values=np.array([1.0]))
        assert true_risk(predictor, gen) == pytest.approx(0.01 + 1.0 / 3.0)

    def test_monte_carlo_fallback(self):
        """k-NN falls back to a simulated test set with a standard error."""
        gen = LinearModelSpec(beta_star=[1.0], sigma=0.5, x_law="normal")
        predictor = KNNPredictor(train_x=np.zeros((1, 1)), train_y=np.array([0.0]), k=1)
        evaluation = true_risk_with_error(predictor, gen, seed=3, test_size=20_000)
        assert evaluation.method == "monte_carlo"
        assert evaluation.test_size == 20_000
        assert evaluation.stderr > 0.0
        assert abs(evaluation.value - 1.25) < 6 * evaluation.stderr
        again = true_risk_with_error(predictor, gen, seed=3, test_size=20_000)
        assert again.value == evaluation.value

    def test_test_size_from_settings(self, monkeypatch):
        """The default simulated test size comes from CVLAB_TRUE_RISK_TEST_SIZE."""
        from cvlab.core.config import reload_settings

        monkeypatch.setenv("CVLAB_TRUE_RISK_TEST_SIZE", "500")
        reload_settings()
        gen = LinearModelSpec(beta_star=[1.0], sigma=0.5, x_law="normal")
        predictor = KNNPredictor(train_x=np.zeros((1, 1)), train_y=np.array([0.0]), k=1)
        assert true_risk_with_error(predictor, gen).test_size == 500


class TestClassificationRisk:
    """Risks under Bernoulli labels."""

    @pytest.mark.parametrize("label, risk", [(1, 0.1), (0, 0.9)])
    def test_constant_labels(self, bernoulli, label, risk):
        """Predicting a constant label costs the mass of the other one."""
        predictor = ConstantClassifier(label)
        assert true_risk(predictor, bernoulli) == pytest.approx(risk)
        assert conditional_cost_variance(predictor, bernoulli) == pytest.approx(risk * (1.0 - risk))

    def test_bayes(self, bernoulli):
        """Bayes risk is min(p1, 1 - p1)."""
        assert bayes_risk(bernoulli) == pytest.approx(0.1)
        assert default_contrast(bernoulli) is ContrastKind.ZERO_ONE
        assert bayes_risk(BernoulliLabelsSpec(p1=0.3)) == pytest.approx(0.3)

    def test_mismatch(self, bernoulli, linear_model):
        """Contrasts must match the generator's task."""
        with pytest.raises(ContrastMismatchError):
            true_risk(ConstantClassifier(0), bernoulli, ContrastKind.QUADRATIC)
        with pytest.raises(ContrastMismatchError):
            bayes_risk(linear_model, ContrastKind.ZERO_ONE)
