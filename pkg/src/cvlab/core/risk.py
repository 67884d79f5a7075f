"""
True risks of fitted predictors under the synthetic data laws.

``true_risk`` is exact whenever the generator and predictor admit a closed
form:

- histogram density under a piecewise-constant law (least squares reported
  in excess form ||f - f*||^2, log-likelihood as the expected contrast)
- linear predictor under the linear model (uniform or normal features)
- regressogram under the one-dimensional linear model with uniform features
- any predictor under Bernoulli labels (there is a single feature-free point)

Other combinations fall back to a Monte-Carlo test set of declared size and
report its standard error.

Risks are on the contrast scale except density least squares, whose CV
criteria estimate ``true_risk - criterion_offset``.
"""

import math
from dataclasses import dataclass
from typing import Any, Literal, Optional

import numpy as np

from ..utils.rng import derive_seed
from .config import get_settings
from .dataset import (
    BernoulliLabelsSpec,
    LinearModelSpec,
    PiecewiseConstantDensitySpec,
    generate,
)
from .errors import ContrastMismatchError
from .logger import get_logger
from .rules import (
    ContrastKind,
    HistogramDensityPredictor,
    LinearPredictor,
    Predictor,
    RegressogramPredictor,
    pointwise_costs,
)

logger = get_logger(__name__)


@dataclass(frozen=True)
class RiskEvaluation:
    """Risk value, with its standard error when estimated by simulation."""

    value: float
    stderr: float
    method: Literal["exact", "monte_carlo"]
    test_size: Optional[int] = None


def default_contrast(gen: Any) -> ContrastKind:
    """Natural contrast of a generator's task."""
    return {
        "linear": ContrastKind.QUADRATIC,
        "bernoulli": ContrastKind.ZERO_ONE,
        "piecewise_density": ContrastKind.DENSITY_LS,
    }[gen.family]


def _check_task(gen: Any, contrast: ContrastKind) -> None:
    if gen.kind is not contrast.task:
        raise ContrastMismatchError(
            f"contrast {contrast.value} does not apply to {gen.kind.value} data"
        )


def criterion_offset(gen: Any, contrast: Optional[ContrastKind] = None) -> float:
    """
    Amount subtracted from ``true_risk`` to get the expected contrast:
    the squared norm of the true density for least squares, 0 otherwise.
    """
    contrast = contrast or default_contrast(gen)
    if contrast is ContrastKind.DENSITY_LS and isinstance(gen, PiecewiseConstantDensitySpec):
        return gen.l2_norm_sq()
    return 0.0


def bayes_risk(gen: Any, contrast: Optional[ContrastKind] = None) -> float:
    """Smallest achievable risk, on the same scale as ``true_risk``."""
    contrast = contrast or default_contrast(gen)
    _check_task(gen, contrast)
    if isinstance(gen, LinearModelSpec):
        return gen.sigma**2
    if isinstance(gen, BernoulliLabelsSpec):
        return min(gen.p1, 1.0 - gen.p1)
    if contrast is ContrastKind.DENSITY_LS:
        return 0.0
    # entropy of the piecewise-constant density
    values, widths = gen.values, np.diff(gen.edges)
    positive = values > 0
    return -math.fsum(values[positive] * np.log(values[positive]) * widths[positive])


def _cell_masses(gen: PiecewiseConstantDensitySpec, cells: int) -> np.ndarray:
    return np.array([gen.mass(k / cells, (k + 1) / cells) for k in range(cells)])


def _exact_risk(predictor: Predictor, gen: Any, contrast: ContrastKind) -> Optional[float]:
    if isinstance(gen, PiecewiseConstantDensitySpec) and isinstance(predictor, HistogramDensityPredictor):
        masses = _cell_masses(gen, predictor.cells)
        if contrast is ContrastKind.DENSITY_LS:
            cross = math.fsum(predictor.values * masses)
            return predictor.l2_norm_sq() - 2.0 * cross + gen.l2_norm_sq()
        charged = masses > 0
        if np.any(predictor.values[charged] == 0):
            return math.inf
        return -math.fsum(masses[charged] * np.log(predictor.values[charged]))

    if isinstance(gen, LinearModelSpec) and isinstance(predictor, LinearPredictor):
        beta = np.asarray(gen.beta_star)
        coef = np.zeros_like(beta)
        coef[: predictor.coef.shape[0]] = predictor.coef
        delta = coef - beta
        if gen.x_law == "uniform":
            # E[x x'] = 11'/4 + I/12
            excess = math.fsum(delta) ** 2 / 4.0 + math.fsum(delta**2) / 12.0
        else:
            excess = math.fsum(delta**2)
        return gen.sigma**2 + excess

    if (
        isinstance(gen, LinearModelSpec)
        and isinstance(predictor, RegressogramPredictor)
        and gen.d == 1
        and gen.x_law == "uniform"
    ):
        slope = gen.beta_star[0]
        a, b, v = predictor.edges[:-1], predictor.edges[1:], predictor.values
        # integral over [a, b] of (v - slope x)^2
        pieces = v**2 * (b - a) - v * slope * (b**2 - a**2) + slope**2 * (b**3 - a**3) / 3.0
        return gen.sigma**2 + math.fsum(pieces)

    if isinstance(gen, BernoulliLabelsSpec):
        label = int(predictor.evaluate(np.empty((1, 0)))[0])
        if label == 1:
            return 1.0 - gen.p1
        if label == 0:
            return gen.p1
        return 1.0
    return None


def _test_set(gen: Any, seed: int, test_size: Optional[int]) -> Any:
    size = test_size or get_settings().computation.true_risk_test_size
    return generate(gen, size, derive_seed(seed, "true_risk")), size


def true_risk_with_error(
    predictor: Predictor,
    gen: Any,
    contrast: Optional[ContrastKind] = None,
    seed: int = 0,
    test_size: Optional[int] = None,
) -> RiskEvaluation:
    """Exact risk when available, otherwise a Monte-Carlo estimate with its stderr."""
    contrast = contrast or default_contrast(gen)
    _check_task(gen, contrast)
    exact = _exact_risk(predictor, gen, contrast)
    if exact is not None:
        return RiskEvaluation(exact, 0.0, "exact")

    sample, size = _test_set(gen, seed, test_size)
    costs = pointwise_costs(contrast, predictor, sample)
    value = math.fsum(costs) / size + criterion_offset(gen, contrast)
    stderr = float(np.std(costs, ddof=1) / math.sqrt(size))
    logger.debug("true risk estimated by simulation", test_size=size, stderr=stderr)
    return RiskEvaluation(value, stderr, "monte_carlo", size)


def true_risk(
    predictor: Predictor,
    gen: Any,
    contrast: Optional[ContrastKind] = None,
    seed: int = 0,
    test_size: Optional[int] = None,
) -> float:
    """Risk R_P(f) of ``predictor`` under the law of ``gen``."""
    return true_risk_with_error(predictor, gen, contrast, seed, test_size).value


def expected_contrast(
    predictor: Predictor,
    gen: Any,
    contrast: Optional[ContrastKind] = None,
    seed: int = 0,
) -> float:
    """E[c(f, Z)], the quantity resampling criteria estimate."""
    contrast = contrast or default_contrast(gen)
    return true_risk(predictor, gen, contrast, seed) - criterion_offset(gen, contrast)


def excess_risk(
    predictor: Predictor,
    gen: Any,
    contrast: Optional[ContrastKind] = None,
    seed: int = 0,
) -> float:
    """Risk above the Bayes risk; non-negative up to rounding."""
    contrast = contrast or default_contrast(gen)
    return true_risk(predictor, gen, contrast, seed) - bayes_risk(gen, contrast)


def conditional_cost_variance(
    predictor: Predictor,
    gen: Any,
    contrast: Optional[ContrastKind] = None,
    seed: int = 0,
    test_size: Optional[int] = None,
) -> float:
    """
    Variance of the pointwise cost c(f, Z) over a fresh observation Z, for a
    fixed predictor f.
    """
    contrast = contrast or default_contrast(gen)
    _check_task(gen, contrast)
    if (
        contrast is ContrastKind.DENSITY_LS
        and isinstance(gen, PiecewiseConstantDensitySpec)
        and isinstance(predictor, HistogramDensityPredictor)
    ):
        masses = _cell_masses(gen, predictor.cells)
        first = math.fsum(predictor.values * masses)
        second = math.fsum(predictor.values**2 * masses)
        return max(4.0 * (second - first**2), 0.0)
    if isinstance(gen, BernoulliLabelsSpec) and contrast is ContrastKind.ZERO_ONE:
        q = true_risk(predictor, gen, contrast)
        return q * (1.0 - q)

    sample, _ = _test_set(gen, seed, test_size)
    costs = pointwise_costs(contrast, predictor, sample)
    return float(np.var(costs, ddof=1))
