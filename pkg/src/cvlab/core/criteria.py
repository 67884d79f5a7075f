"""
Resampling risk criteria.

- ``holdout_risk``: risk of the rule trained on E, measured on E^c
- ``cv_risk``: mean of the hold-out risks over a split plan
- ``corrected_cv_risk``: cv + R_n(f(D_n)) - mean_j R_n(f(D_n^{E_j}))
- ``vfold_penalized_criterion``: R_n(f(D_n)) + C * pen_vf, equal to the
  corrected criterion at C = 1

Per-split values are always kept so that increments and variances can be
computed afterwards. Sums over splits are taken in plan order with
``math.fsum``, which makes every value independent of evaluation order.

Two vectorised paths avoid refitting: histogram density estimation with the
least-squares contrast works on cell counts, and least squares regression
uses leave-block-out residuals from a single fit.
"""

import json
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .closed_forms import ols_fold_costs, solve_ols
from .dataset import Dataset
from .errors import BoundsError, SchemeError, ShapeError
from .logger import get_logger
from .rules import (
    ContrastKind,
    HistogramDensityRule,
    LearningRule,
    OLSRule,
    contrast_eval,
    grid_cell,
)
from .splits import Scheme, SchemeName, Split, SplitPlan

logger = get_logger(__name__)

# stream index used when a rule is fitted on the whole sample
FULL_SAMPLE_STREAM = 0xFFFFFFFF

_CHUNK = 1 << 15


@dataclass(frozen=True)
class RiskEstimate:
    """Criterion value with its per-split components."""

    value: float
    per_split: Tuple[float, ...]
    scheme: Scheme
    n_e: Optional[int]
    n: int

    @property
    def n_splits(self) -> int:
        return len(self.per_split)

    @property
    def stderr(self) -> float:
        """Standard error of the mean over splits (0 for a single split)."""
        if len(self.per_split) < 2:
            return 0.0
        values = np.asarray(self.per_split)
        if not np.all(np.isfinite(values)):
            return math.inf
        return float(np.std(values, ddof=1) / math.sqrt(values.size))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "n_e": self.n_e,
            "scheme": self.scheme.label,
            "per_split": list(self.per_split),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _mean(values: List[float]) -> float:
    return math.fsum(values) / len(values)


def _check_sizes(ds: Dataset, n: int, what: str) -> None:
    if n != ds.n:
        raise ShapeError(f"{what} is over n={n} but the dataset has n={ds.n}")


def holdout_risk(
    rule: LearningRule,
    ds: Dataset,
    split: Split,
    contrast: ContrastKind,
    stream: int = 0,
) -> float:
    """Risk on the validation set E^c of the rule trained on E."""
    _check_sizes(ds, split.n, "split")
    predictor = rule.fit(ds.subset(split.train_indices), stream)
    return contrast_eval(contrast, predictor, ds.subset(split.validation_indices))


def full_sample_risk(rule: LearningRule, ds: Dataset, contrast: ContrastKind) -> float:
    """Empirical risk R_n(f(D_n)) of the rule trained on the whole sample."""
    return contrast_eval(contrast, rule.fit(ds, FULL_SAMPLE_STREAM), ds)


# ---------------------------------------------------------------------------
# Plan evaluation
# ---------------------------------------------------------------------------


def _generic_terms(
    rule: LearningRule,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    with_refit: bool,
) -> Tuple[List[float], Optional[List[float]]]:
    holdouts: List[float] = []
    refits: Optional[List[float]] = [] if with_refit else None
    for j, split in enumerate(plan):
        predictor = rule.fit(ds.subset(split.train_indices), j)
        holdouts.append(contrast_eval(contrast, predictor, ds.subset(split.validation_indices)))
        if refits is not None:
            refits.append(contrast_eval(contrast, predictor, ds))
    return holdouts, refits


def _histogram_terms(
    cells: int,
    ds: Dataset,
    plan: SplitPlan,
    with_refit: bool,
) -> Tuple[List[float], Optional[List[float]]]:
    """Least-squares hold-out (and refit) terms of a regular histogram from cell counts."""
    pts = ds.x[:, 0]
    onehot = np.zeros((ds.n, cells))
    onehot[np.arange(ds.n), grid_cell(pts, cells)] = 1.0
    # training counts follow the fit; evaluation sees 0 density outside [0, 1]
    supported = onehot * ((pts >= 0.0) & (pts <= 1.0))[:, None]
    totals = supported.sum(axis=0)

    holdouts: List[float] = []
    refits: Optional[List[float]] = [] if with_refit else None
    indicators = plan.train_matrix
    for start in range(0, len(plan), _CHUNK):
        train_counts = indicators[start : start + _CHUNK] @ onehot
        n_train = train_counts.sum(axis=1)
        values = train_counts * (cells / n_train)[:, None]
        norms = (values**2).sum(axis=1) / cells
        val_counts = totals[None, :] - indicators[start : start + _CHUNK] @ supported
        n_val = ds.n - n_train
        holdouts.extend((norms - 2.0 * (values * val_counts).sum(axis=1) / n_val).tolist())
        if refits is not None:
            refits.extend((norms - 2.0 * (values @ totals) / ds.n).tolist())
    return holdouts, refits


def _ols_holdouts(rule: OLSRule, ds: Dataset, plan: SplitPlan) -> List[float]:
    fit = solve_ols(rule.design(ds.x), ds.y)
    return ols_fold_costs(fit, [s.validation_indices for s in plan])


def _plan_terms(
    rule: LearningRule,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    with_refit: bool,
    fast: bool,
) -> Tuple[List[float], Optional[List[float]]]:
    _check_sizes(ds, plan.n, "plan")
    rule.check_sample(ds)
    if fast and isinstance(rule, HistogramDensityRule) and contrast is ContrastKind.DENSITY_LS:
        if ds.d == 1:
            return _histogram_terms(rule.cells, ds, plan, with_refit)
    if fast and isinstance(rule, OLSRule) and contrast is ContrastKind.QUADRATIC and not with_refit:
        return _ols_holdouts(rule, ds, plan), None
    return _generic_terms(rule, ds, plan, contrast, with_refit)


def cv_risk(
    rule: LearningRule,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    fast: bool = True,
) -> RiskEstimate:
    """
    Cross-validation estimate: mean of the hold-out risks over ``plan``.

    ``fast=False`` forces one refit per split.
    """
    holdouts, _ = _plan_terms(rule, ds, plan, contrast, with_refit=False, fast=fast)
    return RiskEstimate(_mean(holdouts), tuple(holdouts), plan.scheme, plan.n_e, plan.n)


@dataclass(frozen=True)
class CorrectedComponents:
    """Pieces of the corrected criterion."""

    cv: RiskEstimate
    full_sample: float
    refit_terms: Tuple[float, ...]

    @property
    def correction(self) -> float:
        return self.full_sample - _mean(list(self.refit_terms))

    @property
    def value(self) -> float:
        return self.cv.value + self.correction

    @property
    def penalty(self) -> float:
        """pen_vf = corrected - R_n(f(D_n))."""
        return self.value - self.full_sample


def corrected_cv_components(
    rule: LearningRule,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    fast: bool = True,
) -> CorrectedComponents:
    """Cross-validation value, full-sample risk and per-split refit risks."""
    holdouts, refits = _plan_terms(rule, ds, plan, contrast, with_refit=True, fast=fast)
    estimate = RiskEstimate(_mean(holdouts), tuple(holdouts), plan.scheme, plan.n_e, plan.n)
    full = full_sample_risk(rule, ds, contrast)
    return CorrectedComponents(estimate, full, tuple(refits or ()))


def corrected_cv_risk(
    rule: LearningRule,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    fast: bool = True,
) -> float:
    """Bias-corrected cross-validation value."""
    return corrected_cv_components(rule, ds, plan, contrast, fast).value


def penalized_from_components(components: CorrectedComponents, c: float) -> float:
    corrected = components.value
    if c == 1.0:
        return corrected
    return corrected + (c - 1.0) * (corrected - components.full_sample)


def vfold_penalized_criterion(
    rule: LearningRule,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    c: float,
    fast: bool = True,
) -> float:
    """
    R_n(f(D_n)) + C * pen_vf for a V-fold plan.

    Raises:
        SchemeError: if ``plan`` is not a V-fold plan
        BoundsError: if C < 0
    """
    if plan.scheme.name is not SchemeName.VFOLD:
        raise SchemeError(f"V-fold penalization needs a V-fold plan, got {plan.scheme.label}")
    if not c >= 0.0:
        raise BoundsError(f"overpenalization constant must be non-negative, got {c}")
    components = corrected_cv_components(rule, ds, plan, contrast, fast)
    return penalized_from_components(components, c)


# ---------------------------------------------------------------------------
# Theoretical constants
# ---------------------------------------------------------------------------


class TheoreticalModel(BaseModel):
    """
    Mean risk alpha + beta / n of a rule trained on n points, and ideal
    penalty constant gamma.
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = 0.0
    beta: float = Field(gt=0.0)
    gamma: float = 0.0

    def mean_risk(self, n: int) -> float:
        if n < 1:
            raise BoundsError(f"sample size must be positive, got {n}")
        return self.alpha + self.beta / n


def theoretical_bias(model: TheoreticalModel, n: int, n_e: int) -> float:
    """Bias beta (1/n_e - 1/n) of a criterion trained on n_e points."""
    if not 1 <= n_e <= n:
        raise BoundsError(f"training size must satisfy 1 <= n_e <= n, got n_e={n_e}, n={n}")
    return model.beta * (1.0 / n_e - 1.0 / n)


def overpenalization_factor_cv(n: int, n_e: int) -> float:
    """Overpenalization (1 + n / n_e) / 2 of a cross-validation criterion."""
    if not 1 <= n_e <= n:
        raise BoundsError(f"training size must satisfy 1 <= n_e <= n, got n_e={n_e}, n={n}")
    return 0.5 * (1.0 + n / n_e)


def overpenalization_factor_vfold(v: int) -> float:
    """Overpenalization 1 + 1 / (2 (V - 1)) of V-fold cross-validation."""
    if v < 2:
        raise BoundsError(f"V-fold needs V >= 2, got {v}")
    return 1.0 + 1.0 / (2.0 * (v - 1))


def penalized_vfold_equivalent_constant(v: int) -> float:
    """
    Constant C at which V-fold penalization reproduces plain V-fold CV.

    Exact for least-squares histogram density estimation when V divides n.
    """
    return overpenalization_factor_vfold(v)
