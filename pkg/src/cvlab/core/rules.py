"""
Learning rules, predictors and contrasts.

A learning rule is a pure map from a sub-sample to a predictor. Rules are
small frozen dataclasses identified by ``rule_id``; the same identifiers are
accepted by ``parse_rule`` so that menus can be written in config files and
on the command line:

    ols, ols:<k>, hist:<h>, regressogram:<cells>, knn:<k>,
    majority, majority:randomized

A contrast turns a predictor and a sample into an empirical risk. Every
contrast used here is the mean of a pointwise cost, including the density
ones: least squares uses ||f||^2 - 2 f(x) and log-likelihood uses -ln f(x).
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

from ..utils.rng import make_rng
from .closed_forms import OLSFit, solve_ols
from .dataset import Dataset, TaskKind
from .errors import ConfigurationError, ContrastMismatchError, GridError, ShapeError
from .logger import get_logger

logger = get_logger(__name__)


class ContrastKind(str, Enum):
    """Loss functions."""
    QUADRATIC = "quadratic"
    ZERO_ONE = "zero_one"
    DENSITY_LS = "density_ls"
    DENSITY_LOGLIK = "density_loglik"

    @property
    def task(self) -> TaskKind:
        return {
            ContrastKind.QUADRATIC: TaskKind.REGRESSION,
            ContrastKind.ZERO_ONE: TaskKind.CLASSIFICATION,
            ContrastKind.DENSITY_LS: TaskKind.DENSITY,
            ContrastKind.DENSITY_LOGLIK: TaskKind.DENSITY,
        }[self]


def parse_contrast(name: str) -> ContrastKind:
    try:
        return ContrastKind(name.strip().lower().replace("-", "_"))
    except ValueError:
        choices = ", ".join(c.value for c in ContrastKind)
        raise ConfigurationError(f"unknown contrast '{name}' (choose from {choices})") from None


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


class Predictor(ABC):
    """Output of a learning rule."""

    task: TaskKind

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Predictions (or density values) at the rows of ``x``."""


class DensityPredictor(Predictor):
    """Density estimate on [0, 1]."""

    task = TaskKind.DENSITY

    @abstractmethod
    def l2_norm_sq(self) -> float:
        """Exact squared L2 norm."""


def _as_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def grid_cell(points: np.ndarray, cells: int) -> np.ndarray:
    """Index of the regular cell of [0, 1] holding each point; cells are [a, b), the last one closed."""
    idx = np.floor(np.asarray(points, dtype=np.float64) * cells).astype(np.int64)
    return np.clip(idx, 0, cells - 1)


@dataclass(frozen=True, eq=False)
class LinearPredictor(Predictor):
    """x -> x[:, :k] . coef, with access to the hat matrix of its fit."""

    coef: np.ndarray
    fit: Optional[OLSFit] = None
    task: TaskKind = field(default=TaskKind.REGRESSION, init=False)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = _as_rows(x)
        return x[:, : self.coef.shape[0]] @ self.coef

    def hat_diagonal(self) -> np.ndarray:
        if self.fit is None:
            raise ShapeError("predictor was not produced by a least-squares fit")
        return self.fit.hat_diagonal()

    def hat_trace(self) -> float:
        if self.fit is None:
            raise ShapeError("predictor was not produced by a least-squares fit")
        return self.fit.hat_trace()


@dataclass(frozen=True, eq=False)
class HistogramDensityPredictor(DensityPredictor):
    """Piecewise-constant density on the regular grid with ``cells`` cells."""

    cells: int
    values: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.cells

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        pts = _as_rows(x)[:, 0]
        out = self.values[grid_cell(pts, self.cells)]
        return np.where((pts < 0.0) | (pts > 1.0), 0.0, out)

    def l2_norm_sq(self) -> float:
        return math.fsum(self.values**2) / self.cells

    def integral(self) -> float:
        return math.fsum(self.values) / self.cells


@dataclass(frozen=True, eq=False)
class RegressogramPredictor(Predictor):
    """Constant prediction on each cell of a partition of [0, 1] (first feature)."""

    edges: np.ndarray
    values: np.ndarray
    task: TaskKind = field(default=TaskKind.REGRESSION, init=False)

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        cells = np.searchsorted(self.edges, points, side="right") - 1
        return np.clip(cells, 0, len(self.values) - 1)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.values[self.cell_of(_as_rows(x)[:, 0])]


@dataclass(frozen=True, eq=False)
class KNNPredictor(Predictor):
    """k nearest neighbours in Euclidean distance; distance ties go to the smaller index."""

    train_x: np.ndarray
    train_y: np.ndarray
    k: int
    task: TaskKind = TaskKind.REGRESSION

    def neighbours(self, x: np.ndarray) -> np.ndarray:
        x = _as_rows(x)
        diff = x[:, None, :] - self.train_x[None, :, :]
        dist = np.einsum("mnd,mnd->mn", diff, diff)
        return np.argsort(dist, axis=1, kind="stable")[:, : self.k]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        labels = self.train_y[self.neighbours(x)]
        if self.task is TaskKind.REGRESSION:
            return labels.mean(axis=1)
        # vote ties go to the smallest label
        n_labels = int(self.train_y.max()) + 1
        counts = np.apply_along_axis(np.bincount, 1, labels, minlength=n_labels)
        return np.argmax(counts, axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ConstantClassifier(Predictor):
    """Predicts the same label everywhere."""

    label: int
    task: TaskKind = field(default=TaskKind.CLASSIFICATION, init=False)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        m = np.asarray(x).shape[0]
        return np.full(m, self.label, dtype=np.int64)


# ---------------------------------------------------------------------------
# Fitting functions
# ---------------------------------------------------------------------------


def fit_ols(X: np.ndarray, y: np.ndarray) -> LinearPredictor:
    """Ordinary least squares; see ``solve_ols`` for the singularity policy."""
    fit = solve_ols(X, y)
    return LinearPredictor(fit.coef, fit)


def histogram_cells(h: float) -> int:
    """Number of cells of the regular grid of width ``h``."""
    if not 0.0 < h <= 1.0:
        raise GridError(f"bin width must be in (0, 1], got {h}")
    cells = int(round(1.0 / h))
    if abs(cells * h - 1.0) > 1e-9:
        raise GridError(f"bin width {h} does not divide [0, 1] into a whole number of cells")
    return cells


def fit_histogram_density(sample: np.ndarray, h: float) -> HistogramDensityPredictor:
    """Regular histogram, cell value count / (n' h)."""
    cells = histogram_cells(h)
    pts = np.asarray(sample, dtype=np.float64).reshape(-1)
    if pts.size == 0:
        raise ShapeError("histogram needs at least one observation")
    counts = np.bincount(grid_cell(pts, cells), minlength=cells)
    values = counts * (cells / pts.size)
    values.setflags(write=False)
    return HistogramDensityPredictor(cells, values)


def fit_regressogram(X: np.ndarray, y: np.ndarray, edges: Sequence[float]) -> RegressogramPredictor:
    """Cell means of ``y``; an empty cell predicts 0."""
    edges_arr = np.asarray(edges, dtype=np.float64)
    if edges_arr[0] != 0.0 or edges_arr[-1] != 1.0 or np.any(np.diff(edges_arr) <= 0):
        raise ConfigurationError("regressogram cells must partition [0, 1]")
    pts = _as_rows(X)[:, 0]
    y = np.asarray(y, dtype=np.float64)
    n_cells = len(edges_arr) - 1
    cells = np.clip(np.searchsorted(edges_arr, pts, side="right") - 1, 0, n_cells - 1)
    counts = np.bincount(cells, minlength=n_cells)
    sums = np.bincount(cells, weights=y, minlength=n_cells)
    values = np.zeros(n_cells)
    nonempty = counts > 0
    values[nonempty] = sums[nonempty] / counts[nonempty]
    return RegressogramPredictor(edges_arr, values)


class TieMode(str, Enum):
    """How a majority vote resolves equal counts."""
    DETERMINISTIC_ZERO = "deterministic_zero"
    RANDOMIZED = "randomized"


def fit_majority_vote(
    labels: np.ndarray,
    tie_mode: TieMode = TieMode.DETERMINISTIC_ZERO,
    rng: Optional[np.random.Generator] = None,
) -> ConstantClassifier:
    """
    Constant classifier predicting the most frequent label.

    Ties go to the smallest tied label (label 0 for binary data), or to a
    uniformly drawn tied label when ``tie_mode`` is randomized.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ShapeError("majority vote needs at least one label")
    counts = np.bincount(labels, minlength=2)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1 or tie_mode is TieMode.DETERMINISTIC_ZERO:
        return ConstantClassifier(int(tied[0]))
    if rng is None:
        raise ConfigurationError("randomized tie breaking needs a random stream")
    return ConstantClassifier(int(tied[int(rng.integers(tied.size))]))


# ---------------------------------------------------------------------------
# Contrasts
# ---------------------------------------------------------------------------


def _check_compatible(contrast: ContrastKind, predictor: Predictor, sample: Dataset) -> None:
    if sample.kind is not contrast.task:
        raise ContrastMismatchError(
            f"contrast {contrast.value} cannot score a {sample.kind.value} sample"
        )
    if predictor.task is not contrast.task:
        raise ContrastMismatchError(
            f"contrast {contrast.value} cannot score a {predictor.task.value} predictor"
        )


def pointwise_costs(contrast: ContrastKind, predictor: Predictor, sample: Dataset) -> np.ndarray:
    """
    Cost of ``predictor`` at each observation of ``sample``.

    Log-likelihood costs are ``+inf`` where the density vanishes.
    """
    _check_compatible(contrast, predictor, sample)
    values = predictor.evaluate(sample.x)
    if contrast is ContrastKind.QUADRATIC:
        return (values - sample.y) ** 2
    if contrast is ContrastKind.ZERO_ONE:
        return (values != sample.y).astype(np.float64)
    if contrast is ContrastKind.DENSITY_LS:
        return predictor.l2_norm_sq() - 2.0 * values
    with np.errstate(divide="ignore"):
        return -np.log(values)


def contrast_eval(contrast: ContrastKind, predictor: Predictor, sample: Dataset) -> float:
    """Empirical risk of ``predictor`` on ``sample`` (exactly rounded mean)."""
    costs = pointwise_costs(contrast, predictor, sample)
    return math.fsum(costs) / costs.size


# ---------------------------------------------------------------------------
# Learning rules
# ---------------------------------------------------------------------------


class LearningRule(ABC):
    """Map from a sub-sample to a predictor."""

    @property
    @abstractmethod
    def rule_id(self) -> str:
        """Identifier, parseable by ``parse_rule``."""

    @property
    def task(self) -> Optional[TaskKind]:
        """Task this rule is restricted to, ``None`` when it adapts to the sample."""
        return None

    @abstractmethod
    def fit(self, sample: Dataset, stream: int = 0) -> Predictor:
        """
        Fit on ``sample``.

        ``stream`` selects an independent random stream for rules with
        internal randomness; deterministic rules ignore it.
        """

    def with_seed(self, seed: int) -> "LearningRule":
        """Copy drawing internal randomness from ``seed``."""
        return self

    def check_sample(self, sample: Dataset) -> None:
        if self.task is not None and sample.kind is not self.task:
            raise ContrastMismatchError(
                f"rule {self.rule_id} cannot be fitted on {sample.kind.value} data"
            )


@dataclass(frozen=True)
class OLSRule(LearningRule):
    """Least squares on all features, or on the first ``columns`` of them."""

    columns: Optional[int] = None

    def __post_init__(self):
        if self.columns is not None and self.columns < 1:
            raise ConfigurationError(f"ols needs at least one column, got {self.columns}")

    @property
    def rule_id(self) -> str:
        return "ols" if self.columns is None else f"ols:{self.columns}"

    @property
    def task(self) -> TaskKind:
        return TaskKind.REGRESSION

    def design(self, x: np.ndarray) -> np.ndarray:
        if self.columns is None:
            return x
        if self.columns > x.shape[1]:
            raise ShapeError(f"{self.rule_id} needs {self.columns} features, data has {x.shape[1]}")
        return x[:, : self.columns]

    def fit(self, sample: Dataset, stream: int = 0) -> LinearPredictor:
        self.check_sample(sample)
        return fit_ols(self.design(sample.x), sample.y)


@dataclass(frozen=True)
class HistogramDensityRule(LearningRule):
    """Regular histogram of bin width h = 1 / cells."""

    h: float

    def __post_init__(self):
        histogram_cells(self.h)

    @property
    def cells(self) -> int:
        return histogram_cells(self.h)

    @property
    def rule_id(self) -> str:
        return "hist:1" if self.cells == 1 else f"hist:1/{self.cells}"

    @property
    def task(self) -> TaskKind:
        return TaskKind.DENSITY

    def fit(self, sample: Dataset, stream: int = 0) -> HistogramDensityPredictor:
        self.check_sample(sample)
        if sample.d != 1:
            raise ShapeError(f"histograms need one-dimensional data, got d={sample.d}")
        return fit_histogram_density(sample.x[:, 0], self.h)


@dataclass(frozen=True)
class RegressogramRule(LearningRule):
    """Partition estimator on [0, 1]; ``edges`` defaults to a regular grid."""

    cells: int = 1
    edges: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.edges is None:
            if self.cells < 1:
                raise ConfigurationError(f"regressogram needs at least one cell, got {self.cells}")
            object.__setattr__(
                self, "edges", tuple(float(e) for e in np.linspace(0.0, 1.0, self.cells + 1))
            )
        else:
            object.__setattr__(self, "cells", len(self.edges) - 1)

    @property
    def rule_id(self) -> str:
        regular = np.allclose(self.edges, np.linspace(0.0, 1.0, self.cells + 1), rtol=0, atol=1e-15)
        if regular:
            return f"regressogram:{self.cells}"
        return "regressogram:" + "|".join(format(e, ".17g") for e in self.edges)

    @property
    def task(self) -> TaskKind:
        return TaskKind.REGRESSION

    def fit(self, sample: Dataset, stream: int = 0) -> RegressogramPredictor:
        self.check_sample(sample)
        if sample.d < 1:
            raise ShapeError("regressogram needs a feature column")
        return fit_regressogram(sample.x, sample.y, self.edges)


@dataclass(frozen=True)
class KNNRule(LearningRule):
    """k nearest neighbours; k is clipped to the sub-sample size."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"knn needs k >= 1, got {self.k}")

    @property
    def rule_id(self) -> str:
        return f"knn:{self.k}"

    def fit(self, sample: Dataset, stream: int = 0) -> KNNPredictor:
        if sample.kind is TaskKind.DENSITY:
            raise ContrastMismatchError("knn predicts responses, not densities")
        return KNNPredictor(sample.x, sample.y, min(self.k, sample.n), sample.kind)


@dataclass(frozen=True)
class MajorityVoteRule(LearningRule):
    """Constant classifier; randomized ties draw from ``(seed, "tie_break", stream)``."""

    tie: TieMode = TieMode.DETERMINISTIC_ZERO
    seed: int = 0

    @property
    def rule_id(self) -> str:
        return "majority" if self.tie is TieMode.DETERMINISTIC_ZERO else "majority:randomized"

    @property
    def task(self) -> TaskKind:
        return TaskKind.CLASSIFICATION

    def with_seed(self, seed: int) -> "MajorityVoteRule":
        return MajorityVoteRule(self.tie, seed)

    def fit(self, sample: Dataset, stream: int = 0) -> ConstantClassifier:
        self.check_sample(sample)
        rng = make_rng(self.seed, "tie_break", stream) if self.tie is TieMode.RANDOMIZED else None
        return fit_majority_vote(sample.y, self.tie, rng)


def _parse_fraction(raw: str) -> float:
    try:
        return float(Fraction(raw))
    except (ValueError, ZeroDivisionError):
        raise ConfigurationError(f"invalid number '{raw}'") from None


def _parse_int(raw: str, what: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{what} must be an integer, got '{raw}'") from None


def parse_rule(token: str) -> LearningRule:
    """
    Build a rule from its identifier.

    Raises:
        ConfigurationError: for unknown rule names or invalid parameters
    """
    name, _, arg = token.strip().partition(":")
    name = name.lower()
    if name == "ols":
        return OLSRule(_parse_int(arg, "ols column count") if arg else None)
    if name == "hist" and arg:
        return HistogramDensityRule(_parse_fraction(arg))
    if name == "regressogram" and arg:
        if "|" in arg:
            return RegressogramRule(edges=tuple(_parse_fraction(e) for e in arg.split("|")))
        return RegressogramRule(_parse_int(arg, "regressogram cell count"))
    if name == "knn" and arg:
        return KNNRule(_parse_int(arg, "knn neighbour count"))
    if name == "majority":
        if not arg:
            return MajorityVoteRule(TieMode.DETERMINISTIC_ZERO)
        if arg.lower() == "randomized":
            return MajorityVoteRule(TieMode.RANDOMIZED)
    raise ConfigurationError(f"unknown rule '{token}'")
