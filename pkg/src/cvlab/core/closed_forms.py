"""
Linear-algebra closed forms for least-squares regression.

Leave-one-out and leave-block-out errors of ordinary least squares can be
obtained from a single fit: the hat matrix H = X (X'X)^-1 X' gives every
left-out residual as r_i / (1 - H_ii), and removing a block of rows updates
(X'X)^-1 through the Woodbury identity instead of refitting.

Singular systems always raise; nothing here regularizes silently.
"""

import math
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.linalg

from .config import get_settings
from .errors import (
    DegenerateLeverageError,
    DegenerateSmootherError,
    ShapeError,
    SingularityError,
)


def condition_number(matrix: np.ndarray) -> float:
    """2-norm condition number, ``inf`` for exactly singular matrices."""
    singular_values = np.linalg.svd(np.atleast_2d(matrix), compute_uv=False)
    if singular_values.size == 0:
        return 1.0
    smallest = float(singular_values[-1])
    if smallest == 0.0 or not np.isfinite(smallest):
        return math.inf
    return float(singular_values[0]) / smallest


@dataclass(frozen=True, eq=False)
class OLSFit:
    """Least-squares fit of y on the columns of X (no implicit intercept)."""

    design: np.ndarray
    response: np.ndarray
    coef: np.ndarray
    xtx_inv: np.ndarray
    q_factor: np.ndarray

    @property
    def n(self) -> int:
        return int(self.design.shape[0])

    @property
    def d(self) -> int:
        return int(self.design.shape[1])

    @property
    def residuals(self) -> np.ndarray:
        return self.response - self.design @ self.coef

    @property
    def rss(self) -> float:
        return math.fsum(self.residuals**2)

    def hat_diagonal(self) -> np.ndarray:
        """Leverages H_ii, computed from the thin QR factor."""
        return np.sum(self.q_factor**2, axis=1)

    def hat_trace(self) -> float:
        return float(np.sum(self.hat_diagonal()))

    def hat_matrix(self) -> np.ndarray:
        return self.q_factor @ self.q_factor.T


def _as_design(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"design has {X.shape[0]} rows, response has {y.shape[0]}")
    if X.shape[1] == 0:
        raise ShapeError("least squares needs at least one feature column")
    return X, y


def solve_ols(X: np.ndarray, y: np.ndarray) -> OLSFit:
    """
    Least-squares coefficients with (X'X)^-1 and the thin Q factor.

    Raises:
        SingularityError: if n < d or cond(X'X) exceeds the configured
            threshold (1e12 by default)
    """
    X, y = _as_design(X, y)
    n, d = X.shape
    if n < d:
        raise SingularityError(f"X'X is rank deficient: n={n} < d={d}")
    _check_conditioning(X.T @ X, "X'X is numerically singular")

    q_factor, r_factor = np.linalg.qr(X, mode="reduced")
    coef = scipy.linalg.solve_triangular(r_factor, q_factor.T @ y)
    r_inv = scipy.linalg.solve_triangular(r_factor, np.eye(d))
    return OLSFit(X, y, coef, r_inv @ r_inv.T, q_factor)


def _checked_leverages(fit: OLSFit) -> np.ndarray:
    leverages = fit.hat_diagonal()
    margin = get_settings().computation.leverage_margin
    worst = int(np.argmax(leverages))
    if leverages[worst] >= 1.0 - margin:
        raise DegenerateLeverageError(
            f"observation {worst} has leverage {leverages[worst]:.12g}; "
            "its left-out residual is undefined"
        )
    return leverages


def loo_ols_closed_form(X: np.ndarray, y: np.ndarray) -> float:
    """Leave-one-out mean squared error: (1/n) sum r_i^2 / (1 - H_ii)^2."""
    fit = solve_ols(X, y)
    leverages = _checked_leverages(fit)
    return math.fsum((fit.residuals / (1.0 - leverages)) ** 2) / fit.n


def loo_ols_linear_leverage(X: np.ndarray, y: np.ndarray) -> float:
    """
    Variant with a first-power denominator, (1/n) sum r_i^2 / (1 - H_ii).

    Kept for comparison only; it does not equal the refit leave-one-out error.
    """
    fit = solve_ols(X, y)
    leverages = _checked_leverages(fit)
    return math.fsum(fit.residuals**2 / (1.0 - leverages)) / fit.n


def loo_ols_refit(X: np.ndarray, y: np.ndarray) -> float:
    """Brute-force leave-one-out: n separate refits."""
    X, y = _as_design(X, y)
    n = X.shape[0]
    errors: List[float] = []
    for i in range(n):
        keep = np.arange(n) != i
        fit = solve_ols(X[keep], y[keep])
        errors.append(float((y[i] - X[i] @ fit.coef) ** 2))
    return math.fsum(errors) / n


def gcv_ols(h_trace: float, residual_sum_sq: float, n: int) -> float:
    """Generalized cross-validation, (RSS / n) / (1 - trace(H) / n)^2."""
    if n < 1:
        raise ShapeError(f"n must be positive, got {n}")
    if h_trace >= n:
        raise DegenerateSmootherError(f"smoother trace {h_trace} reaches n={n}")
    return (residual_sum_sq / n) / (1.0 - h_trace / n) ** 2


def gcv_unsquared(h_trace: float, residual_sum_sq: float, n: int) -> float:
    """Variant RSS / (n - trace(H)), kept for comparison only."""
    if h_trace >= n:
        raise DegenerateSmootherError(f"smoother trace {h_trace} reaches n={n}")
    return residual_sum_sq / (n - h_trace)


def _check_conditioning(gram: np.ndarray, message: str) -> None:
    """
    Shared singularity policy: a Gram matrix (or its inverse) is singular
    when its condition number exceeds the configured threshold.

    Single fits, refits on a training set and the downdates below all go
    through this test, so a training set is rejected by the one-fit paths
    exactly when refitting on it would be rejected.
    """
    cond = condition_number(gram)
    if cond > get_settings().computation.condition_threshold:
        raise SingularityError(f"{message} (condition number {cond:.3g})")


def woodbury_downdate(xtx_inv: np.ndarray, x_removed: np.ndarray) -> np.ndarray:
    """
    Inverse of X'X - U'U given (X'X)^-1 and the removed rows U (q x d).

    (A - U'U)^-1 = A^-1 + A^-1 U' (I - U A^-1 U')^-1 U A^-1

    The condition number of the result equals that of X'X - U'U, so it is
    tested against the same threshold as ``solve_ols``.

    Raises:
        SingularityError: if the downdated matrix is singular
    """
    a_inv = np.asarray(xtx_inv, dtype=np.float64)
    u = np.atleast_2d(np.asarray(x_removed, dtype=np.float64))
    if u.shape[1] != a_inv.shape[0]:
        raise ShapeError(f"removed rows have {u.shape[1]} columns, expected {a_inv.shape[0]}")
    if u.shape[0] < 1:
        raise ShapeError("woodbury_downdate needs at least one removed row")
    a_inv_ut = a_inv @ u.T
    capacitance = np.eye(u.shape[0]) - u @ a_inv_ut
    message = "removing these rows leaves a singular system"
    try:
        correction = a_inv_ut @ np.linalg.solve(capacitance, a_inv_ut.T)
    except np.linalg.LinAlgError as e:
        raise SingularityError(message) from e
    downdated = a_inv + correction
    _check_conditioning(downdated, message)
    return downdated


def ols_fold_costs(fit: OLSFit, validation_sets: List[np.ndarray]) -> List[float]:
    """
    Mean squared validation error of each split, from one full fit.

    For a validation block V the residuals of the fit without V are
    (I - H_VV)^-1 r_V, where r_V are the full-fit residuals; this is the
    Woodbury downdate applied to the predictions.
    """
    residuals = fit.residuals
    gram = fit.design.T @ fit.design
    costs: List[float] = []
    for block in validation_sets:
        u = fit.design[block]
        _check_conditioning(gram - u.T @ u, f"training set without {len(block)} validation rows is singular")
        capacitance = np.eye(len(block)) - u @ fit.xtx_inv @ u.T
        left_out = np.linalg.solve(capacitance, residuals[block])
        costs.append(math.fsum(left_out**2) / len(block))
    return costs


def downdated_coef(fit: OLSFit, validation: np.ndarray) -> np.ndarray:
    """Coefficients of the fit without rows ``validation`` via Woodbury."""
    u = fit.design[validation]
    inverse = woodbury_downdate(fit.xtx_inv, u)
    rhs = fit.design.T @ fit.response - u.T @ fit.response[validation]
    return inverse @ rhs
