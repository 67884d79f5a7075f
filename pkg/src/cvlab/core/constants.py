"""
Analytic variance constants of V-fold and Monte-Carlo cross-validation.

For histogram density estimation the variance of the criterion has the form

    (1 / n^2) * C1 * W1 + (1 / n) * C2 * W2

where W1, W2 depend on the bin width and the data law only. The functions
below give C1 and C2 for V-fold CV (``*_vf``) and for Monte-Carlo CV with V
random splits of training size n_e (``*_mc``). ``V = math.inf`` is accepted
for Monte-Carlo CV and gives the leave-p-out limit.
"""

import math
from typing import Iterable, Optional

import pandas as pd

from .errors import BoundsError


def _check_vfold(v: int, n: int) -> None:
    if not 2 <= v <= n:
        raise BoundsError(f"V-fold constants need 2 <= V <= n, got V={v}, n={n}")


def _inv_v_mc(v: float, n: int, n_e: int) -> float:
    if not v >= 1:
        raise BoundsError(f"Monte-Carlo constants need V >= 1, got V={v}")
    if not 1 <= n_e <= n - 1:
        raise BoundsError(f"Monte-Carlo constants need 1 <= n_e <= n-1, got n_e={n_e}, n={n}")
    return 0.0 if math.isinf(v) else 1.0 / v


def c1_vf(v: int, n: int) -> float:
    """1 + 4/(V-1) + 4/(V-1)^2 + 1/(V-1)^3 - V^2 / (n (V-1)^2)."""
    _check_vfold(v, n)
    a = 1.0 / (v - 1)
    return 1.0 + 4.0 * a + 4.0 * a**2 + a**3 - v**2 * a**2 / n


def c2_vf(v: int, n: int) -> float:
    """(1 + V / (n (V-1)))^2."""
    _check_vfold(v, n)
    return (1.0 + v / (n * (v - 1.0))) ** 2


def c1_mc(v: float, n: int, n_e: int) -> float:
    """
    (1/V) (n^2/n_e^2 + 2 n^2 / (n_e (n - n_e)) - n^2 / n_e^3)
    + (1 - 1/V) (1 + (n/n_e + 1)^2 / (n - 1) - n / n_e^2)
    """
    inv_v = _inv_v_mc(v, n, n_e)
    ratio = n / n_e
    single = ratio**2 + 2.0 * n * ratio / (n - n_e) - ratio**2 / n_e
    limit = 1.0 + (ratio + 1.0) ** 2 / (n - 1) - ratio / n_e
    return inv_v * single + (1.0 - inv_v) * limit


def c2_mc(v: float, n: int, n_e: int) -> float:
    """(1/V) (n / (n - n_e) + n / n_e^3) + (1 - 1/V) (1 + 1/n_e)^2."""
    inv_v = _inv_v_mc(v, n, n_e)
    single = n / (n - n_e) + n / n_e**3
    limit = (1.0 + 1.0 / n_e) ** 2
    return inv_v * single + (1.0 - inv_v) * limit


def vfold_training_size(v: int, n: int) -> int:
    """Training size n (V-1) / V of V-fold CV, rounded down."""
    return (n * (v - 1)) // v


def constants_table(
    kind: str,
    v_grid: Iterable[float],
    n: int,
    n_e: Optional[int] = None,
) -> pd.DataFrame:
    """
    C1 and C2 over a grid of V.

    For ``kind="mc"`` without ``n_e`` the V-fold training size n (V-1) / V is
    used, which makes the two tables directly comparable.
    """
    rows = []
    for v in v_grid:
        if kind == "vf":
            v_int = int(v)
            rows.append({"V": v_int, "n": n, "C1": c1_vf(v_int, n), "C2": c2_vf(v_int, n)})
        elif kind == "mc":
            if n_e is None and math.isinf(v):
                raise BoundsError("V = inf needs an explicit training size n_e")
            ne = n_e if n_e is not None else vfold_training_size(int(v), n)
            rows.append({"V": v, "n": n, "n_e": ne, "C1": c1_mc(v, n, ne), "C2": c2_mc(v, n, ne)})
        else:
            raise BoundsError(f"unknown constant kind '{kind}' (use vf or mc)")
    return pd.DataFrame(rows)
