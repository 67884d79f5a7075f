"""
Split families for resampling estimators.

A ``Split`` is a proper, nonempty training-index subset E of {0..n-1}; the
validation set is its complement and is never stored. A ``SplitPlan`` is an
ordered family of splits with the metadata of the scheme that produced it.

No builder here reads a dataset: plans depend only on (n, parameters, seed),
so the splits are independent of the data by construction.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..utils.rng import make_rng
from .config import get_settings
from .errors import BoundsError, BudgetError, ConfigurationError, ShapeError
from .logger import get_logger

logger = get_logger(__name__)


class SchemeName(str, Enum):
    """Splitting schemes."""
    HOLDOUT = "holdout"
    VFOLD = "vfold"
    MONTE_CARLO = "monte_carlo"
    LEAVE_ONE_OUT = "loo"
    LEAVE_P_OUT = "lpo"
    REPEATED_VFOLD = "repeated_vfold"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Scheme:
    """Scheme name plus its integer parameters (V, p, L where relevant)."""

    name: SchemeName
    v: Optional[int] = None
    p: Optional[int] = None
    l: Optional[int] = None

    def params(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        if self.v is not None:
            out["V"] = self.v
        if self.p is not None:
            out["p"] = self.p
        if self.l is not None:
            out["L"] = self.l
        return out

    @property
    def label(self) -> str:
        params = ",".join(f"{k}={v}" for k, v in self.params().items())
        return f"{self.name.value}({params})" if params else self.name.value


@dataclass(frozen=True)
class Split:
    """Training indices ``train`` (sorted, distinct) out of ``n``."""

    train: Tuple[int, ...]
    n: int

    def __post_init__(self):
        train = tuple(sorted({int(i) for i in self.train}))
        if len(train) != len(self.train):
            raise ShapeError("training indices must be distinct")
        if not 1 <= len(train) <= self.n - 1:
            raise BoundsError(
                f"training set size must be in [1, {self.n - 1}], got {len(train)}"
            )
        if train[0] < 0 or train[-1] >= self.n:
            raise BoundsError(f"training indices out of range for n={self.n}")
        object.__setattr__(self, "train", train)

    @property
    def n_train(self) -> int:
        return len(self.train)

    @property
    def n_validation(self) -> int:
        return self.n - len(self.train)

    @property
    def train_indices(self) -> np.ndarray:
        return np.asarray(self.train, dtype=np.int64)

    @property
    def validation_indices(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.train_indices] = False
        return np.flatnonzero(mask)

    @property
    def validation(self) -> Tuple[int, ...]:
        return tuple(int(i) for i in self.validation_indices)

    def train_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.train_indices] = True
        return mask


@dataclass(frozen=True)
class SplitPlan:
    """Ordered family of splits of {0..n-1}."""

    splits: Tuple[Split, ...]
    n: int
    scheme: Scheme = field(default_factory=lambda: Scheme(SchemeName.CUSTOM))
    seed: Optional[int] = None

    def __post_init__(self):
        splits = tuple(self.splits)
        if not splits:
            raise ShapeError("a plan needs at least one split")
        for s in splits:
            if s.n != self.n:
                raise ShapeError(f"split over n={s.n} in a plan over n={self.n}")
        object.__setattr__(self, "splits", splits)

    def __len__(self) -> int:
        return len(self.splits)

    def __iter__(self) -> Iterator[Split]:
        return iter(self.splits)

    def __getitem__(self, index: int) -> Split:
        return self.splits[index]

    @property
    def train_sizes(self) -> List[int]:
        return [s.n_train for s in self.splits]

    @property
    def reg_exact(self) -> bool:
        """True when every training set has the same size."""
        return len(set(self.train_sizes)) == 1

    @property
    def n_e(self) -> Optional[int]:
        """Common training size, ``None`` when sizes differ."""
        return self.splits[0].n_train if self.reg_exact else None

    @cached_property
    def train_matrix(self) -> np.ndarray:
        """Read-only 0/1 matrix (splits x n) of training-set indicators."""
        matrix = np.zeros((len(self.splits), self.n))
        for row, split in enumerate(self.splits):
            matrix[row, split.train_indices] = 1.0
        matrix.setflags(write=False)
        return matrix

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scheme": self.scheme.name.value,
            "params": self.scheme.params(),
            "n": self.n,
            "n_e": self.n_e,
            "seed": self.seed,
            "reg_exact": self.reg_exact,
            "splits": [list(s.train) for s in self.splits],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SplitPlan":
        try:
            n = int(data["n"])
            params = data.get("params", {}) or {}
            scheme = Scheme(
                SchemeName(data.get("scheme", SchemeName.CUSTOM.value)),
                v=params.get("V"),
                p=params.get("p"),
                l=params.get("L"),
            )
            splits = tuple(Split(tuple(train), n) for train in data["splits"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"malformed split plan: {e}") from e
        return cls(splits, n, scheme, data.get("seed"))

    def concat(self, other: "SplitPlan") -> "SplitPlan":
        """Splits of ``self`` followed by those of ``other``."""
        if other.n != self.n:
            raise ShapeError(f"cannot concatenate plans over n={self.n} and n={other.n}")
        return SplitPlan(self.splits + other.splits, self.n, Scheme(SchemeName.CUSTOM), None)

    def relabel(self, perm: Sequence[int]) -> "SplitPlan":
        """
        Plan matching a dataset whose row ``i`` is old row ``perm[i]``.

        A split keeps the same observations in its training set after the
        rows are reordered.
        """
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (self.n,) or not np.array_equal(np.sort(perm), np.arange(self.n)):
            raise ShapeError("relabel needs a permutation of 0..n-1")
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(self.n)
        splits = tuple(
            Split(tuple(int(i) for i in inverse[s.train_indices]), self.n) for s in self.splits
        )
        return SplitPlan(splits, self.n, self.scheme, self.seed)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _check_train_size(n: int, n_e: int) -> None:
    if n < 2:
        raise BoundsError(f"splitting needs n >= 2, got n={n}")
    if not 1 <= n_e <= n - 1:
        raise BoundsError(f"training size n_e must be in [1, {n - 1}], got {n_e}")


def _random_subset(n: int, n_e: int, seed: int, index: int) -> Split:
    rng = make_rng(seed, "subset", index)
    return Split(tuple(int(i) for i in np.sort(rng.choice(n, size=n_e, replace=False))), n)


def holdout(n: int, n_e: int, seed: int) -> SplitPlan:
    """One uniformly random training set of size ``n_e``."""
    _check_train_size(n, n_e)
    plan = SplitPlan((_random_subset(n, n_e, seed, 0),), n, Scheme(SchemeName.HOLDOUT), seed)
    logger.debug("plan built", scheme="holdout", n=n, n_e=n_e, seed=seed)
    return plan


def monte_carlo(n: int, n_e: int, v: int, seed: int) -> SplitPlan:
    """
    ``v`` i.i.d. uniform training sets of size ``n_e``; repeats are allowed.

    The first split coincides with ``holdout(n, n_e, seed)``.
    """
    _check_train_size(n, n_e)
    if v < 1:
        raise BoundsError(f"Monte-Carlo CV needs V >= 1, got {v}")
    splits = tuple(_random_subset(n, n_e, seed, j) for j in range(v))
    logger.debug("plan built", scheme="monte_carlo", n=n, n_e=n_e, V=v, seed=seed)
    return SplitPlan(splits, n, Scheme(SchemeName.MONTE_CARLO, v=v), seed)


def _vfold_blocks(n: int, v: int, seed: int, repetition: int) -> List[np.ndarray]:
    perm = make_rng(seed, "vfold", repetition).permutation(n)
    # round-robin deal: the first n mod V blocks get the extra element
    return [perm[j::v] for j in range(v)]


def _check_folds(n: int, v: int) -> None:
    if n < 2:
        raise BoundsError(f"V-fold needs n >= 2, got n={n}")
    if not 2 <= v <= n:
        raise BoundsError(f"number of folds V must be in [2, {n}], got {v}")


def _complement_split(n: int, block: np.ndarray) -> Split:
    mask = np.ones(n, dtype=bool)
    mask[block] = False
    return Split(tuple(int(i) for i in np.flatnonzero(mask)), n)


def vfold(n: int, v: int, seed: int) -> SplitPlan:
    """Random partition into ``v`` validation blocks; split j trains on the complement of block j."""
    _check_folds(n, v)
    blocks = _vfold_blocks(n, v, seed, 0)
    splits = tuple(_complement_split(n, b) for b in blocks)
    logger.debug("plan built", scheme="vfold", n=n, V=v, seed=seed)
    return SplitPlan(splits, n, Scheme(SchemeName.VFOLD, v=v), seed)


def repeated_vfold(n: int, v: int, l: int, seed: int) -> SplitPlan:
    """``l`` independent V-fold partitions; repetition 0 equals ``vfold(n, v, seed)``."""
    _check_folds(n, v)
    if l < 1:
        raise BoundsError(f"number of repetitions L must be at least 1, got {l}")
    splits: List[Split] = []
    for repetition in range(l):
        splits.extend(_complement_split(n, b) for b in _vfold_blocks(n, v, seed, repetition))
    logger.debug("plan built", scheme="repeated_vfold", n=n, V=v, L=l, seed=seed)
    return SplitPlan(tuple(splits), n, Scheme(SchemeName.REPEATED_VFOLD, v=v, l=l), seed)


def leave_one_out(n: int) -> SplitPlan:
    """Split j leaves out exactly index j; consumes no randomness."""
    if n < 2:
        raise BoundsError(f"leave-one-out needs n >= 2, got n={n}")
    splits = tuple(
        Split(tuple(i for i in range(n) if i != j), n) for j in range(n)
    )
    return SplitPlan(splits, n, Scheme(SchemeName.LEAVE_ONE_OUT), None)


def leave_p_out(n: int, p: int, max_splits: Optional[int] = None) -> SplitPlan:
    """
    All training sets of size ``n - p``, validation sets in lexicographic order.

    Raises:
        BudgetError: if binomial(n, p) exceeds ``max_splits`` (default from
            settings, 10^6)
    """
    if n < 2:
        raise BoundsError(f"leave-p-out needs n >= 2, got n={n}")
    if not 1 <= p <= n - 1:
        raise BoundsError(f"p must be in [1, {n - 1}], got {p}")
    limit = max_splits if max_splits is not None else get_settings().computation.max_splits
    count = math.comb(n, p)
    if count > limit:
        raise BudgetError(n, p, count, limit)

    full = range(n)
    splits = []
    for held_out in itertools.combinations(full, p):
        out = set(held_out)
        splits.append(Split(tuple(i for i in full if i not in out), n))
    logger.debug("plan built", scheme="lpo", n=n, p=p, splits=count)
    return SplitPlan(tuple(splits), n, Scheme(SchemeName.LEAVE_P_OUT, p=p), None)


# ---------------------------------------------------------------------------
# Plan grammar
# ---------------------------------------------------------------------------


class PlanSpec(BaseModel):
    """
    Size-independent description of a plan, e.g. ``vfold:5`` or ``mc:0.5:20``.

    Training sizes may be absolute (``holdout:30``) or a fraction of n
    (``holdout:0.5``), so one spec can be applied to sub-samples of any size.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["holdout", "vfold", "mc", "loo", "lpo", "rvfold"]
    ne: Optional[float] = None
    v: Optional[int] = None
    p: Optional[int] = None
    l: Optional[int] = None

    @model_validator(mode="after")
    def check_fields(self) -> "PlanSpec":
        needs = {
            "holdout": ("ne",),
            "vfold": ("v",),
            "mc": ("ne", "v"),
            "loo": (),
            "lpo": ("p",),
            "rvfold": ("v", "l"),
        }[self.kind]
        for name in needs:
            if getattr(self, name) is None:
                raise ValueError(f"plan '{self.kind}' needs '{name}'")
        if self.ne is not None and self.ne <= 0:
            raise ValueError("training size must be positive")
        return self

    @property
    def token(self) -> str:
        def fmt(value: float) -> str:
            return str(int(value)) if float(value).is_integer() else repr(value)

        parts: List[str] = [self.kind]
        if self.kind == "holdout":
            parts.append(fmt(self.ne))
        elif self.kind == "vfold":
            parts.append(str(self.v))
        elif self.kind == "mc":
            parts += [fmt(self.ne), str(self.v)]
        elif self.kind == "lpo":
            parts.append(str(self.p))
        elif self.kind == "rvfold":
            parts += [str(self.v), str(self.l)]
        return ":".join(parts)

    def train_size(self, n: int) -> int:
        """Training size for a sample of size ``n``."""
        if self.kind in ("holdout", "mc"):
            if self.ne < 1:
                return int(round(self.ne * n))
            return int(self.ne)
        if self.kind == "loo":
            return n - 1
        if self.kind == "lpo":
            return n - int(self.p)
        # vfold families: size of the largest training set
        return n - n // int(self.v)

    def build(self, n: int, seed: int, max_splits: Optional[int] = None) -> SplitPlan:
        """Draw the plan for a sample of size ``n``."""
        if self.kind == "holdout":
            return holdout(n, self.train_size(n), seed)
        if self.kind == "vfold":
            return vfold(n, int(self.v), seed)
        if self.kind == "mc":
            return monte_carlo(n, self.train_size(n), int(self.v), seed)
        if self.kind == "loo":
            return leave_one_out(n)
        if self.kind == "lpo":
            return leave_p_out(n, int(self.p), max_splits)
        return repeated_vfold(n, int(self.v), int(self.l), seed)


def parse_plan_spec(token: Union[str, PlanSpec]) -> PlanSpec:
    """
    Parse ``holdout:<ne>``, ``vfold:<V>``, ``mc:<ne>:<V>``, ``loo``,
    ``lpo:<p>`` or ``rvfold:<V>:<L>``.
    """
    if isinstance(token, PlanSpec):
        return token
    parts = [p.strip() for p in str(token).strip().split(":")]
    kind = parts[0].lower()
    layout = {
        "holdout": ("ne",),
        "vfold": ("v",),
        "mc": ("ne", "v"),
        "loo": (),
        "lpo": ("p",),
        "rvfold": ("v", "l"),
    }
    if kind not in layout:
        raise ConfigurationError(f"unknown plan '{token}'")
    names = layout[kind]
    if len(parts) - 1 != len(names):
        raise ConfigurationError(f"plan '{token}' expects {len(names)} parameter(s)")
    values: Dict[str, Any] = {"kind": kind}
    try:
        for name, raw in zip(names, parts[1:]):
            values[name] = float(raw) if name == "ne" else int(raw)
        return PlanSpec(**values)
    except (ValueError, ValidationError) as e:
        raise ConfigurationError(f"invalid plan '{token}': {e}") from e
