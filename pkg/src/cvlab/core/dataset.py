"""
Sample containers and synthetic data generators.

A ``Dataset`` is an immutable, ordered sample of one of three kinds:

- regression: features ``x`` (n x d) and real responses ``y``
- classification: features (possibly d = 0) and integer labels ``y``
- density: observations ``x`` in [0, 1]^d, no responses

Generators describe the data law P of an experiment. They are pydantic models
discriminated by their ``family`` field, so they can be read from experiment
config files and validated in one step.
"""

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from ..utils.file_ops import AtomicFileWriter
from ..utils.rng import make_rng
from .errors import BoundsError, ConfigurationError, ParseError, ShapeError
from .logger import get_logger

logger = get_logger(__name__)


class TaskKind(str, Enum):
    """Kind of learning problem a dataset belongs to."""
    REGRESSION = "regression"
    CLASSIFICATION = "classification"
    DENSITY = "density"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Ordered, index-addressable sample.

    ``x`` always has shape ``(n, d)``; ``d = 0`` is allowed for pure-label
    classification. Arrays are copied and made read-only on construction.
    """

    kind: TaskKind
    x: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = TaskKind(self.kind)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ShapeError(f"features must be a 2-d array, got shape {x.shape}")
        n = x.shape[0]
        if n < 1:
            raise ShapeError("a dataset needs at least one row")

        y = self.y
        if kind is TaskKind.DENSITY:
            if y is not None:
                raise ShapeError("density datasets carry no responses")
        else:
            if y is None:
                raise ShapeError(f"{kind.value} datasets need responses")
            y = np.asarray(y)
            if y.shape != (n,):
                raise ShapeError(f"responses have shape {y.shape}, expected ({n},)")
            if kind is TaskKind.CLASSIFICATION:
                if not np.all(np.isfinite(y.astype(np.float64))) or np.any(y != np.round(y)):
                    raise ShapeError("class labels must be integers")
                y = y.astype(np.int64)
                if np.any(y < 0):
                    raise ShapeError("class labels must be non-negative ids 0..K-1")
            else:
                y = y.astype(np.float64)
            y = _frozen(y)

        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    @property
    def n_classes(self) -> int:
        """Number of label ids K (at least 2) for classification data."""
        if self.kind is not TaskKind.CLASSIFICATION:
            raise ShapeError("only classification datasets have classes")
        return max(2, int(self.y.max()) + 1)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Rows at ``indices``, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise ShapeError("cannot take an empty subset")
        if idx.min() < 0 or idx.max() >= self.n:
            raise ShapeError(f"subset indices out of range for n={self.n}")
        y = None if self.y is None else self.y[idx]
        return Dataset(self.kind, self.x[idx], y)

    def equals(self, other: "Dataset") -> bool:
        """Exact equality of kind, features and responses."""
        if self.kind is not other.kind or self.x.shape != other.x.shape:
            return False
        if not np.array_equal(self.x, other.x):
            return False
        if self.y is None or other.y is None:
            return self.y is None and other.y is None
        return bool(np.array_equal(self.y, other.y))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


class LinearModelSpec(BaseModel):
    """Y = x . beta_star + sigma * N(0, 1), x uniform on [0,1]^d or standard normal."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Literal["linear"] = "linear"
    beta_star: List[float] = Field(min_length=1)
    sigma: float = Field(ge=0.0)
    x_law: Literal["uniform", "normal"] = "uniform"

    @property
    def kind(self) -> TaskKind:
        return TaskKind.REGRESSION

    @property
    def d(self) -> int:
        return len(self.beta_star)


class PiecewiseConstantDensitySpec(BaseModel):
    """Density on [0, 1], constant on the cells delimited by ``breakpoints``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Literal["piecewise_density"] = "piecewise_density"
    breakpoints: List[float] = Field(min_length=2)
    densities: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def check_density(self) -> "PiecewiseConstantDensitySpec":
        edges = np.asarray(self.breakpoints, dtype=np.float64)
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.densities) != len(self.breakpoints) - 1:
            raise ValueError("need exactly one density value per cell")
        values = np.asarray(self.densities, dtype=np.float64)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and non-negative")
        total = math.fsum(values * np.diff(edges))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"density integrates to {total!r}, not 1")
        return self

    @property
    def kind(self) -> TaskKind:
        return TaskKind.DENSITY

    @property
    def d(self) -> int:
        return 1

    @property
    def edges(self) -> np.ndarray:
        return np.asarray(self.breakpoints, dtype=np.float64)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.densities, dtype=np.float64)

    def pdf(self, points: np.ndarray) -> np.ndarray:
        """Density at ``points``; cells are right-open, the last one closed."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1)
        cells = np.searchsorted(self.edges, pts, side="right") - 1
        cells = np.clip(cells, 0, len(self.densities) - 1)
        out = self.values[cells]
        return np.where((pts < 0.0) | (pts > 1.0), 0.0, out)

    def mass(self, a: float, b: float) -> float:
        """Integral of the density over [a, b]."""
        lo = np.clip(self.edges[:-1], a, b)
        hi = np.clip(self.edges[1:], a, b)
        return math.fsum(self.values * (hi - lo))

    def l2_norm_sq(self) -> float:
        """Exact squared L2 norm of the density."""
        return math.fsum(self.values**2 * np.diff(self.edges))


class BernoulliLabelsSpec(BaseModel):
    """Labels Y in {0, 1} with P(Y = 1) = p1, no features."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Literal["bernoulli"] = "bernoulli"
    p1: float = Field(gt=0.0, lt=1.0)

    @property
    def kind(self) -> TaskKind:
        return TaskKind.CLASSIFICATION

    @property
    def d(self) -> int:
        return 0


DataGenerator = Annotated[
    Union[LinearModelSpec, PiecewiseConstantDensitySpec, BernoulliLabelsSpec],
    Field(discriminator="family"),
]

_GENERATOR_ADAPTER: TypeAdapter = TypeAdapter(DataGenerator)


def parse_generator(spec: Mapping[str, Any]) -> Any:
    """
    Validate a generator description such as
    ``{"family": "bernoulli", "p1": 0.9}``.

    Raises:
        ConfigurationError: if the description is invalid
    """
    try:
        return _GENERATOR_ADAPTER.validate_python(dict(spec))
    except ValidationError as e:
        raise ConfigurationError(f"invalid generator spec: {e}") from e


def generate(gen: Any, n: int, seed: int) -> Dataset:
    """
    Draw ``n`` i.i.d. observations from ``gen``.

    The output is a pure function of ``(gen, n, seed)``.
    """
    if n < 1:
        raise BoundsError(f"sample size must be at least 1, got {n}")
    if isinstance(gen, Mapping):
        gen = parse_generator(gen)
    rng = make_rng(seed, "generate")

    if isinstance(gen, LinearModelSpec):
        beta = np.asarray(gen.beta_star, dtype=np.float64)
        if gen.x_law == "uniform":
            x = rng.random((n, gen.d))
        else:
            x = rng.standard_normal((n, gen.d))
        noise = rng.standard_normal(n)
        y = x @ beta
        if gen.sigma > 0:
            y = y + gen.sigma * noise
        return Dataset(TaskKind.REGRESSION, x, y)

    if isinstance(gen, PiecewiseConstantDensitySpec):
        widths = np.diff(gen.edges)
        probs = gen.values * widths
        probs = probs / probs.sum()
        cells = rng.choice(len(probs), size=n, p=probs)
        u = rng.random(n)
        x = gen.edges[:-1][cells] + u * widths[cells]
        return Dataset(TaskKind.DENSITY, np.minimum(x, 1.0).reshape(n, 1))

    if isinstance(gen, BernoulliLabelsSpec):
        y = (rng.random(n) < gen.p1).astype(np.int64)
        return Dataset(TaskKind.CLASSIFICATION, np.empty((n, 0)), y)

    raise ConfigurationError(f"unsupported generator {type(gen).__name__}")


def permute(ds: Dataset, seed: int) -> Dataset:
    """Uniformly random reordering of the rows of ``ds``."""
    perm = make_rng(seed, "permute").permutation(ds.n)
    return ds.subset(perm)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _format_value(value: float) -> str:
    return format(float(value), ".17g")


def save_csv(ds: Dataset, path: Union[str, Path]) -> Path:
    """
    Write ``ds`` as CSV.

    Layout: a ``#kind=<kind>,d=<d>`` line, a header ``x1,...,xd[,y]`` and one
    row per observation. Floats are written with 17 significant digits so the
    file reloads bit-identically.
    """
    header = [f"x{j + 1}" for j in range(ds.d)]
    if ds.y is not None:
        header.append("y")
    target = Path(path)
    with AtomicFileWriter(target) as handle:
        handle.write(f"#kind={ds.kind.value},d={ds.d}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            row = [_format_value(v) for v in ds.x[i]]
            if ds.y is not None:
                row.append(str(int(ds.y[i])) if ds.kind is TaskKind.CLASSIFICATION else _format_value(ds.y[i]))
            writer.writerow(row)
    logger.debug("dataset saved", path=str(target), n=ds.n, kind=ds.kind.value)
    return target


def _parse_meta(line: str) -> Dict[str, str]:
    if not line.startswith("#"):
        raise ParseError("first line must be '#kind=<kind>,d=<int>'", row=1)
    fields: Dict[str, str] = {}
    for item in line[1:].strip().split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"malformed metadata item {item!r}", row=1)
        fields[key.strip()] = value.strip()
    return fields


def load_csv(path: Union[str, Path]) -> Dataset:
    """
    Read a dataset written by ``save_csv`` (or by hand in the same layout).

    Raises:
        ParseError: ragged rows, non-numeric fields or unknown kind; the
            message names the offending 1-based row
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError("empty file", row=1)

    meta = _parse_meta(lines[0])
    try:
        kind = TaskKind(meta.get("kind", ""))
    except ValueError:
        raise ParseError(f"unknown kind {meta.get('kind')!r}", row=1) from None
    try:
        d = int(meta.get("d", ""))
    except ValueError:
        raise ParseError(f"d must be an integer, got {meta.get('d')!r}", row=1) from None
    if d < 0:
        raise ParseError("d must be non-negative", row=1)

    has_y = kind is not TaskKind.DENSITY
    expected_header = [f"x{j + 1}" for j in range(d)] + (["y"] if has_y else [])
    if len(lines) < 2:
        raise ParseError("missing header row", row=2)
    header = next(csv.reader([lines[1]]))
    if [h.strip() for h in header] != expected_header:
        raise ParseError(f"header must be {','.join(expected_header)}", row=2)

    width = len(expected_header)
    xs: List[List[float]] = []
    ys: List[float] = []
    for row_number, fields in enumerate(csv.reader(lines[2:]), start=3):
        if not fields:
            continue
        if len(fields) != width:
            raise ParseError(f"expected {width} fields, found {len(fields)}", row=row_number)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-numeric field in {fields!r}", row=row_number) from None
        if has_y:
            ys.append(values[-1])
            values = values[:-1]
        xs.append(values)

    if not xs:
        raise ParseError("no data rows", row=3)
    x = np.asarray(xs, dtype=np.float64).reshape(len(xs), d)
    try:
        return Dataset(kind, x, np.asarray(ys) if has_y else None)
    except ShapeError as e:
        raise ParseError(str(e)) from e
