"""
Monte-Carlo laboratory.

``run_experiment`` draws R independent datasets from a generator, evaluates
every (rule, scheme, criterion) combination on each of them with freshly
drawn plans, and summarizes the criteria, their pairwise increments and
their bias against the true risks in a ``MomentReport``.

The statistical checks below reuse the same replicate machinery. Each
returns a ``CheckResult`` whose ``passed`` flag compares the observed
quantities within a band of ``stderr_band`` standard errors (3 by default).

Seeds: replicate r of an experiment with master seed s uses

- dataset         derive_seed(s, "dataset", r)
- rule streams    derive_seed(s, "rules", r)
- plan k          derive_seed(s, "plan:<k>", r)   (r = 0 for frozen plans)

so reports are identical whatever the number of worker threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy import stats

from ..utils.rng import RNG_ALGORITHM, derive_seed
from .closed_forms import condition_number
from .config import get_settings
from .constants import c1_vf, c2_vf
from .criteria import (
    FULL_SAMPLE_STREAM,
    corrected_cv_components,
    cv_risk,
    full_sample_risk,
    theoretical_bias,
    TheoreticalModel,
)
from .dataset import (
    BernoulliLabelsSpec,
    DataGenerator,
    Dataset,
    generate,
)
from .errors import ConditioningError, ConfigurationError, CVLabError, RuleFailureError
from .logger import get_logger
from .risk import (
    conditional_cost_variance,
    default_contrast,
    excess_risk,
    expected_contrast,
)
from .rules import (
    ContrastKind,
    LearningRule,
    MajorityVoteRule,
    TieMode,
    contrast_eval,
    parse_rule,
)
from .select import RuleMenu, first_argmin
from .splits import (
    PlanSpec,
    SplitPlan,
    holdout,
    leave_one_out,
    leave_p_out,
    monte_carlo,
    parse_plan_spec,
    repeated_vfold,
    vfold,
)

logger = get_logger(__name__)

T = TypeVar("T")

CriterionName = Literal["cv", "corrected", "full"]
CheckName = Literal[
    "variance_ordering",
    "affine_in_inv_v",
    "variance_cross_prediction",
    "holdout_decomposition",
    "repeated_vfold",
    "smartness",
    "surpenalization",
    "bias_law",
    "expectation_law",
    "corrected_unbiasedness",
]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class ExperimentConfig(BaseModel):
    """
    Experiment description, usually read from a flat ``key=value`` file by
    ``load_experiment_config``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    generator: DataGenerator
    n: int = Field(ge=2)
    rules: List[str] = Field(min_length=1)
    contrast: Optional[ContrastKind] = None
    schemes: List[str] = Field(default_factory=lambda: ["vfold:5"])
    replicates: int = Field(ge=2)
    master_seed: int = Field(default=0, ge=0)
    frozen_plans: bool = False
    criteria: List[CriterionName] = Field(default_factory=lambda: ["cv"])
    checks: List[CheckName] = Field(default_factory=list)
    jobs: int = Field(default_factory=lambda: get_settings().computation.jobs, ge=1, le=256)

    # check parameters
    n_e: Optional[int] = Field(default=None, ge=1)
    v: int = Field(default=10, ge=1)
    v_grid: List[float] = Field(default_factory=lambda: [1, 2, 5, 10, 20, 50])
    v_fit_pair: List[int] = Field(default_factory=lambda: [2, 5])
    v_test: int = Field(default=10, ge=2)
    folds: int = Field(default=3, ge=2)
    l_grid: List[int] = Field(default_factory=lambda: [1, 2, 5, 10])
    validation_size: Optional[int] = Field(default=None, ge=1)
    n_list: List[int] = Field(default_factory=lambda: list(range(1, 21)))
    n_grid: List[int] = Field(default_factory=list)
    c_grid: List[float] = Field(default_factory=lambda: [0.0, 0.5, 0.8, 1.0, 1.1, 1.25, 1.5, 2.0, 3.0])
    sweep_repeats: int = Field(default=50, ge=1)
    expect_smart: Optional[bool] = None
    max_splits: Optional[int] = Field(default=None, ge=1)

    @field_validator("rules")
    @classmethod
    def check_rules(cls, tokens: List[str]) -> List[str]:
        for token in tokens:
            try:
                parse_rule(token)
            except ConfigurationError as e:
                raise ValueError(str(e)) from None
        return tokens

    @field_validator("schemes")
    @classmethod
    def check_schemes(cls, tokens: List[str]) -> List[str]:
        for token in tokens:
            try:
                parse_plan_spec(token)
            except ConfigurationError as e:
                raise ValueError(str(e)) from None
        return tokens

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        contrast = self.contrast_kind
        if self.generator.kind is not contrast.task:
            raise ValueError(
                f"contrast {contrast.value} does not apply to {self.generator.kind.value} data"
            )
        for token in self.rules:
            task = parse_rule(token).task
            if task is not None and task is not self.generator.kind:
                raise ValueError(f"rule {token} cannot be fitted on {self.generator.kind.value} data")
        for spec in self.plan_specs:
            if spec.kind in ("vfold", "rvfold") and not 2 <= int(spec.v) <= self.n:
                raise ValueError(f"plan {spec.token} needs 2 <= V <= n={self.n}")
            train = spec.train_size(self.n)
            if not 1 <= train <= self.n - 1:
                raise ValueError(f"plan {spec.token} gives training size {train} for n={self.n}")
        if self.n_e is not None and self.n_e >= self.n:
            raise ValueError(f"n_e must be below n={self.n}")
        if len(self.v_fit_pair) != 2:
            raise ValueError("v_fit_pair needs exactly two values")
        return self

    @property
    def contrast_kind(self) -> ContrastKind:
        return self.contrast or default_contrast(self.generator)

    @property
    def menu(self) -> RuleMenu:
        return RuleMenu.parse(self.rules)

    @property
    def plan_specs(self) -> List[PlanSpec]:
        return [parse_plan_spec(t) for t in self.schemes]

    @property
    def band(self) -> float:
        return get_settings().computation.stderr_band


_LIST_KEYS = {
    "rules", "schemes", "criteria", "checks", "v_grid", "v_fit_pair",
    "l_grid", "n_list", "n_grid", "c_grid",
}
_GENERATOR_LIST_KEYS = {"beta_star", "breakpoints", "densities"}


def _split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def parse_experiment_config(values: Mapping[str, Optional[str]]) -> ExperimentConfig:
    """
    Build a config from flat keys. Generator fields use a ``generator.``
    prefix; list-valued keys are comma separated::

        generator.family=piecewise_density
        generator.breakpoints=0,0.5,1
        generator.densities=1.5,0.5
        n=50
        rules=hist:1/4
        schemes=vfold:5,holdout:25
        replicates=1000
    """
    data: Dict[str, Any] = {}
    generator: Dict[str, Any] = {}
    for raw_key, raw_value in values.items():
        key = raw_key.strip().lower()
        value = (raw_value or "").strip()
        if key.startswith("generator."):
            name = key.split(".", 1)[1]
            generator[name] = _split_list(value) if name in _GENERATOR_LIST_KEYS else value
        elif key in _LIST_KEYS:
            data[key] = _split_list(value)
        elif value:
            data[key] = value
    data["generator"] = generator
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid experiment config: {e}") from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a ``key=value`` experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"experiment config not found: {path}")
    return parse_experiment_config(dotenv_values(path))


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Moments:
    """Mean and unbiased variance of a replicated quantity with their standard errors."""

    mean: float
    variance: float
    stderr: float
    variance_stderr: float
    count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr,
            "variance_stderr": self.variance_stderr,
            "count": self.count,
        }


def moments(values: Sequence[float]) -> Moments:
    """
    Moments of ``values``, ignoring NaN (failed replicates).

    The variance standard error uses the delta method on the fourth central
    moment: Var(s^2) ~ (m4 - s^4 (R - 3) / (R - 1)) / R.
    """
    x = np.asarray(values, dtype=np.float64)
    x = x[~np.isnan(x)]
    count = int(x.size)
    if count < 2:
        mean = float(x[0]) if count else math.nan
        return Moments(mean, math.nan, math.nan, math.nan, count)
    with np.errstate(invalid="ignore", over="ignore"):
        mean = float(np.mean(x))
        variance = float(np.var(x, ddof=1))
        centered = x - mean
        m4 = float(np.mean(centered**4))
        var_of_var = (m4 - variance**2 * (count - 3) / (count - 1)) / count
    stderr = math.sqrt(variance / count) if np.isfinite(variance) else math.nan
    variance_stderr = math.sqrt(max(var_of_var, 0.0)) if np.isfinite(var_of_var) else math.nan
    return Moments(mean, variance, stderr, variance_stderr, count)


def _combined(*errors: float) -> float:
    return math.sqrt(math.fsum(e * e for e in errors))


def parallel_map(fn: Callable[[int], T], count: int, jobs: int = 1) -> List[T]:
    """``[fn(0), ..., fn(count - 1)]``, evaluated on ``jobs`` threads, in index order."""
    if jobs <= 1:
        return [fn(r) for r in range(count)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(count)))


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


@dataclass
class ReplicateRecord:
    values: Dict[Tuple[Any, ...], float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)


def _common_train_size(spec: PlanSpec, n: int) -> Optional[int]:
    if spec.kind in ("vfold", "rvfold"):
        return n - n // int(spec.v) if n % int(spec.v) == 0 else None
    return spec.train_size(n)


def _plan_seed(config: ExperimentConfig, k: int, r: int) -> int:
    return derive_seed(config.master_seed, f"plan:{k}", 0 if config.frozen_plans else r)


def _dataset(config: ExperimentConfig, r: int, size: Optional[int] = None) -> Dataset:
    return generate(config.generator, size or config.n, derive_seed(config.master_seed, "dataset", r))


def _run_replicate(config: ExperimentConfig, r: int, lpo_cache: Dict[int, SplitPlan]) -> ReplicateRecord:
    record = ReplicateRecord()
    contrast = config.contrast_kind
    gen = config.generator
    ds = _dataset(config, r)
    menu = config.menu.with_seed(derive_seed(config.master_seed, "rules", r))
    specs = config.plan_specs
    plans = [
        lpo_cache[k] if k in lpo_cache else spec.build(config.n, _plan_seed(config, k, r), config.max_splits)
        for k, spec in enumerate(specs)
    ]
    train_sizes = sorted({s for s in (_common_train_size(spec, config.n) for spec in specs) if s})
    risk_seed = derive_seed(config.master_seed, "risk", r)

    for m, rule in menu:
        try:
            for spec, plan in zip(specs, plans):
                if "corrected" in config.criteria:
                    components = corrected_cv_components(rule, ds, plan, contrast)
                    found = {
                        "cv": components.cv.value,
                        "corrected": components.value,
                        "full": components.full_sample,
                    }
                else:
                    found = {"cv": cv_risk(rule, ds, plan, contrast).value}
                    if "full" in config.criteria:
                        found["full"] = full_sample_risk(rule, ds, contrast)
                for criterion in config.criteria:
                    record.values[("criterion", m, spec.token, criterion)] = found[criterion]
            predictor = rule.fit(ds, FULL_SAMPLE_STREAM)
            record.values[("risk_n", m)] = expected_contrast(predictor, gen, contrast, risk_seed)
            for n_e in train_sizes:
                fresh = generate(gen, n_e, derive_seed(config.master_seed, f"fresh:{n_e}", r))
                fitted = rule.fit(fresh, FULL_SAMPLE_STREAM)
                record.values[("risk_ne", m, n_e)] = expected_contrast(fitted, gen, contrast, risk_seed)
        except CVLabError as e:
            failure = e if isinstance(e, RuleFailureError) else RuleFailureError(m, e)
            record.failures.append(f"replicate {r}: {failure}")
            logger.warning("replicate failed", replicate=r, rule=m, error=str(e))
    return record


@dataclass
class MomentReport:
    """Summary of an experiment."""

    n: int
    replicates: int
    master_seed: int
    contrast: str
    criteria: pd.DataFrame
    increments: pd.DataFrame
    biases: pd.DataFrame
    risks: pd.DataFrame
    raw: pd.DataFrame
    failures: List[str]

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    def criterion_row(self, rule: str, scheme: str, criterion: str = "cv") -> pd.Series:
        rows = self.criteria[
            (self.criteria["rule"] == rule)
            & (self.criteria["scheme"] == scheme)
            & (self.criteria["criterion"] == criterion)
        ]
        if rows.empty:
            raise ConfigurationError(f"no criterion row for {rule} / {scheme} / {criterion}")
        return rows.iloc[0]

    def bias_row(self, rule: str, scheme: str, criterion: str = "cv") -> pd.Series:
        rows = self.biases[
            (self.biases["rule"] == rule)
            & (self.biases["scheme"] == scheme)
            & (self.biases["criterion"] == criterion)
        ]
        if rows.empty:
            raise ConfigurationError(f"no bias row for {rule} / {scheme} / {criterion}")
        return rows.iloc[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "rng": RNG_ALGORITHM,
            "contrast": self.contrast,
            "failure_count": self.failure_count,
            "failures": self.failures,
            "criteria": self.criteria.to_dict(orient="records"),
            "increments": self.increments.to_dict(orient="records"),
            "biases": self.biases.to_dict(orient="records"),
            "risks": self.risks.to_dict(orient="records"),
        }

    def frames(self) -> Dict[str, pd.DataFrame]:
        """Tables written as CSV next to the JSON report."""
        return {
            "criteria": self.criteria,
            "increments": self.increments,
            "biases": self.biases,
            "risks": self.risks,
            "replicates": self.raw,
        }


def _column(records: List[ReplicateRecord], key: Tuple[Any, ...]) -> np.ndarray:
    return np.array([rec.values.get(key, math.nan) for rec in records], dtype=np.float64)


@np.errstate(invalid="ignore", over="ignore")
def _build_report(config: ExperimentConfig, records: List[ReplicateRecord]) -> MomentReport:
    ids = config.menu.ids
    specs = config.plan_specs
    criterion_rows, increment_rows, bias_rows, risk_rows, raw_rows = [], [], [], [], []

    for m in ids:
        risk_n = _column(records, ("risk_n", m))
        risk_rows.append({"rule": m, "train_size": config.n, **moments(risk_n).to_dict()})
        for n_e in sorted({k[2] for rec in records for k in rec.values if k[0] == "risk_ne" and k[1] == m}):
            risk_rows.append(
                {"rule": m, "train_size": n_e, **moments(_column(records, ("risk_ne", m, n_e))).to_dict()}
            )

    for spec in specs:
        n_e = _common_train_size(spec, config.n)
        for criterion in config.criteria:
            columns = {m: _column(records, ("criterion", m, spec.token, criterion)) for m in ids}
            for m in ids:
                values = columns[m]
                criterion_rows.append(
                    {"rule": m, "scheme": spec.token, "criterion": criterion, "n_e": n_e,
                     **moments(values).to_dict()}
                )
                for r, value in enumerate(values):
                    raw_rows.append(
                        {"replicate": r, "rule": m, "scheme": spec.token, "criterion": criterion, "value": value}
                    )
                vs_n = moments(values - _column(records, ("risk_n", m)))
                vs_ne = (
                    moments(values - _column(records, ("risk_ne", m, n_e)))
                    if n_e is not None
                    else Moments(math.nan, math.nan, math.nan, math.nan, 0)
                )
                bias_rows.append(
                    {"rule": m, "scheme": spec.token, "criterion": criterion, "n_e": n_e,
                     "bias_vs_risk_n": vs_n.mean, "bias_vs_risk_n_stderr": vs_n.stderr,
                     "bias_vs_risk_ne": vs_ne.mean, "bias_vs_risk_ne_stderr": vs_ne.stderr}
                )
            for i, a in enumerate(ids):
                for b in ids[i + 1 :]:
                    inc = moments(columns[a] - columns[b])
                    ma, mb = moments(columns[a]), moments(columns[b])
                    bound = ma.variance + mb.variance + 2.0 * math.sqrt(max(ma.variance * mb.variance, 0.0))
                    band = config.band * _combined(inc.variance_stderr, min(ma.variance_stderr, mb.variance_stderr))
                    increment_rows.append(
                        {"rule_a": a, "rule_b": b, "scheme": spec.token, "criterion": criterion,
                         **inc.to_dict(),
                         "cauchy_schwarz_bound": bound,
                         "cauchy_schwarz_ok": bool(inc.variance <= bound * (1 + 1e-12)),
                         "below_individual": bool(inc.variance + band < min(ma.variance, mb.variance))}
                    )

    failures = [f for rec in records for f in rec.failures]
    return MomentReport(
        n=config.n,
        replicates=config.replicates,
        master_seed=config.master_seed,
        contrast=config.contrast_kind.value,
        criteria=pd.DataFrame(criterion_rows),
        increments=pd.DataFrame(increment_rows),
        biases=pd.DataFrame(bias_rows),
        risks=pd.DataFrame(risk_rows),
        raw=pd.DataFrame(raw_rows),
        failures=failures,
    )


def run_experiment(config: ExperimentConfig) -> MomentReport:
    """Replicate, evaluate and summarize; see the module docstring for seeds."""
    logger.info(
        "experiment started", n=config.n, replicates=config.replicates,
        rules=len(config.rules), schemes=len(config.schemes), jobs=config.jobs,
    )
    # leave-p-out plans consume no randomness and are shared by all replicates
    lpo_cache = {
        k: spec.build(config.n, 0, config.max_splits)
        for k, spec in enumerate(config.plan_specs)
        if spec.kind in ("lpo", "loo")
    }
    records = parallel_map(lambda r: _run_replicate(config, r, lpo_cache), config.replicates, config.jobs)
    report = _build_report(config, records)
    logger.info("experiment finished", failures=report.failure_count)
    return report


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    """Outcome of a statistical check."""

    name: str
    passed: bool
    summary: str
    details: Dict[str, Any] = field(default_factory=dict)
    table: Optional[pd.DataFrame] = None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"name": self.name, "passed": self.passed, "summary": self.summary}
        out.update(self.details)
        if self.table is not None:
            out["table"] = self.table.to_dict(orient="records")
        return out


def _first_rule(config: ExperimentConfig, r: int) -> LearningRule:
    menu = config.menu.with_seed(derive_seed(config.master_seed, "rules", r))
    return menu.entries[0][1]


def _criterion_variances(
    config: ExperimentConfig,
    tag: str,
    plan_builders: Sequence[Callable[[int], SplitPlan]],
) -> List[Moments]:
    """Moments of the CV value of the first rule for each plan builder (called with the replicate index)."""
    contrast = config.contrast_kind

    def one(r: int) -> List[float]:
        ds = _dataset(config, r)
        rule = _first_rule(config, r)
        return [cv_risk(rule, ds, build(r), contrast).value for build in plan_builders]

    rows = np.array(parallel_map(one, config.replicates, config.jobs))
    logger.debug("variance check replicated", check=tag, replicates=config.replicates)
    return [moments(rows[:, k]) for k in range(len(plan_builders))]


def _seeded(config: ExperimentConfig, tag: str) -> Callable[[int], int]:
    return lambda r: derive_seed(config.master_seed, tag, r)


def _lpo_if_enumerable(config: ExperimentConfig, p: int) -> Optional[SplitPlan]:
    limit = config.max_splits or get_settings().computation.max_splits
    if math.comb(config.n, p) > limit:
        return None
    return leave_p_out(config.n, p, limit)


def _default_train_size(config: ExperimentConfig) -> int:
    return config.n_e if config.n_e is not None else config.n // 2


def variance_ordering_check(config: ExperimentConfig, n_e: Optional[int] = None, v: Optional[int] = None) -> CheckResult:
    """Var(hold-out) >= Var(Monte-Carlo CV with V splits) >= Var(leave-p-out), p = n - n_e."""

    n, n_e = config.n, n_e or _default_train_size(config)
    v = v or config.v
    lpo = leave_p_out(n, n - n_e, config.max_splits)
    ho_seed, mc_seed = _seeded(config, "ordering:holdout"), _seeded(config, "ordering:mc")
    m_ho, m_mc, m_lpo = _criterion_variances(
        config,
        "variance_ordering",
        [lambda r: holdout(n, n_e, ho_seed(r)), lambda r: monte_carlo(n, n_e, v, mc_seed(r)), lambda r: lpo],
    )
    band = config.band
    first = m_ho.variance >= m_mc.variance - band * _combined(m_ho.variance_stderr, m_mc.variance_stderr)
    second = m_mc.variance >= m_lpo.variance - band * _combined(m_mc.variance_stderr, m_lpo.variance_stderr)
    table = pd.DataFrame(
        [{"scheme": name, **m.to_dict()} for name, m in
         (("holdout", m_ho), (f"mc:{n_e}:{v}", m_mc), (f"lpo:{n - n_e}", m_lpo))]
    )
    return CheckResult(
        "variance_ordering",
        bool(first and second),
        f"var holdout={m_ho.variance:.6g} >= mc(V={v})={m_mc.variance:.6g} >= lpo={m_lpo.variance:.6g}",
        {"n_e": n_e, "V": v, "holdout_ge_mc": bool(first), "mc_ge_lpo": bool(second)},
        table,
    )


def _affine_fit(x: Sequence[float], y: Sequence[float]) -> Dict[str, float]:
    fit = stats.linregress(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return {
        "intercept": float(fit.intercept),
        "intercept_stderr": float(fit.intercept_stderr),
        "slope": float(fit.slope),
        "slope_stderr": float(fit.stderr),
        "r_squared": float(fit.rvalue**2),
    }


def affine_in_inv_V_check(
    config: ExperimentConfig,
    v_grid: Optional[Sequence[float]] = None,
    n_e: Optional[int] = None,
) -> CheckResult:
    """
    Fit Var(Monte-Carlo CV) = a + b / V over ``v_grid``; a should match the
    leave-p-out variance and b should be non-negative.
    """

    v_grid = [int(v) for v in (v_grid or config.v_grid)]
    if len(set(v_grid)) < 3:
        raise ConfigurationError("the V grid needs at least three distinct values")
    n, n_e = config.n, n_e or _default_train_size(config)
    builders: List[Callable[[int], SplitPlan]] = []
    for v in v_grid:
        seed_of = _seeded(config, f"affine:mc:{v}")
        builders.append(lambda r, v=v, seed_of=seed_of: monte_carlo(n, n_e, v, seed_of(r)))
    lpo = _lpo_if_enumerable(config, n - n_e)
    if lpo is not None:
        builders.append(lambda r: lpo)
    results = _criterion_variances(config, "affine_in_inv_v", builders)
    mc = results[: len(v_grid)]
    fit = _affine_fit([1.0 / v for v in v_grid], [m.variance for m in mc])

    band = config.band
    checks = {
        "r_squared_ok": fit["r_squared"] >= 0.95,
        "slope_nonnegative": fit["slope"] >= -band * fit["slope_stderr"],
        "intercept_nonnegative": fit["intercept"] >= -band * fit["intercept_stderr"],
    }
    details: Dict[str, Any] = {"n_e": n_e, "V_grid": v_grid, **fit}
    if lpo is not None:
        m_lpo = results[-1]
        details["lpo_variance"] = m_lpo.variance
        details["lpo_variance_stderr"] = m_lpo.variance_stderr
        checks["intercept_matches_lpo"] = abs(fit["intercept"] - m_lpo.variance) <= band * _combined(
            fit["intercept_stderr"], m_lpo.variance_stderr
        )
    details.update({k: bool(v) for k, v in checks.items()})
    table = pd.DataFrame([{"V": v, "inv_V": 1.0 / v, **m.to_dict()} for v, m in zip(v_grid, mc)])
    return CheckResult(
        "affine_in_inv_v",
        all(checks.values()),
        f"R^2={fit['r_squared']:.4f} intercept={fit['intercept']:.6g} slope={fit['slope']:.6g}",
        details,
        table,
    )


@dataclass
class VarianceFitReport:
    """Variance constants W1, W2 fitted at two V and checked at a third."""

    w1_hat: float
    w2_hat: float
    rows: pd.DataFrame
    r_squared: float
    relative_error: float
    tolerance: float = 0.10

    @property
    def passed(self) -> bool:
        return bool(self.relative_error <= self.tolerance)

    def to_check(self) -> CheckResult:
        return CheckResult(
            "variance_cross_prediction",
            self.passed,
            f"W1={self.w1_hat:.6g} W2={self.w2_hat:.6g} relative error={self.relative_error:.4f}",
            {"W1_hat": self.w1_hat, "W2_hat": self.w2_hat, "r_squared": self.r_squared,
             "relative_error": self.relative_error, "W2_positive": bool(self.w2_hat > 0)},
            self.rows,
        )


def variance_constant_cross_prediction(
    config: ExperimentConfig,
    v_fit_pair: Optional[Sequence[int]] = None,
    v_test: Optional[int] = None,
) -> VarianceFitReport:
    """
    Solve Var(V) = C1(V, n) W1 / n^2 + C2(V, n) W2 / n at two V, predict a third.

    Raises:
        ConditioningError: if the two fitting V give an ill-conditioned system
    """

    v1, v2 = [int(v) for v in (v_fit_pair or config.v_fit_pair)]
    v_test = int(v_test or config.v_test)
    n = config.n
    design = np.array([[c1_vf(v, n) / n**2, c2_vf(v, n) / n] for v in (v1, v2)])
    # columns live on scales 1/n^2 and 1/n; compare them on a common footing
    scaled = design / np.abs(design).max(axis=0)
    if v1 == v2 or condition_number(scaled) > 1e8:
        raise ConditioningError(
            f"V pair ({v1}, {v2}) does not determine W1 and W2; choose two clearly different V"
        )

    grid = [v1, v2, v_test]
    builders = []
    for v in grid:
        seed_of = _seeded(config, f"cross:vfold:{v}")
        builders.append(lambda r, v=v, seed_of=seed_of: vfold(n, v, seed_of(r)))
    observed = _criterion_variances(config, "variance_cross_prediction", builders)
    w1, w2 = np.linalg.solve(design, [observed[0].variance, observed[1].variance])
    predicted = [c1_vf(v, n) / n**2 * w1 + c2_vf(v, n) / n * w2 for v in grid]
    obs = np.array([m.variance for m in observed])
    ss_res = float(np.sum((obs - predicted) ** 2))
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    rows = pd.DataFrame(
        [{"V": v, "predicted": p, "observed": m.variance, "observed_stderr": m.variance_stderr}
         for v, p, m in zip(grid, predicted, observed)]
    )
    return VarianceFitReport(
        w1_hat=float(w1),
        w2_hat=float(w2),
        rows=rows,
        r_squared=1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0,
        relative_error=abs(predicted[2] - obs[2]) / obs[2] if obs[2] > 0 else math.inf,
    )


def holdout_variance_decomposition_check(
    config: ExperimentConfig,
    n_e: Optional[int] = None,
    validation_size: Optional[int] = None,
) -> CheckResult:
    """
    Var(hold-out) = Var(R(f(D^E))) + E[Var(c(f(D^E), Z) | D^E)] / |E^c|.

    With ``validation_size`` the sample has n_e + validation_size points.
    """

    n_e = n_e or _default_train_size(config)
    n_val = validation_size or config.validation_size or (config.n - n_e)
    size = n_e + n_val
    contrast = config.contrast_kind
    gen = config.generator
    plan_seed = _seeded(config, "decomposition:holdout")

    def one(r: int) -> Tuple[float, float, float]:
        ds = _dataset(config, r, size)
        rule = _first_rule(config, r)
        split = holdout(size, n_e, plan_seed(r))[0]
        predictor = rule.fit(ds.subset(split.train_indices), 0)
        criterion = contrast_eval(contrast, predictor, ds.subset(split.validation_indices))
        risk_seed = derive_seed(config.master_seed, "decomposition:risk", r)
        risk = expected_contrast(predictor, gen, contrast, risk_seed)
        cond_var = conditional_cost_variance(predictor, gen, contrast, risk_seed)
        return criterion, risk, cond_var

    rows = np.array(parallel_map(one, config.replicates, config.jobs))
    m_crit, m_risk, m_cond = moments(rows[:, 0]), moments(rows[:, 1]), moments(rows[:, 2])
    first = m_risk.variance
    second = m_cond.mean / n_val
    reconstructed = first + second
    error = _combined(m_crit.variance_stderr, m_risk.variance_stderr, m_cond.stderr / n_val)
    passed = abs(m_crit.variance - reconstructed) <= config.band * error or (
        error == 0.0 and m_crit.variance == reconstructed
    )
    return CheckResult(
        "holdout_decomposition",
        bool(passed),
        f"var={m_crit.variance:.6g} vs {first:.6g} + {second:.6g} = {reconstructed:.6g}",
        {"n_e": n_e, "validation_size": n_val, "observed_variance": m_crit.variance,
         "risk_variance": first, "validation_term": second, "combined_stderr": error},
    )


def repeated_vfold_variance_check(
    config: ExperimentConfig,
    l_grid: Optional[Sequence[int]] = None,
    v: Optional[int] = None,
) -> CheckResult:
    """Var(repeated V-fold with L repetitions) is affine in 1/L with non-negative slope."""

    l_grid = [int(l) for l in (l_grid or config.l_grid)]
    if len(set(l_grid)) < 3:
        raise ConfigurationError("the L grid needs at least three distinct values")
    n, v = config.n, int(v or config.folds)
    builders: List[Callable[[int], SplitPlan]] = []
    for l in l_grid:
        seed_of = _seeded(config, f"rvfold:{l}")
        builders.append(lambda r, l=l, seed_of=seed_of: repeated_vfold(n, v, l, seed_of(r)))
    lpo = _lpo_if_enumerable(config, n // v) if n % v == 0 else None
    if lpo is not None:
        builders.append(lambda r: lpo)
    results = _criterion_variances(config, "repeated_vfold", builders)
    per_l = results[: len(l_grid)]
    fit = _affine_fit([1.0 / l for l in l_grid], [m.variance for m in per_l])
    band = config.band
    checks = {
        "r_squared_ok": fit["r_squared"] >= 0.95,
        "slope_nonnegative": fit["slope"] >= -band * fit["slope_stderr"],
    }
    details: Dict[str, Any] = {"V": v, "L_grid": l_grid, **fit}
    if lpo is not None:
        m_lpo = results[-1]
        details["lpo_variance"] = m_lpo.variance
        checks["intercept_matches_lpo"] = abs(fit["intercept"] - m_lpo.variance) <= band * _combined(
            fit["intercept_stderr"], m_lpo.variance_stderr
        )
    details.update({k: bool(val) for k, val in checks.items()})
    table = pd.DataFrame([{"L": l, "inv_L": 1.0 / l, **m.to_dict()} for l, m in zip(l_grid, per_l)])
    return CheckResult(
        "repeated_vfold",
        all(checks.values()),
        f"R^2={fit['r_squared']:.4f} slope={fit['slope']:.6g} intercept={fit['intercept']:.6g}",
        details,
        table,
    )


@dataclass
class SmartnessReport:
    """Mean risk of a rule as a function of the sample size."""

    n_list: List[int]
    mean_risk: List[float]
    stderr: List[float]
    increases: List[bool]
    method: Literal["exact", "monte_carlo"]

    @property
    def smart(self) -> bool:
        return not any(self.increases)

    def to_check(self, expect_smart: Optional[bool] = None) -> CheckResult:
        passed = True if expect_smart is None else self.smart == expect_smart
        table = pd.DataFrame({"n": self.n_list, "mean_risk": self.mean_risk, "stderr": self.stderr})
        bumps = [n for n, up in zip(self.n_list[1:], self.increases) if up]
        return CheckResult(
            "smartness",
            passed,
            f"{'smart' if self.smart else 'not smart'} ({self.method}); risk increases at n={bumps}",
            {"smart": self.smart, "method": self.method, "increases_at": bumps},
            table,
        )


def _majority_mean_risk(tie: TieMode, p1: float, n: int) -> float:
    k = np.arange(n + 1)
    weights = stats.binom.pmf(k, n, p1)
    ones, zeros = k, n - k
    risk = np.where(ones > zeros, 1.0 - p1, p1)
    tie_risk = p1 if tie is TieMode.DETERMINISTIC_ZERO else 0.5
    risk = np.where(ones == zeros, tie_risk, risk)
    return math.fsum(weights * risk)


def smartness_curve(
    rule: LearningRule,
    generator: Any,
    n_list: Sequence[int],
    replicates: int = 1000,
    seed: int = 0,
    contrast: Optional[ContrastKind] = None,
    jobs: int = 1,
) -> SmartnessReport:
    """
    Mean risk for each n in ``n_list``: exact binomial sums for majority
    votes on Bernoulli labels, Monte-Carlo means otherwise.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ConfigurationError("n_list must be positive and increasing")
    contrast = contrast or default_contrast(generator)

    if isinstance(rule, MajorityVoteRule) and isinstance(generator, BernoulliLabelsSpec):
        means = [_majority_mean_risk(rule.tie, generator.p1, n) for n in n_list]
        increases = [b > a + 1e-12 for a, b in zip(means, means[1:])]
        return SmartnessReport(n_list, means, [0.0] * len(means), increases, "exact")

    means, errors = [], []
    for n in n_list:
        def one(r: int, n: int = n) -> float:
            ds = generate(generator, n, derive_seed(seed, f"smart:{n}", r))
            fitted = rule.with_seed(derive_seed(seed, "smart:rule", r)).fit(ds, FULL_SAMPLE_STREAM)
            return expected_contrast(fitted, generator, contrast, derive_seed(seed, "smart:risk", r))

        m = moments(parallel_map(one, replicates, jobs))
        means.append(m.mean)
        errors.append(m.stderr)
    band = get_settings().computation.stderr_band
    increases = [
        means[i + 1] > means[i] + band * _combined(errors[i], errors[i + 1]) for i in range(len(means) - 1)
    ]
    return SmartnessReport(n_list, means, errors, increases, "monte_carlo")


@dataclass
class SweepReport:
    """Relative excess risk of the penalized choice m_C for each C."""

    c_grid: List[float]
    ratio: List[float]
    c_star: float

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.ratio)

    def to_check(self) -> CheckResult:
        table = pd.DataFrame({"C": self.c_grid, "relative_excess_risk": self.ratio})
        return CheckResult(
            "surpenalization",
            self.finite,
            f"C*={self.c_star:g} min ratio={min(self.ratio):.4f}",
            {"C_star": self.c_star},
            table,
        )


def surpenalization_sweep(
    menu: RuleMenu,
    generator: Any,
    n: int,
    c_grid: Sequence[float],
    replicates: int,
    seed: int = 0,
    contrast: Optional[ContrastKind] = None,
    jobs: int = 1,
) -> SweepReport:
    """
    For each C, choose m_C = argmin R_n(f_m) + C E[pen_id(m)] on every
    replicate and report E[loss(m_C)] / E[min_m loss(m)], with 0/0 = 1.

    The expected ideal penalty E[R(f_m) - R_n(f_m)] is itself estimated by
    averaging over the replicates.
    """
    c_grid = [float(c) for c in c_grid]
    if not c_grid or any(c < 0 for c in c_grid):
        raise ConfigurationError("C grid must be non-empty and non-negative")
    contrast = contrast or default_contrast(generator)

    def one(r: int) -> Tuple[List[float], List[float], List[float]]:
        ds = generate(generator, n, derive_seed(seed, "sweep:dataset", r))
        rules = menu.with_seed(derive_seed(seed, "sweep:rules", r))
        risk_seed = derive_seed(seed, "sweep:risk", r)
        empirical, penalties, losses = [], [], []
        for _, rule in rules:
            predictor = rule.fit(ds, FULL_SAMPLE_STREAM)
            emp = contrast_eval(contrast, predictor, ds)
            empirical.append(emp)
            penalties.append(expected_contrast(predictor, generator, contrast, risk_seed) - emp)
            losses.append(excess_risk(predictor, generator, contrast, risk_seed))
        return empirical, penalties, losses

    results = parallel_map(one, replicates, jobs)
    empirical = np.array([r[0] for r in results])
    losses = np.array([r[2] for r in results])
    mean_penalty = np.array([r[1] for r in results]).mean(axis=0)
    best_loss = math.fsum(losses.min(axis=1))

    ratios = []
    for c in c_grid:
        chosen = [first_argmin(list(row + c * mean_penalty)) for row in empirical]
        chosen_loss = math.fsum(losses[i, m] for i, m in enumerate(chosen))
        if best_loss == 0.0:
            ratios.append(1.0 if chosen_loss == 0.0 else math.inf)
        else:
            ratios.append(chosen_loss / best_loss)
    c_star = c_grid[first_argmin(ratios)]
    return SweepReport(c_grid, ratios, c_star)


@dataclass
class RepeatSweepReport:
    c_stars: List[float]

    @property
    def share_at_least_one(self) -> float:
        return sum(c >= 1.0 for c in self.c_stars) / len(self.c_stars)

    def to_check(self) -> CheckResult:
        return CheckResult(
            "surpenalization",
            self.share_at_least_one > 0.5,
            f"C* >= 1 in {self.share_at_least_one:.0%} of {len(self.c_stars)} sweeps",
            {"C_stars": self.c_stars, "share_at_least_one": self.share_at_least_one},
        )


def repeat_sweep(
    menu: RuleMenu,
    generator: Any,
    n: int,
    c_grid: Sequence[float],
    replicates: int,
    repeats: int,
    seed: int = 0,
    contrast: Optional[ContrastKind] = None,
    jobs: int = 1,
) -> RepeatSweepReport:
    """Distribution of the best constant C* over independent sweeps."""
    c_stars = [
        surpenalization_sweep(
            menu, generator, n, c_grid, replicates, derive_seed(seed, "sweep", k), contrast, jobs
        ).c_star
        for k in range(repeats)
    ]
    return RepeatSweepReport(c_stars)


def bias_law_check(config: ExperimentConfig, n_grid: Optional[Sequence[int]] = None) -> CheckResult:
    """
    Fit mean risk = alpha + beta / n over ``n_grid``, then compare the bias
    of 2-fold CV with beta / n and the bias of leave-one-out with
    beta (1/(n-1) - 1/n).
    """

    n = config.n
    n_grid = [int(m) for m in (n_grid or config.n_grid or [max(2, n // 4), n // 2, n, 2 * n])]
    contrast = config.contrast_kind
    gen = config.generator

    def mean_risk_at(size: int) -> Moments:
        def one(r: int) -> float:
            ds = generate(gen, size, derive_seed(config.master_seed, f"bias:curve:{size}", r))
            predictor = _first_rule(config, r).fit(ds, FULL_SAMPLE_STREAM)
            return expected_contrast(predictor, gen, contrast, derive_seed(config.master_seed, "bias:risk", r))

        return moments(parallel_map(one, config.replicates, config.jobs))

    curve = [mean_risk_at(size) for size in n_grid]
    fit = _affine_fit([1.0 / size for size in n_grid], [m.mean for m in curve])
    model = TheoreticalModel(alpha=fit["intercept"], beta=max(fit["slope"], 1e-300))
    loo = leave_one_out(n)
    plan_seed = _seeded(config, "bias:vfold")

    def paired(r: int) -> Tuple[float, float]:
        ds = _dataset(config, r)
        rule = _first_rule(config, r)
        risk = expected_contrast(rule.fit(ds, FULL_SAMPLE_STREAM), gen, contrast,
                                 derive_seed(config.master_seed, "risk", r))
        two_fold = cv_risk(rule, ds, vfold(n, 2, plan_seed(r)), contrast).value
        return two_fold - risk, cv_risk(rule, ds, loo, contrast).value - risk

    rows = np.array(parallel_map(paired, config.replicates, config.jobs))
    m_two, m_loo = moments(rows[:, 0]), moments(rows[:, 1])
    theory_two = theoretical_bias(model, n, n - (n + 1) // 2)
    theory_loo = theoretical_bias(model, n, n - 1)
    band = config.band
    ok_two = abs(m_two.mean - theory_two) <= band * _combined(m_two.stderr, fit["slope_stderr"] * (1.0 / (n - (n + 1) // 2) - 1.0 / n))
    ok_loo = abs(m_loo.mean - theory_loo) <= band * _combined(m_loo.stderr, fit["slope_stderr"] * (1.0 / (n - 1) - 1.0 / n))
    table = pd.DataFrame([{"train_size": size, **m.to_dict()} for size, m in zip(n_grid, curve)])
    return CheckResult(
        "bias_law",
        bool(ok_two and ok_loo),
        f"beta={fit['slope']:.6g}; 2-fold bias {m_two.mean:.6g} vs {theory_two:.6g}; "
        f"loo bias {m_loo.mean:.6g} vs {theory_loo:.6g}",
        {"alpha": fit["intercept"], "beta": fit["slope"], "beta_stderr": fit["slope_stderr"],
         "two_fold_bias": m_two.mean, "two_fold_bias_stderr": m_two.stderr, "two_fold_theory": theory_two,
         "loo_bias": m_loo.mean, "loo_bias_stderr": m_loo.stderr, "loo_theory": theory_loo},
        table,
    )


def expectation_law_check(config: ExperimentConfig, report: Optional[MomentReport] = None) -> CheckResult:
    """Mean CV value equals the mean true risk at the training size, for every scheme with a common n_e."""
    report = report or run_experiment(config)
    rows = report.biases[(report.biases["criterion"] == "cv") & report.biases["n_e"].notna()]
    if rows.empty:
        raise ConfigurationError("expectation law needs a 'cv' criterion on a scheme with a common training size")
    within = (rows["bias_vs_risk_ne"].abs() <= config.band * rows["bias_vs_risk_ne_stderr"]).tolist()
    table = rows[["rule", "scheme", "n_e", "bias_vs_risk_ne", "bias_vs_risk_ne_stderr"]].reset_index(drop=True)
    worst = float((rows["bias_vs_risk_ne"].abs() / rows["bias_vs_risk_ne_stderr"]).max())
    return CheckResult(
        "expectation_law",
        all(within),
        f"largest |mean cv - mean risk(n_e)| = {worst:.2f} stderr",
        {"largest_z": worst},
        table,
    )


def corrected_unbiasedness_check(config: ExperimentConfig, report: Optional[MomentReport] = None) -> CheckResult:
    """Mean corrected CV value equals the mean true risk at n."""
    if report is None:
        if "corrected" not in config.criteria:
            config = config.model_copy(update={"criteria": list(config.criteria) + ["corrected"]})
        report = run_experiment(config)
    rows = report.biases[report.biases["criterion"] == "corrected"]
    if rows.empty:
        raise ConfigurationError("corrected unbiasedness needs the 'corrected' criterion")
    within = (rows["bias_vs_risk_n"].abs() <= config.band * rows["bias_vs_risk_n_stderr"]).tolist()
    worst = float((rows["bias_vs_risk_n"].abs() / rows["bias_vs_risk_n_stderr"]).max())
    table = rows[["rule", "scheme", "bias_vs_risk_n", "bias_vs_risk_n_stderr"]].reset_index(drop=True)
    return CheckResult(
        "corrected_unbiasedness",
        all(within),
        f"largest |mean corrected - mean risk(n)| = {worst:.2f} stderr",
        {"largest_z": worst},
        table,
    )


def run_checks(config: ExperimentConfig, report: Optional[MomentReport] = None) -> List[CheckResult]:
    """Run every check listed in ``config.checks``, in order."""
    results: List[CheckResult] = []
    for name in config.checks:
        logger.info("check started", check=name)
        if name == "variance_ordering":
            result = variance_ordering_check(config)
        elif name == "affine_in_inv_v":
            result = affine_in_inv_V_check(config)
        elif name == "variance_cross_prediction":
            result = variance_constant_cross_prediction(config).to_check()
        elif name == "holdout_decomposition":
            result = holdout_variance_decomposition_check(config)
        elif name == "repeated_vfold":
            result = repeated_vfold_variance_check(config)
        elif name == "smartness":
            curve = smartness_curve(
                config.menu.entries[0][1], config.generator, config.n_list,
                config.replicates, config.master_seed, config.contrast_kind, config.jobs,
            )
            result = curve.to_check(config.expect_smart)
        elif name == "surpenalization":
            result = repeat_sweep(
                config.menu, config.generator, config.n, config.c_grid, config.replicates,
                config.sweep_repeats, config.master_seed, config.contrast_kind, config.jobs,
            ).to_check()
        elif name == "bias_law":
            result = bias_law_check(config)
        elif name == "expectation_law":
            result = expectation_law_check(config, report)
        else:
            result = corrected_unbiasedness_check(config, report)
        logger.info("check finished", check=name, passed=result.passed)
        results.append(result)
    return results
