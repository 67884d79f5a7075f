"""
Estimator selection.

Every procedure scores each rule of an ordered menu and returns the first
rule attaining the smallest score; menu order is the only tie-breaker.

- ``cv_select``: argmin of the (optionally corrected) cross-validation value
- ``vote_select``: majority vote over the per-split hold-out winners
- ``penalized_select``: argmin of the V-fold penalized criterion with constant C
- ``one_standard_error_select``: first rule within one standard error of the best
- ``aggregate_predict``: mean or majority of the per-split winners trained on D_n
- ``wrap_selection_as_rule``: the whole selection pipeline as a learning rule
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..utils.rng import derive_seed
from .criteria import (
    FULL_SAMPLE_STREAM,
    RiskEstimate,
    corrected_cv_components,
    cv_risk,
    penalized_from_components,
)
from .dataset import Dataset, TaskKind
from .errors import (
    BoundsError,
    ConfigurationError,
    RuleFailureError,
    SchemeError,
    UnsupportedTaskError,
)
from .logger import get_logger
from .rules import ContrastKind, LearningRule, Predictor, parse_rule
from .splits import PlanSpec, SchemeName, SplitPlan, parse_plan_spec

logger = get_logger(__name__)

Procedure = Literal["cv", "corrected", "vote", "penalized", "one-se"]


@dataclass(frozen=True)
class RuleMenu:
    """Ordered collection of rules with unique identifiers."""

    entries: Tuple[Tuple[str, LearningRule], ...]

    def __post_init__(self):
        if not self.entries:
            raise ConfigurationError("a rule menu needs at least one rule")
        ids = [m for m, _ in self.entries]
        duplicates = sorted({m for m in ids if ids.count(m) > 1})
        if duplicates:
            raise ConfigurationError(f"duplicate rule identifiers: {', '.join(duplicates)}")
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def from_rules(cls, rules: Sequence[LearningRule]) -> "RuleMenu":
        return cls(tuple((rule.rule_id, rule) for rule in rules))

    @classmethod
    def parse(cls, tokens: Sequence[str]) -> "RuleMenu":
        return cls.from_rules([parse_rule(t) for t in tokens])

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Tuple[str, LearningRule]]:
        return iter(self.entries)

    @property
    def ids(self) -> List[str]:
        return [m for m, _ in self.entries]

    def rule(self, m: str) -> LearningRule:
        for key, rule in self.entries:
            if key == m:
                return rule
        raise ConfigurationError(f"no rule '{m}' in menu")

    def with_seed(self, seed: int) -> "RuleMenu":
        """Menu whose randomized rules draw from streams derived from ``seed``."""
        return RuleMenu(
            tuple((m, rule.with_seed(derive_seed(seed, "rule", k))) for k, (m, rule) in enumerate(self.entries))
        )


class SelectionResult(BaseModel):
    """Outcome of a selection procedure."""

    model_config = ConfigDict(frozen=True)

    procedure: str
    chosen: str
    criterion_values: Dict[str, float]
    per_split_winners: Optional[List[str]] = None


def first_argmin(values: Sequence[float]) -> int:
    """Index of the first smallest value; NaN counts as +inf."""
    cleaned = [math.inf if math.isnan(v) else v for v in values]
    best = 0
    for i, v in enumerate(cleaned):
        if v < cleaned[best]:
            best = i
    return best


def _score(menu: RuleMenu, scorer: Callable[[LearningRule], float]) -> Dict[str, float]:
    values: Dict[str, float] = {}
    for m, rule in menu:
        try:
            values[m] = scorer(rule)
        except RuleFailureError:
            raise
        except Exception as e:
            raise RuleFailureError(m, e) from e
    return values


def _result(procedure: str, values: Dict[str, float], winners: Optional[List[str]] = None) -> SelectionResult:
    ids = list(values)
    chosen = ids[first_argmin(list(values.values()))]
    logger.debug("selection done", procedure=procedure, chosen=chosen)
    return SelectionResult(
        procedure=procedure, chosen=chosen, criterion_values=values, per_split_winners=winners
    )


def cv_select(
    menu: RuleMenu,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    corrected: bool = False,
) -> SelectionResult:
    """Rule minimizing the cross-validation (or corrected) value."""
    if corrected:
        values = _score(menu, lambda r: corrected_cv_components(r, ds, plan, contrast).value)
        return _result("corrected", values)
    values = _score(menu, lambda r: cv_risk(r, ds, plan, contrast).value)
    return _result("cv", values)


def _per_split_table(
    menu: RuleMenu, ds: Dataset, plan: SplitPlan, contrast: ContrastKind
) -> Dict[str, RiskEstimate]:
    table: Dict[str, RiskEstimate] = {}
    for m, rule in menu:
        try:
            table[m] = cv_risk(rule, ds, plan, contrast)
        except Exception as e:
            raise RuleFailureError(m, e) from e
    return table


def per_split_winners(
    menu: RuleMenu, ds: Dataset, plan: SplitPlan, contrast: ContrastKind
) -> List[str]:
    """Hold-out argmin of every split, in plan order."""
    table = _per_split_table(menu, ds, plan, contrast)
    ids = menu.ids
    matrix = [table[m].per_split for m in ids]
    return [ids[first_argmin([row[j] for row in matrix])] for j in range(len(plan))]


def vote_select(
    menu: RuleMenu,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
) -> SelectionResult:
    """
    Majority vote over per-split winners.

    ``criterion_values`` holds each rule's share of lost votes, 1 - votes / V,
    so the chosen rule is again the first minimizer.
    """
    winners = per_split_winners(menu, ds, plan, contrast)
    values = {m: 1.0 - winners.count(m) / len(winners) for m in menu.ids}
    return _result("vote", values, winners)


def penalized_select(
    menu: RuleMenu,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    c: float,
) -> SelectionResult:
    """Rule minimizing the V-fold penalized criterion with constant ``c``."""
    if plan.scheme.name is not SchemeName.VFOLD:
        raise SchemeError(f"V-fold penalization needs a V-fold plan, got {plan.scheme.label}")
    if not c >= 0.0:
        raise BoundsError(f"overpenalization constant must be non-negative, got {c}")
    values = _score(
        menu, lambda r: penalized_from_components(corrected_cv_components(r, ds, plan, contrast), c)
    )
    return _result("penalized", values)


def one_standard_error_select(
    menu: RuleMenu,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
) -> SelectionResult:
    """
    First rule, in menu order, whose CV value is within one standard error
    (over splits) of the smallest one.

    Menus are expected to be ordered from simplest to most complex, so this
    favours simpler rules than plain argmin.
    """
    table = _per_split_table(menu, ds, plan, contrast)
    ids = menu.ids
    values = {m: table[m].value for m in ids}
    best = ids[first_argmin(list(values.values()))]
    threshold = table[best].value + table[best].stderr
    chosen = next(m for m in ids if values[m] <= threshold)
    return SelectionResult(procedure="one-se", chosen=chosen, criterion_values=values)


def select(
    procedure: Procedure,
    menu: RuleMenu,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    c: float = 1.0,
) -> SelectionResult:
    """Dispatch on the procedure name."""
    if procedure == "cv":
        return cv_select(menu, ds, plan, contrast)
    if procedure == "corrected":
        return cv_select(menu, ds, plan, contrast, corrected=True)
    if procedure == "vote":
        return vote_select(menu, ds, plan, contrast)
    if procedure == "penalized":
        return penalized_select(menu, ds, plan, contrast, c)
    if procedure == "one-se":
        return one_standard_error_select(menu, ds, plan, contrast)
    raise ConfigurationError(f"unknown selection procedure '{procedure}'")


def aggregate_predict(
    menu: RuleMenu,
    ds: Dataset,
    plan: SplitPlan,
    contrast: ContrastKind,
    x: np.ndarray,
) -> np.ndarray:
    """
    Aggregated cross-validation prediction at the rows of ``x``.

    Each per-split winner is trained on the full sample; regression averages
    their predictions, classification takes a majority vote (ties to the
    smallest label).
    """
    if ds.kind is TaskKind.DENSITY:
        raise UnsupportedTaskError("aggregated cross-validation needs a prediction task")
    winners = per_split_winners(menu, ds, plan, contrast)
    fitted: Dict[str, Predictor] = {}
    for m in dict.fromkeys(winners):
        fitted[m] = menu.rule(m).fit(ds, FULL_SAMPLE_STREAM)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    predictions = np.stack([fitted[m].evaluate(x) for m in winners])
    if ds.kind is TaskKind.REGRESSION:
        return predictions.mean(axis=0)
    labels = predictions.astype(np.int64)
    n_labels = max(2, int(labels.max()) + 1)
    counts = np.apply_along_axis(np.bincount, 0, labels, minlength=n_labels)
    return np.argmax(counts, axis=0).astype(np.int64)


PlanFactory = Callable[[int, int], SplitPlan]


@dataclass(frozen=True)
class SelectionRule(LearningRule):
    """
    Learning rule D -> f_{m(D)}(D): selection runs on the sub-sample it is
    fitted on, with an inner plan redrawn for that sub-sample.
    """

    menu: RuleMenu
    plan_factory: Union[PlanSpec, PlanFactory]
    contrast: ContrastKind
    procedure: Procedure = "cv"
    c: float = 1.0
    seed: int = 0

    @property
    def rule_id(self) -> str:
        return f"select[{self.procedure}]({','.join(self.menu.ids)})"

    def with_seed(self, seed: int) -> "SelectionRule":
        """Copy with a new inner-plan seed and reseeded menu rules."""
        menu = RuleMenu(
            tuple(
                (m, rule.with_seed(derive_seed(seed, "inner_rule", i)))
                for i, (m, rule) in enumerate(self.menu)
            )
        )
        return SelectionRule(menu, self.plan_factory, self.contrast, self.procedure, self.c, seed)

    def inner_plan(self, n: int, stream: int) -> SplitPlan:
        inner_seed = derive_seed(self.seed, "inner_plan", stream)
        factory = self.plan_factory
        try:
            if isinstance(factory, PlanSpec):
                return factory.build(n, inner_seed)
            return factory(n, inner_seed)
        except BoundsError as e:
            raise BoundsError(f"inner plan for a sub-sample of size {n}: {e}") from e

    def choose(self, sample: Dataset, stream: int = 0) -> str:
        if len(self.menu) == 1:
            return self.menu.ids[0]
        plan = self.inner_plan(sample.n, stream)
        return select(self.procedure, self.menu, sample, plan, self.contrast, self.c).chosen

    def fit(self, sample: Dataset, stream: int = 0) -> Predictor:
        return self.menu.rule(self.choose(sample, stream)).fit(sample, stream)


def wrap_selection_as_rule(
    menu: RuleMenu,
    plan_factory: Union[str, PlanSpec, PlanFactory],
    contrast: ContrastKind,
    procedure: Procedure = "cv",
    seed: int = 0,
) -> SelectionRule:
    """Selection pipeline as a learning rule; wrappers can be nested."""
    factory = parse_plan_spec(plan_factory) if isinstance(plan_factory, str) else plan_factory
    return SelectionRule(menu, factory, contrast, procedure, seed=seed)
