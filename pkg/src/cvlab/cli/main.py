"""
Command-line front end.

Every command prints the seed it resolved to stderr so that any output can
be reproduced. Exit codes: 0 success, 1 unexpected library error,
2 usage or configuration error, 3 numerical degeneracy, 4 statistical check
failure.
"""

import functools
import math
import sys
import uuid
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
from rich.console import Console
from rich.table import Table

from .. import __version__
from ..core.config import get_settings, validate_configuration
from ..core.constants import c1_mc, c1_vf, c2_mc, c2_vf, constants_table, vfold_training_size
from ..core.criteria import corrected_cv_components, cv_risk
from ..core.dataset import TaskKind, generate, load_csv, parse_generator, save_csv
from ..core.errors import ConfigurationError, CVLabError
from ..core.logger import configure_logging, get_logger, set_run_id
from ..core.mclab import load_experiment_config, run_checks, run_experiment
from ..core.rules import ContrastKind, LearningRule, parse_contrast, parse_rule
from ..core.select import RuleMenu, select
from ..core.splits import PlanSpec, SplitPlan, parse_plan_spec
from ..utils.file_ops import dumps_json, safe_read_json, safe_write_csv, safe_write_json, safe_write_text

logger = get_logger(__name__)

err_console = Console(stderr=True, highlight=False)

EXIT_CHECK_FAILED = 4

SCHEMES = ["holdout", "vfold", "mc", "loo", "lpo", "rvfold"]

_TASK_CONTRAST = {
    TaskKind.REGRESSION: ContrastKind.QUADRATIC,
    TaskKind.CLASSIFICATION: ContrastKind.ZERO_ONE,
    TaskKind.DENSITY: ContrastKind.DENSITY_LS,
}

_GENERATOR_LIST_KEYS = {"beta_star", "breakpoints", "densities"}


def _handle_errors(command: Callable[..., Any]) -> Callable[..., Any]:
    """Map library exceptions to their exit codes."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except CVLabError as e:
            err_console.print(f"[red]error:[/red] {e}")
            logger.debug("command failed", error_type=type(e).__name__, exit_code=e.exit_code)
            sys.exit(e.exit_code)

    return wrapper


def _resolve_seed(seed: Optional[int]) -> int:
    resolved = get_settings().computation.default_seed if seed is None else seed
    err_console.print(f"seed: {resolved}")
    return resolved


def _rule_callback(ctx: click.Context, param: click.Parameter, value: Any) -> Any:
    tokens = value if isinstance(value, tuple) else (value,)
    try:
        for token in tokens:
            for part in str(token).split(","):
                parse_rule(part)
    except ConfigurationError as e:
        raise click.BadParameter(str(e)) from None
    return value


def _split_tokens(values: tuple) -> List[str]:
    return [part.strip() for value in values for part in value.split(",") if part.strip()]


def _contrast_for(ds_kind: TaskKind, contrast: Optional[str]) -> ContrastKind:
    return parse_contrast(contrast) if contrast else _TASK_CONTRAST[ds_kind]


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        safe_write_text(out, text)
        err_console.print(f"wrote {out}")
    else:
        click.echo(text, nl=False)


def plan_options(command: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by commands that build a split plan."""
    options = [
        click.option("--scheme", type=click.Choice(SCHEMES), default=None,
                     help="Splitting scheme (default from settings: vfold)"),
        click.option("--v", "v", type=int, default=None, help="Number of folds or Monte-Carlo splits"),
        click.option("--p", "p", type=int, default=None, help="Validation size for leave-p-out"),
        click.option("--ne", "ne", type=float, default=None, help="Training size (below 1: fraction of n)"),
        click.option("--l", "l", type=int, default=None, help="Repetitions for repeated V-fold"),
        click.option("--plan", "plan_token", default=None, help="Plan token such as vfold:5 or mc:0.5:20"),
        click.option("--plan-file", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Split plan JSON written by 'cvlab split'"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _plan_spec(
    scheme: Optional[str],
    v: Optional[int],
    p: Optional[int],
    ne: Optional[float],
    l: Optional[int],
    plan_token: Optional[str],
) -> PlanSpec:
    if plan_token:
        return parse_plan_spec(plan_token)
    defaults = get_settings().selection
    kind = scheme or defaults.scheme
    if v is None and kind in ("vfold", "rvfold"):
        v = defaults.v
    try:
        return PlanSpec(kind=kind, ne=ne, v=v, p=p, l=l)
    except ValueError as e:
        raise ConfigurationError(f"invalid plan options: {e}") from None


def _build_plan(n: int, seed: int, plan_file: Optional[str], **spec_options: Any) -> SplitPlan:
    if plan_file:
        try:
            plan = SplitPlan.from_dict(safe_read_json(plan_file))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid plan file {plan_file}: {e}") from None
        if plan.n != n:
            raise ConfigurationError(f"plan file is over n={plan.n} but the data has n={n}")
        return plan
    spec = _plan_spec(**spec_options)
    return spec.build(n, seed, get_settings().computation.max_splits)


@click.group()
@click.version_option(__version__, prog_name="cvlab")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]), default=None)
@click.option("--log-format", type=click.Choice(["structured", "simple"]), default=None)
def cli(log_level: Optional[str], log_format: Optional[str]) -> None:
    """Cross-validation estimators, selection procedures and Monte-Carlo checks."""
    log_config = get_settings().get_log_config()
    if log_level:
        log_config["level"] = log_level
    if log_format:
        log_config["format_type"] = log_format
    configure_logging(**log_config)
    set_run_id(uuid.uuid4().hex[:12])
    _, problems = validate_configuration()
    for problem in problems:
        logger.warning("questionable setting", problem=problem)


@cli.command()
@click.option("--n", "n", type=int, required=True, help="Sample size")
@plan_options
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the plan JSON here")
@_handle_errors
def split(n: int, seed: Optional[int], out: Optional[str], plan_file: Optional[str], **spec_options: Any) -> None:
    """Generate a split plan and print it as JSON."""
    seed = _resolve_seed(seed)
    plan = _build_plan(n, seed, plan_file, **spec_options)
    _emit(plan.to_json(), out)


@cli.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--rule", required=True, callback=_rule_callback, help="Rule token, e.g. ols, hist:1/4, knn:3")
@click.option("--contrast", default=None, help="Contrast (default: natural contrast of the data kind)")
@plan_options
@click.option("--corrected/--no-corrected", default=None,
              help="Report the bias-corrected criterion (default from settings: on)")
@click.option("--slow", is_flag=True, help="Refit on every split instead of using closed forms")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_handle_errors
def estimate(
    data: str,
    rule: str,
    contrast: Optional[str],
    corrected: Optional[bool],
    slow: bool,
    seed: Optional[int],
    out: Optional[str],
    plan_file: Optional[str],
    **spec_options: Any,
) -> None:
    """Estimate the risk of a rule on a CSV dataset."""
    seed = _resolve_seed(seed)
    ds = load_csv(data)
    learner: LearningRule = parse_rule(rule)
    contrast_kind = _contrast_for(ds.kind, contrast)
    plan = _build_plan(ds.n, seed, plan_file, **spec_options)
    if corrected is None:
        corrected = get_settings().selection.corrected_for_reporting

    if corrected:
        components = corrected_cv_components(learner, ds, plan, contrast_kind, fast=not slow)
        payload: Dict[str, Any] = components.cv.to_dict()
        payload.update(
            {
                "value": components.value,
                "criterion": "corrected",
                "cv_value": components.cv.value,
                "full_sample": components.full_sample,
            }
        )
    else:
        payload = cv_risk(learner, ds, plan, contrast_kind, fast=not slow).to_dict()
        payload["criterion"] = "cv"
    payload["rule"] = learner.rule_id
    payload["contrast"] = contrast_kind.value
    payload["seed"] = seed
    _emit(dumps_json(payload), out)


@cli.command(name="select")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--rule", "rules", multiple=True, required=True, callback=_rule_callback,
              help="Candidate rule; repeat or separate with commas")
@click.option("--procedure", type=click.Choice(["cv", "corrected", "vote", "penalized", "one-se"]), default=None)
@click.option("--c", "c", type=float, default=1.0, show_default=True, help="Overpenalization constant")
@click.option("--contrast", default=None)
@plan_options
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_handle_errors
def select_command(
    data: str,
    rules: tuple,
    procedure: Optional[str],
    c: float,
    contrast: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    plan_file: Optional[str],
    **spec_options: Any,
) -> None:
    """Choose a rule from a menu by a resampling criterion."""
    seed = _resolve_seed(seed)
    ds = load_csv(data)
    menu = RuleMenu.parse(_split_tokens(rules)).with_seed(seed)
    contrast_kind = _contrast_for(ds.kind, contrast)
    plan = _build_plan(ds.n, seed, plan_file, **spec_options)
    if procedure is None:
        procedure = "corrected" if get_settings().selection.corrected_for_selection else "cv"
    result = select(procedure, menu, ds, plan, contrast_kind, c)
    payload = result.model_dump()
    payload["scheme"] = plan.scheme.label
    payload["seed"] = seed
    _emit(dumps_json(payload), out)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default="results", show_default=True)
@click.option("--jobs", type=int, default=None, help="Worker threads (results do not depend on it)")
@_handle_errors
def experiment(config_path: str, out_dir: str, jobs: Optional[int]) -> None:
    """Run a Monte-Carlo experiment and its statistical checks."""
    config = load_experiment_config(config_path)
    if jobs is not None:
        if jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        config = config.model_copy(update={"jobs": jobs})
    err_console.print(f"seed: {config.master_seed}")

    report = run_experiment(config)
    checks = run_checks(config, report)

    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    document = report.to_dict()
    document["checks"] = [check.to_dict() for check in checks]
    safe_write_json(target / "report.json", document)
    for name, frame in report.frames().items():
        safe_write_csv(target / f"{name}.csv", frame)
    for check in checks:
        if check.table is not None:
            safe_write_csv(target / f"check_{check.name}.csv", check.table)

    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        click.echo(f"{status} {check.name}: {check.summary}")
    click.echo(f"replicates={report.replicates} failures={report.failure_count} out={target}")
    if not all(check.passed for check in checks):
        sys.exit(EXIT_CHECK_FAILED)


def _parse_v(raw: str) -> float:
    if raw.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(int(raw))
    except ValueError:
        raise ConfigurationError(f"V must be an integer or 'inf', got '{raw}'") from None


@cli.command()
@click.option("--kind", type=click.Choice(["vf", "mc"]), required=True)
@click.option("--v", "v_raw", default=None, help="Number of folds or splits ('inf' for the mc limit)")
@click.option("--n", "n", type=int, required=True)
@click.option("--ne", "n_e", type=int, default=None, help="Training size for mc (default n (V-1)/V)")
@click.option("--table", "v_grid", default=None, help="Comma separated V grid rendered as a table")
@_handle_errors
def constants(kind: str, v_raw: Optional[str], n: int, n_e: Optional[int], v_grid: Optional[str]) -> None:
    """Print the variance constants C1 and C2."""
    if v_grid:
        frame = constants_table(kind, [_parse_v(v) for v in v_grid.split(",")], n, n_e)
        table = Table(title=f"{kind} constants, n={n}")
        for column in frame.columns:
            table.add_column(str(column), justify="right")
        for row in frame.itertuples(index=False):
            table.add_row(*(f"{value:.10g}" if isinstance(value, float) else str(value) for value in row))
        Console().print(table)
        return
    if v_raw is None:
        raise ConfigurationError("give --v or --table")
    v = _parse_v(v_raw)
    if kind == "vf":
        if math.isinf(v):
            raise ConfigurationError("V-fold constants need a finite V")
        payload = {"kind": kind, "V": int(v), "n": n, "C1": c1_vf(int(v), n), "C2": c2_vf(int(v), n)}
    else:
        if n_e is None:
            if math.isinf(v):
                raise ConfigurationError("--v inf needs --ne")
            n_e = vfold_training_size(int(v), n)
        v_out: Any = "inf" if math.isinf(v) else int(v)
        payload = {"kind": kind, "V": v_out, "n": n, "n_e": n_e, "C1": c1_mc(v, n, n_e), "C2": c2_mc(v, n, n_e)}
    click.echo(dumps_json(payload), nl=False)


@cli.command(name="generate")
@click.option("--param", "params", multiple=True, required=True,
              help="Generator field as key=value, e.g. family=bernoulli, p1=0.9, densities=1.5,0.5")
@click.option("--n", "n", type=int, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_handle_errors
def generate_command(params: tuple, n: int, seed: Optional[int], out: str) -> None:
    """Draw a synthetic dataset and write it as CSV."""
    seed = _resolve_seed(seed)
    spec: Dict[str, Any] = {}
    for item in params:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--param expects key=value, got '{item}'")
        key = key.strip()
        spec[key] = [v.strip() for v in value.split(",")] if key in _GENERATOR_LIST_KEYS else value.strip()
    ds = generate(parse_generator(spec), n, seed)
    save_csv(ds, out)
    err_console.print(f"wrote {out} ({ds.n} rows, kind={ds.kind.value})")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
