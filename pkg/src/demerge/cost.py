"""GPU-hour accounting for merge-based training versus data mixing.

A run costing ``k`` steps at ``t`` seconds per step on ``g`` GPUs burns
``k*t*g/3600`` gpu-hours. Building a merged model trains one model per
data source and then evaluates a handful of weight candidates, while the
data-mixing baseline retrains from scratch for every weight combination —
the asymptotic gap is ``m**n / n`` training runs for ``n`` sources and
``m`` candidate weights each.

Everything here is pure arithmetic on declared inputs; nothing is
measured. Published mixing figures are contradictory in one place (a
per-run average that implies one total, and a selected-run row that
implies another), so reports carry both numbers side by side and never
reconcile them.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, IoError, NumericsError

SECONDS_PER_HOUR = 3600.0

#: Largest integer float64 represents exactly; complexity counts past this
#: would silently lose precision, so they are errors instead.
MAX_EXACT_FLOAT_INT = 2**53


def _require_number(value, what: str, *, integer: bool = False,
                    minimum=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(f"{what} must be an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{what} must be finite, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{what} must be >= {minimum}, got {value!r}")
    return value


@dataclass(frozen=True)
class RunCost:
    """One training or validation run: seconds/step, steps, and GPUs."""

    label: str
    time_per_step: float
    steps: int
    gpus: int

    def __post_init__(self):
        if not isinstance(self.label, str):
            raise ConfigError(f"run label must be a string, got {self.label!r}")
        _require_number(self.time_per_step, f"run {self.label!r} time_per_step",
                        minimum=0)
        if self.time_per_step <= 0:
            raise ConfigError(
                f"run {self.label!r} time_per_step must be > 0")
        _require_number(self.steps, f"run {self.label!r} steps", integer=True,
                        minimum=0)
        _require_number(self.gpus, f"run {self.label!r} gpus", integer=True,
                        minimum=1)


def gpu_hours(run: RunCost) -> float:
    """steps x seconds/step x gpus, in hours."""
    return run.steps * run.time_per_step * run.gpus / SECONDS_PER_HOUR


def dem_total_cost(runs, validation: RunCost, trials: int) -> float:
    """Total for one merge workflow: every training run once, plus
    ``trials`` repetitions of the validation run."""
    _require_number(trials, "trials", integer=True, minimum=0)
    return math.fsum([gpu_hours(run) for run in runs]
                     + [trials * gpu_hours(validation)])


@dataclass(frozen=True)
class SearchCostParams:
    """Weight-search size: n data sources, m candidate weights per source,
    T average training steps, V average validation steps."""

    n: int
    m: int
    T: int
    V: int

    def __post_init__(self):
        for field_name in ("n", "m", "T", "V"):
            _require_number(getattr(self, field_name), field_name,
                            integer=True, minimum=1)


def search_complexity(params: SearchCostParams) -> tuple[float, float, float]:
    """(mixing_cost, dem_cost, run_reduction_factor) in abstract steps.

    Mixing trains all m**n weight combinations end to end; the merge
    route trains n models once and only validates the m**n combinations:

        mixing_cost = m**n * (T + V)
        dem_cost    = n * (T + V) + m**n * V
        factor      = m**n / n

    Counts are computed in exact integer arithmetic and refused once they
    exceed MAX_EXACT_FLOAT_INT, past which float64 could not represent
    them exactly.
    """
    combos = params.m ** params.n
    mixing = combos * (params.T + params.V)
    dem = params.n * (params.T + params.V) + combos * params.V
    for label, value in (("m**n", combos), ("mixing cost", mixing),
                         ("dem cost", dem)):
        if value > MAX_EXACT_FLOAT_INT:
            raise NumericsError(
                f"{label} = {value} exceeds {MAX_EXACT_FLOAT_INT} and is not "
                "exactly representable as float64")
    return float(mixing), float(dem), combos / params.n


def savings_ratio(mixing_total: float, dem_total: float) -> float:
    """How many times cheaper the merge workflow is than mixing."""
    _require_number(mixing_total, "mixing_total", minimum=0)
    _require_number(dem_total, "dem_total")
    if dem_total <= 0:
        raise ConfigError(f"dem_total must be > 0, got {dem_total!r}")
    return mixing_total / dem_total


@dataclass(frozen=True)
class MixingCost:
    """The data-mixing side of a scenario: number of runs plus either (or
    both) of the published per-run figures."""

    runs: int
    average_gpu_hours_per_run: float | None = None
    selected_run: RunCost | None = None

    def __post_init__(self):
        _require_number(self.runs, "mixing runs", integer=True, minimum=1)
        if self.average_gpu_hours_per_run is not None:
            _require_number(self.average_gpu_hours_per_run,
                            "average_gpu_hours_per_run", minimum=0)
        if self.average_gpu_hours_per_run is None and self.selected_run is None:
            raise ConfigError(
                "mixing needs average_gpu_hours_per_run and/or selected_run")


@dataclass(frozen=True)
class CostScenario:
    """Inputs for one cost comparison: the per-source training runs, the
    validation run and how many weight candidates it scores, and the
    mixing baseline."""

    training_runs: tuple[RunCost, ...]
    validation: RunCost
    validation_trials: int
    mixing: MixingCost | None = None

    def __post_init__(self):
        _require_number(self.validation_trials, "validation_trials",
                        integer=True, minimum=0)
        if not self.training_runs:
            raise ConfigError("scenario needs at least one training run")


def _run_from_obj(obj, what: str) -> RunCost:
    want = {"label", "time_per_step", "steps", "gpus"}
    if not isinstance(obj, dict) or set(obj) != want:
        raise ConfigError(
            f"{what} must be an object with fields {sorted(want)}, got {obj!r}")
    return RunCost(obj["label"], obj["time_per_step"], obj["steps"], obj["gpus"])


def scenario_from_obj(obj) -> CostScenario:
    if not isinstance(obj, dict):
        raise ConfigError(f"scenario must be a JSON object, got {obj!r}")
    allowed = {"training_runs", "validation", "validation_trials", "mixing"}
    required = allowed - {"mixing"}
    if not required <= set(obj) or not set(obj) <= allowed:
        raise ConfigError(
            f"scenario fields must be {sorted(required)} plus optional "
            f"'mixing', got {sorted(obj)}")
    if not isinstance(obj["training_runs"], list):
        raise ConfigError("training_runs must be a list")
    runs = tuple(_run_from_obj(r, "training run") for r in obj["training_runs"])
    validation = _run_from_obj(obj["validation"], "validation run")
    mixing = None
    if "mixing" in obj:
        mix = obj["mixing"]
        allowed_mix = {"runs", "average_gpu_hours_per_run", "selected_run"}
        if not isinstance(mix, dict) or "runs" not in mix or not set(mix) <= allowed_mix:
            raise ConfigError(
                f"mixing must be an object with 'runs' plus optional "
                f"{sorted(allowed_mix - {'runs'})}, got {mix!r}")
        selected = (_run_from_obj(mix["selected_run"], "mixing selected run")
                    if "selected_run" in mix else None)
        mixing = MixingCost(mix["runs"], mix.get("average_gpu_hours_per_run"),
                            selected)
    return CostScenario(runs, validation, obj["validation_trials"], mixing)


def load_scenario(path) -> CostScenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read scenario {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid scenario JSON in {path}: {exc}") from exc
    return scenario_from_obj(obj)


def reference_scenario() -> CostScenario:
    """Built-in 7B-scale comparison: five instruction-tuning runs, ten
    validation passes over weight candidates, and a 50-run mixing sweep
    quoted both as a 233 gpu-hour per-run average and as a selected run
    of 15000 steps at 5.24 s/step on 16 GPUs."""
    return CostScenario(
        training_runs=(
            RunCost("cot", 6.5, 550, 8),
            RunCost("mathqa", 6.5, 600, 8),
            RunCost("p3", 4.8, 6000, 32),
            RunCost("instdial", 5.2, 23000, 16),
            RunCost("sni", 5.24, 6000, 16),
        ),
        validation=RunCost("validation", 2.1, 500, 8),
        validation_trials=10,
        mixing=MixingCost(
            runs=50,
            average_gpu_hours_per_run=233.0,
            selected_run=RunCost("data-mixing", 5.24, 15000, 16),
        ),
    )


def cost_report(scenario: CostScenario) -> dict:
    """Worked-out gpu-hour totals for a scenario.

    The mixing section reports the average-based total and the
    selected-run-based total independently when both inputs exist. The
    headline savings ratio uses the average-based total when available,
    the selected-run total otherwise.
    """
    runs = [{"label": run.label, "time_per_step": run.time_per_step,
             "steps": run.steps, "gpus": run.gpus, "gpu_hours": gpu_hours(run)}
            for run in scenario.training_runs]
    val_hours = gpu_hours(scenario.validation)
    dem_total = dem_total_cost(scenario.training_runs, scenario.validation,
                               scenario.validation_trials)
    report = {
        "dem": {
            "runs": runs,
            "validation": {
                "label": scenario.validation.label,
                "time_per_step": scenario.validation.time_per_step,
                "steps": scenario.validation.steps,
                "gpus": scenario.validation.gpus,
                "gpu_hours_per_trial": val_hours,
                "trials": scenario.validation_trials,
                "gpu_hours": scenario.validation_trials * val_hours,
            },
            "total_gpu_hours": dem_total,
        },
        "mixing": None,
        "savings_ratio": None,
    }
    if scenario.mixing is not None:
        mix = scenario.mixing
        average_total = (None if mix.average_gpu_hours_per_run is None
                         else mix.runs * mix.average_gpu_hours_per_run)
        selected_hours = (None if mix.selected_run is None
                          else gpu_hours(mix.selected_run))
        selected_total = (None if selected_hours is None
                          else mix.runs * selected_hours)
        report["mixing"] = {
            "runs": mix.runs,
            "average_gpu_hours_per_run": mix.average_gpu_hours_per_run,
            "total_gpu_hours_from_average": average_total,
            "selected_run_gpu_hours": selected_hours,
            "total_gpu_hours_from_selected_run": selected_total,
        }
        headline = average_total if average_total is not None else selected_total
        report["savings_ratio"] = savings_ratio(headline, dem_total)
    return report


def format_cost_report(report: dict) -> str:
    """Fixed-width text rendering of a cost report."""
    lines = []
    header = f"{'run':<24}{'time/step':>10}{'steps':>8}{'gpus':>6}{'gpu-hours':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for run in report["dem"]["runs"]:
        lines.append(f"{run['label']:<24}{run['time_per_step']:>10g}"
                     f"{run['steps']:>8}{run['gpus']:>6}"
                     f"{run['gpu_hours']:>12.2f}")
    val = report["dem"]["validation"]
    lines.append(f"{val['label'] + ' (x' + str(val['trials']) + ')':<24}"
                 f"{val['time_per_step']:>10g}{val['steps']:>8}{val['gpus']:>6}"
                 f"{val['gpu_hours']:>12.2f}")
    lines.append(f"{'DEM total':<48}{report['dem']['total_gpu_hours']:>12.2f}")
    mixing = report["mixing"]
    if mixing is not None:
        lines.append("")
        if mixing["average_gpu_hours_per_run"] is not None:
            lines.append(
                f"{'mixing avg/run':<48}"
                f"{mixing['average_gpu_hours_per_run']:>12.2f}")
            lines.append(
                f"{'mixing total (avg x ' + str(mixing['runs']) + ' runs)':<48}"
                f"{mixing['total_gpu_hours_from_average']:>12.2f}")
        if mixing["selected_run_gpu_hours"] is not None:
            lines.append(
                f"{'mixing selected run':<48}"
                f"{mixing['selected_run_gpu_hours']:>12.2f}")
            lines.append(
                f"{'mixing total (selected x ' + str(mixing['runs']) + ')':<48}"
                f"{mixing['total_gpu_hours_from_selected_run']:>12.2f}")
        lines.append(f"{'savings ratio (mixing/DEM)':<48}"
                     f"{report['savings_ratio']:>12.2f}")
    return "\n".join(lines) + "\n"
