"""Merge-weight search driven by an external evaluator.

Two strategies: a grid sweep over a single shared coefficient, and random
search drawing one weight per distribution vector uniformly from [0, 1]
(optionally normalized to sum to 1 for interpolation). Every candidate is
composed to a real checkpoint file and scored by an evaluator — either a
user command invoked as ``argv + [candidate_path]`` that prints
``{"losses": {label: number}}`` on stdout, or a Python callable taking
the candidate path. The objective is the plain mean of the per-dataset
losses, and the best trial is the lowest objective with ties broken by
earliest trial.

Failed evaluations are recorded on the trial and excluded from the
argmin; a search only raises once every trial has failed. Reports carry
no paths or timestamps, so identical inputs (seed included) produce
byte-identical report JSON.
"""

import json
import math
import shlex
import shutil
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arith import (MODE_DEM, MODE_INTERPOLATION, WeightConfig,
                    _labeled_sources, compose_dem)
from .errors import ConfigError, EvaluatorError, IoError, SearchFailed
from .store import ensure_open

#: Ten single-coefficient candidates, 0.05 apart, centered on the range
#: where merge weights are typically found.
DEFAULT_GRID = tuple(i / 20 for i in range(1, 11))

#: Default generator seed for random search (see tests for the
#: reproducibility contract tied to this value).
DEFAULT_SEED = 20

_OBJECTIVE_TOL = 1e-12


def _check_losses(losses: dict) -> None:
    if not losses:
        raise EvaluatorError("evaluator returned no losses")
    for label, value in losses.items():
        if not isinstance(label, str):
            raise EvaluatorError(f"loss label must be a string, got "
                                 f"{label!r}")
        if (isinstance(value, bool) or not isinstance(value, (int, float))
                or not math.isfinite(value)):
            raise EvaluatorError(
                f"loss for {label!r} must be a finite number, got "
                f"{value!r}")


@dataclass(frozen=True)
class EvaluationResult:
    """Per-dataset losses plus their arithmetic mean as the objective."""

    per_dataset_losses: dict[str, float]
    objective: float

    def __post_init__(self):
        _check_losses(self.per_dataset_losses)
        mean = math.fsum(self.per_dataset_losses.values()) / len(
            self.per_dataset_losses)
        if abs(self.objective - mean) > _OBJECTIVE_TOL:
            raise EvaluatorError(
                f"objective {self.objective!r} is not the mean of the losses "
                f"({mean!r})")

    @classmethod
    def from_losses(cls, losses) -> "EvaluationResult":
        losses = dict(losses)
        _check_losses(losses)
        return cls(losses, math.fsum(losses.values()) / len(losses))


@dataclass(frozen=True)
class Trial:
    """One evaluated weight configuration; failed trials carry the error
    message instead of a result."""

    weights: WeightConfig
    result: EvaluationResult | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


@dataclass(frozen=True)
class SearchReport:
    """Full trial history of one search plus the argmin.

    ``best_index`` always points at the successful trial with the lowest
    objective (earliest wins ties). ``grid`` is set for grid searches,
    ``rng_seed`` for random searches.
    """

    kind: str
    trials: tuple[Trial, ...]
    best_index: int
    rng_seed: int | None = None
    grid: tuple[float, ...] | None = None

    @property
    def best(self) -> Trial:
        return self.trials[self.best_index]

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "rng_seed": self.rng_seed,
            "grid": list(self.grid) if self.grid is not None else None,
            "trial_count": len(self.trials),
            "best_index": self.best_index,
            "best": {
                "weights": self.best.weights.to_json_obj(),
                "objective": self.best.result.objective,
            },
            "trials": [
                {
                    "weights": t.weights.to_json_obj(),
                    "losses": (None if t.result is None
                               else dict(t.result.per_dataset_losses)),
                    "objective": (None if t.result is None
                                  else t.result.objective),
                    "error": t.error,
                }
                for t in self.trials
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2) + "\n"


def _normalize_command(evaluator) -> list[str]:
    if isinstance(evaluator, str):
        argv = shlex.split(evaluator)
    elif isinstance(evaluator, (list, tuple)):
        argv = [str(part) for part in evaluator]
    else:
        raise ConfigError(f"evaluator must be a command or callable, got "
                          f"{evaluator!r}")
    if not argv:
        raise ConfigError("evaluator command is empty")
    return argv


def _parse_losses(stdout: str, stderr: str) -> EvaluationResult:
    try:
        obj = json.loads(stdout)
    except json.JSONDecodeError as exc:
        raise EvaluatorError(f"evaluator stdout is not valid JSON: {exc}",
                             stderr=stderr) from exc
    if not isinstance(obj, dict) or "losses" not in obj:
        raise EvaluatorError(
            'evaluator stdout must be {"losses": {label: number}}',
            stderr=stderr)
    losses = obj["losses"]
    if not isinstance(losses, dict):
        raise EvaluatorError(f"losses must be an object, got {losses!r}",
                             stderr=stderr)
    try:
        return EvaluationResult.from_losses(losses)
    except EvaluatorError as exc:
        raise EvaluatorError(str(exc), stderr=stderr) from None


def evaluate_candidate(ckpt_path, evaluator_command) -> EvaluationResult:
    """Score one candidate checkpoint through the subprocess protocol.

    Runs ``evaluator_command + [ckpt_path]``; the process must exit 0 and
    print ``{"losses": {label: number}}`` on stdout. Any protocol breach
    (nonzero exit, bad JSON, non-finite loss) raises EvaluatorError with
    the captured stderr attached.
    """
    path = Path(ckpt_path)
    if not path.exists():
        raise IoError(f"candidate checkpoint {path} does not exist")
    argv = _normalize_command(evaluator_command) + [str(path)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise EvaluatorError(f"cannot run evaluator {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise EvaluatorError(
            f"evaluator exited with status {proc.returncode}",
            stderr=proc.stderr)
    return _parse_losses(proc.stdout, proc.stderr)


def _call_evaluator(evaluator, path) -> EvaluationResult:
    if callable(evaluator):
        result = evaluator(path)
        if isinstance(result, EvaluationResult):
            return result
        return EvaluationResult.from_losses(result)
    return evaluate_candidate(path, evaluator)


def _best_index(trials) -> int:
    best = None
    for i, trial in enumerate(trials):
        if trial.result is None:
            continue
        if best is None or trial.result.objective < trials[best].result.objective:
            best = i
    if best is None:
        detail = trials[-1].error if trials else "no trials"
        raise SearchFailed(f"every trial failed; last error: {detail}")
    return best


def _run_trials(base, dvs, configs, evaluator, workdir, keep, jobs) -> tuple[Trial, ...]:
    """Compose and score one candidate per config, in submission order."""
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs!r}")
    labeled = _labeled_sources(dvs, "distribution vector")
    own_workdir = workdir is None
    wd = Path(tempfile.mkdtemp(prefix="demerge-search-")) if own_workdir \
        else Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    try:
        with ExitStack() as stack:
            b = ensure_open(base, stack)
            resolved = {label: ensure_open(src, stack)
                        for label, src in labeled.items()}

            def run_one(item) -> Trial:
                index, config = item
                candidate = wd / f"candidate_{index:04d}.demckpt"
                # Interpolation-weight candidates are materialized through
                # the same base+deltas route; with weights summing to 1 the
                # two constructions agree element-wise.
                compose_config = (config if config.mode == MODE_DEM
                                  else WeightConfig(MODE_DEM, config.entries))
                try:
                    compose_dem(b, resolved, compose_config, out=candidate)
                    try:
                        return Trial(config, _call_evaluator(evaluator, candidate))
                    except EvaluatorError as exc:
                        return Trial(config, None, error=str(exc))
                finally:
                    if not keep:
                        candidate.unlink(missing_ok=True)

            items = list(enumerate(configs))
            if jobs == 1:
                trials = [run_one(item) for item in items]
            else:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    trials = list(pool.map(run_one, items))
        return tuple(trials)
    finally:
        if own_workdir and not keep:
            shutil.rmtree(wd, ignore_errors=True)


def grid_search_single_coeff(base, dvs, grid=DEFAULT_GRID, evaluator=None, *,
                             workdir=None, keep=False, jobs=1) -> SearchReport:
    """Sweep one shared coefficient over ``grid`` (every vector gets the
    same weight) and return the full report. Exactly ``len(grid)``
    evaluator invocations."""
    if evaluator is None:
        raise ConfigError("an evaluator is required")
    grid = tuple(float(v) for v in grid)
    if not grid:
        raise ConfigError("grid must not be empty")
    for value in grid:
        if not math.isfinite(value):
            raise ConfigError(f"grid value {value!r} is not finite")
    labels = list(_labeled_sources(dvs, "distribution vector"))
    if not labels:
        raise ConfigError("at least one distribution vector is required")
    configs = [WeightConfig.uniform(labels, value) for value in grid]
    trials = _run_trials(base, dvs, configs, evaluator, workdir, keep, jobs)
    return SearchReport("grid", trials, _best_index(trials), grid=grid)


def random_search(base, dvs, k: int, seed: int = DEFAULT_SEED, evaluator=None,
                  mode: str = MODE_DEM, *, workdir=None, keep=False,
                  jobs=1) -> SearchReport:
    """Score ``k`` random weight configurations; exactly ``k`` evaluator
    invocations.

    Each trial draws one weight per vector i.i.d. from Uniform[0, 1) with
    a deterministic seeded generator; interpolation mode divides the draw
    by its sum so the weights sum to 1. All draws happen up front in
    trial order, so the trial sequence depends only on (seed, k, labels)
    and never on ``jobs`` or completion order.
    """
    if evaluator is None:
        raise ConfigError("an evaluator is required")
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ConfigError(f"k must be an integer >= 1, got {k!r}")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if mode not in (MODE_DEM, MODE_INTERPOLATION):
        raise ConfigError(f"mode must be {MODE_DEM!r} or "
                          f"{MODE_INTERPOLATION!r}, got {mode!r}")
    labels = list(_labeled_sources(dvs, "distribution vector"))
    if not labels:
        raise ConfigError("at least one distribution vector is required")
    rng = np.random.default_rng(seed)
    configs = []
    for _ in range(k):
        draw = rng.random(len(labels))
        if mode == MODE_INTERPOLATION:
            draw = draw / draw.sum()
        configs.append(WeightConfig(
            mode, tuple(zip(labels, (float(w) for w in draw)))))
    trials = _run_trials(base, dvs, configs, evaluator, workdir, keep, jobs)
    return SearchReport("random", trials, _best_index(trials), rng_seed=seed)
