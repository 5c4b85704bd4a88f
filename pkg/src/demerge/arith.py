"""Checkpoint vector arithmetic: deltas, weighted merges, interpolation.

A distribution vector is the element-wise difference between a fine-tuned
model and its base. A merged model adds a weighted sum of distribution
vectors back onto the base; interpolation is the weighted average of the
fine-tuned models themselves, which coincides with the merge whenever the
weights sum to 1.

All accumulation runs in float64 regardless of storage dtype, with a
single cast back to the storage dtype at the end. Per output tensor, at
most one base buffer, one input buffer, and one float64 accumulator are
resident, so file-backed inputs stream tensor by tensor.
"""

import json
import math
import warnings
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (CompatibilityError, ConfigError, NumericsError,
                     WeightRangeWarning)
from .store import (DTYPES, KIND_DELTA, KIND_MODEL, Checkpoint,
                    CheckpointWriter, check_compatibility, ensure_open)

MODE_DEM = "dem"
MODE_INTERPOLATION = "interpolation"
_MODES = (MODE_DEM, MODE_INTERPOLATION)

#: |sum of weights - 1| must stay below this in interpolation mode.
INTERPOLATION_SUM_TOL = 1e-9


@dataclass(frozen=True)
class WeightConfig:
    """Labeled merge weights plus the mode they apply in.

    ``mode`` is ``"dem"`` (free real weights) or ``"interpolation"``
    (weights must sum to 1 within INTERPOLATION_SUM_TOL). Labels must be
    unique and every weight finite. Weights outside [0, 1] are legal in
    both modes but raise a WeightRangeWarning, since they correspond to
    extrapolation/forgetting rather than blending.

    ``entries`` order is the accumulation order used by the arithmetic
    ops, making results reproducible bit-for-bit.
    """

    mode: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(
                f"mode must be one of {_MODES}, got {self.mode!r}")
        normalized = []
        seen = set()
        for item in self.entries:
            try:
                label, weight = item
            except (TypeError, ValueError):
                raise ConfigError(
                    f"weight entries must be (label, weight) pairs, got "
                    f"{item!r}") from None
            if not isinstance(label, str):
                raise ConfigError(f"weight label must be a string, got "
                                  f"{label!r}")
            if isinstance(weight, bool) or not isinstance(weight, (int, float)):
                raise ConfigError(
                    f"weight for {label!r} must be a number, got {weight!r}")
            w = float(weight)
            if not math.isfinite(w):
                raise ConfigError(f"weight for {label!r} is not finite: {w!r}")
            if label in seen:
                raise ConfigError(f"duplicate weight label {label!r}")
            seen.add(label)
            normalized.append((label, w))
        object.__setattr__(self, "entries", tuple(normalized))
        if self.mode == MODE_INTERPOLATION:
            if not normalized:
                raise ConfigError("interpolation requires at least one weight")
            total = self.total
            if abs(total - 1.0) > INTERPOLATION_SUM_TOL:
                raise ConfigError(
                    f"interpolation weights must sum to 1 "
                    f"(got {total!r}, tolerance {INTERPOLATION_SUM_TOL})")
        outside = [label for label, w in normalized if w < 0.0 or w > 1.0]
        if outside:
            warnings.warn(
                "weights outside [0, 1] for: " + ", ".join(outside),
                WeightRangeWarning, stacklevel=2)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.entries)

    @property
    def total(self) -> float:
        return math.fsum(w for _, w in self.entries)

    def weight_for(self, label: str) -> float:
        for name, w in self.entries:
            if name == label:
                return w
        raise KeyError(label)

    def as_mapping(self) -> dict[str, float]:
        return dict(self.entries)

    @classmethod
    def uniform(cls, labels, weight: float, mode: str = MODE_DEM) -> "WeightConfig":
        return cls(mode, tuple((label, weight) for label in labels))

    def to_json_obj(self) -> dict:
        return {"mode": self.mode, "weights": dict(self.entries)}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj) -> "WeightConfig":
        if not isinstance(obj, dict) or set(obj) != {"mode", "weights"}:
            raise ConfigError(
                'weight config must be {"mode": ..., "weights": {...}}, got '
                f"{obj!r}")
        weights = obj["weights"]
        if not isinstance(weights, dict):
            raise ConfigError(f"weights must be an object, got {weights!r}")
        return cls(obj["mode"], tuple(weights.items()))

    @classmethod
    def from_json(cls, text: str) -> "WeightConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid weight config JSON: {exc}") from exc
        return cls.from_json_obj(obj)


def _require_kind(ckpt, kind: str, role: str) -> None:
    actual = getattr(ckpt, "kind", None)
    if actual != kind:
        raise CompatibilityError(
            f"{role} must be a {kind!r} checkpoint, got {actual!r}")


def _labeled_sources(sources, what: str) -> dict:
    items = sources.items() if hasattr(sources, "items") else sources
    out = {}
    for label, src in items:
        if not isinstance(label, str):
            raise ConfigError(f"{what} label must be a string, got {label!r}")
        if label in out:
            raise ConfigError(f"duplicate {what} label {label!r}")
        out[label] = src
    return out


def _align_labels(labeled: dict, weights: WeightConfig, what: str) -> None:
    want = set(weights.labels)
    have = set(labeled)
    problems = []
    if want - have:
        problems.append(f"weights without a {what}: "
                        + ", ".join(sorted(want - have)))
    if have - want:
        problems.append(f"{what}s without a weight: "
                        + ", ".join(sorted(have - want)))
    if problems:
        raise ConfigError("; ".join(problems))


def _flat(arr: np.ndarray) -> np.ndarray:
    """Row-major 1-D contiguous view/copy, dtype preserved."""
    return np.ascontiguousarray(arr).reshape(-1)


def _check_finite(arr: np.ndarray, name: str) -> None:
    flat = arr.reshape(-1)
    finite = np.isfinite(flat)
    if not finite.all():
        idx = int(np.argmax(~finite))
        raise NumericsError(
            f"non-finite value in tensor {name!r} at flat index {idx}",
            tensor_name=name, flat_index=idx)


def _cast_back(acc: np.ndarray, dtype_code: str, shape, name: str) -> np.ndarray:
    # Overflow surfaces as a NumericsError below, not a numpy warning.
    with np.errstate(over="ignore", invalid="ignore"):
        out = acc.astype(DTYPES[dtype_code]).reshape(shape)
    _check_finite(out, name)
    return out


def _emit(out, kind: str, ref, compute):
    """Build the result tensor-by-tensor, in memory or streamed to a file."""
    names = ref.names()
    if out is None:
        result = Checkpoint(kind)
        for name in names:
            result.add(name, compute(name))
        return result
    specs = [(name, *ref.spec(name)) for name in names]
    with CheckpointWriter(out, kind, specs) as writer:
        for name in names:
            writer.add(name, compute(name))
    return Path(out)


def extract_dv(base, finetuned, out=None):
    """Distribution vector: finetuned minus base, element-wise.

    The subtraction runs in each tensor's storage dtype. Inputs may be
    paths, open readers, or in-memory checkpoints; with ``out`` set the
    delta streams to that path (returned), otherwise an in-memory delta
    checkpoint is returned.
    """
    with ExitStack() as stack:
        b = ensure_open(base, stack)
        f = ensure_open(finetuned, stack)
        _require_kind(b, KIND_MODEL, "base")
        _require_kind(f, KIND_MODEL, "finetuned model")
        check_compatibility(b, f)

        def compute(name):
            # Overflow surfaces as a NumericsError below, not a numpy warning.
            with np.errstate(over="ignore", invalid="ignore"):
                delta = f.get(name) - b.get(name)
            _check_finite(delta, name)
            return delta

        return _emit(out, KIND_DELTA, b, compute)


def compose_dem(base, dvs, weights: WeightConfig, out=None):
    """Merged model: base plus the weighted sum of distribution vectors.

    ``dvs`` maps labels to delta checkpoints (or paths); ``weights`` must
    be a dem-mode WeightConfig whose labels match exactly. Accumulation
    follows ``weights.entries`` order in float64, zero-weight entries are
    skipped (so an all-zero config reproduces the base bit-for-bit), and
    each tensor is cast back to the base dtype at the end.
    """
    if not isinstance(weights, WeightConfig):
        raise ConfigError("weights must be a WeightConfig")
    if weights.mode != MODE_DEM:
        raise ConfigError(
            f"compose_dem requires mode={MODE_DEM!r} weights, got "
            f"{weights.mode!r}")
    labeled = _labeled_sources(dvs, "distribution vector")
    _align_labels(labeled, weights, "distribution vector")
    with ExitStack() as stack:
        b = ensure_open(base, stack)
        _require_kind(b, KIND_MODEL, "base")
        resolved = {label: ensure_open(src, stack)
                    for label, src in labeled.items()}
        for label, dv in resolved.items():
            _require_kind(dv, KIND_DELTA, f"distribution vector {label!r}")
            check_compatibility(b, dv)
        active = [(label, w) for label, w in weights.entries if w != 0.0]

        def compute(name):
            dtype_code, shape = b.spec(name)
            acc = b.get(name).astype(np.float64).reshape(-1)
            for label, w in active:
                kernels.accumulate_scaled(acc, _flat(resolved[label].get(name)), w)
            return _cast_back(acc, dtype_code, shape, name)

        return _emit(out, KIND_MODEL, b, compute)


def interpolate(models, weights: WeightConfig, out=None):
    """Weighted average of models; weights must sum to 1.

    ``models`` maps labels to model checkpoints (or paths); ``weights``
    must be an interpolation-mode WeightConfig with matching labels.
    Same numerics as compose_dem: float64 accumulation in entry order,
    single cast to the storage dtype.
    """
    if not isinstance(weights, WeightConfig):
        raise ConfigError("weights must be a WeightConfig")
    if weights.mode != MODE_INTERPOLATION:
        raise ConfigError(
            f"interpolate requires mode={MODE_INTERPOLATION!r} weights, got "
            f"{weights.mode!r}")
    labeled = _labeled_sources(models, "model")
    _align_labels(labeled, weights, "model")
    with ExitStack() as stack:
        resolved = {label: ensure_open(src, stack)
                    for label, src in labeled.items()}
        ref = resolved[weights.labels[0]]
        for label, model in resolved.items():
            _require_kind(model, KIND_MODEL, f"model {label!r}")
            check_compatibility(ref, model)
        active = [(label, w) for label, w in weights.entries if w != 0.0]

        def compute(name):
            dtype_code, shape = ref.spec(name)
            acc = np.zeros(math.prod(shape), dtype=np.float64)
            for label, w in active:
                kernels.accumulate_scaled(acc, _flat(resolved[label].get(name)), w)
            return _cast_back(acc, dtype_code, shape, name)

        return _emit(out, KIND_MODEL, ref, compute)


def equivalence_check(base, models, weights) -> float:
    """Max-abs difference between the two merge routes at Σweights = 1.

    Route one interpolates the models directly; route two extracts each
    model's distribution vector against the base and composes them onto
    the base. Algebraically identical when the weights sum to 1; the
    return value is the largest element-wise deviation the finite-
    precision implementations actually produce. Both routes run here with
    the exact arithmetic the public ops use.
    """
    if not isinstance(weights, WeightConfig):
        raise ConfigError("weights must be a WeightConfig")
    total = weights.total
    if abs(total - 1.0) > INTERPOLATION_SUM_TOL:
        raise ConfigError(
            f"equivalence check requires weights summing to 1 (got {total!r})")
    labeled = _labeled_sources(models, "model")
    _align_labels(labeled, weights, "model")
    with ExitStack() as stack:
        b = ensure_open(base, stack)
        _require_kind(b, KIND_MODEL, "base")
        resolved = {label: ensure_open(src, stack)
                    for label, src in labeled.items()}
        for label, model in resolved.items():
            _require_kind(model, KIND_MODEL, f"model {label!r}")
            check_compatibility(b, model)
        active = [(label, w) for label, w in weights.entries if w != 0.0]
        worst = 0.0
        for name in b.names():
            dtype_code, shape = b.spec(name)
            base_arr = b.get(name)
            interp_acc = np.zeros(math.prod(shape), dtype=np.float64)
            dem_acc = base_arr.astype(np.float64).reshape(-1)
            for label, w in active:
                model_arr = resolved[label].get(name)
                kernels.accumulate_scaled(interp_acc, _flat(model_arr), w)
                kernels.accumulate_scaled(dem_acc, _flat(model_arr - base_arr), w)
            via_interp = _cast_back(interp_acc, dtype_code, shape, name)
            via_dem = _cast_back(dem_acc, dtype_code, shape, name)
            if via_interp.size:
                diff = np.abs(via_interp.astype(np.float64)
                              - via_dem.astype(np.float64))
                worst = max(worst, float(diff.max()))
        return worst
