"""Weight-space geometry of checkpoints and distribution vectors.

Every metric here treats a checkpoint as one long flat vector: tensors in
canonical name order, row-major within each tensor. Partial sums are
accumulated per tensor in float64 and combined exactly, so results are
reproducible and independent of tensor boundaries.
"""

import csv
import io
import math
import re
from contextlib import ExitStack
from dataclasses import dataclass

import numpy as np

from . import kernels
from .arith import (MODE_DEM, WeightConfig, _align_labels, _cast_back,
                    _flat, _labeled_sources)
from .errors import ConfigError, DegenerateInput, NumericsError
from .store import KIND_DELTA, Checkpoint, check_compatibility, ensure_open

#: Tensors whose names don't match the grouping pattern land here.
UNGROUPED = "_ungrouped"

#: Default layer grouping: the first decimal run after "layers.".
DEFAULT_LAYER_PATTERN = r"layers\.(\d+)\."

#: Cosine values may spill past +/-1 by at most this much before clamping.
COSINE_CLAMP = 1e-12


class FlatView:
    """A checkpoint seen as one flat vector in canonical order.

    Compatible checkpoints produce index-aligned views, which is what
    makes element-wise distances between them well-defined.
    """

    def __init__(self, source):
        self.source = source

    @property
    def length(self) -> int:
        return sum(math.prod(self.source.spec(n)[1]) for n in self.source.names())

    def chunks(self):
        """Yield (name, flat 1-D array) per tensor, canonical order."""
        for name in self.source.names():
            yield name, _flat(self.source.get(name))


@dataclass(frozen=True)
class LayerDistanceRow:
    """One layer group's distance between a model pair."""

    layer_key: str
    distance: float
    normalized: float


def euclidean_distance(a, b) -> float:
    """Flattened Euclidean distance between two compatible checkpoints."""
    with ExitStack() as stack:
        ca = ensure_open(a, stack)
        cb = ensure_open(b, stack)
        check_compatibility(ca, cb)
        partials = [kernels.sum_squared_diff(chunk, _flat(cb.get(name)))
                    for name, chunk in FlatView(ca).chunks()]
        return math.sqrt(math.fsum(partials))


def _norms_and_dot(ca, cb) -> tuple[float, float, float]:
    dots, sq_a, sq_b = [], [], []
    for name, chunk in FlatView(ca).chunks():
        ab, aa, bb = kernels.dot_products(chunk, _flat(cb.get(name)))
        dots.append(ab)
        sq_a.append(aa)
        sq_b.append(bb)
    return math.fsum(dots), math.fsum(sq_a), math.fsum(sq_b)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two flattened checkpoints.

    Raises DegenerateInput if either vector has zero norm. Rounding spill
    beyond +/-1 up to COSINE_CLAMP is clamped; anything further would be a
    genuine arithmetic fault and raises NumericsError.
    """
    with ExitStack() as stack:
        ca = ensure_open(a, stack)
        cb = ensure_open(b, stack)
        check_compatibility(ca, cb)
        ab, aa, bb = _norms_and_dot(ca, cb)
    if aa == 0.0 or bb == 0.0:
        raise DegenerateInput("cosine similarity of a zero-norm checkpoint "
                              "is undefined")
    # sqrt(aa*bb) keeps collinear inputs at exactly +/-1 (sqrt(x*x) == x in
    # round-to-nearest); fall back to separate roots if the product leaves
    # the float range.
    product = aa * bb
    if math.isfinite(product) and product > 0.0:
        denominator = math.sqrt(product)
    else:
        denominator = math.sqrt(aa) * math.sqrt(bb)
    value = ab / denominator
    if value > 1.0:
        if value - 1.0 > COSINE_CLAMP:
            raise NumericsError(f"cosine similarity {value!r} out of range")
        value = 1.0
    elif value < -1.0:
        if -1.0 - value > COSINE_CLAMP:
            raise NumericsError(f"cosine similarity {value!r} out of range")
        value = -1.0
    return value


def layer_groups(names, layer_pattern: str = DEFAULT_LAYER_PATTERN) -> dict[str, list[str]]:
    """Group tensor names by the pattern's first capture; misses go to
    UNGROUPED."""
    try:
        rx = re.compile(layer_pattern)
    except re.error as exc:
        raise ConfigError(f"invalid layer pattern {layer_pattern!r}: {exc}") from exc
    if rx.groups < 1:
        raise ConfigError(
            f"layer pattern {layer_pattern!r} needs a capture group for the "
            "layer key")
    groups: dict[str, list[str]] = {}
    for name in names:
        m = rx.search(name)
        key = m.group(1) if m is not None and m.group(1) is not None else UNGROUPED
        groups.setdefault(key, []).append(name)
    return groups


def _group_order(key: str):
    # Numeric layer indices first in value order, then everything else
    # lexicographically (UNGROUPED sorts among the non-numeric keys).
    return (0, int(key), "") if key.isdigit() else (1, 0, key)


def layerwise_distance(a, b, layer_pattern: str = DEFAULT_LAYER_PATTERN) -> list[LayerDistanceRow]:
    """Per-layer Euclidean distances, normalized by the pair's largest.

    When the checkpoints are identical everywhere the maximum is zero and
    all normalized values are defined as 0.
    """
    with ExitStack() as stack:
        ca = ensure_open(a, stack)
        cb = ensure_open(b, stack)
        check_compatibility(ca, cb)
        groups = layer_groups(ca.names(), layer_pattern)
        distances = {}
        for key, names in groups.items():
            partials = [kernels.sum_squared_diff(_flat(ca.get(n)), _flat(cb.get(n)))
                        for n in names]
            distances[key] = math.sqrt(math.fsum(partials))
    peak = max(distances.values(), default=0.0)
    return [LayerDistanceRow(key, distances[key],
                             distances[key] / peak if peak > 0.0 else 0.0)
            for key in sorted(distances, key=_group_order)]


def combine_dvs(dvs, weights: WeightConfig) -> Checkpoint:
    """Weighted sum of distribution vectors as one in-memory delta.

    Float64 accumulation per tensor, cast to the inputs' storage dtype —
    the same arithmetic a merge applies before adding the base.
    """
    if weights.mode != MODE_DEM:
        raise ConfigError(
            f"combining distribution vectors requires mode={MODE_DEM!r} "
            f"weights, got {weights.mode!r}")
    labeled = _labeled_sources(dvs, "distribution vector")
    _align_labels(labeled, weights, "distribution vector")
    if not weights.entries:
        raise ConfigError("cannot combine an empty set of distribution vectors")
    with ExitStack() as stack:
        resolved = {label: ensure_open(src, stack)
                    for label, src in labeled.items()}
        ref = resolved[weights.labels[0]]
        for other in resolved.values():
            check_compatibility(ref, other)
        active = [(label, w) for label, w in weights.entries if w != 0.0]
        out = Checkpoint(KIND_DELTA)
        for name in ref.names():
            dtype_code, shape = ref.spec(name)
            acc = np.zeros(math.prod(shape), dtype=np.float64)
            for label, w in active:
                kernels.accumulate_scaled(acc, _flat(resolved[label].get(name)), w)
            out.add(name, _cast_back(acc, dtype_code, shape, name))
        return out


def _flat_norm(ckpt) -> float:
    partials = [kernels.dot_products(chunk, chunk)[0]
                for _, chunk in FlatView(ckpt).chunks()]
    return math.sqrt(math.fsum(partials))


#: Weight given to every distribution vector in a report when the caller
#: does not pass explicit combination weights.
DEFAULT_REPORT_WEIGHT = 0.25


def analytics_report(base, models=(), dvs=(), *, dem_weights: WeightConfig | None = None,
                     layer_pattern: str = DEFAULT_LAYER_PATTERN) -> dict:
    """Geometry summary of fine-tuned models and their distribution vectors.

    Sections: per-model distance from the base (plus the combined-delta
    distance), the pairwise distribution-vector cosine matrix, the cosine
    of the weighted combination against each individual vector, and
    per-model layer-wise distance rows. ``dem_weights`` defaults to
    DEFAULT_REPORT_WEIGHT for every vector.
    """
    model_sources = _labeled_sources(models, "model")
    dv_sources = _labeled_sources(dvs, "distribution vector")
    with ExitStack() as stack:
        b = ensure_open(base, stack)
        model_handles = {label: ensure_open(src, stack)
                         for label, src in model_sources.items()}
        dv_handles = {label: ensure_open(src, stack)
                      for label, src in dv_sources.items()}
        for handle in (*model_handles.values(), *dv_handles.values()):
            check_compatibility(b, handle)

        distance_models = {label: euclidean_distance(b, m)
                           for label, m in model_handles.items()}
        layerwise = {label: [row.__dict__ for row in
                             layerwise_distance(b, m, layer_pattern)]
                     for label, m in model_handles.items()}

        dv_labels = list(dv_handles)
        matrix = []
        for i, li in enumerate(dv_labels):
            row = [0.0] * len(dv_labels)
            # Self-similarity is 1 by definition; only distinct pairs are
            # measured, and the matrix is symmetric.
            row[i] = 1.0
            matrix.append(row)
        for i, li in enumerate(dv_labels):
            for j in range(i + 1, len(dv_labels)):
                value = cosine_similarity(dv_handles[li], dv_handles[dv_labels[j]])
                matrix[i][j] = matrix[j][i] = value

        dem_distance = None
        dem_cosines: dict[str, float] = {}
        weights_used: dict[str, float] = {}
        if dv_labels:
            if dem_weights is None:
                dem_weights = WeightConfig.uniform(dv_labels, DEFAULT_REPORT_WEIGHT)
            combined = combine_dvs(dv_handles, dem_weights)
            weights_used = dem_weights.as_mapping()
            dem_distance = _flat_norm(combined)
            dem_cosines = {label: cosine_similarity(combined, dv_handles[label])
                           for label in dv_labels}

    return {
        "distance_from_base": {"models": distance_models, "dem": dem_distance},
        "dv_cosine_matrix": {"labels": dv_labels, "values": matrix},
        "dem_vs_dv_cosine": {"weights": weights_used, "values": dem_cosines},
        "layerwise": {"pattern": layer_pattern, "models": layerwise},
    }


def report_csv_sections(report: dict) -> dict[str, str]:
    """CSV mirror of each report section, keyed by section name."""

    def render(header, rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()

    distance = report["distance_from_base"]
    rows = [[label, value] for label, value in distance["models"].items()]
    if distance["dem"] is not None:
        rows.append(["DEM", distance["dem"]])
    sections = {"distance_from_base": render(["label", "distance"], rows)}

    matrix = report["dv_cosine_matrix"]
    sections["dv_cosine_matrix"] = render(
        ["label", *matrix["labels"]],
        [[label, *values] for label, values in
         zip(matrix["labels"], matrix["values"])])

    dem = report["dem_vs_dv_cosine"]
    sections["dem_vs_dv_cosine"] = render(
        ["label", "weight", "cosine"],
        [[label, dem["weights"][label], value]
         for label, value in dem["values"].items()])

    layer_rows = []
    for label, rows in report["layerwise"]["models"].items():
        for row in rows:
            layer_rows.append([label, row["layer_key"], row["distance"],
                               row["normalized"]])
    sections["layerwise"] = render(
        ["model", "layer_key", "distance", "normalized"], layer_rows)
    return sections
