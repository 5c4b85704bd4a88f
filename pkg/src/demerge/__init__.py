"""demerge: merge fine-tuned checkpoints by distribution-vector arithmetic.

A distribution vector is the element-wise difference between a fine-tuned
model and its base checkpoint. This package extracts such vectors, builds
merged models as ``base + sum(weight_i * dv_i)`` (or as weighted model
averages), searches for good merge weights against an external evaluator,
and provides weight-space analytics plus a gpu-hour cost model — all over
a bit-exact streaming checkpoint container (DEMCKPT).
"""

__version__ = "0.1.0"

from .analytics import (DEFAULT_LAYER_PATTERN, FlatView, LayerDistanceRow,
                        analytics_report, combine_dvs, cosine_similarity,
                        euclidean_distance, layerwise_distance,
                        report_csv_sections)
from .arith import (MODE_DEM, MODE_INTERPOLATION, WeightConfig, compose_dem,
                    equivalence_check, extract_dv, interpolate)
from .cost import (CostScenario, MixingCost, RunCost, SearchCostParams,
                   cost_report, dem_total_cost, format_cost_report,
                   gpu_hours, load_scenario, reference_scenario,
                   savings_ratio, search_complexity)
from .errors import (CompatibilityError, ConfigError, DegenerateInput,
                     DemergeError, EvaluatorError, FormatError,
                     IntegrityError, IoError, NumericsError, SearchFailed,
                     WeightRangeWarning)
from .search import (DEFAULT_GRID, DEFAULT_SEED, EvaluationResult,
                     SearchReport, Trial, evaluate_candidate,
                     grid_search_single_coeff, random_search)
from .store import (FORMAT_VERSION, Checkpoint, CheckpointReader,
                    CheckpointWriter, TensorMeta, check_compatibility,
                    open_checkpoint, write_checkpoint)

__all__ = [
    "__version__",
    # container format
    "FORMAT_VERSION", "TensorMeta", "Checkpoint", "CheckpointReader",
    "CheckpointWriter", "open_checkpoint", "write_checkpoint",
    "check_compatibility",
    # arithmetic
    "MODE_DEM", "MODE_INTERPOLATION", "WeightConfig", "extract_dv",
    "compose_dem", "interpolate", "equivalence_check",
    # analytics
    "DEFAULT_LAYER_PATTERN", "FlatView", "LayerDistanceRow",
    "euclidean_distance", "cosine_similarity", "layerwise_distance",
    "combine_dvs", "analytics_report", "report_csv_sections",
    # search
    "DEFAULT_GRID", "DEFAULT_SEED", "EvaluationResult", "Trial",
    "SearchReport", "evaluate_candidate", "grid_search_single_coeff",
    "random_search",
    # cost model
    "RunCost", "MixingCost", "CostScenario", "SearchCostParams", "gpu_hours",
    "dem_total_cost", "search_complexity", "savings_ratio", "load_scenario",
    "reference_scenario", "cost_report", "format_cost_report",
    # errors
    "DemergeError", "FormatError", "IntegrityError", "IoError",
    "CompatibilityError", "ConfigError", "NumericsError", "DegenerateInput",
    "EvaluatorError", "SearchFailed", "WeightRangeWarning",
]
