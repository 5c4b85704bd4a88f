"""GPU-hour accounting: run costs, complexity counts, scenario reports."""

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demerge import (ConfigError, CostScenario, IoError, MixingCost,
                     NumericsError, RunCost, SearchCostParams, cost_report,
                     dem_total_cost, format_cost_report, gpu_hours,
                     load_scenario, reference_scenario, savings_ratio,
                     search_complexity)
from demerge.cost import MAX_EXACT_FLOAT_INT, scenario_from_obj


# ---------------------------------------------------------------------------
# gpu_hours
# ---------------------------------------------------------------------------

def test_gpu_hours_formula():
    # 550 steps x 6.5 s/step x 8 gpus = 28600 gpu-seconds
    assert gpu_hours(RunCost("cot", 6.5, 550, 8)) == 7.944444444444445


def test_gpu_hours_exact_when_divisible():
    assert gpu_hours(RunCost("p3", 4.8, 6000, 32)) == 256.0


def test_gpu_hours_zero_steps():
    assert gpu_hours(RunCost("idle", 1.0, 0, 8)) == 0.0


@pytest.mark.parametrize("kwargs", [
    {"label": 3}, {"time_per_step": 0.0}, {"time_per_step": -1.0},
    {"time_per_step": float("inf")}, {"steps": -1}, {"steps": 1.5},
    {"steps": True}, {"gpus": 0}, {"gpus": "8"},
])
def test_run_cost_validation(kwargs):
    base = {"label": "r", "time_per_step": 1.0, "steps": 10, "gpus": 1}
    with pytest.raises(ConfigError):
        RunCost(**{**base, **kwargs})


# ---------------------------------------------------------------------------
# dem_total_cost
# ---------------------------------------------------------------------------

REFERENCE_RUNS = (
    RunCost("cot", 6.5, 550, 8),
    RunCost("mathqa", 6.5, 600, 8),
    RunCost("p3", 4.8, 6000, 32),
    RunCost("instdial", 5.2, 23000, 16),
    RunCost("sni", 5.24, 6000, 16),
)
REFERENCE_VALIDATION = RunCost("validation", 2.1, 500, 8)


def test_dem_total_reference_runs():
    total = dem_total_cost(REFERENCE_RUNS, REFERENCE_VALIDATION, trials=10)
    assert total == 967.2333333333333
    # agrees with the published rounded total of 966 to well under 1%
    assert total == pytest.approx(966, abs=5)


def test_dem_total_single_run_no_trials():
    run = RunCost("only", 3600.0, 1, 1)
    assert dem_total_cost([run], REFERENCE_VALIDATION, trials=0) == 1.0


def test_dem_total_counts_validation_per_trial():
    run = RunCost("r", 3600.0, 1, 1)
    val = RunCost("v", 3600.0, 1, 2)  # 2 gpu-hours per trial
    assert dem_total_cost([run], val, trials=3) == 7.0


def test_dem_total_is_permutation_invariant():
    forward = dem_total_cost(REFERENCE_RUNS, REFERENCE_VALIDATION, 10)
    backward = dem_total_cost(tuple(reversed(REFERENCE_RUNS)),
                              REFERENCE_VALIDATION, 10)
    assert forward == backward


def test_dem_total_trials_validation():
    with pytest.raises(ConfigError):
        dem_total_cost(REFERENCE_RUNS, REFERENCE_VALIDATION, trials=-1)
    with pytest.raises(ConfigError):
        dem_total_cost(REFERENCE_RUNS, REFERENCE_VALIDATION, trials=2.5)


# ---------------------------------------------------------------------------
# search complexity
# ---------------------------------------------------------------------------

def test_complexity_small_case_exact():
    mixing, dem, factor = search_complexity(SearchCostParams(2, 2, 100, 10))
    assert (mixing, dem, factor) == (440.0, 260.0, 2.0)


def test_complexity_factor_is_exact():
    _, _, factor = search_complexity(SearchCostParams(5, 10, 1, 1))
    assert factor == 20000.0


def test_complexity_single_candidate_weight_favors_mixing():
    # with m=1 there is only one combination: mixing trains it once while
    # the merge route still trains every source
    mixing, dem, factor = search_complexity(SearchCostParams(3, 1, 100, 10))
    assert mixing == 110.0
    assert dem == 3 * 110.0 + 10.0
    assert factor == pytest.approx(1 / 3)
    assert mixing < dem


def test_complexity_overflow_guard():
    with pytest.raises(NumericsError):
        search_complexity(SearchCostParams(16, 10, 1, 1))  # 10**16 combos
    # m**n itself at the boundary is fine; the scaled costs then overflow
    assert 2**53 == MAX_EXACT_FLOAT_INT
    with pytest.raises(NumericsError):
        search_complexity(SearchCostParams(53, 2, 1, 1))


def test_complexity_param_validation():
    with pytest.raises(ConfigError):
        SearchCostParams(0, 2, 1, 1)
    with pytest.raises(ConfigError):
        SearchCostParams(2, 2, 1.0, 1)


@given(st.integers(1, 6), st.integers(2, 10),
       st.integers(1, 10_000), st.integers(1, 10_000))
@settings(max_examples=200, deadline=None)
def test_complexity_merge_never_loses_when_training_dominates(n, m, T, V):
    if T < V:
        T, V = V, T  # training at least as expensive as validation
    mixing, dem, factor = search_complexity(SearchCostParams(n, m, T, V))
    assert mixing >= dem
    assert factor == m**n / n
    assert mixing == m**n * (T + V)
    assert dem == n * (T + V) + m**n * V


# ---------------------------------------------------------------------------
# savings ratio
# ---------------------------------------------------------------------------

def test_savings_ratio_published_rounding():
    assert savings_ratio(11650.0, 966.0) == 12.060041407867494


def test_savings_ratio_break_even():
    assert savings_ratio(100.0, 100.0) == 1.0


def test_savings_ratio_guards():
    with pytest.raises(ConfigError):
        savings_ratio(100.0, 0.0)
    with pytest.raises(ConfigError):
        savings_ratio(100.0, -1.0)
    with pytest.raises(ConfigError):
        savings_ratio(-5.0, 10.0)


# ---------------------------------------------------------------------------
# scenarios and reports
# ---------------------------------------------------------------------------

def test_reference_report_carries_both_mixing_totals():
    report = cost_report(reference_scenario())
    assert report["dem"]["total_gpu_hours"] == 967.2333333333333
    mixing = report["mixing"]
    assert mixing["runs"] == 50
    assert mixing["total_gpu_hours_from_average"] == 11650.0
    assert mixing["selected_run_gpu_hours"] == 349.3333333333333
    assert mixing["total_gpu_hours_from_selected_run"] == pytest.approx(
        17466.666666666664)
    # the two published figures genuinely disagree; both must survive
    assert (mixing["total_gpu_hours_from_average"]
            != mixing["total_gpu_hours_from_selected_run"])
    assert report["savings_ratio"] == 11650.0 / 967.2333333333333
    assert 11 <= report["savings_ratio"] <= 13


def test_reference_report_run_rows():
    report = cost_report(reference_scenario())
    by_label = {row["label"]: row["gpu_hours"] for row in report["dem"]["runs"]}
    assert by_label == {
        "cot": 7.944444444444445,
        "mathqa": 8.666666666666666,
        "p3": 256.0,
        "instdial": 531.5555555555555,
        "sni": 139.73333333333332,
    }
    val = report["dem"]["validation"]
    assert val["gpu_hours_per_trial"] == 2.3333333333333335
    assert val["trials"] == 10
    assert val["gpu_hours"] == 23.333333333333336


def test_report_without_mixing_section():
    scenario = CostScenario(REFERENCE_RUNS, REFERENCE_VALIDATION, 10)
    report = cost_report(scenario)
    assert report["mixing"] is None
    assert report["savings_ratio"] is None


def test_report_average_only_mixing():
    scenario = CostScenario(
        (RunCost("r", 3600.0, 1, 1),), RunCost("v", 3600.0, 1, 1), 0,
        MixingCost(runs=4, average_gpu_hours_per_run=2.0))
    report = cost_report(scenario)
    assert report["mixing"]["total_gpu_hours_from_average"] == 8.0
    assert report["mixing"]["selected_run_gpu_hours"] is None
    assert report["mixing"]["total_gpu_hours_from_selected_run"] is None
    assert report["savings_ratio"] == 8.0


def test_report_selected_only_mixing_falls_back_for_ratio():
    scenario = CostScenario(
        (RunCost("r", 3600.0, 1, 1),), RunCost("v", 3600.0, 1, 1), 0,
        MixingCost(runs=4, selected_run=RunCost("mix", 3600.0, 3, 1)))
    report = cost_report(scenario)
    assert report["mixing"]["total_gpu_hours_from_average"] is None
    assert report["mixing"]["total_gpu_hours_from_selected_run"] == 12.0
    assert report["savings_ratio"] == 12.0


def test_mixing_cost_needs_some_figure():
    with pytest.raises(ConfigError):
        MixingCost(runs=4)
    with pytest.raises(ConfigError):
        MixingCost(runs=0, average_gpu_hours_per_run=1.0)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        CostScenario((), REFERENCE_VALIDATION, 10)
    with pytest.raises(ConfigError):
        CostScenario(REFERENCE_RUNS, REFERENCE_VALIDATION, -1)


# ---------------------------------------------------------------------------
# JSON scenario files
# ---------------------------------------------------------------------------

def scenario_obj():
    return {
        "training_runs": [
            {"label": "a", "time_per_step": 1.0, "steps": 3600, "gpus": 2},
        ],
        "validation": {"label": "v", "time_per_step": 1.0, "steps": 3600,
                       "gpus": 1},
        "validation_trials": 3,
        "mixing": {"runs": 10, "average_gpu_hours_per_run": 5.0},
    }


def test_load_scenario_roundtrip(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scenario_obj()), encoding="utf-8")
    scenario = load_scenario(path)
    report = cost_report(scenario)
    assert report["dem"]["total_gpu_hours"] == 2.0 + 3 * 1.0
    assert report["mixing"]["total_gpu_hours_from_average"] == 50.0
    assert report["savings_ratio"] == 10.0


def test_load_scenario_mixing_optional(tmp_path):
    obj = scenario_obj()
    del obj["mixing"]
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(obj), encoding="utf-8")
    assert cost_report(load_scenario(path))["mixing"] is None


@pytest.mark.parametrize("mutate", [
    lambda o: o.pop("validation"),
    lambda o: o.update(extra=1),
    lambda o: o.update(training_runs={"label": "a"}),
    lambda o: o["training_runs"][0].pop("gpus"),
    lambda o: o["training_runs"][0].update(nonsense=1),
    lambda o: o.update(mixing={"average_gpu_hours_per_run": 5.0}),
    lambda o: o.update(mixing={"runs": 10, "other": 1}),
])
def test_scenario_shape_errors(mutate):
    obj = scenario_obj()
    mutate(obj)
    with pytest.raises(ConfigError):
        scenario_from_obj(obj)


def test_load_scenario_io_and_json_errors(tmp_path):
    with pytest.raises(IoError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_scenario(bad)


# ---------------------------------------------------------------------------
# text rendering
# ---------------------------------------------------------------------------

def test_format_cost_report_lists_everything():
    text = format_cost_report(cost_report(reference_scenario()))
    assert text.endswith("\n")
    for needle in ("cot", "mathqa", "p3", "instdial", "sni",
                   "validation (x10)", "DEM total", "967.23",
                   "mixing total (avg x 50 runs)", "11650.00",
                   "mixing total (selected x 50)", "17466.67",
                   "savings ratio (mixing/DEM)", "12.04"):
        assert needle in text, needle


def test_format_cost_report_without_mixing():
    scenario = CostScenario(REFERENCE_RUNS, REFERENCE_VALIDATION, 10)
    text = format_cost_report(cost_report(scenario))
    assert "DEM total" in text
    assert "mixing" not in text
    assert "savings" not in text
