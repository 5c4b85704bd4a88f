"""Numeric kernel backends: selection, agreement, and exactness."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demerge import kernels


def all_backends():
    return kernels.available_backends()


def test_backend_selected_and_listed():
    """The active backend is one of the discoverable implementations."""
    backends = all_backends()
    assert "python" in backends
    assert kernels.backend in backends


def test_accumulate_scaled_basic():
    acc = np.zeros(4)
    kernels.accumulate_scaled(acc, np.array([1, 2, 3, 4], dtype=np.float32), 0.5)
    assert acc.tolist() == [0.5, 1.0, 1.5, 2.0]


def test_accumulate_scaled_accepts_readonly_input():
    x = np.ones(8, dtype=np.float32)
    x.setflags(write=False)
    for mod in all_backends().values():
        acc = np.zeros(8)
        mod.accumulate_scaled(acc, x, 2.0)
        assert acc.tolist() == [2.0] * 8


def test_length_mismatch_rejected():
    for mod in all_backends().values():
        with pytest.raises(ValueError):
            mod.accumulate_scaled(np.zeros(3), np.zeros(4, dtype=np.float32), 1.0)
        with pytest.raises(ValueError):
            mod.sum_squared_diff(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            mod.dot_products(np.zeros(3), np.zeros(4))


def test_empty_inputs():
    for mod in all_backends().values():
        acc = np.zeros(0)
        mod.accumulate_scaled(acc, np.zeros(0, dtype=np.float32), 3.0)
        assert mod.sum_squared_diff(np.zeros(0), np.zeros(0)) == 0.0
        assert mod.dot_products(np.zeros(0), np.zeros(0)) == (0.0, 0.0, 0.0)


def test_sum_squared_diff_exact_small_case():
    a = np.array([3.0, 0.0, -1.0])
    b = np.array([0.0, 4.0, -1.0])
    for mod in all_backends().values():
        assert mod.sum_squared_diff(a, b) == 25.0


def test_dot_products_closed_form():
    a = np.array([3.0, 4.0])
    for mod in all_backends().values():
        ab, aa, bb = mod.dot_products(a, 2.0 * a)
        assert (ab, aa, bb) == (50.0, 25.0, 100.0)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_accumulate_scaled_bit_identical_across_backends(dtype):
    """The merge hot loop must not depend on which backend is active:
    one multiply and one add per element, in this exact order."""
    backends = all_backends()
    if len(backends) < 2:
        pytest.skip("only one backend built")
    rng = np.random.default_rng(99)
    for _ in range(50):
        n = int(rng.integers(0, 3000))
        x = (rng.standard_normal(n) * 10.0 ** float(rng.integers(-6, 7))).astype(dtype)
        start = rng.standard_normal(n)
        w = float(rng.standard_normal())
        outs = []
        for mod in backends.values():
            acc = start.copy()
            mod.accumulate_scaled(acc, x, w)
            outs.append(acc)
        for other in outs[1:]:
            assert np.array_equal(outs[0], other)


def test_reductions_agree_across_backends_to_float64_noise():
    backends = all_backends()
    if len(backends) < 2:
        pytest.skip("only one backend built")
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 5000))
        a = rng.standard_normal(n).astype(np.float32)
        b = rng.standard_normal(n).astype(np.float32)
        values = [(mod.sum_squared_diff(a, b), *mod.dot_products(a, b))
                  for mod in backends.values()]
        for other in values[1:]:
            for u, v in zip(values[0], other):
                assert u == pytest.approx(v, rel=1e-12, abs=1e-300)


@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
                max_size=200),
       st.floats(min_value=-100, max_value=100, allow_nan=False))
@settings(max_examples=50, deadline=None)
def test_accumulate_matches_float64_reference(values, w):
    """Against a straightforward float64 elementwise reference."""
    x = np.asarray(values, dtype=np.float64)
    acc = np.zeros(len(values))
    kernels.accumulate_scaled(acc, x, w)
    reference = np.zeros(len(values))
    for i, v in enumerate(values):
        reference[i] += w * v
    assert np.array_equal(acc, reference)


@given(st.lists(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
                min_size=1, max_size=200))
@settings(max_examples=50, deadline=None)
def test_sum_squared_diff_matches_fsum_reference(values):
    """Compensated reduction stays within one rounding of exact fsum."""
    a = np.asarray(values, dtype=np.float64)
    b = np.zeros_like(a)
    exact = math.fsum(v * v for v in values)
    got = kernels.sum_squared_diff(a, b)
    assert got == pytest.approx(exact, rel=1e-15, abs=1e-300)


def test_explicit_backend_env_selection():
    """DEMERGE_KERNELS forces a specific implementation at import time."""
    import subprocess
    import sys

    for choice, expected in (("python", "python"),):
        out = subprocess.run(
            [sys.executable, "-c",
             "from demerge import kernels; print(kernels.backend)"],
            env={"DEMERGE_KERNELS": choice, "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == expected
