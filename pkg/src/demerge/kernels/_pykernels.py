"""Pure-numpy implementations of the hot numeric kernels.

Element-wise results are bit-identical to the compiled backend (one
correctly-rounded multiply and add per element, no FMA contraction).
Reductions use numpy's pairwise summation, which may differ from the
compiled backend's compensated sums by a few ULPs.
"""

import numpy as np

BACKEND = "python"


def accumulate_scaled(acc: np.ndarray, x: np.ndarray, w: float) -> None:
    """In place acc[i] += w * float64(x[i]) for 1-D acc (f64) and x (f32/f64)."""
    if acc.shape != x.shape:
        raise ValueError("accumulate_scaled: length mismatch")
    acc += np.multiply(x, w, dtype=np.float64)


def sum_squared_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of (a[i] - b[i])**2 accumulated in float64."""
    if a.shape != b.shape:
        raise ValueError("sum_squared_diff: length mismatch")
    d = a.astype(np.float64, copy=False) - b.astype(np.float64, copy=False)
    return float(np.dot(d, d))


def dot_products(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """One-pass (a.b, a.a, b.b) in float64, for cosine similarity."""
    if a.shape != b.shape:
        raise ValueError("dot_products: length mismatch")
    a64 = a.astype(np.float64, copy=False)
    b64 = b.astype(np.float64, copy=False)
    return (float(np.dot(a64, b64)), float(np.dot(a64, a64)),
            float(np.dot(b64, b64)))
