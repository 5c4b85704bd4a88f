"""Numeric kernel backend selection.

The compiled extension is preferred when it was built; otherwise the numpy
fallback is used. DEMERGE_KERNELS=python forces the fallback and
DEMERGE_KERNELS=compiled turns a missing extension into an import error.
Checkpoint-producing arithmetic is bit-identical across backends; scalar
reductions agree to a few ULPs.
"""

import os

from . import _pykernels

_requested = os.environ.get("DEMERGE_KERNELS", "auto").lower()

if _requested in ("auto", "compiled", "c"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested != "auto":
            raise
        _impl = _pykernels
elif _requested in ("python", "py"):
    _impl = _pykernels
else:
    raise ValueError(
        f"DEMERGE_KERNELS must be auto, compiled or python, not {_requested!r}")

accumulate_scaled = _impl.accumulate_scaled
sum_squared_diff = _impl.sum_squared_diff
dot_products = _impl.dot_products
backend = _impl.BACKEND


def available_backends() -> dict:
    """Map backend name to its module, for tests and benchmarks."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
        found["compiled"] = _ckernels
    except ImportError:
        pass
    return found
