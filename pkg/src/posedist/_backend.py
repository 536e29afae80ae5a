"""Calibration kernel selection.

The hot per-trial solve exists twice: a compiled Cython kernel
(``posedist._native``) and a pure numpy twin (the array helpers in
:mod:`posedist.solver` / :mod:`posedist.baseline`). The compiled kernel is
used when its extension module imports cleanly; setting the environment
variable ``POSEDIST_PURE_PYTHON=1`` forces the numpy path. Both backends
implement the same contract and agree to ~1e-9 relative (see
tests/test_kernels.py and benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

from .core import EstimationFailure

STATUS_OK = 0
STATUS_KINDS = {
    1: "insufficient_observations",
    2: "rank_deficient",
    3: "ill_conditioned",
    4: "focal_nonpositive",
    5: "cheirality",
    6: "degenerate_segment",
    7: "vanishing_point_at_infinity",
    8: "degenerate_horizon",
}

_FORCE_PYTHON = os.environ.get("POSEDIST_PURE_PYTHON", "").strip() not in ("", "0")

try:
    from . import _native
except ImportError:  # extension not built; numpy path still covers everything
    _native = None


def native_available() -> bool:
    return _native is not None


def active_backend() -> str:
    return "python" if (_FORCE_PYTHON or _native is None) else "native"


def resolve_backend(backend) -> str:
    """Normalize a backend request ('native', 'python', or None = auto)."""
    if backend is None:
        return active_backend()
    if backend not in ("native", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "native" and _native is None:
        raise RuntimeError("native kernel requested but the extension is not built")
    return backend


def native_module():
    return _native


def raise_for_status(status: int) -> None:
    if status != STATUS_OK:
        raise EstimationFailure(STATUS_KINDS.get(status, f"status_{status}"))
