"""Comparison solver: explicit vanishing point + horizon line extraction.

This is the classical two-stage route the direct solver replaces. Each
person's body segment defines an image line; the lines' common intersection
is the vertical vanishing point. Pairs of people define horizon points
(top-line x bottom-line), which are fitted with a total-least-squares line.
The focal lengths then follow from the pole-polar relation between the
vanishing point and the horizon. Everything downstream of the intrinsics
(depths, scale, reconstruction, plane offset) is shared with the direct
solver so comparisons isolate the intrinsics/normal extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import EstimationFailure, as_height
from .solver import (
    RANK_RATIO_MIN,
    CalibrationResult,
    _back_directions,
    _canonical_sign,
    _depths_from_arrays,
    _homogeneous,
    _result_from_tuple,
    observation_arrays,
)

__all__ = [
    "HorizonLine",
    "vanishing_point_by_intersection",
    "horizon_by_fitting",
    "focal_from_pole_polar",
    "baseline_calibrate",
]

# Pair points whose homogeneous scale is this far below the vector norm are
# treated as lying at infinity and skipped before line fitting.
INFINITY_RATIO = 1e-9


@dataclass(frozen=True)
class HorizonLine:
    """Homogeneous image line with unit (l1, l2); rejects the line at infinity."""

    l: np.ndarray

    def __post_init__(self):
        line = np.asarray(self.l, dtype=float)
        if line.shape != (3,):
            raise ValueError("horizon line must be a homogeneous 3-vector")
        norm12 = math.hypot(line[0], line[1])
        if norm12 <= 0:
            raise ValueError("degenerate horizon (line at infinity)")
        object.__setattr__(self, "l", line / norm12)


def vanishing_point_by_intersection(observations) -> np.ndarray:
    """Unit homogeneous point minimizing line-normalized algebraic distance.

    Per-person body lines l_i = top x bottom; the returned p minimizes
    sum_i (l_i^T p)^2 / (l_i1^2 + l_i2^2) subject to ||p|| = 1.
    """
    if len(observations) < 2:
        raise EstimationFailure("insufficient_observations", "need >= 2 people")
    top, bot = observation_arrays(observations)
    p, _ = _vanishing_point_from_arrays(_homogeneous(top), _homogeneous(bot))
    return p


def _vanishing_point_from_arrays(top_h, bot_h):
    lines = np.cross(top_h, bot_h)
    weights = np.hypot(lines[:, 0], lines[:, 1])
    if np.any(weights <= 0):
        raise EstimationFailure("degenerate_segment", "body line has no direction")
    rows = lines / weights[:, None]
    _, sigma, vt = np.linalg.svd(rows)
    if sigma[1] <= RANK_RATIO_MIN * sigma[0]:
        raise EstimationFailure("rank_deficient", "all body lines identical")
    return _canonical_sign(vt[-1]), float(sigma[-1])


def horizon_by_fitting(observations) -> HorizonLine:
    """Total-least-squares line through the pairwise horizon points."""
    if len(observations) < 3:
        raise EstimationFailure("insufficient_observations", "need >= 3 people")
    top, bot = observation_arrays(observations)
    line, _ = _horizon_from_arrays(_homogeneous(top), _homogeneous(bot))
    return HorizonLine(l=line)


def _horizon_from_arrays(top_h, bot_h):
    n = top_h.shape[0]
    i_idx, j_idx = np.triu_indices(n, k=1)
    top_lines = np.cross(top_h[i_idx], top_h[j_idx])
    bot_lines = np.cross(bot_h[i_idx], bot_h[j_idx])
    points = np.cross(top_lines, bot_lines)
    norms = np.linalg.norm(points, axis=1)
    finite = np.abs(points[:, 2]) > INFINITY_RATIO * norms
    usable = points[finite]
    if usable.shape[0] < 2:
        raise EstimationFailure("degenerate_horizon", "fewer than 2 finite horizon points")
    xy = usable[:, :2] / usable[:, 2:3]

    centroid = xy.mean(axis=0)
    centered = xy - centroid
    scatter = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(scatter)
    if eigvals[1] <= RANK_RATIO_MIN * max(1.0, float(np.abs(xy).max()) ** 2):
        raise EstimationFailure("degenerate_horizon", "horizon points coincide")
    direction = eigvecs[:, 0]  # normal of the fitted line, unit norm
    l3 = -float(direction @ centroid)
    line = np.array([direction[0], direction[1], l3])
    rms = float(np.sqrt(np.mean((centered @ direction) ** 2)))
    return line, rms


def focal_from_pole_polar(p: np.ndarray, horizon: HorizonLine, fx_eq_fy: bool = False):
    """Focal lengths from l ∝ W p, componentwise.

    fx^2 = (p1 l3)/(l1 p3) and fy^2 = (p2 l3)/(l2 p3); with fx_eq_fy the two
    ratios are averaged. Both squares must be positive and finite.
    """
    p = np.asarray(p, dtype=float)
    line = horizon.l if isinstance(horizon, HorizonLine) else np.asarray(horizon, dtype=float)
    if abs(p[2]) <= INFINITY_RATIO * np.linalg.norm(p):
        raise EstimationFailure(
            "vanishing_point_at_infinity", "fronto-parallel degeneracy"
        )
    if abs(line[2]) <= INFINITY_RATIO * math.hypot(line[0], line[1]):
        raise EstimationFailure("degenerate_horizon", "horizon passes through the principal point")
    with np.errstate(divide="ignore", invalid="ignore"):
        rx = (p[0] * line[2]) / (line[0] * p[2])
        ry = (p[1] * line[2]) / (line[1] * p[2])
    if fx_eq_fy:
        rx = ry = 0.5 * (rx + ry)
    if not (math.isfinite(rx) and math.isfinite(ry)) or rx <= 0 or ry <= 0:
        raise EstimationFailure("focal_nonpositive", "pole-polar ratios not positive")
    return float(math.sqrt(rx)), float(math.sqrt(ry))


def baseline_calibrate(observations, h, fx_eq_fy: bool = False, backend=None) -> CalibrationResult:
    """Two-stage calibration sharing the direct solver's downstream steps."""
    top, bot = observation_arrays(observations)
    return baseline_from_arrays(top, bot, h, fx_eq_fy=fx_eq_fy, backend=backend)


def baseline_from_arrays(
    top: np.ndarray, bot: np.ndarray, h, fx_eq_fy: bool = False, backend=None
) -> CalibrationResult:
    which = _backend.resolve_backend(backend)
    top = np.ascontiguousarray(top, dtype=float)
    bot = np.ascontiguousarray(bot, dtype=float)
    height = as_height(h)
    if which == "native":
        out = _backend.native_module().baseline_calibrate(top, bot, height, fx_eq_fy)
    else:
        out = _baseline_arrays_python(top, bot, height, fx_eq_fy)
    _backend.raise_for_status(out[0])
    return _result_from_tuple(out)


_FAIL = (None,) * 12


def _baseline_arrays_python(top, bot, h, fx_eq_fy):
    """Numpy twin of the compiled baseline kernel."""
    n = top.shape[0]
    if n < 3:
        return (1,) + _FAIL
    top_h = _homogeneous(top)
    bot_h = _homogeneous(bot)
    try:
        p, sv = _vanishing_point_from_arrays(top_h, bot_h)
        line, horizon_rms = _horizon_from_arrays(top_h, bot_h)
        line = line / math.hypot(line[0], line[1])
        fx, fy = focal_from_pole_polar(p, HorizonLine(l=line), fx_eq_fy=fx_eq_fy)
    except EstimationFailure as exc:
        codes = {
            "insufficient_observations": 1,
            "rank_deficient": 2,
            "ill_conditioned": 3,
            "focal_nonpositive": 4,
            "degenerate_segment": 6,
            "vanishing_point_at_infinity": 7,
            "degenerate_horizon": 8,
        }
        return (codes.get(exc.kind, 2),) + _FAIL

    lam_t, lam_b, ok = _depths_from_arrays(top_h, bot_h, p, h)
    if not ok:
        return (6,) + _FAIL
    mu_abs = math.sqrt(p[0] ** 2 / fx**2 + p[1] ** 2 / fy**2 + p[2] ** 2)
    all_lams = np.concatenate([lam_t, lam_b])
    if np.all(all_lams > 0):
        mu = mu_abs
    elif np.all(all_lams < 0):
        mu = -mu_abs
    else:
        return (5,) + _FAIL

    normal = np.array([p[0] / fx, p[1] / fy, p[2]]) / mu
    normal /= np.linalg.norm(normal)
    lam_t = lam_t / mu
    lam_b = lam_b / mu
    x_t = lam_t[:, None] * _back_directions(top, fx, fy)
    x_b = lam_b[:, None] * _back_directions(bot, fx, fy)
    rho = 0.5 * h - float(normal @ (0.5 * (x_b.mean(axis=0) + x_t.mean(axis=0))))
    if rho <= 0:
        return (5,) + _FAIL
    return (0, fx, fy, normal, rho, mu, lam_t, lam_b, x_b, x_t, p, sv, horizon_rms)
