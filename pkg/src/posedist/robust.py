"""RANSAC wrapper around the direct solver.

Minimal samples (2 people when fx = fy is known, 3 otherwise) fit candidate
models; every observation is scored by predicting its shoulder point from
its ankle point through the candidate plane-plus-height model and measuring
the reprojection error in pixels. The largest consensus set wins (ties go
to the earliest iteration) and is refit in batch mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EstimationFailure, as_height
from .solver import CalibrationResult, calibrate_from_arrays, observation_arrays

__all__ = ["RansacConfig", "ransac_iterations", "ransac_calibrate"]


@dataclass(frozen=True)
class RansacConfig:
    confidence: float = 0.99
    inlier_ratio_prior: float = 0.1
    inlier_threshold_px: float = 5.0
    max_iterations_cap: int = 10000
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")
        if not (0.0 < self.inlier_ratio_prior < 1.0):
            raise ValueError("inlier_ratio_prior must lie in (0, 1)")
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier threshold must be positive")
        if self.max_iterations_cap < 1:
            raise ValueError("iteration cap must be >= 1")


def ransac_iterations(confidence: float, inlier_ratio: float, min_samples: int) -> int:
    """ceil(log(1 - confidence) / log(1 - inlier_ratio^min_samples))."""
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie in (0, 1)")
    if not (0.0 < inlier_ratio < 1.0):
        raise ValueError("inlier_ratio must lie in (0, 1)")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    miss = 1.0 - inlier_ratio**min_samples
    if miss <= 0.0:  # inlier_ratio indistinguishable from 1
        return 1
    return max(1, math.ceil(math.log(1.0 - confidence) / math.log(miss)))


def _shoulder_prediction_errors(result: CalibrationResult, top, bot, h) -> np.ndarray:
    """Pixel error between measured and model-predicted shoulder points.

    The ankle ray is intersected with the candidate plane, lifted by h along
    the normal, and reprojected; observations the model cannot explain
    (plane behind the ankle ray, shoulder behind the camera) score inf.
    """
    fx, fy = result.intrinsics.fx, result.intrinsics.fy
    n_vec = result.plane.normal
    rho = result.plane.rho
    rays = np.column_stack([bot[:, 0] / fx, bot[:, 1] / fy, np.ones(len(bot))])
    denom = rays @ n_vec
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = -rho / denom
    shoulders = lam[:, None] * rays + h * n_vec
    z = shoulders[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pu = fx * shoulders[:, 0] / z
        pv = fy * shoulders[:, 1] / z
    err = np.hypot(pu - top[:, 0], pv - top[:, 1])
    err[~np.isfinite(err)] = np.inf
    err[(lam <= 0) | (z <= 0)] = np.inf
    return err


def ransac_calibrate(
    observations, h, config: RansacConfig, fx_eq_fy: bool = False, backend=None
):
    """Robust calibration; returns (CalibrationResult, inlier mask).

    Deterministic for a given config.rng_seed: same inputs and seed give
    bit-identical results.
    """
    height = as_height(h)
    min_samples = 2 if fx_eq_fy else 3
    n = len(observations)
    if n <= min_samples:
        raise EstimationFailure(
            "insufficient_observations", f"RANSAC needs more than {min_samples} people"
        )
    top, bot = observation_arrays(observations)
    iterations = min(
        config.max_iterations_cap,
        ransac_iterations(config.confidence, config.inlier_ratio_prior, min_samples),
    )
    rng = np.random.Generator(np.random.PCG64(config.rng_seed))

    best_mask = None
    best_count = -1
    for _ in range(iterations):
        idx = rng.choice(n, size=min_samples, replace=False)
        try:
            candidate = calibrate_from_arrays(
                top[idx], bot[idx], height, fx_eq_fy=fx_eq_fy, backend=backend
            )
        except EstimationFailure:
            continue
        errors = _shoulder_prediction_errors(candidate, top, bot, height)
        mask = errors <= config.inlier_threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None:
        raise EstimationFailure("no_consensus", "no candidate model ever succeeded")
    if best_count < min_samples + 1:
        raise EstimationFailure("no_consensus", "largest inlier set too small")
    final = calibrate_from_arrays(
        top[best_mask], bot[best_mask], height, fx_eq_fy=fx_eq_fy, backend=backend
    )
    return final, best_mask
