"""Joint radial-distortion + calibration solver (1-parameter division model).

Measured points x' relate to ideal pinhole points x through
x = x' / (1 + k r^2), r = ||x'|| in principal-centered pixels. Substituting
the homogeneous identity x_bar = (x_bar' + k z) / (1 + k r^2), z = (0, 0, r^2)
into the per-person projection-difference equation turns the whole batch into
one linear pencil (A' + k C) X' = 0 over the stacked unknowns
X' = [lam'_T1, lam'_B1, ..., lam'_TN, lam'_BN, v], which becomes a
generalized eigenproblem (A'^T A') X' = k (-A'^T C) X' after projection.

The eigenpair that encodes the physical solution is picked by filtering:
real eigenvalue, plausible |k| relative to the measured radii, uniform-sign
scaled depths (cheirality-resolvable), then smallest pencil residual. The
recovered k undistorts the measurements, and the pinhole pipeline runs on
the corrected points with the jointly estimated vertical direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    CENTERED,
    CameraIntrinsics,
    EstimationFailure,
    GroundPlane,
    PixelPoint,
    Reconstruction,
    as_height,
)
from .solver import (
    CalibrationResult,
    _back_directions,
    _canonical_sign,
    _depths_from_arrays,
    _focal_system_from_arrays,
    _homogeneous,
    observation_arrays,
    solve_focal,
)

__all__ = [
    "DivisionModel",
    "DistortionSystem",
    "undistort_division",
    "distort_division",
    "build_distortion_system",
    "solve_distortion",
    "distorted_calibrate",
]

# |k| * r_max^2 above this is rejected as implausible (a valid division
# model keeps 1 + k r^2 well away from 0 over the measured radii).
MAX_ABS_K_TIMES_RMAX2 = 4.0

# Larger imaginary parts than this (relative) disqualify an eigenvalue.
REAL_EIG_TOL = 1e-8


@dataclass(frozen=True)
class DivisionModel:
    """Division-model distortion parameter, 1/pixel^2."""

    k: float

    def valid_for_radius(self, r: float) -> bool:
        return 1.0 + self.k * r * r > 0.0


@dataclass(frozen=True)
class DistortionSystem:
    """The pencil matrices and the unknown layout they act on."""

    a_prime: np.ndarray  # (3N, 2N+3)
    c: np.ndarray  # (3N, 2N+3)
    person_count: int


def undistort_division(point, k: float):
    """x = x' / (1 + k r^2). Accepts a centered PixelPoint or an (N, 2) array."""
    if isinstance(point, PixelPoint):
        if point.frame != CENTERED:
            raise ValueError("undistortion expects principal-centered points")
        arr = undistort_division(np.array([[point.u, point.v]]), k)
        return PixelPoint(float(arr[0, 0]), float(arr[0, 1]), CENTERED)
    pts = np.asarray(point, dtype=float)
    denom = 1.0 + k * np.einsum("ij,ij->i", pts, pts)
    if np.any(denom <= 0):
        raise ValueError("point outside the valid undistortion domain (1 + k r^2 <= 0)")
    return pts / denom[:, None]


def distort_division(point, k: float):
    """Exact inverse of :func:`undistort_division`, for synthesizing data.

    Solves k r^2 t^2 - t + 1 = 0 for the radial stretch t with t -> 1 as
    k -> 0; requires 4 k r^2 < 1 (ideal radius within the model's range).
    """
    if isinstance(point, PixelPoint):
        if point.frame != CENTERED:
            raise ValueError("distortion expects principal-centered points")
        arr = distort_division(np.array([[point.u, point.v]]), k)
        return PixelPoint(float(arr[0, 0]), float(arr[0, 1]), CENTERED)
    pts = np.asarray(point, dtype=float)
    if k == 0.0:
        return pts.copy()
    r2 = np.einsum("ij,ij->i", pts, pts)
    disc = 1.0 - 4.0 * k * r2
    if np.any(disc < 0):
        raise ValueError("ideal point outside the division model's range (4 k r^2 >= 1)")
    # conjugate form of (1 - sqrt(disc)) / (2 k r^2): stable as r -> 0
    t = 2.0 / (1.0 + np.sqrt(disc))
    return pts * t[:, None]


def build_distortion_system(observations, h) -> DistortionSystem:
    """Stack the per-person blocks of A' and C (pixel units)."""
    if len(observations) < 2:
        raise EstimationFailure("insufficient_observations", "need >= 2 people")
    top, bot = observation_arrays(observations)
    return _build_system_arrays(top, bot, as_height(h))


def _build_system_arrays(top, bot, h) -> DistortionSystem:
    n = top.shape[0]
    cols = 2 * n + 3
    a_prime = np.zeros((3 * n, cols))
    c = np.zeros((3 * n, cols))
    top_h = _homogeneous(top)
    bot_h = _homogeneous(bot)
    r2_top = np.einsum("ij,ij->i", top, top)
    r2_bot = np.einsum("ij,ij->i", bot, bot)
    for i in range(n):
        rows = slice(3 * i, 3 * i + 3)
        a_prime[rows, 2 * i] = top_h[i]
        a_prime[rows, 2 * i + 1] = -bot_h[i]
        a_prime[rows, 2 * n : 2 * n + 3] = -h * np.eye(3)
        c[3 * i + 2, 2 * i] = r2_top[i]
        c[3 * i + 2, 2 * i + 1] = -r2_bot[i]
    return DistortionSystem(a_prime=a_prime, c=c, person_count=n)


def solve_distortion(system: DistortionSystem):
    """Pick the physical eigenpair of (A'^T A') X = k (-A'^T C) X.

    Returns (DivisionModel, v, lam_prime) with v the scaled vertical
    vanishing point (last 3 entries) and lam_prime the 2N scaled depths,
    flipped positive. Internally the pencil is rescaled so pixel radii are
    O(1), which conditions the QZ solve; k and v are mapped back.
    """
    n = system.person_count
    a_prime, c = system.a_prime, system.c
    r2_max = float(np.abs(c).max())
    if r2_max <= 0:
        raise EstimationFailure("no_valid_eigenpair", "all measurements at the principal point")

    # Rescale so pixels are measured in units of r_max: scale the first two
    # rows of each block by s and the two leading v columns by 1/s (so the
    # -h I3 block is restored), and the z entries by s^2. This reproduces the
    # system built from s-scaled points; the eigenvalue becomes k / s^2 and
    # the eigenvector carries v_n = (s v1, s v2, v3).
    s = 1.0 / math.sqrt(r2_max)
    row_scale = np.tile([s, s, 1.0], n)[:, None]
    a_scaled = a_prime * row_scale
    a_scaled[:, 2 * n] /= s
    a_scaled[:, 2 * n + 1] /= s
    c_scaled = c * (s * s)

    lhs = a_scaled.T @ a_scaled
    rhs = -(a_scaled.T @ c_scaled)
    eigvals, eigvecs = scipy.linalg.eig(lhs, rhs)

    candidates = []
    for idx in range(eigvals.shape[0]):
        ev = eigvals[idx]
        if not np.isfinite(ev.real) or not np.isfinite(ev.imag):
            continue
        if abs(ev.imag) > REAL_EIG_TOL * max(1.0, abs(ev.real)):
            continue
        candidates.append((float(ev.real), eigvecs[:, idx]))
    # The pencil is singular (both matrices rank-deficient), which lets QZ
    # destroy the k = 0 eigenpair on undistorted data; the null direction of
    # A' is that eigenpair, so always offer it and let the residual decide.
    candidates.append((0.0, np.linalg.svd(a_scaled)[2][-1].astype(complex)))

    best = None
    for k_scaled, raw_vec in candidates:
        if abs(k_scaled) > MAX_ABS_K_TIMES_RMAX2:  # r_max is 1 in scaled units
            continue
        anchor = raw_vec[int(np.argmax(np.abs(raw_vec)))]
        vec = (raw_vec * np.conj(anchor) / abs(anchor)).real
        norm = np.linalg.norm(vec)
        if norm == 0:
            continue
        vec = vec / norm
        lam = vec[: 2 * n]
        if np.all(lam > 0):
            pass
        elif np.all(lam < 0):
            vec = -vec
            lam = vec[: 2 * n]
        else:
            continue
        residual = float(np.linalg.norm((a_scaled + k_scaled * c_scaled) @ vec))
        if best is None or residual < best[0]:
            best = (residual, k_scaled, vec)
    if best is None:
        raise EstimationFailure("no_valid_eigenpair", "no eigenpair passed the filters")

    _, k_scaled, vec = best
    k = k_scaled * s * s
    v_scaled = vec[2 * n :]
    v = np.array([v_scaled[0] / s, v_scaled[1] / s, v_scaled[2]])
    lam_prime = vec[: 2 * n]
    return DivisionModel(k=k), v, lam_prime


def distorted_calibrate(observations, h, fx_eq_fy: bool = False):
    """Joint distortion + calibration over one observation batch."""
    if len(observations) < 3:
        raise EstimationFailure("insufficient_observations", "need >= 3 people")
    top, bot = observation_arrays(observations)
    return distorted_calibrate_arrays(top, bot, h, fx_eq_fy=fx_eq_fy)


def distorted_calibrate_arrays(top, bot, h, fx_eq_fy: bool = False):
    n = top.shape[0]
    if n < 3:
        raise EstimationFailure("insufficient_observations", "need >= 3 people")
    height = as_height(h)
    system = _build_system_arrays(top, bot, height)
    model, v, _ = solve_distortion(system)

    r2 = np.einsum("ij,ij->i", np.vstack([top, bot]), np.vstack([top, bot]))
    if np.any(1.0 + model.k * r2 <= 0):
        raise EstimationFailure(
            "distortion_domain", "recovered k leaves measurements outside the model domain"
        )
    top_u = undistort_division(top, model.k)
    bot_u = undistort_division(bot, model.k)

    v_unit = _canonical_sign(v / np.linalg.norm(v))
    top_h = _homogeneous(top_u)
    bot_h = _homogeneous(bot_u)
    lam_t, lam_b, ok = _depths_from_arrays(top_h, bot_h, v_unit, height)
    if not ok:
        raise EstimationFailure("degenerate_segment", "coincident undistorted endpoints")
    b_mat, y = _focal_system_from_arrays(v_unit, bot_h, lam_b)
    fx, fy = solve_focal(b_mat, y, fx_eq_fy=fx_eq_fy)

    mu_abs = math.sqrt(v_unit[0] ** 2 / fx**2 + v_unit[1] ** 2 / fy**2 + v_unit[2] ** 2)
    lams = np.concatenate([lam_t, lam_b])
    if np.all(lams > 0):
        mu = mu_abs
    elif np.all(lams < 0):
        mu = -mu_abs
    else:
        raise EstimationFailure("cheirality", "mixed-sign depths under both signs of mu")
    normal = np.array([v_unit[0] / fx, v_unit[1] / fy, v_unit[2]]) / mu
    normal /= np.linalg.norm(normal)
    lam_t = lam_t / mu
    lam_b = lam_b / mu
    if np.any(lam_t <= 0) or np.any(lam_b <= 0):
        raise EstimationFailure("cheirality", "non-positive depth after rescaling")
    x_t = lam_t[:, None] * _back_directions(top_u, fx, fy)
    x_b = lam_b[:, None] * _back_directions(bot_u, fx, fy)
    rho = 0.5 * height - float(normal @ (0.5 * (x_b.mean(axis=0) + x_t.mean(axis=0))))
    if rho <= 0:
        raise EstimationFailure("cheirality", "recovered plane behind the camera")

    # rebuild the pencil's null vector: depths rescaled to v_unit's gauge and
    # divided by the per-point distortion factors of the measured radii
    lam_prime_t = mu * lam_t / (1.0 + model.k * np.einsum("ij,ij->i", top, top))
    lam_prime_b = mu * lam_b / (1.0 + model.k * np.einsum("ij,ij->i", bot, bot))
    stacked = np.concatenate([np.ravel(np.column_stack([lam_prime_t, lam_prime_b])), v_unit])
    pencil_resid = float(
        np.linalg.norm((system.a_prime + model.k * system.c) @ stacked) / np.linalg.norm(stacked)
    )
    focal_resid = float(np.linalg.norm(b_mat @ np.array([1 / fx**2, 1 / fy**2]) - y))
    result = CalibrationResult(
        intrinsics=CameraIntrinsics(fx=fx, fy=fy, cx=0.0, cy=0.0, width=1, height=1),
        plane=GroundPlane(normal=normal, rho=rho),
        reconstruction=Reconstruction(lambda_b=lam_b, lambda_t=lam_t, x_b=x_b, x_t=x_t),
        mu=mu,
        # for this path the vanishing residual is the normalized pencil residual
        residuals={"vanishing": pencil_resid, "focal": focal_resid, "v_tilde": v_unit},
    )
    return result, model
