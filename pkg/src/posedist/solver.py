"""Direct linear auto-calibration from standing-person keypoints.

Given >= 2 people (>= 3 when fx != fy), each observed as a principal-centered
ankle-center / shoulder-center pixel pair, the solver recovers the focal
lengths, the ground plane, and metric 3-D ankle/shoulder points in one pass:

1. every person constrains the vertical vanishing point v through the cross
   product of its homogeneous endpoints (rows of A, null vector by SVD);
2. per-person depths follow from the projection difference equation, up to
   one global scale shared with v;
3. the requirement that all ankle centers span a plane orthogonal to the
   vertical direction is linear in (1/fx^2, 1/fy^2) and fixes the focals;
4. the scale is recovered from the unit norm of the plane normal, with its
   sign fixed by cheirality (all depths in front of the camera);
5. back-projection yields metric points and the plane offset.

All functions are pure; observations are immutable. ``calibrate_batch``
dispatches to the compiled kernel when available (see posedist._backend).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import (
    CENTERED,
    CameraIntrinsics,
    EstimationFailure,
    GroundPlane,
    Reconstruction,
    as_height,
)

__all__ = [
    "VanishingSolution",
    "ScaledDepths",
    "CalibrationResult",
    "observation_arrays",
    "build_vanishing_system",
    "solve_vanishing_direction",
    "solve_scaled_depths",
    "build_focal_system",
    "solve_focal",
    "recover_scale",
    "reconstruct",
    "plane_offset",
    "calibrate_batch",
    "pairwise_distances",
]

# Smallest-to-largest singular value ratio below which a system is treated
# as rank-deficient (machine-epsilon-scaled guard).
RANK_RATIO_MIN = 1e-12


@dataclass(frozen=True)
class VanishingSolution:
    """Unit-norm scaled vertical vanishing point and its SVD residual."""

    v_tilde: np.ndarray
    smallest_singular_value: float


@dataclass(frozen=True)
class ScaledDepths:
    """Per-person depths sharing one unknown global scale with v_tilde."""

    lambda_t: np.ndarray
    lambda_b: np.ndarray


@dataclass(frozen=True)
class CalibrationResult:
    """Everything one calibration run produces."""

    intrinsics: CameraIntrinsics
    plane: GroundPlane
    reconstruction: Reconstruction
    mu: float
    residuals: dict


def observation_arrays(observations):
    """Stack centered observations into (N, 2) shoulder and ankle arrays."""
    if not observations:
        raise ValueError("no observations")
    top = np.empty((len(observations), 2), dtype=float)
    bot = np.empty((len(observations), 2), dtype=float)
    for i, obs in enumerate(observations):
        if obs.frame != CENTERED:
            raise ValueError("observations must be principal-centered")
        top[i] = (obs.shoulder_center.u, obs.shoulder_center.v)
        bot[i] = (obs.ankle_center.u, obs.ankle_center.v)
    return top, bot


def _homogeneous(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Deterministic sign: first nonzero of (v3, v2, v1) made positive."""
    for idx in (2, 1, 0):
        if v[idx] != 0.0:
            return -v if v[idx] < 0 else v
    return v


def build_vanishing_system(observations) -> np.ndarray:
    """Row i is the cross product of person i's homogeneous endpoints."""
    if len(observations) < 2:
        raise EstimationFailure(
            "insufficient_observations", "at least two people are required"
        )
    top, bot = observation_arrays(observations)
    return np.cross(_homogeneous(top), _homogeneous(bot))


def solve_vanishing_direction(a: np.ndarray) -> VanishingSolution:
    """Unit null direction of A = smallest right singular vector."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] < 2:
        raise ValueError("expected an (N >= 2) x 3 constraint matrix")
    _, sigma, vt = np.linalg.svd(a)
    if sigma[1] <= RANK_RATIO_MIN * sigma[0]:
        raise EstimationFailure("rank_deficient", "degenerate person configuration")
    v = _canonical_sign(vt[-1])
    # two rows span at most rank 2, so the third singular value is exactly 0
    sv = float(sigma[2]) if sigma.shape[0] > 2 else 0.0
    return VanishingSolution(v_tilde=v, smallest_singular_value=sv)


def solve_scaled_depths(observations, v_tilde: np.ndarray, h) -> ScaledDepths:
    """Least-squares depths of the 3-equation, 2-unknown per-person systems.

    Solves [x_T | -x_B] (lam_T, lam_B)^T = h * v_tilde for every person;
    the recovered depths carry the same unknown scale as ``v_tilde``.
    """
    top, bot = observation_arrays(observations)
    h = as_height(h)
    lam_t, lam_b, ok = _depths_from_arrays(
        _homogeneous(top), _homogeneous(bot), np.asarray(v_tilde, dtype=float), h
    )
    if not ok:
        raise EstimationFailure("degenerate_segment", "coincident top and bottom point")
    return ScaledDepths(lambda_t=lam_t, lambda_b=lam_b)


def _depths_from_arrays(top_h, bot_h, v, h):
    # 2x2 normal equations, vectorized over persons. Columns are the
    # homogeneous endpoints; near-parallel columns mean a degenerate segment.
    rhs = h * v
    aa = np.einsum("ij,ij->i", top_h, top_h)
    bb = np.einsum("ij,ij->i", bot_h, bot_h)
    ab = -np.einsum("ij,ij->i", top_h, bot_h)
    ra = top_h @ rhs
    rb = -(bot_h @ rhs)
    det = aa * bb - ab * ab
    if np.any(det <= RANK_RATIO_MIN * aa * bb):
        return None, None, False
    lam_t = (bb * ra - ab * rb) / det
    lam_b = (aa * rb - ab * ra) / det
    return lam_t, lam_b, True


def build_focal_system(v_tilde: np.ndarray, observations, depths: ScaledDepths):
    """One row per person pair of the system B (1/fx^2, 1/fy^2)^T = y."""
    _, bot = observation_arrays(observations)
    return _focal_system_from_arrays(
        np.asarray(v_tilde, dtype=float), _homogeneous(bot), depths.lambda_b
    )


def _focal_system_from_arrays(v, bot_h, lam_b):
    n = bot_h.shape[0]
    if n < 2:
        raise EstimationFailure("insufficient_observations", "need >= 2 people")
    i_idx, j_idx = np.triu_indices(n, k=1)
    scaled = lam_b[:, None] * bot_h
    rows = v[None, :] * (scaled[i_idx] - scaled[j_idx])
    return rows[:, :2], -rows[:, 2]


def solve_focal(b: np.ndarray, y: np.ndarray, fx_eq_fy: bool = False):
    """Positive least-squares focal lengths from the pairwise system."""
    b = np.asarray(b, dtype=float)
    y = np.asarray(y, dtype=float)
    if fx_eq_fy:
        col = b[:, 0] + b[:, 1]
        denom = float(col @ col)
        scale = float(np.max(np.abs(col))) if col.size else 0.0
        if denom <= (RANK_RATIO_MIN * scale) ** 2 or scale == 0.0:
            raise EstimationFailure("ill_conditioned", "focal system has no signal")
        s = float(col @ y) / denom
        solution = np.array([s, s])
    else:
        if b.shape[0] < 2:
            raise EstimationFailure(
                "insufficient_observations", "need >= 3 people when fx != fy"
            )
        u, sigma, vt = np.linalg.svd(b, full_matrices=False)
        if sigma[1] <= RANK_RATIO_MIN * sigma[0]:
            raise EstimationFailure("ill_conditioned", "focal system is rank deficient")
        solution = vt.T @ ((u.T @ y) / sigma)
    if solution[0] <= 0 or solution[1] <= 0:
        raise EstimationFailure("focal_nonpositive", "no positive focal solution")
    return float(1.0 / math.sqrt(solution[0])), float(1.0 / math.sqrt(solution[1]))


def recover_scale(v_tilde: np.ndarray, w: np.ndarray, depths: ScaledDepths) -> float:
    """Signed scale between v_tilde and the true vertical vanishing point.

    |mu| = sqrt(v^T W v) makes N = K^-1 v / mu unit; the sign is chosen so
    that all rescaled depths are positive (cheirality).
    """
    v = np.asarray(v_tilde, dtype=float)
    mu_abs = math.sqrt(float(v @ np.asarray(w, dtype=float) @ v))
    lams = np.concatenate([depths.lambda_t, depths.lambda_b])
    if np.all(lams > 0):
        return mu_abs
    if np.all(lams < 0):
        return -mu_abs
    raise EstimationFailure("cheirality", "mixed-sign depths under both signs of mu")


def reconstruct(intrinsics: CameraIntrinsics, depths: ScaledDepths, observations) -> Reconstruction:
    """Back-project metric depths through K^-1 (depths already unscaled)."""
    top, bot = observation_arrays(observations)
    lam_t = np.asarray(depths.lambda_t, dtype=float)
    lam_b = np.asarray(depths.lambda_b, dtype=float)
    if np.any(lam_t <= 0) or np.any(lam_b <= 0):
        raise ValueError("reconstruction requires positive depths")
    x_t = lam_t[:, None] * _back_directions(top, intrinsics.fx, intrinsics.fy)
    x_b = lam_b[:, None] * _back_directions(bot, intrinsics.fx, intrinsics.fy)
    return Reconstruction(lambda_b=lam_b, lambda_t=lam_t, x_b=x_b, x_t=x_t)


def _back_directions(points, fx, fy):
    d = np.empty((points.shape[0], 3))
    d[:, 0] = points[:, 0] / fx
    d[:, 1] = points[:, 1] / fy
    d[:, 2] = 1.0
    return d


def plane_offset(normal: np.ndarray, reconstruction: Reconstruction, h) -> float:
    """rho = h/2 - N^T (mean ankle + mean shoulder) / 2."""
    if len(reconstruction) == 0:
        raise ValueError("empty reconstruction")
    n = np.asarray(normal, dtype=float)
    centroid = 0.5 * (reconstruction.x_b.mean(axis=0) + reconstruction.x_t.mean(axis=0))
    return float(0.5 * as_height(h) - n @ centroid)


def pairwise_distances(reconstruction: Reconstruction) -> np.ndarray:
    """Symmetric matrix of ankle-center distances in meters."""
    xb = reconstruction.x_b
    diff = xb[:, None, :] - xb[None, :, :]
    return np.linalg.norm(diff, axis=2)


def calibrate_batch(observations, h, fx_eq_fy: bool = False, backend=None) -> CalibrationResult:
    """Full pipeline over one batch of principal-centered observations."""
    top, bot = observation_arrays(observations)
    return calibrate_from_arrays(top, bot, h, fx_eq_fy=fx_eq_fy, backend=backend)


def calibrate_from_arrays(
    top: np.ndarray, bot: np.ndarray, h, fx_eq_fy: bool = False, backend=None
) -> CalibrationResult:
    """Array-level entry point shared by the sim and RANSAC hot paths.

    Measurements are rescaled to RMS radius 1 before solving (standard
    coordinate normalization; it balances the least-squares row weights and
    markedly improves noisy-focal accuracy), then the focal lengths and the
    vanishing point are mapped back to pixel units.
    """
    top = np.ascontiguousarray(top, dtype=float)
    bot = np.ascontiguousarray(bot, dtype=float)
    s = working_scale(top, bot)
    out = _dispatch(top * s, bot * s, as_height(h), fx_eq_fy, backend)
    _backend.raise_for_status(out[0])
    return _result_from_tuple(_unscale_tuple(out, s))


def working_scale(top: np.ndarray, bot: np.ndarray) -> float:
    """1 / RMS radius of the centered measurement cloud."""
    r2 = float(np.einsum("ij,ij->", top, top) + np.einsum("ij,ij->", bot, bot))
    count = top.shape[0] + bot.shape[0]
    if r2 <= 0 or count == 0:
        return 1.0
    return math.sqrt(count / r2)


def _unscale_tuple(out, s):
    if s == 1.0:
        return out
    (status, fx, fy, normal, rho, mu, lam_t, lam_b, x_b, x_t, v, sv, focal_resid) = out
    v = np.array([v[0] / s, v[1] / s, v[2]])
    v = _canonical_sign(v / np.linalg.norm(v))
    return (status, fx / s, fy / s, normal, rho, mu, lam_t, lam_b, x_b, x_t, v, sv, focal_resid)


def _dispatch(top, bot, h, fx_eq_fy, backend):
    which = _backend.resolve_backend(backend)
    if which == "native":
        return _backend.native_module().direct_calibrate(top, bot, h, fx_eq_fy)
    return _calibrate_arrays_python(top, bot, h, fx_eq_fy)


def _result_from_tuple(out) -> CalibrationResult:
    (_, fx, fy, normal, rho, mu, lam_t, lam_b, x_b, x_t, v, sv, focal_resid) = out
    # width/height are unknown at the solver level; the centered frame only
    # needs the focal lengths, so record a nominal 1x1 grid.
    intrinsics = CameraIntrinsics(fx=fx, fy=fy, cx=0.0, cy=0.0, width=1, height=1)
    plane = GroundPlane(normal=np.asarray(normal), rho=rho)
    recon = Reconstruction(
        lambda_b=np.asarray(lam_b),
        lambda_t=np.asarray(lam_t),
        x_b=np.asarray(x_b),
        x_t=np.asarray(x_t),
    )
    return CalibrationResult(
        intrinsics=intrinsics,
        plane=plane,
        reconstruction=recon,
        mu=mu,
        residuals={
            "vanishing": sv,
            "focal": focal_resid,
            "v_tilde": np.asarray(v),
        },
    )


_FAIL = (None,) * 12


def _calibrate_arrays_python(top, bot, h, fx_eq_fy):
    """Numpy twin of the compiled kernel; same status codes, same outputs."""
    n = top.shape[0]
    if n < 2 or (n < 3 and not fx_eq_fy):
        return (1,) + _FAIL
    top_h = _homogeneous(top)
    bot_h = _homogeneous(bot)
    a = np.cross(top_h, bot_h)
    _, sigma, vt = np.linalg.svd(a)
    if sigma[1] <= RANK_RATIO_MIN * sigma[0]:
        return (2,) + _FAIL
    v = _canonical_sign(vt[-1])
    sv = float(sigma[2]) if sigma.shape[0] > 2 else 0.0

    lam_t, lam_b, ok = _depths_from_arrays(top_h, bot_h, v, h)
    if not ok:
        return (6,) + _FAIL

    b_mat, y = _focal_system_from_arrays(v, bot_h, lam_b)
    try:
        fx, fy = solve_focal(b_mat, y, fx_eq_fy=fx_eq_fy)
    except EstimationFailure as exc:
        return (3 if exc.kind == "ill_conditioned" else 4,) + _FAIL
    s = np.array([1.0 / fx**2, 1.0 / fy**2])
    focal_resid = float(np.linalg.norm(b_mat @ s - y))

    mu_abs = math.sqrt(v[0] ** 2 / fx**2 + v[1] ** 2 / fy**2 + v[2] ** 2)
    all_lams = np.concatenate([lam_t, lam_b])
    if np.all(all_lams > 0):
        mu = mu_abs
    elif np.all(all_lams < 0):
        mu = -mu_abs
    else:
        return (5,) + _FAIL

    normal = np.array([v[0] / fx, v[1] / fy, v[2]]) / mu
    normal /= np.linalg.norm(normal)
    lam_t = lam_t / mu
    lam_b = lam_b / mu
    x_t = lam_t[:, None] * _back_directions(top, fx, fy)
    x_b = lam_b[:, None] * _back_directions(bot, fx, fy)
    rho = 0.5 * h - float(normal @ (0.5 * (x_b.mean(axis=0) + x_t.mean(axis=0))))
    if rho <= 0:
        # cannot happen when cheirality held and people stand below the
        # camera horizon; kept as a defensive failure rather than a crash
        return (5,) + _FAIL
    return (0, fx, fy, normal, rho, mu, lam_t, lam_b, x_b, x_t, v, sv, focal_resid)
