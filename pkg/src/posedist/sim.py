"""Scene synthesis and Monte Carlo sensitivity studies.

Scenes satisfy the three solver assumptions by construction: people stand
upright on one plane, share (or sample) a known ankle-shoulder height, and
project through an ideal pinhole camera. Measurements can then be corrupted
by polynomial lens distortion and i.i.d. Gaussian pixel noise before being
handed to the solvers. Both solvers always see the same corrupted
measurement set within a trial.

The scene distribution itself (camera pose ranges, person placement) is not
prescribed by the studies this reproduces; the defaults encode a plausible
surveillance geometry: camera 2-10 m high, tilted 10-60 deg down with ±25-65
deg of roll (keeping both focal lengths observable), people back-projected
from uniformly drawn image positions onto the plane within a 2-40 m depth
window, redrawn when nearly collinear in the image.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import baseline as baseline_mod
from . import distortion as distortion_mod
from . import solver as solver_mod
from .core import (
    CENTERED,
    CameraIntrinsics,
    EstimationFailure,
    GroundPlane,
    KeypointFrame,
    PersonObservation,
    PixelPoint,
    TrialStats,
    mean_reconstruction_error,
    normal_error,
)

__all__ = [
    "SceneConfig",
    "GroundTruthScene",
    "make_camera",
    "sample_scene",
    "project_scene",
    "run_trial",
    "run_monte_carlo",
    "study_noise_free",
    "study_noise",
    "study_height",
    "study_count",
    "study_distortion",
    "write_study_csv",
    "scene_to_keypoint_frames",
    "STUDY_NAMES",
]

RESOLUTIONS = ((640, 480), (1280, 720), (1920, 1080))
FOVS_DEG = (45.0, 60.0, 90.0, 120.0)
NOISE_LEVELS_PX = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
HEIGHT_STDS_M = (0.05, 0.1, 0.15, 0.2, 0.25)
PERSON_COUNTS = (5, 10, 20, 50, 100)
# Appendix-style (k1, k2) blocks, stated in normalized image coordinates
# (OpenCV convention); converted to pixel units via the scene's fy.
DISTORTION_BLOCKS = (
    (1e-3, 0.0),
    (-1e-3, 0.0),
    (1e-4, 0.0),
    (-1e-4, 0.0),
    (1e-4, 1e-5),
    (-1e-4, 1e-5),
)

STUDY_NAMES = ("noisefree", "noise", "height", "count", "distortion")

_SAMPLE_CAP_PER_PERSON = 600
_CAMERA_DRAW_CAP = 200


@dataclass(frozen=True)
class SceneConfig:
    """Everything one trial's scene and measurement synthesis depends on."""

    resolution: tuple = (1920, 1080)
    fov_deg: float = 90.0
    person_count: int = 3
    noise_std: float = 0.0
    height_mean: float = 1.7
    height_std: float = 0.0
    height_range: tuple = (1.5, 1.9)
    distortion: tuple | None = None  # (k1 per px^2, k2 per px^4), pixel units
    camera_height_range: tuple = (2.0, 10.0)
    tilt_range_deg: tuple = (10.0, 60.0)
    roll_mag_range_deg: tuple = (25.0, 65.0)
    depth_range_m: tuple = (2.0, 40.0)
    # Minimum ratio of the ankle-pixel scatter's singular values; placements
    # with the people nearly collinear in the image are redrawn.
    spread_ratio_min: float = 0.15
    rng_seed: int = 0

    def __post_init__(self):
        if self.person_count < 2:
            raise ValueError("person_count must be >= 2")
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError("fov_deg must lie in (0, 180)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        lo, hi = self.height_range
        if not (lo <= self.height_mean <= hi):
            raise ValueError("height_range must contain height_mean")
        if self.height_std < 0:
            raise ValueError("height_std must be >= 0")


@dataclass(frozen=True)
class GroundTruthScene:
    intrinsics: CameraIntrinsics
    plane: GroundPlane
    x_b: np.ndarray  # (N, 3) ankle centers, camera frame
    x_t: np.ndarray  # (N, 3) shoulder centers
    heights: np.ndarray  # (N,)


def make_camera(resolution, fov_deg: float) -> CameraIntrinsics:
    """Intrinsics from a vertical FOV: fy = (H/2)/tan(fov/2), fx = (W/H)*fy."""
    w, h = int(resolution[0]), int(resolution[1])
    if not (1.0 <= fov_deg < 180.0):
        raise ValueError("fov_deg must lie in [1, 180)")
    fy = (h / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    fx = (w / h) * fy
    return CameraIntrinsics(fx=fx, fy=fy, cx=w / 2.0, cy=h / 2.0, width=w, height=h)


def _plane_normal(tilt_rad: float, roll_rad: float) -> np.ndarray:
    """World-up in camera coordinates for a camera tilted down then rolled."""
    n = np.array([0.0, -math.cos(tilt_rad), -math.sin(tilt_rad)])
    c, s = math.cos(roll_rad), math.sin(roll_rad)
    return np.array([c * n[0] - s * n[1], s * n[0] + c * n[1], n[2]])


def _sample_heights(config: SceneConfig, rng) -> np.ndarray:
    if config.height_std == 0:
        return np.full(config.person_count, config.height_mean)
    lo, hi = config.height_range
    out = np.empty(config.person_count)
    filled = 0
    while filled < config.person_count:
        draw = rng.normal(config.height_mean, config.height_std, size=4 * config.person_count)
        keep = draw[(draw >= lo) & (draw <= hi)]
        take = min(keep.size, config.person_count - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def sample_scene(config: SceneConfig, rng) -> GroundTruthScene:
    """Draw one camera + plane + person layout satisfying the assumptions.

    Camera draws whose visible ground region cannot host the requested
    placement (e.g. a high camera with a narrow FOV whose whole ground view
    lies beyond the depth window) are discarded and redrawn; placements with
    near-collinear ankle pixels are redrawn under the same camera.
    """
    intr = make_camera(config.resolution, config.fov_deg)
    for _ in range(_CAMERA_DRAW_CAP):
        rho = rng.uniform(*config.camera_height_range)
        tilt = math.radians(rng.uniform(*config.tilt_range_deg))
        roll = math.radians(rng.uniform(*config.roll_mag_range_deg))
        if rng.random() < 0.5:
            roll = -roll
        normal = _plane_normal(tilt, roll)
        heights = _sample_heights(config, rng)
        budget = _SAMPLE_CAP_PER_PERSON * config.person_count
        while budget > 0:
            placed, budget = _place_people(config, rng, intr, normal, rho, heights, budget)
            if placed is None:
                break
            x_b, x_t, ankle_px = placed
            if config.person_count >= 3:  # two points are always collinear
                spread = np.linalg.svd(ankle_px - ankle_px.mean(axis=0), compute_uv=False)
                if spread[1] <= config.spread_ratio_min * spread[0]:
                    continue
            plane = GroundPlane(normal=normal, rho=float(rho))
            return GroundTruthScene(
                intrinsics=intr, plane=plane, x_b=x_b, x_t=x_t, heights=heights
            )
    raise ValueError("scene sampling retry cap exceeded (pathological config)")


def _place_people(config, rng, intr, normal, rho, heights, budget):
    d_lo, d_hi = config.depth_range_m
    n = config.person_count
    x_b = np.empty((n, 3))
    x_t = np.empty((n, 3))
    ankle_px = np.empty((n, 2))
    placed = 0
    while placed < n:
        budget -= 1
        if budget < 0:
            return None, budget
        u = rng.uniform(0.0, intr.width)
        v = rng.uniform(0.0, intr.height)
        ray = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
        denom = float(normal @ ray)
        if denom >= 0.0:
            continue  # ray never reaches the plane in front of the camera
        lam = -rho / denom
        if not (d_lo <= lam <= d_hi):
            continue
        ankle = lam * ray
        shoulder = ankle + heights[placed] * normal
        if shoulder[2] <= 0:
            continue
        ut = intr.fx * shoulder[0] / shoulder[2] + intr.cx
        vt = intr.fy * shoulder[1] / shoulder[2] + intr.cy
        if not intr.contains(ut, vt):
            continue
        x_b[placed] = ankle
        x_t[placed] = shoulder
        ankle_px[placed] = (u, v)
        placed += 1
    return (x_b, x_t, ankle_px), budget


def _project_points(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Centered pinhole projections of camera-frame points (positive depth)."""
    z = points[:, 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points at non-positive depth")
    return np.column_stack([intr.fx * points[:, 0] / z, intr.fy * points[:, 1] / z])


def apply_polynomial_distortion(points: np.ndarray, k1: float, k2: float) -> np.ndarray:
    """Forward radial warp about the principal point, centered pixel units."""
    pts = np.asarray(points, dtype=float)
    r2 = np.einsum("ij,ij->i", pts, pts)
    return pts * (1.0 + k1 * r2 + k2 * r2**2)[:, None]


def project_scene_arrays(scene: GroundTruthScene, noise_std: float, distortion, rng):
    """Centered (top, bottom) measurement arrays for one scene."""
    top = _project_points(scene.x_t, scene.intrinsics)
    bot = _project_points(scene.x_b, scene.intrinsics)
    if distortion is not None:
        k1, k2 = distortion
        top = apply_polynomial_distortion(top, k1, k2)
        bot = apply_polynomial_distortion(bot, k1, k2)
    if noise_std > 0:
        top = top + rng.normal(0.0, noise_std, size=top.shape)
        bot = bot + rng.normal(0.0, noise_std, size=bot.shape)
    return top, bot


def project_scene(scene: GroundTruthScene, noise_std: float = 0.0, distortion=None, rng=None):
    """Typed variant of :func:`project_scene_arrays` (centered observations)."""
    if noise_std > 0 and rng is None:
        raise ValueError("noisy projection needs an rng")
    top, bot = project_scene_arrays(scene, noise_std, distortion, rng)
    return [
        PersonObservation(
            ankle_center=PixelPoint(b[0], b[1], CENTERED),
            shoulder_center=PixelPoint(t[0], t[1], CENTERED),
        )
        for t, b in zip(top, bot)
    ]


_METRIC_FIELDS = ("fx_err", "fy_err", "normal_err", "rho_err", "recon_err")


def _solver_metrics(result, scene: GroundTruthScene) -> dict:
    intr = scene.intrinsics
    est_points = np.vstack([result.reconstruction.x_b, result.reconstruction.x_t])
    true_points = np.vstack([scene.x_b, scene.x_t])
    return {
        "fx_err": abs(result.intrinsics.fx - intr.fx) / intr.fx * 100.0,
        "fy_err": abs(result.intrinsics.fy - intr.fy) / intr.fy * 100.0,
        "normal_err": normal_error(result.plane.normal, scene.plane.normal),
        "rho_err": abs(result.plane.rho - scene.plane.rho) / scene.plane.rho * 100.0,
        "recon_err": mean_reconstruction_error(est_points, true_points),
    }


def run_trial(config: SceneConfig, rng, solvers=("direct", "baseline"), height_prior=None) -> dict:
    """One scene, one measurement set, every requested solver.

    Returns {solver_name: metrics dict or None}; None marks an estimation
    failure. All solvers consume the identical measurement arrays.
    """
    scene = sample_scene(config, rng)
    top, bot = project_scene_arrays(scene, config.noise_std, config.distortion, rng)
    h = config.height_mean if height_prior is None else float(height_prior)
    out = {}
    for name in solvers:
        try:
            if name == "direct":
                result = solver_mod.calibrate_from_arrays(top, bot, h)
            elif name == "baseline":
                result = baseline_mod.baseline_from_arrays(top, bot, h)
            elif name == "distortion":
                result, _ = distortion_mod.distorted_calibrate_arrays(top, bot, h)
            else:
                raise ValueError(f"unknown solver {name!r}")
            out[name] = _solver_metrics(result, scene)
        except EstimationFailure:
            out[name] = None
    return out


def run_monte_carlo(config: SceneConfig, trials: int, solvers=("direct", "baseline")) -> dict:
    """Aggregate run_trial over seeded independent trials.

    Failed trials count toward failure_rate and are excluded from the error
    means. Identical (config, trials) inputs give bit-identical outputs.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sums = {name: np.zeros(len(_METRIC_FIELDS)) for name in solvers}
    successes = {name: 0 for name in solvers}
    for seq in np.random.SeedSequence(config.rng_seed).spawn(trials):
        rng = np.random.Generator(np.random.PCG64(seq))
        outcome = run_trial(config, rng, solvers=solvers)
        for name in solvers:
            metrics = outcome[name]
            if metrics is None:
                continue
            successes[name] += 1
            sums[name] += [metrics[f] for f in _METRIC_FIELDS]
    stats = {}
    for name in solvers:
        n_ok = successes[name]
        means = sums[name] / n_ok if n_ok else np.full(len(_METRIC_FIELDS), np.nan)
        stats[name] = TrialStats(
            fx_err=float(means[0]),
            fy_err=float(means[1]),
            normal_err=float(means[2]),
            rho_err=float(means[3]),
            recon_err=float(means[4]),
            failure_rate=100.0 * (trials - n_ok) / trials,
            trial_count=trials,
        )
    return stats


# ---------------------------------------------------------------------------
# Reproduction studies. Each returns CSV-ready row dicts, one per
# (configuration, solver) cell.
# ---------------------------------------------------------------------------


def _cell_seed(seed: int, index: int) -> int:
    return seed * 10007 + index


def _rows_for(config: SceneConfig, trials: int, study: str, solvers, extra=None) -> list:
    stats = run_monte_carlo(config, trials, solvers=solvers)
    rows = []
    for name in solvers:
        s = stats[name]
        row = {
            "study": study,
            "resolution": f"{config.resolution[0]}x{config.resolution[1]}",
            "fov_deg": config.fov_deg,
            "person_count": config.person_count,
            "noise_std_px": config.noise_std,
            "height_mean_m": config.height_mean,
            "height_std_m": config.height_std,
            "k1": config.distortion[0] if config.distortion else 0.0,
            "k2": config.distortion[1] if config.distortion else 0.0,
            "solver": name,
            "trials": s.trial_count,
            "fx_err_pct": s.fx_err,
            "fy_err_pct": s.fy_err,
            "normal_err_deg": s.normal_err,
            "rho_err_pct": s.rho_err,
            "recon_err_pct": s.recon_err,
            "failure_rate_pct": s.failure_rate,
        }
        if extra:
            row.update(extra)
        rows.append(row)
    return rows


def study_noise_free(trials: int = 500, seed: int = 0) -> list:
    """Every resolution x FOV pair, noise-free, both solvers."""
    rows = []
    idx = 0
    for resolution in RESOLUTIONS:
        for fov in FOVS_DEG:
            config = SceneConfig(
                resolution=resolution,
                fov_deg=fov,
                person_count=3,
                noise_std=0.0,
                rng_seed=_cell_seed(seed, idx),
            )
            rows += _rows_for(config, trials, "noisefree", ("direct", "baseline"))
            idx += 1
    return rows


def study_noise(trials: int = 5000, seed: int = 1) -> list:
    """Noise sweep at 1920x1080, FOV 90, 3 people."""
    rows = []
    for idx, noise in enumerate(NOISE_LEVELS_PX):
        config = SceneConfig(noise_std=noise, rng_seed=_cell_seed(seed, idx))
        rows += _rows_for(config, trials, "noise", ("direct", "baseline"))
    return rows


def study_height(trials: int = 5000, seed: int = 2) -> list:
    """Height-variation sweep at 0.5 px noise."""
    rows = []
    for idx, std in enumerate(HEIGHT_STDS_M):
        config = SceneConfig(noise_std=0.5, height_std=std, rng_seed=_cell_seed(seed, idx))
        rows += _rows_for(config, trials, "height", ("direct", "baseline"))
    return rows


def study_count(trials: int = 5000, seed: int = 3) -> list:
    """Person-count sweep at 0.5 px noise, 0.1 m height std."""
    rows = []
    for idx, count in enumerate(PERSON_COUNTS):
        config = SceneConfig(
            person_count=count, noise_std=0.5, height_std=0.1, rng_seed=_cell_seed(seed, idx)
        )
        rows += _rows_for(config, trials, "count", ("direct", "baseline"))
    return rows


def study_distortion(trials: int = 5000, seed: int = 4) -> list:
    """Polynomial-distortion blocks, modeled vs unmodeled estimators.

    Block coefficients are in normalized coordinates and are converted to
    the pixel-unit warp via fy (k1_px = k1/fy^2, k2_px = k2/fy^4).
    """
    rows = []
    base = make_camera((1920, 1080), 90.0)
    for idx, (k1, k2) in enumerate(DISTORTION_BLOCKS):
        config = SceneConfig(
            person_count=20,
            noise_std=0.0,
            distortion=(k1 / base.fy**2, k2 / base.fy**4),
            rng_seed=_cell_seed(seed, idx),
        )
        rows += _rows_for(
            config,
            trials,
            "distortion",
            ("distortion", "direct"),
            extra={"k1": k1, "k2": k2},
        )
    return rows


CSV_COLUMNS = (
    "study",
    "resolution",
    "fov_deg",
    "person_count",
    "noise_std_px",
    "height_mean_m",
    "height_std_m",
    "k1",
    "k2",
    "solver",
    "trials",
    "fx_err_pct",
    "fy_err_pct",
    "normal_err_deg",
    "rho_err_pct",
    "recon_err_pct",
    "failure_rate_pct",
)


def write_study_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Keypoint-file export, for end-to-end round trips through the CLI.
# ---------------------------------------------------------------------------


def scene_to_keypoint_frames(
    scene: GroundTruthScene,
    noise_std: float = 0.0,
    rng=None,
    people_per_frame: int | None = None,
    frame_prefix: str = "frame",
) -> list:
    """Serialize a scene's measurements as COCO-style keypoint frames.

    The four load-bearing joints (ankles, shoulders) are split symmetrically
    about the true centers so their midpoints reproduce the measurements
    exactly; the remaining joints are written with zero confidence.
    """
    intr = scene.intrinsics
    top, bot = project_scene_arrays(scene, noise_std, None, rng)
    top_raw = top + [intr.cx, intr.cy]
    bot_raw = bot + [intr.cx, intr.cy]
    n = top_raw.shape[0]
    depths = scene.x_b[:, 2]
    per = n if people_per_frame is None else max(1, people_per_frame)
    frames = []
    for start in range(0, n, per):
        people = []
        for i in range(start, min(start + per, n)):
            kp = np.zeros((17, 3))
            shoulder_half = 0.18 * intr.fx / depths[i]
            ankle_half = 0.09 * intr.fx / depths[i]
            kp[5] = (top_raw[i, 0] - shoulder_half, top_raw[i, 1], 1.0)
            kp[6] = (top_raw[i, 0] + shoulder_half, top_raw[i, 1], 1.0)
            kp[15] = (bot_raw[i, 0] - ankle_half, bot_raw[i, 1], 1.0)
            kp[16] = (bot_raw[i, 0] + ankle_half, bot_raw[i, 1], 1.0)
            people.append(kp)
        frames.append(KeypointFrame(frame_id=f"{frame_prefix}_{start // per:04d}", people=people))
    return frames
