"""Shared domain types, coordinate conventions, and error metrics.

Coordinate conventions used throughout the package:

- Image frame: u right, v down, origin at the top-left pixel ("raw"), or
  at the principal point ("centered").
- Camera frame: x right, y down, z forward along the optical axis, so a
  point in front of the camera has positive depth (z > 0).
- Ground plane: N^T X + rho = 0 in the camera frame, with unit normal N
  pointing from the plane toward the camera (rho > 0).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EstimationFailure",
    "PixelPoint",
    "PersonObservation",
    "CameraIntrinsics",
    "GroundPlane",
    "HeightPrior",
    "Reconstruction",
    "DistanceBin",
    "TrialStats",
    "COCO_KEYPOINT_NAMES",
    "to_principal_centered",
    "to_raw_image",
    "centers_from_coco",
    "focal_error",
    "normal_error",
    "reconstruction_error",
    "mean_reconstruction_error",
    "KeypointFrame",
    "load_keypoint_frames",
    "save_keypoint_frames",
    "frame_observations",
]

RAW = "raw-image"
CENTERED = "principal-centered"


class EstimationFailure(Exception):
    """A calibration attempt produced no valid solution.

    Every data-driven failure mode of the solvers maps onto this single
    exception so the Monte Carlo failure-rate accounting is uniform. The
    ``kind`` attribute names the mode, e.g. ``rank_deficient``,
    ``focal_nonpositive``, ``cheirality``, ``vanishing_point_at_infinity``,
    ``no_consensus``, ``no_valid_eigenpair``, ``insufficient_observations``.
    """

    def __init__(self, kind: str, message: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {message}" if message else kind)


@dataclass(frozen=True)
class PixelPoint:
    """A 2-D image point tagged with the frame it lives in."""

    u: float
    v: float
    frame: str = RAW

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"non-finite pixel point ({self.u}, {self.v})")
        if self.frame not in (RAW, CENTERED):
            raise ValueError(f"unknown pixel frame {self.frame!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True)
class PersonObservation:
    """One person's ankle-center and shoulder-center image points."""

    ankle_center: PixelPoint
    shoulder_center: PixelPoint

    def __post_init__(self):
        if self.ankle_center.frame != self.shoulder_center.frame:
            raise ValueError("ankle and shoulder points must share a frame tag")
        if (
            self.ankle_center.u == self.shoulder_center.u
            and self.ankle_center.v == self.shoulder_center.v
        ):
            raise ValueError("zero-length body segment (ankle == shoulder)")

    @property
    def frame(self) -> str:
        return self.ankle_center.frame


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with the principal point at (cx, cy)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def K(self) -> np.ndarray:
        """Projection matrix diag(fx, fy, 1) in the centered frame."""
        return np.diag([self.fx, self.fy, 1.0])

    @property
    def W(self) -> np.ndarray:
        """diag(1/fx^2, 1/fy^2, 1), the image of the absolute conic."""
        return np.diag([1.0 / self.fx**2, 1.0 / self.fy**2, 1.0])

    def contains(self, u: float, v: float) -> bool:
        """True if a raw-image point falls inside the pixel grid."""
        return 0.0 <= u < self.width and 0.0 <= v < self.height


@dataclass(frozen=True)
class GroundPlane:
    """Ground plane N^T X + rho = 0 in the camera frame."""

    normal: np.ndarray
    rho: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,):
            raise ValueError("plane normal must be a 3-vector")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if self.rho <= 0:
            raise ValueError("plane offset rho must be positive")
        object.__setattr__(self, "normal", n)

    def residual(self, point: np.ndarray) -> float:
        """|N^T X + rho| for a camera-frame point, in meters."""
        return float(abs(self.normal @ np.asarray(point, dtype=float) + self.rho))


@dataclass(frozen=True)
class HeightPrior:
    """Assumed ankle-center to shoulder-center separation, in meters."""

    h: float

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("height prior must be positive and finite")


def as_height(h) -> float:
    """Accept a HeightPrior or a bare positive float."""
    value = h.h if isinstance(h, HeightPrior) else float(h)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError("height prior must be positive and finite")
    return value


@dataclass(frozen=True)
class Reconstruction:
    """Per-person metric depths and 3-D points (camera frame, meters)."""

    lambda_b: np.ndarray  # (N,) ankle-center depths
    lambda_t: np.ndarray  # (N,) shoulder-center depths
    x_b: np.ndarray  # (N, 3) ankle centers
    x_t: np.ndarray  # (N, 3) shoulder centers

    def __post_init__(self):
        lb = np.asarray(self.lambda_b, dtype=float)
        lt = np.asarray(self.lambda_t, dtype=float)
        xb = np.asarray(self.x_b, dtype=float)
        xt = np.asarray(self.x_t, dtype=float)
        n = lb.shape[0]
        if lt.shape != (n,) or xb.shape != (n, 3) or xt.shape != (n, 3):
            raise ValueError("inconsistent reconstruction shapes")
        if n and (lb.min() <= 0 or lt.min() <= 0):
            raise ValueError("reconstruction depths must be positive")
        object.__setattr__(self, "lambda_b", lb)
        object.__setattr__(self, "lambda_t", lt)
        object.__setattr__(self, "x_b", xb)
        object.__setattr__(self, "x_t", xt)

    def __len__(self) -> int:
        return self.lambda_b.shape[0]


class DistanceBin(enum.Enum):
    """The four annotation distance ranges, half-open on the right."""

    B0_1 = (0.0, 1.0, "0-1 m")
    B1_2 = (1.0, 2.0, "1-2 m")
    B2_4 = (2.0, 4.0, "2-4 m")
    B4_INF = (4.0, math.inf, "> 4 m")

    def __init__(self, lo, hi, label):
        self.lo = lo
        self.hi = hi
        self.label = label

    @classmethod
    def from_distance(cls, meters: float) -> "DistanceBin":
        if not (meters >= 0 and math.isfinite(meters)):
            raise ValueError(f"distance must be finite and non-negative, got {meters}")
        for bin_ in cls:
            if bin_.lo <= meters < bin_.hi:
                return bin_
        return cls.B4_INF


@dataclass(frozen=True)
class TrialStats:
    """Error metrics averaged over the non-failed trials of one study cell."""

    fx_err: float  # percent
    fy_err: float  # percent
    normal_err: float  # degrees
    rho_err: float  # percent
    recon_err: float  # percent, mean over reconstructed points
    failure_rate: float  # percent of all trials
    trial_count: int


# COCO order used by the keypoint file schema and by the paper's detectors.
COCO_KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

_LEFT_SHOULDER = COCO_KEYPOINT_NAMES.index("left_shoulder")
_RIGHT_SHOULDER = COCO_KEYPOINT_NAMES.index("right_shoulder")
_LEFT_ANKLE = COCO_KEYPOINT_NAMES.index("left_ankle")
_RIGHT_ANKLE = COCO_KEYPOINT_NAMES.index("right_ankle")


def to_principal_centered(p: PixelPoint, intrinsics: CameraIntrinsics) -> PixelPoint:
    """Shift a raw-image point so the principal point maps to the origin."""
    if p.frame != RAW:
        raise ValueError("expected a raw-image point")
    return PixelPoint(p.u - intrinsics.cx, p.v - intrinsics.cy, CENTERED)


def to_raw_image(p: PixelPoint, intrinsics: CameraIntrinsics) -> PixelPoint:
    """Inverse of :func:`to_principal_centered`; round-trips exactly."""
    if p.frame != CENTERED:
        raise ValueError("expected a principal-centered point")
    return PixelPoint(p.u + intrinsics.cx, p.v + intrinsics.cy, RAW)


def centers_from_coco(keypoints, min_conf: float = 0.5):
    """Build a PersonObservation from one person's 17 COCO keypoints.

    ``keypoints`` is a (17, 3) array-like of (u, v, confidence) rows in
    raw-image pixels. Returns None when any of the two ankle or two
    shoulder keypoints falls below ``min_conf``, or when the resulting
    ankle and shoulder midpoints coincide (zero-length segment).
    """
    kp = np.asarray(keypoints, dtype=float)
    if kp.shape != (len(COCO_KEYPOINT_NAMES), 3):
        raise ValueError(f"expected (17, 3) keypoint array, got {kp.shape}")
    needed = (_LEFT_ANKLE, _RIGHT_ANKLE, _LEFT_SHOULDER, _RIGHT_SHOULDER)
    if any(kp[i, 2] < min_conf for i in needed):
        return None
    ankle = 0.5 * (kp[_LEFT_ANKLE, :2] + kp[_RIGHT_ANKLE, :2])
    shoulder = 0.5 * (kp[_LEFT_SHOULDER, :2] + kp[_RIGHT_SHOULDER, :2])
    if ankle[0] == shoulder[0] and ankle[1] == shoulder[1]:
        return None
    return PersonObservation(
        ankle_center=PixelPoint(ankle[0], ankle[1], RAW),
        shoulder_center=PixelPoint(shoulder[0], shoulder[1], RAW),
    )


def focal_error(f_hat: float, f_true: float) -> float:
    """Absolute focal deviation as a percentage of the true focal length."""
    if f_true <= 0:
        raise ValueError("true focal length must be positive")
    return abs(f_hat - f_true) / f_true * 100.0


def normal_error(n_hat, n_true) -> float:
    """Angle between two unit normals, in degrees within [0, 180]."""
    a = np.asarray(n_hat, dtype=float)
    b = np.asarray(n_true, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if abs(na - 1.0) > 1e-6 or abs(nb - 1.0) > 1e-6:
        raise ValueError("normal_error expects unit vectors")
    dot = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(dot))


def reconstruction_error(x_hat, x_true) -> float:
    """Point error normalized by the true distance to the camera, percent."""
    xt = np.asarray(x_true, dtype=float)
    norm = np.linalg.norm(xt)
    if norm <= 0:
        raise ValueError("true point must not sit at the camera center")
    return float(np.linalg.norm(np.asarray(x_hat, dtype=float) - xt) / norm * 100.0)


def mean_reconstruction_error(x_hat, x_true) -> float:
    """Arithmetic mean of per-point reconstruction errors, percent."""
    xh = np.atleast_2d(np.asarray(x_hat, dtype=float))
    xt = np.atleast_2d(np.asarray(x_true, dtype=float))
    if xh.shape != xt.shape:
        raise ValueError("point arrays must have matching shapes")
    norms = np.linalg.norm(xt, axis=1)
    if np.any(norms <= 0):
        raise ValueError("true points must not sit at the camera center")
    return float(np.mean(np.linalg.norm(xh - xt, axis=1) / norms) * 100.0)


# ---------------------------------------------------------------------------
# Keypoint file schema: JSON array of frames, each
#   {"frame_id": str, "people": [{"keypoints": [[u, v, conf] x 17]}]}
# with coordinates in raw-image pixels, COCO joint order.
# ---------------------------------------------------------------------------


@dataclass
class KeypointFrame:
    """One frame of the keypoint file: an id plus (17, 3) arrays per person."""

    frame_id: str
    people: list = field(default_factory=list)


def load_keypoint_frames(path) -> list:
    """Parse a keypoint JSON file into a list of KeypointFrame."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("keypoint file must be a JSON array of frames")
    frames = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "frame_id" not in entry or "people" not in entry:
            raise ValueError(f"frame {i}: expected object with frame_id and people")
        people = []
        for j, person in enumerate(entry["people"]):
            if not isinstance(person, dict) or "keypoints" not in person:
                raise ValueError(f"frame {i} person {j}: missing keypoints")
            kp = np.asarray(person["keypoints"], dtype=float)
            if kp.shape != (len(COCO_KEYPOINT_NAMES), 3):
                raise ValueError(
                    f"frame {i} person {j}: expected 17 [u, v, conf] rows, got shape {kp.shape}"
                )
            people.append(kp)
        frames.append(KeypointFrame(frame_id=str(entry["frame_id"]), people=people))
    return frames


def save_keypoint_frames(frames, path) -> None:
    """Write KeypointFrames back out in the file schema."""
    payload = [
        {
            "frame_id": f.frame_id,
            "people": [{"keypoints": np.asarray(kp, dtype=float).tolist()} for kp in f.people],
        }
        for f in frames
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def frame_observations(frame: KeypointFrame, intrinsics: CameraIntrinsics, min_conf: float = 0.5):
    """Convert one frame to centered PersonObservations.

    Returns (observations, kept_indices, skipped) where ``skipped`` records
    (person_index, reason) for people rejected at ingestion.
    """
    observations, kept, skipped = [], [], []
    for idx, kp in enumerate(frame.people):
        try:
            obs = centers_from_coco(kp, min_conf=min_conf)
        except ValueError as exc:
            skipped.append((idx, str(exc)))
            continue
        if obs is None:
            skipped.append((idx, "low-confidence or degenerate keypoints"))
            continue
        observations.append(
            PersonObservation(
                ankle_center=to_principal_centered(obs.ankle_center, intrinsics),
                shoulder_center=to_principal_centered(obs.shoulder_center, intrinsics),
            )
        )
        kept.append(idx)
    return observations, kept, skipped
