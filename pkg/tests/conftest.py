"""Shared forward-model oracle for the solver tests.

The oracle builds scenes from an explicit world-frame construction (camera
at a height over the Z=0 plane, rotation assembled from axis vectors) and
projects with its own pinhole math. It shares no code with the library's
scene sampler, so solver outputs checked against it are checked against an
independent model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest

from posedist.core import CENTERED, PersonObservation, PixelPoint


@dataclass(frozen=True)
class OracleScene:
    fx: float
    fy: float
    width: int
    height: int
    normal: np.ndarray  # ground normal, camera frame
    rho: float  # camera height above the plane
    x_b: np.ndarray  # (N, 3) ankle centers, camera frame
    x_t: np.ndarray  # (N, 3) shoulder centers
    top: np.ndarray  # (N, 2) centered shoulder projections
    bot: np.ndarray  # (N, 2) centered ankle projections
    heights: np.ndarray

    @property
    def v_true(self) -> np.ndarray:
        """K N, the true vertical vanishing point (unnormalized)."""
        return np.array(
            [self.fx * self.normal[0], self.fy * self.normal[1], self.normal[2]]
        )

    @property
    def horizon_true(self) -> np.ndarray:
        """W (K N), the true horizon line (unnormalized homogeneous)."""
        v = self.v_true
        return np.array([v[0] / self.fx**2, v[1] / self.fy**2, v[2]])

    def observations(self):
        return [
            PersonObservation(
                ankle_center=PixelPoint(b[0], b[1], CENTERED),
                shoulder_center=PixelPoint(t[0], t[1], CENTERED),
            )
            for t, b in zip(self.top, self.bot)
        ]


def make_oracle_scene(
    ground_xy,
    person_heights=1.7,
    width=1920,
    height=1080,
    fov_deg=90.0,
    cam_height=5.0,
    tilt_deg=35.0,
    roll_deg=40.0,
) -> OracleScene:
    """Forward-project people standing at world (x, y) ground positions.

    World frame: X east, Y north, Z up, camera center at (0, 0, cam_height).
    The camera looks north, pitched down by tilt_deg, then rolled about its
    optical axis by roll_deg. Ground positions with non-positive depth or
    out-of-frame projections raise, so tests construct visible layouts.
    """
    fy = (height / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    fx = (width / height) * fy

    tilt = math.radians(tilt_deg)
    roll = math.radians(roll_deg)
    x_axis = np.array([1.0, 0.0, 0.0])
    y_axis = np.array([0.0, 0.0, -1.0])
    z_axis = np.array([0.0, 1.0, 0.0])
    # pitch the optical axis down toward the camera's down direction
    z_tilt = math.cos(tilt) * z_axis + math.sin(tilt) * y_axis
    y_tilt = math.cos(tilt) * y_axis - math.sin(tilt) * z_axis
    # roll about the tilted optical axis
    x_cam = math.cos(roll) * x_axis + math.sin(roll) * y_tilt
    y_cam = math.cos(roll) * y_tilt - math.sin(roll) * x_axis
    rot = np.vstack([x_cam, y_cam, z_tilt])  # world -> camera
    center = np.array([0.0, 0.0, cam_height])

    ground_xy = np.atleast_2d(np.asarray(ground_xy, dtype=float))
    n = ground_xy.shape[0]
    heights = np.broadcast_to(np.asarray(person_heights, dtype=float), (n,)).copy()

    x_b = np.empty((n, 3))
    x_t = np.empty((n, 3))
    top = np.empty((n, 2))
    bot = np.empty((n, 2))
    for i, (gx, gy) in enumerate(ground_xy):
        ankle_w = np.array([gx, gy, 0.0])
        shoulder_w = ankle_w + np.array([0.0, 0.0, heights[i]])
        x_b[i] = rot @ (ankle_w - center)
        x_t[i] = rot @ (shoulder_w - center)
        for pts, img in ((x_b[i], bot), (x_t[i], top)):
            if pts[2] <= 0:
                raise ValueError(f"person {i} behind the camera; adjust the layout")
            img[i] = (fx * pts[0] / pts[2], fy * pts[1] / pts[2])
        for img in (top[i], bot[i]):
            if abs(img[0]) > width / 2 or abs(img[1]) > height / 2:
                raise ValueError(f"person {i} projects outside the frame; adjust the layout")

    normal = rot @ np.array([0.0, 0.0, 1.0])
    return OracleScene(
        fx=fx,
        fy=fy,
        width=width,
        height=height,
        normal=normal,
        rho=cam_height,
        x_b=x_b,
        x_t=x_t,
        top=top,
        bot=bot,
        heights=heights,
    )


DEFAULT_GROUND_XY = np.array(
    [[-3.0, 9.0], [0.5, 14.0], [4.0, 10.5], [-1.5, 20.0], [2.5, 25.0], [-4.5, 16.0]]
)


@pytest.fixture
def oracle_scene():
    """Six-person noise-free scene at 1920x1080, FOV 90."""
    return make_oracle_scene(DEFAULT_GROUND_XY)


@pytest.fixture
def oracle_scene_small():
    """Minimal three-person scene."""
    return make_oracle_scene(DEFAULT_GROUND_XY[:3])


def angle_between(a, b) -> float:
    """Angle in radians between two directions, sign-insensitive."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cosang = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(min(1.0, cosang))
