"""Camera auto-calibration and metric person-distance estimation from 2-D pose keypoints."""

__version__ = "0.1.0"

from ._backend import active_backend, native_available
from .core import (
    CameraIntrinsics,
    DistanceBin,
    EstimationFailure,
    GroundPlane,
    HeightPrior,
    PersonObservation,
    PixelPoint,
    Reconstruction,
    TrialStats,
)
from .baseline import baseline_calibrate
from .distortion import DivisionModel, distorted_calibrate
from .robust import RansacConfig, ransac_calibrate, ransac_iterations
from .solver import CalibrationResult, calibrate_batch, pairwise_distances

__all__ = [
    "__version__",
    "active_backend",
    "native_available",
    "CameraIntrinsics",
    "DistanceBin",
    "EstimationFailure",
    "GroundPlane",
    "HeightPrior",
    "PersonObservation",
    "PixelPoint",
    "Reconstruction",
    "TrialStats",
    "baseline_calibrate",
    "DivisionModel",
    "distorted_calibrate",
    "RansacConfig",
    "ransac_calibrate",
    "ransac_iterations",
    "CalibrationResult",
    "calibrate_batch",
    "pairwise_distances",
]
