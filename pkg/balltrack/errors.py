"""
Exception hierarchy for balltrack.

Every error that signals bad input also derives from ValueError so callers that
only care about "invalid value" keep working.
"""


class BalltrackError(Exception):
    """Base class of all balltrack errors."""


class GeometryError(BalltrackError, ValueError):
    """Projection or triangulation could not produce a finite answer."""


class DepthDegenerateError(GeometryError):
    """The point lies on the principal plane of the camera (|w3| below tolerance)."""


class BehindCameraError(GeometryError):
    """The point projects with negative depth."""


class DegenerateGeometryError(GeometryError):
    """Rays are parallel or share a center; the point is at infinity."""


class CalibrationError(BalltrackError, ValueError):
    """A camera in a calibration document is invalid."""

    def __init__(self, message: str, camera_id: int | None = None):
        super().__init__(message)
        self.camera_id = camera_id


class FormatError(BalltrackError, ValueError):
    """A file or stream record does not follow its documented format."""


class FusionInputError(BalltrackError, ValueError):
    """Observation set cannot be fused (too few members, repeated camera ids)."""


class DetectionError(BalltrackError, ValueError):
    """Image or probability image cannot be processed by the detector."""


class TrainingError(BalltrackError, ValueError):
    """Training corpus or hyperparameters are unusable."""


class TrainingDivergedError(TrainingError):
    """The training loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class IntegrationError(BalltrackError, ArithmeticError):
    """Flight integration produced a non-finite state."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class FitError(BalltrackError, ValueError):
    """Initial-state polynomial fit is under-determined."""


class GridMismatchError(BalltrackError, ValueError):
    """Two trajectories are not sampled on the same time grid."""


class ScalingError(BalltrackError, ArithmeticError):
    """Measured fusion runtime does not grow at the expected rate."""

    def __init__(self, message: str, slope: float):
        super().__init__(message)
        self.slope = slope
