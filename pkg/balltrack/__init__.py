"""
Balltrack

Multi-camera ball tracking: a trainable per-pixel ball detector, robust 3D
fusion of unreliable per-camera detections, and ball flight prediction.
"""

__version__ = "0.1.0"
__author__ = "Balltrack Developers"
__email__ = "balltrack@users.noreply.github.com"

from .ballistics import FlightModel, integrate, predict
from .detect import ConvUnit, DetectorConfig, detect, find_object_pixels, infer, train
from .fusion import FusionConfig, fuse, largest_consistent_subset
from .geometry import CameraModel, Pixel, PixelObservation, project, triangulate

__all__ = [
    "CameraModel",
    "ConvUnit",
    "DetectorConfig",
    "FlightModel",
    "FusionConfig",
    "Pixel",
    "PixelObservation",
    "detect",
    "find_object_pixels",
    "fuse",
    "infer",
    "integrate",
    "largest_consistent_subset",
    "predict",
    "project",
    "train",
    "triangulate",
]
