"""Shared fixtures: simple cameras and synthetic rigs."""

import numpy as np
import pytest

from balltrack.geometry import CameraModel, synthetic_rig


@pytest.fixture
def simple_camera():
    """Camera at the origin looking down +z, f=100, principal point (320, 240)."""
    P = np.array(
        [
            [100.0, 0.0, 320.0, 0.0],
            [0.0, 100.0, 240.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    return CameraModel(0, P, 640, 480)


@pytest.fixture
def rig4():
    return synthetic_rig(4)


@pytest.fixture
def rig8():
    return synthetic_rig(8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
