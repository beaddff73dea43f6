"""
Tests for balltrack.geometry

Covers camera validation, projection (including scale invariance and the
behind-camera test), linear and refined triangulation, reprojection errors and
the synthetic rig.
"""

import math

import numpy as np
import pytest

from balltrack.errors import (
    BehindCameraError,
    CalibrationError,
    DegenerateGeometryError,
    DepthDegenerateError,
    GeometryError,
)
from balltrack.geometry import (
    DEFAULT_WORKSPACE,
    Box,
    CameraModel,
    Pixel,
    _residuals,
    look_at_camera,
    project,
    reprojection_errors,
    synthetic_rig,
    triangulate,
)


class TestCameraModel:
    """Calibration validation and derived camera properties."""

    def test_accepts_flat_matrix(self, simple_camera):
        """A 12-element row-major vector is reshaped to 3x4."""
        cam = CameraModel(3, simple_camera.P.ravel(), 640, 480)
        assert cam.P.shape == (3, 4)
        np.testing.assert_array_equal(cam.P, simple_camera.P)

    def test_rejects_rank_deficient_block(self):
        """A singular leading 3x3 block is a calibration error naming the camera."""
        P = np.zeros((3, 4))
        P[0, 0] = P[1, 1] = 1.0
        with pytest.raises(CalibrationError) as excinfo:
            CameraModel(7, P, 640, 480)
        assert excinfo.value.camera_id == 7

    def test_rejects_non_finite_entries(self, simple_camera):
        """NaN entries are rejected."""
        P = simple_camera.P.copy()
        P[0, 0] = np.nan
        with pytest.raises(CalibrationError):
            CameraModel(0, P, 640, 480)

    def test_rejects_wrong_shape_and_size(self, simple_camera):
        """Only 3x4 matrices and positive image sizes are accepted."""
        with pytest.raises(CalibrationError):
            CameraModel(0, np.eye(3), 640, 480)
        with pytest.raises(CalibrationError):
            CameraModel(0, simple_camera.P, 0, 480)

    def test_center_and_depth_sign(self, simple_camera):
        """The center solves M C = -p4; negating P flips the depth sign."""
        np.testing.assert_allclose(simple_camera.center, np.zeros(3), atol=1e-12)
        assert simple_camera.depth_sign == 1.0
        assert simple_camera.scaled(-2.0).depth_sign == -1.0

    def test_look_at_center(self):
        """look_at_camera places its center where asked."""
        cam = look_at_camera(1, (3.0, -2.0, 4.0), (0.0, 0.0, 1.0), 500.0, (640, 480))
        np.testing.assert_allclose(cam.center, (3.0, -2.0, 4.0), atol=1e-9)


class TestProject:
    """Pinhole projection."""

    def test_known_point(self, simple_camera):
        """(1, 2, 10) lands at (330, 260) for f=100."""
        pixel = project((1.0, 2.0, 10.0), simple_camera)
        assert pixel == pytest.approx(Pixel(330.0, 260.0))

    @pytest.mark.parametrize("factor", [2.5, -1.0, -0.001])
    def test_scale_invariance(self, simple_camera, factor):
        """Scaling P by any non-zero factor leaves the pixel unchanged."""
        X = (0.3, -0.4, 5.0)
        expected = project(X, simple_camera)
        assert project(X, simple_camera.scaled(factor)) == pytest.approx(expected)

    def test_behind_camera(self, simple_camera):
        """A point with negative depth raises, also for a negated P."""
        with pytest.raises(BehindCameraError):
            project((0.0, 0.0, -1.0), simple_camera)
        with pytest.raises(BehindCameraError):
            project((0.0, 0.0, -1.0), simple_camera.scaled(-1.0))

    def test_principal_plane(self, simple_camera):
        """A point with zero depth is degenerate."""
        with pytest.raises(DepthDegenerateError):
            project((1.0, 0.0, 0.0), simple_camera)

    def test_principal_point(self, rig4):
        """Every rig camera sees the workspace center at the image center."""
        for cam in rig4:
            pixel = project(DEFAULT_WORKSPACE.center, cam)
            assert pixel == pytest.approx(Pixel(320.0, 240.0), abs=1e-6)


class TestTriangulate:
    """Linear and refined multi-view triangulation."""

    def test_noiseless_round_trip(self, rig4, rng):
        """Exact projections are triangulated back to below 1e-6 m."""
        for _ in range(200):
            X = DEFAULT_WORKSPACE.sample(rng)
            obs = [(project(X, cam), cam) for cam in rig4]
            np.testing.assert_allclose(triangulate(obs), X, atol=1e-6)
            np.testing.assert_allclose(triangulate(obs, refine=True), X, atol=1e-6)

    def test_projective_scale_invariance(self, rig4, rng):
        """Rescaling the cameras, including by negative factors, changes nothing."""
        X = DEFAULT_WORKSPACE.sample(rng)
        obs = [(project(X, cam), cam) for cam in rig4]
        factors = (3.0, -1.0, 0.2, -7.0)
        scaled = [(p, cam.scaled(f)) for (p, cam), f in zip(obs, factors, strict=True)]
        np.testing.assert_allclose(triangulate(scaled), triangulate(obs), atol=1e-9)

    def test_needs_two_observations(self, rig4):
        """A single observation cannot be triangulated."""
        with pytest.raises(GeometryError):
            triangulate([(Pixel(320.0, 240.0), rig4[0])])

    def test_shared_center_is_degenerate(self, rig4):
        """Two cameras at the same center see along the same ray."""
        cam = rig4[0]
        twin = CameraModel(9, cam.P * 2.0, cam.width, cam.height)
        with pytest.raises(DegenerateGeometryError):
            triangulate([(Pixel(300.0, 200.0), cam), (Pixel(300.0, 200.0), twin)])

    def test_refinement_never_worse(self, rig4, rng):
        """Gauss-Newton does not increase the squared reprojection error."""
        for _ in range(50):
            X = DEFAULT_WORKSPACE.sample(rng)
            obs = [
                (Pixel(*(np.array(project(X, cam)) + rng.normal(0, 2.0, 2))), cam)
                for cam in rig4
            ]
            linear = reprojection_errors(triangulate(obs), obs)
            refined = reprojection_errors(triangulate(obs, refine=True), obs)
            assert np.sum(refined**2) <= np.sum(linear**2) + 1e-9

    def test_noisy_accuracy_matches_first_order_oracle(self, rig8):
        """With 1.3 px noise the mean error is within 10% of the linearized oracle."""
        sigma = 1.3
        X = DEFAULT_WORKSPACE.center + np.array([0.4, -0.3, 0.2])
        exact = [project(X, cam) for cam in rig8]
        P = np.stack([cam.P for cam in rig8])
        _, J = _residuals(X, np.array(exact), P)
        cov = sigma**2 * np.linalg.inv(J.T @ J)
        oracle_rng = np.random.default_rng(99)
        samples = oracle_rng.multivariate_normal(np.zeros(3), cov, size=100_000)
        oracle = np.linalg.norm(samples, axis=1).mean()

        rng = np.random.default_rng(5)
        errors = []
        for _ in range(2000):
            obs = [
                (Pixel(*(np.array(p) + rng.normal(0, sigma, 2))), cam)
                for p, cam in zip(exact, rig8, strict=True)
            ]
            errors.append(np.linalg.norm(triangulate(obs, refine=True) - X))
        assert np.mean(errors) < 1.1 * oracle

    @pytest.mark.slow
    def test_noiseless_round_trip_many_rigs(self):
        """10 000 random points over rigs of 2 to 12 cameras."""
        rng = np.random.default_rng(2024)
        rigs = {c: synthetic_rig(c) for c in range(2, 13)}
        for _ in range(10_000):
            rig = rigs[int(rng.integers(2, 13))]
            X = DEFAULT_WORKSPACE.sample(rng)
            obs = [(project(X, cam), cam) for cam in rig]
            np.testing.assert_allclose(triangulate(obs), X, atol=1e-6)


class TestReprojectionErrors:
    """Per-observation pixel errors."""

    def test_zero_at_truth(self, rig4):
        """Exact projections have zero error."""
        X = DEFAULT_WORKSPACE.center
        obs = [(project(X, cam), cam) for cam in rig4]
        np.testing.assert_allclose(reprojection_errors(X, obs), 0.0, atol=1e-9)

    def test_offset_pixel(self, simple_camera):
        """A 3-4 pixel offset gives an error of 5."""
        X = (1.0, 2.0, 10.0)
        errors = reprojection_errors(X, [(Pixel(333.0, 264.0), simple_camera)])
        assert errors[0] == pytest.approx(5.0)

    def test_behind_camera_is_infinite(self, simple_camera):
        """A point behind the camera has infinite error instead of raising."""
        errors = reprojection_errors((0.0, 0.0, -2.0), [(Pixel(0, 0), simple_camera)])
        assert np.isinf(errors[0])


class TestSyntheticRig:
    """Camera rig used by the simulations."""

    def test_needs_two_cameras(self):
        """A single camera is not a rig."""
        with pytest.raises(ValueError, match="at least 2"):
            synthetic_rig(1)

    def test_two_cameras_look_at_workspace_center(self):
        """Both principal axes pass through the workspace center."""
        a, b = synthetic_rig(2)
        assert np.linalg.norm(a.center - b.center) > 1.0
        for cam in (a, b):
            direction = DEFAULT_WORKSPACE.center - cam.center
            angle = math.atan2(
                np.linalg.norm(np.cross(cam.principal_axis, direction)),
                cam.principal_axis @ direction,
            )
            assert abs(angle) < 1e-6
            assert np.linalg.norm(cam.principal_axis) == pytest.approx(1.0)

    @pytest.mark.parametrize("c", [2, 4, 15, 50])
    def test_workspace_visible(self, c):
        """Every workspace corner projects inside every image."""
        for cam in synthetic_rig(c):
            for corner in DEFAULT_WORKSPACE.corners():
                assert cam.contains(project(corner, cam))

    def test_distinct_centers(self):
        """Cameras sit at distinct points above the workspace."""
        rig = synthetic_rig(8)
        centers = np.array([cam.center for cam in rig])
        assert len({tuple(np.round(c, 6)) for c in centers}) == 8
        assert np.all(centers[:, 2] > DEFAULT_WORKSPACE.high[2])

    def test_custom_workspace(self):
        """The rig follows a custom workspace."""
        box = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        for cam in synthetic_rig(3, box, (320, 240)):
            assert project(box.center, cam) == pytest.approx(Pixel(160.0, 120.0))
