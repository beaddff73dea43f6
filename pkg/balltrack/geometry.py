"""
Camera Geometry

Pinhole projection, multi-view triangulation minimizing the pixel reprojection
error, and the synthetic camera rig used by the simulations.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    BehindCameraError,
    CalibrationError,
    DegenerateGeometryError,
    DepthDegenerateError,
    GeometryError,
)

Point3 = NDArray[np.float64]

# fraction of the shorter image side covered by the workspace in a synthetic rig
RIG_IMAGE_FILL = 0.6
RIG_RADIUS_FACTOR = 1.5
RIG_HEIGHT_ABOVE_TOP = 2.0
DEFAULT_IMAGE_SIZE = (640, 480)


class Pixel(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class GeometryTolerances:
    depth: float = 1e-9
    scale: float = 1e-12
    step: float = 1e-10
    max_iterations: int = 10
    # minimum distance in meters between two camera centers
    center: float = 1e-9


DEFAULT_TOLERANCES = GeometryTolerances()


@dataclass(frozen=True, eq=False)
class CameraModel:
    """A calibrated camera: 3x4 projection matrix plus image bounds."""

    id: int
    P: NDArray[np.float64]
    width: int
    height: int

    def __post_init__(self):
        try:
            P = np.array(self.P, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            err_msg = f"Camera {self.id}: projection matrix is not numeric ({exc})"
            raise CalibrationError(err_msg, self.id) from exc
        if P.size == 12:  # noqa: PLR2004
            P = P.reshape(3, 4)
        if P.shape != (3, 4):
            err_msg = f"Camera {self.id}: P must be 3x4, got shape {P.shape}"
            raise CalibrationError(err_msg, self.id)
        if not np.all(np.isfinite(P)):
            err_msg = f"Camera {self.id}: P has non-finite entries"
            raise CalibrationError(err_msg, self.id)
        if np.linalg.matrix_rank(P[:, :3]) < 3:  # noqa: PLR2004
            err_msg = f"Camera {self.id}: leading 3x3 block of P is rank deficient"
            raise CalibrationError(err_msg, self.id)
        if self.width <= 0 or self.height <= 0:
            err_msg = (
                f"Camera {self.id}: image size must be positive, "
                f"got {self.width}x{self.height}"
            )
            raise CalibrationError(err_msg, self.id)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @cached_property
    def depth_sign(self) -> float:
        """Sign of det(M); visible points have depth_sign * w3 > 0."""
        return float(np.sign(np.linalg.det(self.P[:, :3])))

    @cached_property
    def center(self) -> Point3:
        return np.linalg.solve(self.P[:, :3], -self.P[:, 3])

    @cached_property
    def principal_axis(self) -> NDArray[np.float64]:
        """Unit viewing direction in world coordinates."""
        axis = self.depth_sign * self.P[2, :3]
        return axis / np.linalg.norm(axis)

    def contains(self, pixel: Pixel) -> bool:
        return 0.0 <= pixel.u < self.width and 0.0 <= pixel.v < self.height

    def scaled(self, factor: float) -> CameraModel:
        """The same camera with P multiplied by a non-zero factor."""
        return CameraModel(self.id, self.P * factor, self.width, self.height)


@dataclass(frozen=True)
class PixelObservation:
    camera_id: int
    pixel: Pixel
    frame: int | float = 0


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in world meters."""

    low: tuple[float, float, float]
    high: tuple[float, float, float]

    def __post_init__(self):
        if any(hi <= lo for lo, hi in zip(self.low, self.high, strict=True)):
            err_msg = f"Box high corner {self.high} must exceed low corner {self.low}"
            raise ValueError(err_msg)

    @property
    def center(self) -> Point3:
        return (np.asarray(self.low) + np.asarray(self.high)) / 2.0

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.subtract(self.high, self.low)))

    def corners(self) -> NDArray[np.float64]:
        return np.array(
            [
                [x, y, z]
                for x in (self.low[0], self.high[0])
                for y in (self.low[1], self.high[1])
                for z in (self.low[2], self.high[2])
            ]
        )

    def sample(self, rng: np.random.Generator) -> Point3:
        return rng.uniform(self.low, self.high)


# 4 m x 3 m x 2 m volume over a table-sized floor patch
DEFAULT_WORKSPACE = Box(low=(-2.0, -1.5, 0.0), high=(2.0, 1.5, 2.0))


def _as_point(X: ArrayLike) -> Point3:
    X = np.asarray(X, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(X)):
        err_msg = f"Point {X} is not finite"
        raise GeometryError(err_msg)
    return X


def project(
    X: ArrayLike, cam: CameraModel, tol: GeometryTolerances = DEFAULT_TOLERANCES
) -> Pixel:
    """Project a world point into the image of ``cam``."""
    X = _as_point(X)
    w = cam.P @ np.append(X, 1.0)
    if abs(w[2]) < tol.depth:
        err_msg = f"Point {X} lies on the principal plane of camera {cam.id}"
        raise DepthDegenerateError(err_msg)
    if cam.depth_sign * w[2] < 0:
        err_msg = f"Point {X} is behind camera {cam.id}"
        raise BehindCameraError(err_msg)
    return Pixel(float(w[0] / w[2]), float(w[1] / w[2]))


def project_many(
    Xh: NDArray[np.float64],
    P: NDArray[np.float64],
    depth_sign: NDArray[np.float64],
    tol: GeometryTolerances = DEFAULT_TOLERANCES,
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """
    Project homogeneous points ``Xh`` (n, 4) into cameras ``P`` (c, 3, 4).

    Returns pixels of shape (n, c, 2) and a validity mask (n, c) that is False
    where the depth is degenerate or negative. Invalid pixels are NaN.
    """
    w = np.einsum("cij,nj->nci", P, Xh)
    w3 = w[..., 2]
    valid = (np.abs(w3) >= tol.depth) & (depth_sign[None, :] * w3 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = w[..., :2] / w3[..., None]
    uv[~valid] = np.nan
    return uv, valid


def _stack(obs: Sequence[tuple[Pixel, CameraModel]]):
    pixels = np.array([[p.u, p.v] for p, _ in obs], dtype=np.float64)
    P = np.stack([cam.P for _, cam in obs])
    signs = np.array([cam.depth_sign for _, cam in obs])
    return pixels, P, signs


def dlt_system(pixels: NDArray[np.float64], P: NDArray[np.float64]) -> NDArray:
    """
    Rows u*P3 - P1 and v*P3 - P2 for every camera, each scaled to unit norm.

    ``pixels`` is (..., n, 2) and ``P`` is (..., n, 3, 4); the result is
    (..., 2n, 4).
    """
    rows_u = pixels[..., 0:1] * P[..., 2, :] - P[..., 0, :]
    rows_v = pixels[..., 1:2] * P[..., 2, :] - P[..., 1, :]
    A = np.stack([rows_u, rows_v], axis=-2)
    A = A.reshape(*A.shape[:-3], -1, 4)
    norms = np.linalg.norm(A, axis=-1, keepdims=True)
    return A / np.where(norms > 0, norms, 1.0)


def _check_centers(cams: Sequence[CameraModel], tol: GeometryTolerances) -> None:
    centers = np.array([cam.center for cam in cams])
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    gaps[np.diag_indices(len(cams))] = np.inf
    if np.any(gaps < tol.center):
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        err_msg = (
            f"Cameras {cams[i].id} and {cams[j].id} share a center; "
            "their rays cannot be triangulated"
        )
        raise DegenerateGeometryError(err_msg)


def _linear_solve(A: NDArray[np.float64], tol: GeometryTolerances) -> Point3:
    _, _, vt = np.linalg.svd(A)
    Xh = vt[-1]
    if abs(Xh[3]) < tol.scale:
        err_msg = "Rays meet at infinity (homogeneous scale vanished)"
        raise DegenerateGeometryError(err_msg)
    return Xh[:3] / Xh[3]


def _residuals(
    X: Point3, pixels: NDArray[np.float64], P: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Stacked (u, v) residuals and their Jacobian with respect to X."""
    w = P @ np.append(X, 1.0)
    uv = w[:, :2] / w[:, 2:3]
    r = (uv - pixels).ravel()
    M = P[:, :, :3]
    J_u = (M[:, 0, :] - uv[:, 0:1] * M[:, 2, :]) / w[:, 2:3]
    J_v = (M[:, 1, :] - uv[:, 1:2] * M[:, 2, :]) / w[:, 2:3]
    J = np.stack([J_u, J_v], axis=1).reshape(-1, 3)
    return r, J


def gauss_newton_refine(
    X0: Point3,
    pixels: NDArray[np.float64],
    P: NDArray[np.float64],
    tol: GeometryTolerances = DEFAULT_TOLERANCES,
) -> Point3:
    """
    Gauss-Newton on the sum of squared reprojection errors.

    A step that would increase the cost (or leave it non-finite) is rejected and
    the iteration stops, so the result is never worse than ``X0``.
    """
    X = np.asarray(X0, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        r, J = _residuals(X, pixels, P)
    cost = float(r @ r)
    if not np.isfinite(cost):
        return X
    for _ in range(tol.max_iterations):
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        candidate = X + step
        with np.errstate(divide="ignore", invalid="ignore"):
            r_new, J_new = _residuals(candidate, pixels, P)
        cost_new = float(r_new @ r_new)
        if not np.isfinite(cost_new) or cost_new > cost:
            break
        X, r, J, cost = candidate, r_new, J_new, cost_new
        if np.linalg.norm(step) < tol.step:
            break
    return X


def triangulate(
    obs: Sequence[tuple[Pixel, CameraModel]],
    *,
    refine: bool = False,
    tol: GeometryTolerances = DEFAULT_TOLERANCES,
) -> Point3:
    """
    Estimate the 3D point seen at the given pixels.

    The linear stage solves the direct-linear-transform system for its
    null-space direction; with ``refine`` the linear solution seeds
    Gauss-Newton on the squared reprojection error.
    """
    if len(obs) < 2:  # noqa: PLR2004
        err_msg = f"Triangulation needs at least 2 observations, got {len(obs)}"
        raise GeometryError(err_msg)
    _check_centers([cam for _, cam in obs], tol)
    pixels, P, _ = _stack(obs)
    if not np.all(np.isfinite(pixels)):
        err_msg = "Observed pixels must be finite"
        raise GeometryError(err_msg)
    X = _linear_solve(dlt_system(pixels, P), tol)
    if refine:
        X = gauss_newton_refine(X, pixels, P, tol)
    return X


def reprojection_errors(
    X: ArrayLike,
    obs: Sequence[tuple[Pixel, CameraModel]],
    tol: GeometryTolerances = DEFAULT_TOLERANCES,
) -> NDArray[np.float64]:
    """
    Euclidean pixel distance between every observation and the projection of X.

    Observations for which X has degenerate or negative depth get an infinite
    error.
    """
    X = _as_point(X)
    if not obs:
        return np.zeros(0)
    pixels, P, signs = _stack(obs)
    uv, valid = project_many(np.append(X, 1.0)[None, :], P, signs, tol)
    errors = np.hypot(uv[0, :, 0] - pixels[:, 0], uv[0, :, 1] - pixels[:, 1])
    errors[~valid[0]] = np.inf
    return errors


def look_at_camera(
    camera_id: int,
    center: ArrayLike,
    target: ArrayLike,
    focal: float,
    image_size: tuple[int, int],
    up: ArrayLike = (0.0, 0.0, 1.0),
) -> CameraModel:
    """Pinhole camera at ``center`` whose principal axis passes through ``target``."""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < DEFAULT_TOLERANCES.depth:
        err_msg = f"Camera {camera_id} looks along the up vector"
        raise GeometryError(err_msg)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    width, height = image_size
    K = np.array(
        [[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]]
    )
    P = K @ np.hstack([R, (-R @ center)[:, None]])
    return CameraModel(camera_id, P, width, height)


def synthetic_rig(
    c: int,
    workspace: Box = DEFAULT_WORKSPACE,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> list[CameraModel]:
    """
    Place ``c`` cameras evenly on a horizontal circle above the workspace.

    The circle radius is 1.5 workspace diagonals, the height is 2 m above the
    workspace top, every camera looks at the workspace center, and the shared
    focal length makes the workspace's bounding sphere span 60% of the shorter
    image side.
    """
    if c < 2:  # noqa: PLR2004
        err_msg = f"A rig needs at least 2 cameras, got {c}"
        raise ValueError(err_msg)
    target = workspace.center
    radius = RIG_RADIUS_FACTOR * workspace.diagonal
    height = workspace.high[2] + RIG_HEIGHT_ABOVE_TOP
    distance = math.hypot(radius, height - target[2])
    sphere = workspace.diagonal / 2.0
    tan_half = sphere / math.sqrt(distance**2 - sphere**2)
    focal = RIG_IMAGE_FILL * min(image_size) / 2.0 / tan_half

    cameras = []
    for k in range(c):
        theta = 2.0 * math.pi * k / c
        center = (
            target[0] + radius * math.cos(theta),
            target[1] + radius * math.sin(theta),
            height,
        )
        cameras.append(look_at_camera(k, center, target, focal, image_size))
    return cameras
