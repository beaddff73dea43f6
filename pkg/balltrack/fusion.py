"""
Consistent-Subset Fusion

Robust 3D estimation from unreliable per-camera detections: every camera pair
proposes a candidate point, the candidate that the largest number of cameras
agree with (reprojection error below epsilon) wins, and the reported position is
re-triangulated from the agreeing cameras only.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateGeometryError, FusionInputError
from .geometry import (
    DEFAULT_TOLERANCES,
    CameraModel,
    GeometryTolerances,
    PixelObservation,
    Point3,
    dlt_system,
    gauss_newton_refine,
    project_many,
    reprojection_errors,
    triangulate,
)
from .log import logger

STRATEGIES = ("vectorized", "sequential")

Observations = Sequence[tuple[PixelObservation, CameraModel]]


@dataclass(frozen=True)
class FusionConfig:
    epsilon: float = 5.0
    min_inliers: int = 2
    strategy: str = "vectorized"
    tolerances: GeometryTolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        if not self.epsilon > 0:
            err_msg = f"epsilon must be positive, got {self.epsilon}"
            raise ValueError(err_msg)
        if self.min_inliers < 2:  # noqa: PLR2004
            err_msg = f"min_inliers must be at least 2, got {self.min_inliers}"
            raise ValueError(err_msg)
        if self.strategy not in STRATEGIES:
            err_msg = f"Unknown fusion strategy {self.strategy!r}, use {STRATEGIES}"
            raise ValueError(err_msg)


class FailureReason(str, Enum):
    TOO_FEW_OBSERVATIONS = "too-few-observations"
    NO_CONSISTENT_SET = "no-consistent-set"


@dataclass(frozen=True, eq=False)
class ConsistentSet:
    """Winner of the pair search plus the work it took to find it."""

    inlier_ids: frozenset[int]
    candidate: Point3 | None
    pair: tuple[int, int] | None
    mean_error: float
    candidates_evaluated: int
    projections: int


@dataclass(frozen=True, eq=False)
class FusionResult:
    position: Point3 | None = None
    inlier_ids: frozenset[int] = frozenset()
    residuals: dict[int, float] = field(default_factory=dict)
    reason: FailureReason | None = None

    @property
    def ok(self) -> bool:
        return self.reason is None

    @classmethod
    def failure(cls, reason: FailureReason) -> FusionResult:
        return cls(reason=reason)


def pair_with_cameras(
    observations: Iterable[PixelObservation], cameras: Mapping[int, CameraModel]
) -> list[tuple[PixelObservation, CameraModel]]:
    """Attach each observation to its calibrated camera."""
    paired = []
    for obs in observations:
        if obs.camera_id not in cameras:
            err_msg = f"Observation from unknown camera {obs.camera_id}"
            raise FusionInputError(err_msg)
        paired.append((obs, cameras[obs.camera_id]))
    return paired


def _prepare(S: Observations):
    """Sort by camera id and stack into arrays; rejects repeated cameras."""
    ordered = sorted(S, key=lambda item: item[0].camera_id)
    ids = [obs.camera_id for obs, _ in ordered]
    if len(set(ids)) != len(ids):
        err_msg = f"At most one observation per camera is allowed, got ids {ids}"
        raise FusionInputError(err_msg)
    for obs, cam in ordered:
        if obs.camera_id != cam.id:
            err_msg = (
                f"Observation of camera {obs.camera_id} paired with camera {cam.id}"
            )
            raise FusionInputError(err_msg)
    pixels = np.array([[obs.pixel.u, obs.pixel.v] for obs, _ in ordered])
    P = np.stack([cam.P for _, cam in ordered])
    signs = np.array([cam.depth_sign for _, cam in ordered])
    centers = np.array([cam.center for _, cam in ordered])
    return ordered, ids, pixels, P, signs, centers


def _pair_candidates(pixels, P, centers, tol: GeometryTolerances):
    """
    Linear triangulation of every camera pair in one batched solve.

    Returns the pair table, the indices of pairs with a finite candidate and
    those candidates as homogeneous points with unit scale.
    """
    pairs = np.array(list(itertools.combinations(range(len(pixels)), 2)))
    A = dlt_system(pixels[pairs], P[pairs])
    _, _, vt = np.linalg.svd(A)
    Xh = vt[:, -1, :]
    gap = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=-1)
    usable = (gap >= tol.center) & (np.abs(Xh[:, 3]) >= tol.scale)
    index = np.flatnonzero(usable)
    return pairs, index, Xh[index] / Xh[index, 3:4]


def _search_sequential(pixels, P, signs, centers, cfg: FusionConfig):
    """Score every candidate against the cameras one observation at a time."""
    tol = cfg.tolerances
    n = len(pixels)
    pairs, index, Xh = _pair_candidates(pixels, P, centers, tol)
    rows = P.reshape(n, 12).tolist()
    observed = pixels.tolist()
    depth_signs = signs.tolist()
    best = None
    for k, (x, y, z, _) in zip(index.tolist(), Xh.tolist(), strict=True):
        members = []
        total = 0.0
        for cam in range(n):
            p = rows[cam]
            w = p[8] * x + p[9] * y + p[10] * z + p[11]
            if abs(w) < tol.depth or depth_signs[cam] * w <= 0:
                continue
            u, v = observed[cam]
            error = math.hypot(
                (p[0] * x + p[1] * y + p[2] * z + p[3]) / w - u,
                (p[4] * x + p[5] * y + p[6] * z + p[7]) / w - v,
            )
            if error < cfg.epsilon:
                members.append(cam)
                total += error
        if not members:
            continue
        key = (-len(members), total / len(members), k)
        if best is None or key < best[0]:
            a, b = pairs[k]
            best = (key, members, np.array([x, y, z]), (int(a), int(b)))
    return best, len(pairs), len(index) * n


def _search_vectorized(pixels, P, signs, centers, cfg: FusionConfig):
    tol = cfg.tolerances
    n = len(pixels)
    pairs, index, Xh = _pair_candidates(pixels, P, centers, tol)
    if not len(index):
        return None, len(pairs), 0
    uv, valid = project_many(Xh, P, signs, tol)
    errors = np.hypot(uv[..., 0] - pixels[:, 0], uv[..., 1] - pixels[:, 1])
    errors[~valid] = np.inf
    members = errors < cfg.epsilon
    sizes = members.sum(axis=-1)
    totals = np.where(members, errors, 0.0).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(sizes > 0, totals / sizes, np.inf)
    winner = np.lexsort((index, means, -sizes))[0]
    if sizes[winner] == 0:
        return None, len(pairs), len(index) * n
    key = (-int(sizes[winner]), float(means[winner]), int(index[winner]))
    a, b = pairs[index[winner]]
    best = (
        key,
        np.flatnonzero(members[winner]).tolist(),
        Xh[winner, :3],
        (int(a), int(b)),
    )
    return best, len(pairs), len(index) * n


def largest_consistent_subset(S: Observations, cfg: FusionConfig) -> ConsistentSet:
    """
    Find the largest set of observations consistent with one pair candidate.

    Every unordered camera pair is triangulated with the linear stage only; a
    candidate's set holds every observation (its generators included) whose
    reprojection error is below epsilon. Ties on set size go to the smaller
    mean member error, then to the lexicographically first camera-id pair.
    """
    if len(S) < 2:  # noqa: PLR2004
        err_msg = f"Fusion needs at least 2 observations, got {len(S)}"
        raise FusionInputError(err_msg)
    _, ids, pixels, P, signs, centers = _prepare(S)
    search = _search_vectorized if cfg.strategy == "vectorized" else _search_sequential
    best, candidates, projections = search(pixels, P, signs, centers, cfg)
    if best is None:
        return ConsistentSet(frozenset(), None, None, np.inf, candidates, projections)
    (neg_size, mean_error, _), members, candidate, (a, b) = best
    inliers = frozenset(ids[k] for k in members)
    logger.debug(
        f"Pair ({ids[a]}, {ids[b]}) won with {-neg_size} consistent cameras, "
        f"mean error {mean_error:.3f} px"
    )
    return ConsistentSet(
        inliers, candidate, (ids[a], ids[b]), mean_error, candidates, projections
    )


def fuse(S: Observations, cfg: FusionConfig) -> FusionResult:
    """
    Estimate a single reliable 3D position from per-camera observations.

    The winning consistent set is re-triangulated with Gauss-Newton refinement;
    residuals are recomputed against the refined position and reported as-is
    (the set is not shrunk again).
    """
    if len(S) < 2:  # noqa: PLR2004
        return FusionResult.failure(FailureReason.TOO_FEW_OBSERVATIONS)
    best = largest_consistent_subset(S, cfg)
    if len(best.inlier_ids) < cfg.min_inliers:
        return FusionResult.failure(FailureReason.NO_CONSISTENT_SET)

    inliers = sorted(
        (item for item in S if item[0].camera_id in best.inlier_ids),
        key=lambda item: item[0].camera_id,
    )
    obs = [(o.pixel, cam) for o, cam in inliers]
    try:
        position = triangulate(obs, refine=True, tol=cfg.tolerances)
    except DegenerateGeometryError:
        # inliers sharing a camera center; refine the pair candidate instead
        pixels = np.array([[p.u, p.v] for p, _ in obs])
        P = np.stack([cam.P for _, cam in obs])
        position = gauss_newton_refine(best.candidate, pixels, P, cfg.tolerances)
    errors = reprojection_errors(position, obs, cfg.tolerances)
    residuals = {
        o.camera_id: float(e) for (o, _), e in zip(inliers, errors, strict=True)
    }
    return FusionResult(position, best.inlier_ids, residuals)


def fuse_all_kway(S: Observations, cfg: FusionConfig) -> FusionResult:
    """Triangulate with every observation and no consistency check."""
    if len(S) < 2:  # noqa: PLR2004
        err_msg = f"Triangulation needs at least 2 observations, got {len(S)}"
        raise FusionInputError(err_msg)
    ordered, ids, *_ = _prepare(S)
    obs = [(o.pixel, cam) for o, cam in ordered]
    position = triangulate(obs, refine=True, tol=cfg.tolerances)
    errors = reprojection_errors(position, obs, cfg.tolerances)
    residuals = {cid: float(e) for cid, e in zip(ids, errors, strict=True)}
    return FusionResult(position, frozenset(ids), residuals)
