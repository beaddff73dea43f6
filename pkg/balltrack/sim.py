"""
Monte-Carlo studies.

Outlier-robustness study of consistent-subset fusion, fusion runtime scaling
benchmark, and the trajectory-prediction study. Every trial draws from its own
random stream derived from the seed and the trial's coordinates, so results do
not depend on execution order or worker count.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from time import perf_counter

import numpy as np
from threadpoolctl import threadpool_limits

from .ballistics import (
    BallState,
    FlightModel,
    TimedObservation,
    integrate,
    predict,
    prediction_error_stats,
)
from .errors import GeometryError, ScalingError
from .fusion import (
    FusionConfig,
    fuse,
    fuse_all_kway,
    largest_consistent_subset,
    pair_with_cameras,
)
from .geometry import (
    DEFAULT_IMAGE_SIZE,
    DEFAULT_WORKSPACE,
    Box,
    CameraModel,
    Pixel,
    PixelObservation,
    Point3,
    project_many,
    synthetic_rig,
)
from .log import logger

SLOPE_BAND = (2.2, 3.5)
SCALING_MIN_CAMERAS = 8
REALTIME_CAMERAS = 30
REALTIME_BUDGET_MS = 5.0
# the timed path scores pairs against cameras one observation at a time
BENCHMARK_STRATEGY = "sequential"
PROBABILITY_SCALE = 1_000_000


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian pixel noise plus uniform outliers with probability ``p_o``."""

    sigma: float = 1.3
    p_o: float = 0.0

    def __post_init__(self):
        if self.sigma < 0 or not 0.0 <= self.p_o <= 1.0:
            err_msg = f"Need sigma >= 0 and p_o in [0, 1], got {self.sigma}, {self.p_o}"
            raise ValueError(err_msg)


def simulate_observations(
    X: Point3, rig: Sequence[CameraModel], cfg: NoiseModel, rng: np.random.Generator
) -> list[PixelObservation]:
    """Noisy per-camera pixels of ``X``; outliers are uniform over the image."""
    P = np.stack([cam.P for cam in rig])
    signs = np.array([cam.depth_sign for cam in rig])
    uv, _ = project_many(np.append(X, 1.0)[None, :], P, signs)
    uv = uv[0] + rng.normal(scale=cfg.sigma, size=uv[0].shape)
    size = np.array([[cam.width, cam.height] for cam in rig], dtype=np.float64)
    outlier = rng.random(len(rig)) < cfg.p_o
    uniform = rng.uniform(0.0, 1.0, size=uv.shape) * size
    uv = np.where(outlier[:, None], uniform, uv)
    return [
        PixelObservation(cam.id, Pixel(float(u), float(v)))
        for cam, (u, v) in zip(rig, uv, strict=True)
    ]


@dataclass(frozen=True)
class OutlierStudyConfig:
    cameras: tuple[int, ...] = (4, 8, 15, 30)
    outlier_probs: tuple[float, ...] = (0.01, 0.05, 0.10, 0.25, 0.50)
    pixel_noise_sigma: float = 1.3
    trials: int = 10_000
    epsilon: float = 5.0
    workspace: Box = DEFAULT_WORKSPACE
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    seed: int = 0
    fusion_strategy: str = "vectorized"
    baseline: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            err_msg = f"trials must be positive, got {self.trials}"
            raise ValueError(err_msg)
        if any(c < 2 for c in self.cameras):  # noqa: PLR2004
            err_msg = f"Every camera count must be at least 2, got {self.cameras}"
            raise ValueError(err_msg)
        for p in self.outlier_probs:
            NoiseModel(self.pixel_noise_sigma, p)


@dataclass(frozen=True)
class StudyCell:
    c: int
    p_o: float
    mean_error: float  # cm, over non-failed trials
    failure_rate: float
    std_error: float  # standard error of mean_error
    kway_error: float | None = None  # cm, all observations triangulated together
    trials: int = 0


def _mean_and_sem(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    if len(values) == 1:
        return float(values[0]), 0.0
    array = np.asarray(values)
    return float(array.mean()), float(array.std(ddof=1) / math.sqrt(len(array)))


def _run_cell(cfg: OutlierStudyConfig, c: int, p_o: float) -> StudyCell:
    rig = synthetic_rig(c, cfg.workspace, cfg.image_size)
    cameras = {cam.id: cam for cam in rig}
    noise = NoiseModel(cfg.pixel_noise_sigma, p_o)
    fusion_cfg = FusionConfig(epsilon=cfg.epsilon, strategy=cfg.fusion_strategy)
    errors, kway, failures = [], [], 0
    p_key = round(p_o * PROBABILITY_SCALE)
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, c, p_key, trial])
        X = cfg.workspace.sample(rng)
        S = pair_with_cameras(simulate_observations(X, rig, noise, rng), cameras)
        result = fuse(S, fusion_cfg)
        if result.ok:
            errors.append(float(np.linalg.norm(result.position - X)) * 100.0)
        else:
            failures += 1
        if cfg.baseline:
            try:
                estimate = fuse_all_kway(S, fusion_cfg).position
                kway.append(float(np.linalg.norm(estimate - X)) * 100.0)
            except GeometryError:
                pass
    mean_error, std_error = _mean_and_sem(errors)
    cell = StudyCell(
        c,
        p_o,
        mean_error,
        failures / cfg.trials,
        std_error,
        float(np.mean(kway)) if kway else None,
        cfg.trials,
    )
    logger.debug(
        f"c={c} p_o={p_o}: E={cell.mean_error:.3f} cm F={cell.failure_rate:.4f}"
    )
    return cell


def run_outlier_study(cfg: OutlierStudyConfig) -> list[StudyCell]:
    """
    Estimation error and failure rate for every (camera count, outlier rate).

    Cells are ordered by camera count, then outlier probability.
    """
    grid = [(c, p) for c in cfg.cameras for p in cfg.outlier_probs]
    logger.info(
        f"Outlier study: {len(grid)} cells x {cfg.trials} trials, "
        f"epsilon={cfg.epsilon} px"
    )
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_cell, cfg, c, p) for c, p in grid]
            return [future.result() for future in futures]
    return [_run_cell(cfg, c, p) for c, p in grid]


def run_epsilon_sweep(
    cfg: OutlierStudyConfig, epsilons: Sequence[float]
) -> list[tuple[float, list[StudyCell]]]:
    return [(eps, run_outlier_study(replace(cfg, epsilon=eps))) for eps in epsilons]


@dataclass(frozen=True)
class RuntimeRow:
    c: int
    mean_ms: float
    p99_ms: float
    projections: int  # reprojections scored per fuse call


@dataclass
class RuntimeReport:
    rows: list[RuntimeRow] = field(default_factory=list)
    time_slope: float = math.nan
    op_slope: float = math.nan


def _log_slope(cameras: Sequence[int], values: Sequence[float]) -> float:
    if len(cameras) < 2:  # noqa: PLR2004
        return math.nan
    slope, _ = np.polyfit(np.log(cameras), np.log(values), 1)
    return float(slope)


def run_runtime_benchmark(
    cameras: Sequence[int],
    reps: int = 200,
    *,
    seed: int = 0,
    strategy: str = BENCHMARK_STRATEGY,
    warmup: int = 10,
) -> RuntimeReport:
    """
    Wall time of ``fuse`` with every camera reporting an inlier.

    BLAS and LAPACK are held to one thread while timing. When the camera counts
    cover the scaling range (three or more counts, none below 8), a wall-time
    slope outside the expected band raises ``ScalingError``; the operation-count
    slope measures the asymptotic cost independently of the machine.
    """
    if reps < 100:  # noqa: PLR2004
        err_msg = f"reps must be at least 100, got {reps}"
        raise ValueError(err_msg)
    fusion_cfg = FusionConfig(strategy=strategy)
    noise = NoiseModel()
    report = RuntimeReport()
    with threadpool_limits(limits=1):
        for c in cameras:
            report.rows.append(_time_fuse(c, reps, seed, warmup, noise, fusion_cfg))

    counts = [row.c for row in report.rows]
    report.time_slope = _log_slope(counts, [row.mean_ms for row in report.rows])
    report.op_slope = _log_slope(counts, [row.projections for row in report.rows])
    for row in report.rows:
        if row.c == REALTIME_CAMERAS and row.mean_ms > REALTIME_BUDGET_MS:
            logger.warning(
                f"c={row.c}: mean {row.mean_ms:.2f} ms exceeds the "
                f"{REALTIME_BUDGET_MS:g} ms real-time budget"
            )
    low, high = SLOPE_BAND
    if len(counts) >= 3 and min(counts) >= SCALING_MIN_CAMERAS:  # noqa: PLR2004
        if not low <= report.time_slope <= high:
            err_msg = (
                f"Wall-time scaling slope {report.time_slope:.2f} over c={counts} "
                f"is outside [{low}, {high}]"
            )
            raise ScalingError(err_msg, report.time_slope)
        logger.info(f"Wall-time scaling slope {report.time_slope:.2f} is cubic")
    return report


def _time_fuse(
    c: int,
    reps: int,
    seed: int,
    warmup: int,
    noise: NoiseModel,
    fusion_cfg: FusionConfig,
) -> RuntimeRow:
    rig = synthetic_rig(c)
    by_id = {cam.id: cam for cam in rig}
    rng = np.random.default_rng([seed, c])
    sets = [
        pair_with_cameras(
            simulate_observations(DEFAULT_WORKSPACE.sample(rng), rig, noise, rng),
            by_id,
        )
        for _ in range(reps)
    ]
    for S in sets[:warmup]:
        fuse(S, fusion_cfg)
    timings = np.empty(reps)
    for k, S in enumerate(sets):
        start = perf_counter()
        fuse(S, fusion_cfg)
        timings[k] = perf_counter() - start
    timings *= 1000.0
    projections = largest_consistent_subset(sets[0], fusion_cfg).projections
    row = RuntimeRow(
        c, float(timings.mean()), float(np.percentile(timings, 99)), projections
    )
    logger.debug(f"c={c}: mean {row.mean_ms:.3f} ms, p99 {row.p99_ms:.3f} ms")
    return row


@dataclass(frozen=True)
class TrajectoryStudyConfig:
    orders: tuple[int, ...] = (2, 3, 4)
    obs_counts: tuple[int, ...] = (12, 25, 50, 75)
    trials: int = 200
    noise_sigma: float = 0.01  # m, isotropic on 3D positions
    seed: int = 0
    frame_rate: float = 200.0
    t_cut: float = 0.4  # time of the last observation
    horizon: float = 1.2
    dt: float = 1e-3
    model: FlightModel = field(default_factory=FlightModel)

    def __post_init__(self):
        stride = 1.0 / (self.frame_rate * self.dt)
        if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:  # noqa: PLR2004
            err_msg = "The observation period must be a whole number of steps"
            raise ValueError(err_msg)
        if max(self.obs_counts) - 1 > self.t_cut * self.frame_rate + 1e-9:
            err_msg = (
                f"{max(self.obs_counts)} observations at {self.frame_rate} Hz "
                f"do not fit before t_cut={self.t_cut} s"
            )
            raise ValueError(err_msg)
        if not self.horizon > self.t_cut:
            err_msg = "The horizon must lie after the last observation"
            raise ValueError(err_msg)


@dataclass(frozen=True)
class TrajectoryCell:
    order: int
    observations: int
    mean_error: float  # cm
    max_error: float  # cm, worst sample over all trials
    trials: int


def serve_state(rng: np.random.Generator) -> BallState:
    """
    Serve-like launch from behind the near table end toward +y.

    Speed 4-8 m/s, elevation 0-30 degrees, lateral heading within 10 degrees.
    """
    x0 = (rng.uniform(-0.5, 0.5), -1.5, rng.uniform(0.3, 0.5))
    speed = rng.uniform(4.0, 8.0)
    elevation = math.radians(rng.uniform(0.0, 30.0))
    heading = math.radians(rng.uniform(-10.0, 10.0))
    v0 = speed * np.array(
        [
            math.cos(elevation) * math.sin(heading),
            math.cos(elevation) * math.cos(heading),
            math.sin(elevation),
        ]
    )
    return BallState(0.0, x0, v0)


def run_trajectory_study(cfg: TrajectoryStudyConfig) -> list[TrajectoryCell]:
    """
    Prediction error for each (polynomial order, observation count).

    Every trial draws one trajectory and one noise sequence that all cells
    share; cells differ only in how many of the final observations the fit uses.
    """
    stride = round(1.0 / (cfg.frame_rate * cfg.dt))
    n_max = max(cfg.obs_counts)
    sums = {(o, n): 0.0 for o in cfg.orders for n in cfg.obs_counts}
    worst = dict.fromkeys(sums, 0.0)
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        past = integrate(serve_state(rng), cfg.model, cfg.dt, cfg.t_cut)
        future = integrate(past[-1], cfg.model, cfg.dt, cfg.horizon - cfg.t_cut)
        sampled = past[::-stride][:n_max][::-1]
        noise = rng.normal(scale=cfg.noise_sigma, size=(len(sampled), 3))
        observed = [
            TimedObservation(s.t, s.x + e) for s, e in zip(sampled, noise, strict=True)
        ]
        for order in cfg.orders:
            for n in cfg.obs_counts:
                pred = predict(
                    observed[-n:], order, cfg.model, cfg.horizon - cfg.t_cut, cfg.dt
                )
                mean, peak = prediction_error_stats(pred, future)
                sums[order, n] += mean
                worst[order, n] = max(worst[order, n], peak)
    cells = [
        TrajectoryCell(o, n, sums[o, n] / cfg.trials, worst[o, n], cfg.trials)
        for o in cfg.orders
        for n in cfg.obs_counts
    ]
    logger.info(f"Trajectory study finished: {len(cells)} cells x {cfg.trials} trials")
    return cells


def _fmt(value: float | None, spec: str) -> str:
    if value is None or not math.isfinite(value):
        return "nan"
    return format(value, spec)


def format_outlier_table(cells: Sequence[StudyCell]) -> str:
    """Rows by camera count; an E (cm) and F (%) column per outlier rate."""
    probs = list(dict.fromkeys(cell.p_o for cell in cells))
    cameras = list(dict.fromkeys(cell.c for cell in cells))
    by_key = {(cell.c, cell.p_o): cell for cell in cells}
    header = ["c"]
    for p in probs:
        header += [f"E@{p:g}", f"F@{p:g}"]
    lines = ["\t".join(header)]
    for c in cameras:
        row = [str(c)]
        for p in probs:
            cell = by_key[c, p]
            row.append(_fmt(cell.mean_error, ".3f"))
            row.append(_fmt(100.0 * cell.failure_rate, ".2f"))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def format_runtime_table(report: RuntimeReport) -> str:
    lines = ["c\tmean_ms\tp99_ms\tprojections"]
    lines += [
        f"{row.c}\t{row.mean_ms:.4f}\t{row.p99_ms:.4f}\t{row.projections}"
        for row in report.rows
    ]
    lines.append(
        f"# slope time={_fmt(report.time_slope, '.2f')} "
        f"ops={_fmt(report.op_slope, '.2f')}"
    )
    return "\n".join(lines) + "\n"


def format_trajectory_table(cells: Sequence[TrajectoryCell]) -> str:
    """Rows by polynomial order, a mean (max) cm column per observation count."""
    counts = list(dict.fromkeys(cell.observations for cell in cells))
    orders = list(dict.fromkeys(cell.order for cell in cells))
    by_key = {(cell.order, cell.observations): cell for cell in cells}
    lines = ["\t".join(["order", *(str(n) for n in counts)])]
    for order in orders:
        row = [str(order)]
        for n in counts:
            cell = by_key[order, n]
            row.append(f"{cell.mean_error:.2f} ({cell.max_error:.2f})")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _finite(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [_finite(item) for item in value]
    return value


def to_json(document) -> str:
    """Dataclasses (or lists of them) as indented JSON; NaN becomes null."""
    if isinstance(document, list):
        document = [asdict(item) for item in document]
    else:
        document = asdict(document)
    return json.dumps(_finite(document), indent=2) + "\n"


def sweep_to_json(sweep: Sequence[tuple[float, Sequence[StudyCell]]]) -> str:
    document = [
        {"epsilon": eps, "cells": [asdict(cell) for cell in cells]}
        for eps, cells in sweep
    ]
    return json.dumps(_finite(document), indent=2) + "\n"
