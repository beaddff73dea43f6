"""
Synthetic data.

Renders orange disks on a gray background for detector training, and renders a
ball moving through a multi-camera rig for end-to-end pipeline runs.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .detect import BBox, ColorImage, ConvUnit
from .geometry import Box, CameraModel, project, synthetic_rig
from .log import logger

BALL_COLOR = (1.0, 0.5, 0.0)
BACKGROUND = 0.5

# table-sized volume the rendered sequence stays inside
SEQUENCE_WORKSPACE = Box(low=(-0.75, -0.5, 0.5), high=(0.75, 0.5, 1.5))


def render_disk(
    width: int,
    height: int,
    center: tuple[float, float] | None,
    radius: float,
    *,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ColorImage:
    """
    Gray image with a ball-colored disk; ``center`` is (u, v) = (column, row).

    A pixel belongs to the disk when its center is within ``radius``.
    """
    pixels = np.full((height, width, 3), BACKGROUND)
    if noise > 0:
        if rng is None:
            err_msg = "Noisy rendering needs a random generator"
            raise ValueError(err_msg)
        pixels += rng.normal(scale=noise, size=pixels.shape)
    if center is not None:
        rows, cols = np.ogrid[:height, :width]
        disk = np.hypot(cols - center[0], rows - center[1]) <= radius
        pixels[disk] = BALL_COLOR
    return ColorImage(np.clip(pixels, 0.0, 1.0))


def reference_unit() -> ConvUnit:
    """Hand-set filter: red minus blue at the center pixel, near 1 on the ball."""
    weights = np.zeros((5, 5, 3))
    weights[2, 2, 0] = 20.0
    weights[2, 2, 2] = -20.0
    return ConvUnit(weights, -10.0)


@dataclass(frozen=True)
class CorpusConfig:
    images: int = 200
    width: int = 64
    height: int = 64
    min_radius: int = 3
    max_radius: int = 6
    empty_fraction: float = 0.2
    noise: float = 0.02
    seed: int = 0


def generate_corpus(cfg: CorpusConfig) -> list[tuple[ColorImage, BBox | None]]:
    """Labeled disks at integer centers and radii, so the box is exact."""
    rng = np.random.default_rng(cfg.seed)
    corpus = []
    for _ in range(cfg.images):
        if rng.random() < cfg.empty_fraction:
            img = render_disk(cfg.width, cfg.height, None, 0, noise=cfg.noise, rng=rng)
            corpus.append((img, None))
            continue
        r = int(rng.integers(cfg.min_radius, cfg.max_radius + 1))
        u = int(rng.integers(r, cfg.width - r))
        v = int(rng.integers(r, cfg.height - r))
        img = render_disk(cfg.width, cfg.height, (u, v), r, noise=cfg.noise, rng=rng)
        corpus.append((img, (v - r, u - r, v + r, u + r)))
    return corpus


def write_corpus(
    corpus: Sequence[tuple[ColorImage, BBox | None]], directory: str | Path
) -> Path:
    """Write images plus ``labels.jsonl``; returns the label file path."""
    directory = Path(directory)
    labels = []
    for k, (img, bbox) in enumerate(corpus):
        name = f"images/{k:05d}.ppm"
        formats.write_image(img, directory / name)
        labels.append((name, bbox))
    label_path = directory / "labels.jsonl"
    formats.write_labels(labels, label_path)
    logger.info(f"Wrote {len(corpus)} labeled images to {directory}")
    return label_path


@dataclass(frozen=True)
class SequenceConfig:
    frames: int = 500
    cameras: int = 4
    width: int = 320
    height: int = 240
    ball_radius: float = 6.0
    frame_rate: float = 200.0
    corrupt_camera: int = 0
    corrupt_fraction: float = 0.1
    workspace: Box = SEQUENCE_WORKSPACE
    seed: int = 0


@dataclass
class SequenceTruth:
    cameras: list[CameraModel]
    times: np.ndarray
    positions: np.ndarray
    corrupted_frames: set[int] = field(default_factory=set)


def ball_path(
    cfg: SequenceConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth Lissajous path inside the central 80% of the workspace."""
    times = np.arange(cfg.frames) / cfg.frame_rate
    half = (np.asarray(cfg.workspace.high) - np.asarray(cfg.workspace.low)) / 2.0
    frequencies = np.array([0.3, 0.5, 0.7])
    phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
    waves = np.sin(2.0 * math.pi * frequencies * times[:, None] + phases)
    return times, cfg.workspace.center + 0.8 * half * waves


def _wrong_position(
    truth: tuple[float, float], cfg: SequenceConfig, rng: np.random.Generator
) -> tuple[float, float]:
    # far enough from the true projection that the disks cannot overlap
    while True:
        center = (rng.uniform(0, cfg.width), rng.uniform(0, cfg.height))
        if math.dist(center, truth) > 4.0 * cfg.ball_radius:
            return center


def render_sequence(cfg: SequenceConfig, directory: str | Path) -> SequenceTruth:
    """
    Render every camera's view of the ball for every frame.

    On a ``corrupt_fraction`` of frames the ``corrupt_camera`` view shows the
    ball at a uniformly random wrong position instead. Writes
    ``cam<id>/<frame>.ppm``, ``manifest.jsonl``, ``calibration.json`` and
    ``truth.csv`` under ``directory``.
    """
    directory = Path(directory)
    rng = np.random.default_rng(cfg.seed)
    cameras = synthetic_rig(cfg.cameras, cfg.workspace, (cfg.width, cfg.height))
    times, positions = ball_path(cfg, rng)
    draws = rng.random(cfg.frames)
    corrupted = {int(f) for f in np.flatnonzero(draws < cfg.corrupt_fraction)}

    entries = []
    for frame, X in enumerate(positions):
        for cam in cameras:
            center = tuple(project(X, cam))
            if cam.id == cfg.corrupt_camera and frame in corrupted:
                center = _wrong_position(center, cfg, rng)
            path = directory / f"cam{cam.id}" / f"{frame:06d}.ppm"
            formats.write_image(
                render_disk(cfg.width, cfg.height, center, cfg.ball_radius), path
            )
            entries.append(formats.ManifestEntry(cam.id, frame, path))
        if frame and frame % 100 == 0:
            logger.debug(f"Rendered {frame} of {cfg.frames} frames")

    formats.write_manifest(entries, directory / "manifest.jsonl")
    formats.dump_calibration(cameras, directory / "calibration.json")
    formats.write_ground_truth(times, positions, corrupted, directory / "truth.csv")
    logger.info(
        f"Rendered {cfg.frames} frames from {cfg.cameras} cameras to {directory} "
        f"({len(corrupted)} corrupted)"
    )
    return SequenceTruth(cameras, times, positions, corrupted)
