"""
Streaming Pipeline

Runs detection over tagged images with one worker per camera and turns a
detection stream into frame-ordered 3D track records.
"""

from __future__ import annotations

import asyncio
import time
from collections import deque
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, TextIO

from . import formats
from .detect import ConvUnit, DetectorConfig, find_object_pixels, infer
from .errors import BalltrackError, FormatError
from .formats import DetectionRecord, ManifestEntry, dumps
from .fusion import FusionConfig, FusionResult, fuse, pair_with_cameras
from .geometry import CameraModel, PixelObservation
from .log import logger

DEFAULT_IN_FLIGHT = 8


def detect_one(
    entry: ManifestEntry,
    unit: ConvUnit,
    cfg: DetectorConfig,
    dump_dir: Path | None = None,
) -> DetectionRecord:
    """Detection record for one image; unreadable images yield an error record."""
    try:
        probability = infer(formats.read_image(entry.path), unit)
    except BalltrackError as e:
        logger.warning(f"Camera {entry.camera_id} frame {entry.frame}: {e}")
        return DetectionRecord(entry.camera_id, entry.frame, error=str(e))
    if dump_dir is not None:
        formats.write_probability(
            probability, dump_dir / f"cam{entry.camera_id}" / f"{entry.frame:06d}.pgm"
        )
    region = find_object_pixels(probability, cfg)
    pixel = None if region is None else region.centroid
    return DetectionRecord(entry.camera_id, entry.frame, pixel)


@dataclass
class DetectSummary:
    images: int = 0
    detections: int = 0
    misses: int = 0
    errors: int = 0


async def detect_stream(
    entries: Sequence[ManifestEntry],
    cameras: Mapping[int, CameraModel],
    unit: ConvUnit,
    cfg: DetectorConfig,
    out: TextIO,
    dump_dir: Path | None = None,
) -> DetectSummary:
    """
    Detect the ball in every image and write one record per image.

    Each camera's images are processed in order by that camera's own worker;
    records are written in the order of ``entries``.
    """
    unknown = sorted({e.camera_id for e in entries} - set(cameras))
    if unknown:
        err_msg = f"Image stream references uncalibrated cameras {unknown}"
        raise FormatError(err_msg)

    loop = asyncio.get_running_loop()
    results = [loop.create_future() for _ in entries]
    per_camera: dict[int, list[int]] = {}
    for index, entry in enumerate(entries):
        per_camera.setdefault(entry.camera_id, []).append(index)

    async def worker(indices: list[int]) -> None:
        for index in indices:
            try:
                record = await asyncio.to_thread(
                    detect_one, entries[index], unit, cfg, dump_dir
                )
            except Exception as e:  # noqa: BLE001
                results[index].set_exception(e)
                return
            results[index].set_result(record)

    workers = [asyncio.create_task(worker(indices)) for indices in per_camera.values()]
    summary = DetectSummary()
    try:
        for future in results:
            record = await future
            out.write(record.to_json() + "\n")
            summary.images += 1
            if record.error is not None:
                summary.errors += 1
            elif record.pixel is None:
                summary.misses += 1
            else:
                summary.detections += 1
        await asyncio.gather(*workers)
    finally:
        for task in workers:
            task.cancel()
    logger.info(
        f"Detection finished: {summary.images} images, {summary.detections} "
        f"detections, {summary.misses} without ball, {summary.errors} errors"
    )
    return summary


@dataclass
class FrameGroup:
    frame: int
    records: dict[int, DetectionRecord] = field(default_factory=dict)

    @property
    def observations(self) -> list[PixelObservation]:
        return [
            PixelObservation(camera_id, record.pixel, self.frame)
            for camera_id, record in sorted(self.records.items())
            if record.pixel is not None
        ]

    @property
    def t(self) -> float | None:
        for record in self.records.values():
            if record.t is not None:
                return record.t
        return None


@dataclass
class TrackCounters:
    records_in: int = 0
    records_used: int = 0
    records_skipped: int = 0
    records_late: int = 0
    frames_emitted: int = 0
    frames_fused: int = 0
    frames_failed: int = 0

    def balanced(self) -> bool:
        used = self.records_used + self.records_skipped + self.records_late
        return self.records_in == used


class FrameGrouper:
    """
    Groups detection records by frame tag with a one-frame reordering window.

    A group closes when every calibrated camera has reported or a record at
    least two frames newer arrives. Closed groups leave in frame order.
    """

    def __init__(
        self, camera_ids: Iterable[int], counters: TrackCounters | None = None
    ):
        self.camera_ids = frozenset(camera_ids)
        self.counters = counters or TrackCounters()
        self.pending: dict[int, FrameGroup] = {}
        self.newest: int | None = None
        self.last_emitted: int | None = None

    def skip(self, reason: str) -> None:
        self.counters.records_skipped += 1
        logger.warning(f"Skipping record: {reason}")

    def add(self, record: DetectionRecord) -> list[FrameGroup]:
        frame = record.frame
        if record.camera_id not in self.camera_ids:
            self.skip(f"unknown camera {record.camera_id} (frame {frame})")
            return []
        late = (self.last_emitted is not None and frame <= self.last_emitted) or (
            self.newest is not None and frame <= self.newest - 2
        )
        if late:
            self.counters.records_late += 1
            logger.warning(
                f"Dropping late record: camera {record.camera_id} frame {frame}"
            )
            return []
        group = self.pending.setdefault(frame, FrameGroup(frame))
        if record.camera_id in group.records:
            self.skip(f"duplicate camera {record.camera_id} in frame {frame}")
            return []
        group.records[record.camera_id] = record
        self.counters.records_used += 1
        if self.newest is None or frame > self.newest:
            self.newest = frame
        return self._ready()

    def _closed(self, group: FrameGroup) -> bool:
        return len(group.records) == len(self.camera_ids) or (
            group.frame <= self.newest - 2
        )

    def _ready(self) -> list[FrameGroup]:
        ready = []
        for frame in sorted(self.pending):
            if not self._closed(self.pending[frame]):
                break
            ready.append(self.pending.pop(frame))
            self.last_emitted = frame
        return ready

    def flush(self) -> list[FrameGroup]:
        """Close every pending group at end of stream."""
        ready = [self.pending.pop(frame) for frame in sorted(self.pending)]
        if ready:
            self.last_emitted = ready[-1].frame
        return ready


def track_record(
    group: FrameGroup,
    result: FusionResult,
    frame_rate: float,
    latency_ms: float | None = None,
) -> dict[str, Any]:
    t = group.t if group.t is not None else group.frame / frame_rate
    record: dict[str, Any] = {"frame": group.frame, "t": t}
    if result.ok:
        record["x"], record["y"], record["z"] = (float(v) for v in result.position)
        record["inlier_ids"] = sorted(result.inlier_ids)
    else:
        record["failure"] = result.reason.value
    if latency_ms is not None:
        record["latency_ms"] = latency_ms
    return record


def fuse_group(
    group: FrameGroup, cameras: Mapping[int, CameraModel], cfg: FusionConfig
) -> FusionResult:
    return fuse(pair_with_cameras(group.observations, cameras), cfg)


async def track_stream(
    lines: Iterable[str],
    cameras: Mapping[int, CameraModel],
    cfg: FusionConfig,
    out: TextIO,
    *,
    frame_rate: float = 200.0,
    latency: bool = False,
    in_flight: int = DEFAULT_IN_FLIGHT,
    counters: TrackCounters | None = None,
) -> TrackCounters:
    """
    Fuse each frame group of a detection stream into one track record.

    Up to ``in_flight`` groups are fused concurrently; records are written in
    frame order followed by a summary line with the record counters.
    """
    grouper = FrameGrouper(cameras, counters)
    counters = grouper.counters
    window: deque[tuple[FrameGroup, asyncio.Future, float]] = deque()

    async def emit_oldest() -> None:
        group, task, closed_at = window.popleft()
        result = await task
        latency_ms = (time.perf_counter() - closed_at) * 1000.0 if latency else None
        out.write(dumps(track_record(group, result, frame_rate, latency_ms)) + "\n")
        counters.frames_emitted += 1
        if result.ok:
            counters.frames_fused += 1
        else:
            counters.frames_failed += 1

    async def submit(groups: list[FrameGroup]) -> None:
        for group in groups:
            task = asyncio.ensure_future(
                asyncio.to_thread(fuse_group, group, cameras, cfg)
            )
            window.append((group, task, time.perf_counter()))
            while len(window) > in_flight:
                await emit_oldest()

    for line in lines:
        if not line.strip():
            continue
        counters.records_in += 1
        try:
            record = formats.parse_detection(line)
        except FormatError as e:
            grouper.skip(str(e))
            continue
        await submit(grouper.add(record))
    await submit(grouper.flush())
    while window:
        await emit_oldest()

    out.write(dumps({"summary": asdict(counters)}) + "\n")
    logger.info(
        f"Tracking finished: {counters.frames_emitted} frames "
        f"({counters.frames_failed} failed), {counters.records_in} records in"
    )
    return counters
