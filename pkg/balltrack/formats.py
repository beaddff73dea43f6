"""
File and stream formats.

JSON documents for calibration and models, JSON-lines for labels, manifests and
the detection/track streams, netpbm images through Pillow, and the CSV ground truth of rendered sequences.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections.abc import Container, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, UnidentifiedImageError

from .detect import N_PARAMETERS, BBox, ColorImage, ConvUnit, ProbabilityImage
from .errors import CalibrationError, FormatError
from .geometry import CameraModel, Pixel
from .log import logger

CAMERA_DIR = re.compile(r"^cam(\d+)$")
GROUND_TRUTH_HEADER = ("frame", "t", "x", "y", "z", "corrupted")


def dumps(record: Mapping[str, Any]) -> str:
    """One compact JSON line; key order follows insertion."""
    return json.dumps(record, separators=(",", ":"))


def _read_json(path: Path) -> Any:
    try:
        with path.open(encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        err_msg = f"{path}: invalid JSON ({e})"
        raise FormatError(err_msg) from e


def _write_json(document: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")


# Calibration: {"cameras": [{"id", "width", "height", "P": [12 numbers]}]}


def parse_calibration(
    document: Any, source: str = "calibration"
) -> dict[int, CameraModel]:
    if not isinstance(document, dict) or not isinstance(document.get("cameras"), list):
        err_msg = f"{source}: expected an object with a 'cameras' list"
        raise FormatError(err_msg)
    cameras: dict[int, CameraModel] = {}
    for entry in document["cameras"]:
        camera_id = entry.get("id") if isinstance(entry, dict) else None
        if not isinstance(camera_id, int):
            err_msg = f"{source}: every camera needs an integer 'id'"
            raise FormatError(err_msg)
        if camera_id in cameras:
            err_msg = f"{source}: camera {camera_id} is listed twice"
            raise CalibrationError(err_msg, camera_id)
        try:
            P = np.asarray(entry["P"], dtype=np.float64)
            width, height = int(entry["width"]), int(entry["height"])
        except (KeyError, TypeError, ValueError) as e:
            err_msg = f"{source}: camera {camera_id} has a missing or bad field ({e})"
            raise CalibrationError(err_msg, camera_id) from e
        if P.size != 12:  # noqa: PLR2004
            err_msg = f"{source}: camera {camera_id} has {P.size} entries, not 12"
            raise CalibrationError(err_msg, camera_id)
        cameras[camera_id] = CameraModel(camera_id, P.reshape(3, 4), width, height)
    if not cameras:
        err_msg = f"{source}: no cameras defined"
        raise FormatError(err_msg)
    return cameras


def load_calibration(path: str | Path) -> dict[int, CameraModel]:
    path = Path(path)
    cameras = parse_calibration(_read_json(path), str(path))
    logger.debug(f"Loaded {len(cameras)} cameras from {path}")
    return cameras


def dump_calibration(cameras: Iterable[CameraModel], path: str | Path) -> None:
    document = {
        "cameras": [
            {
                "id": cam.id,
                "width": cam.width,
                "height": cam.height,
                "P": [float(p) for p in cam.P.ravel()],
            }
            for cam in sorted(cameras, key=lambda cam: cam.id)
        ]
    }
    _write_json(document, Path(path))


# Model: {"weights": [75 numbers, row-major (row, col, channel)], "bias": number}


def load_model(path: str | Path) -> ConvUnit:
    path = Path(path)
    document = _read_json(path)
    try:
        weights = np.asarray(document["weights"], dtype=np.float64)
        bias = float(document["bias"])
    except (KeyError, TypeError, ValueError) as e:
        err_msg = f"{path}: model needs 'weights' and 'bias' ({e})"
        raise FormatError(err_msg) from e
    if weights.size != N_PARAMETERS - 1:
        err_msg = f"{path}: expected {N_PARAMETERS - 1} weights, got {weights.size}"
        raise FormatError(err_msg)
    try:
        return ConvUnit(weights, bias)
    except ValueError as e:
        err_msg = f"{path}: {e}"
        raise FormatError(err_msg) from e


def save_model(unit: ConvUnit, path: str | Path) -> None:
    document = {
        "weights": [float(w) for w in unit.weights.ravel()],
        "bias": unit.bias,
    }
    _write_json(document, Path(path))


# Images


def read_image(path: str | Path) -> ColorImage:
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as e:
        err_msg = f"{path}: cannot read image ({e})"
        raise FormatError(err_msg) from e
    return ColorImage.from_bytes(data)


def write_image(img: ColorImage, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.rint(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")


def write_probability(B: ProbabilityImage, path: str | Path) -> None:
    """Probability image as an 8-bit graymap (P5)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.rint(B.values * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")


# Labels: one {"image": relative path, "bbox": [r0, c0, r1, c1] | null} per line


def load_labels(path: str | Path) -> list[tuple[Path, BBox | None]]:
    path = Path(path)
    labels = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                image = path.parent / record["image"]
                bbox = record.get("bbox")
                if bbox is not None:
                    r0, c0, r1, c1 = (int(b) for b in bbox)
                    if r1 < r0 or c1 < c0:
                        err_msg = f"inverted box {bbox}"
                        raise ValueError(err_msg)
                    bbox = (r0, c0, r1, c1)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                err_msg = f"{path}:{lineno}: bad label record ({e})"
                raise FormatError(err_msg) from e
            labels.append((image, bbox))
    if not labels:
        err_msg = f"{path}: label file is empty"
        raise FormatError(err_msg)
    return labels


def write_labels(labels: Sequence[tuple[str, BBox | None]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for image, bbox in labels:
            box = None if bbox is None else list(bbox)
            f.write(dumps({"image": image, "bbox": box}))
            f.write("\n")


# Manifests: {"camera_id", "frame", "path"} per line, or cam<id>/<frame>.ppm trees


@dataclass(frozen=True)
class ManifestEntry:
    camera_id: int
    frame: int
    path: Path


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                entries.append(
                    ManifestEntry(
                        int(record["camera_id"]),
                        int(record["frame"]),
                        path.parent / record["path"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                err_msg = f"{path}:{lineno}: bad manifest record ({e})"
                raise FormatError(err_msg) from e
    return entries


def scan_image_tree(root: str | Path) -> list[ManifestEntry]:
    """Entries for ``root/cam<id>/<frame>.ppm``, ordered by frame then camera."""
    root = Path(root)
    entries = []
    for directory in root.iterdir():
        match = CAMERA_DIR.match(directory.name)
        if not match or not directory.is_dir():
            continue
        for image in directory.glob("*.ppm"):
            if image.stem.isdigit():
                entries.append(ManifestEntry(int(match[1]), int(image.stem), image))
    return sorted(entries, key=lambda e: (e.frame, e.camera_id))


def image_entries(source: str | Path) -> list[ManifestEntry]:
    """Image stream from a manifest file or a per-camera directory tree."""
    source = Path(source)
    return scan_image_tree(source) if source.is_dir() else read_manifest(source)


def write_manifest(entries: Iterable[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for entry in entries:
            relative = entry.path.relative_to(path.parent).as_posix()
            record = {"camera_id": entry.camera_id, "frame": entry.frame}
            f.write(dumps({**record, "path": relative}))
            f.write("\n")


# Detection stream records


@dataclass(frozen=True)
class DetectionRecord:
    camera_id: int
    frame: int
    pixel: Pixel | None = None
    error: str | None = None
    t: float | None = None

    def to_json(self) -> str:
        record: dict[str, Any] = {"camera_id": self.camera_id, "frame": self.frame}
        if self.t is not None:
            record["t"] = self.t
        if self.error is not None:
            record["error"] = self.error
        elif self.pixel is None:
            record["none"] = True
        else:
            record["u"] = self.pixel.u
            record["v"] = self.pixel.v
        return dumps(record)


def parse_detection(line: str) -> DetectionRecord:
    try:
        record = json.loads(line)
        camera_id, frame = record["camera_id"], record["frame"]
        if not isinstance(camera_id, int) or not isinstance(frame, int):
            err_msg = "camera_id and frame must be integers"
            raise TypeError(err_msg)
        t = record.get("t")
        t = None if t is None else float(t)
        if "error" in record:
            return DetectionRecord(camera_id, frame, error=str(record["error"]), t=t)
        if record.get("none") is True:
            return DetectionRecord(camera_id, frame, t=t)
        pixel = Pixel(float(record["u"]), float(record["v"]))
        if not (math.isfinite(pixel.u) and math.isfinite(pixel.v)):
            err_msg = "pixel must be finite"
            raise ValueError(err_msg)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as e:
        err_msg = f"bad detection record ({e}): {line.strip()[:80]}"
        raise FormatError(err_msg) from e
    return DetectionRecord(camera_id, frame, pixel, t=t)


# Ground truth of a rendered sequence: CSV with header frame,t,x,y,z,corrupted


def write_ground_truth(
    times: Sequence[float],
    positions: Sequence[Sequence[float]],
    corrupted: Container[int],
    path: str | Path,
) -> None:
    """One row per frame; ``corrupted`` is 1 where a camera view was replaced."""
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(GROUND_TRUTH_HEADER)
        for frame, (t, X) in enumerate(zip(times, positions, strict=True)):
            values = [repr(float(value)) for value in (t, *X)]
            writer.writerow([frame, *values, int(frame in corrupted)])
