"""
Ball Detection

A single 5x5 convolutional unit turns a color image into a per-pixel ball
probability. The ball region is the set of pixels connected to the most
probable pixel whose probability exceeds a low threshold, provided the maximum
itself passes a high threshold.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.special import expit

from .errors import DetectionError, TrainingDivergedError, TrainingError
from .geometry import Pixel
from .log import logger

FILTER_SIZE = 5
CHANNELS = 3
N_PARAMETERS = FILTER_SIZE * FILTER_SIZE * CHANNELS + 1
LABEL_SHAPES = ("box", "ellipse")

NEIGHBORS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
NEIGHBORS_8 = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
)

# (min_row, min_col, max_row, max_col), inclusive
BBox = tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Row-major RGB image with channels normalized to [0, 1]."""

    pixels: NDArray[np.float64]

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != CHANNELS:  # noqa: PLR2004
            err_msg = f"Color image must be (height, width, 3), got {pixels.shape}"
            raise DetectionError(err_msg)
        if not np.all((pixels >= 0.0) & (pixels <= 1.0)):
            err_msg = "Color channels must lie in [0, 1]"
            raise DetectionError(err_msg)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_bytes(cls, data: ArrayLike) -> ColorImage:
        """Build from an 8-bit (height, width, 3) array."""
        return cls(np.asarray(data, dtype=np.float64) / 255.0)


@dataclass(frozen=True, eq=False)
class ProbabilityImage:
    values: NDArray[np.float64]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:  # noqa: PLR2004
            err_msg = f"Probability image must be non-empty 2D, got {values.shape}"
            raise DetectionError(err_msg)
        if not np.all((values >= 0.0) & (values <= 1.0)):
            err_msg = "Probabilities must lie in [0, 1]"
            raise DetectionError(err_msg)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def total_pixels(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class DetectorConfig:
    t_high: float = 0.8
    t_low: float = 0.3
    connectivity: int = 8

    def __post_init__(self):
        if not 0.0 < self.t_low <= self.t_high <= 1.0:
            err_msg = (
                "Thresholds must satisfy 0 < t_low <= t_high <= 1, "
                f"got t_low={self.t_low}, t_high={self.t_high}"
            )
            raise ValueError(err_msg)
        if self.connectivity not in (4, 8):
            err_msg = f"Connectivity must be 4 or 8, got {self.connectivity}"
            raise ValueError(err_msg)


@dataclass(frozen=True, eq=False)
class ConvUnit:
    """5x5x3 filter plus bias; weights are indexed (row, col, channel)."""

    weights: NDArray[np.float64]
    bias: float = 0.0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.size == N_PARAMETERS - 1:
            weights = weights.reshape(FILTER_SIZE, FILTER_SIZE, CHANNELS)
        if weights.shape != (FILTER_SIZE, FILTER_SIZE, CHANNELS):
            err_msg = f"Filter must be 5x5x3, got shape {weights.shape}"
            raise ValueError(err_msg)
        if not np.all(np.isfinite(weights)) or not np.isfinite(self.bias):
            err_msg = "Filter weights and bias must be finite"
            raise ValueError(err_msg)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))

    def to_vector(self) -> NDArray[np.float64]:
        return np.append(self.weights.ravel(), self.bias)

    @classmethod
    def from_vector(cls, theta: ArrayLike) -> ConvUnit:
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], float(theta[-1]))


@dataclass(frozen=True, eq=False)
class PixelRegion:
    pixels: frozenset[tuple[int, int]]
    centroid: Pixel
    bbox: BBox
    # work counters: pixels examined by the argmax scan and popped by the search
    scanned: int = 0
    expanded: int = 0


def infer(img: ColorImage, unit: ConvUnit) -> ProbabilityImage:
    """Per-pixel ball probability; zero padding keeps the input size."""
    if img.height < FILTER_SIZE or img.width < FILTER_SIZE:
        err_msg = (
            f"Image {img.width}x{img.height} is smaller than the "
            f"{FILTER_SIZE}x{FILTER_SIZE} filter"
        )
        raise DetectionError(err_msg)
    logit = np.full((img.height, img.width), unit.bias)
    for channel in range(CHANNELS):
        logit += ndimage.correlate(
            img.pixels[..., channel],
            unit.weights[..., channel],
            mode="constant",
            cval=0.0,
        )
    return ProbabilityImage(expit(logit))


def find_object_pixels(
    B: ProbabilityImage, cfg: DetectorConfig
) -> PixelRegion | None:
    """
    Grow the object region from the most probable pixel.

    Returns None when the maximum probability is below ``t_high``. Ties for the
    maximum go to the first pixel in row-major order.
    """
    values = B.values
    height, width = values.shape
    a, b = divmod(int(np.argmax(values)), width)
    if values[a, b] < cfg.t_high:
        return None

    offsets = NEIGHBORS_8 if cfg.connectivity == 8 else NEIGHBORS_4  # noqa: PLR2004
    region = {(a, b)}
    queue = deque([(a, b)])
    expanded = 0
    while queue:
        row, col = queue.popleft()
        expanded += 1
        for dr, dc in offsets:
            y = (row + dr, col + dc)
            if not (0 <= y[0] < height and 0 <= y[1] < width):
                continue
            if y not in region and values[y] > cfg.t_low:
                queue.append(y)
                region.add(y)

    coords = np.array(sorted(region))
    centroid = Pixel(float(coords[:, 1].mean()), float(coords[:, 0].mean()))
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    bbox = (int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))
    return PixelRegion(frozenset(region), centroid, bbox, B.total_pixels, expanded)


def detect(img: ColorImage, unit: ConvUnit, cfg: DetectorConfig) -> Pixel | None:
    region = find_object_pixels(infer(img, unit), cfg)
    return None if region is None else region.centroid


@dataclass(frozen=True)
class TrainingParams:
    learning_rate: float = 0.5
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0
    negative_ratio: int = 10
    label_shape: str = "box"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.negative_ratio < 1:
            err_msg = (
                "epochs must be >= 0, batch_size and negative_ratio >= 1, got "
                f"{self.epochs}, {self.batch_size}, {self.negative_ratio}"
            )
            raise TrainingError(err_msg)
        if not self.learning_rate > 0:
            err_msg = f"learning_rate must be positive, got {self.learning_rate}"
            raise TrainingError(err_msg)
        if self.label_shape not in LABEL_SHAPES:
            err_msg = f"label_shape must be one of {LABEL_SHAPES}"
            raise TrainingError(err_msg)


@dataclass
class TrainingReport:
    unit: ConvUnit
    # full-corpus mean cross-entropy after each epoch
    losses: list[float] = field(default_factory=list)
    n_positive: int = 0
    n_negative: int = 0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def patch_matrix(img: ColorImage) -> NDArray[np.float64]:
    """Zero-padded 5x5x3 neighborhood of every pixel, shape (height, width, 75)."""
    half = FILTER_SIZE // 2
    padded = np.pad(img.pixels, ((half, half), (half, half), (0, 0)))
    windows = sliding_window_view(padded, (FILTER_SIZE, FILTER_SIZE), axis=(0, 1))
    # (h, w, channel, row, col) -> (h, w, row, col, channel)
    windows = windows.transpose(0, 1, 3, 4, 2)
    return windows.reshape(img.height, img.width, -1)


def label_masks(
    shape: tuple[int, int], bbox: BBox | None, label_shape: str = "box"
) -> tuple[NDArray[np.bool_], NDArray[np.bool_]]:
    """Positive and negative pixel masks for one labeled image."""
    positive = np.zeros(shape, dtype=bool)
    negative = np.ones(shape, dtype=bool)
    if bbox is None:
        return positive, negative
    r0, c0, r1, c1 = bbox
    negative[r0 : r1 + 1, c0 : c1 + 1] = False
    if label_shape == "box":
        positive[r0 : r1 + 1, c0 : c1 + 1] = True
        return positive, negative
    rows, cols = np.ogrid[: shape[0], : shape[1]]
    semi_r = max((r1 - r0) / 2.0, 0.5)
    semi_c = max((c1 - c0) / 2.0, 0.5)
    inside = ((rows - (r0 + r1) / 2.0) / semi_r) ** 2 + (
        (cols - (c0 + c1) / 2.0) / semi_c
    ) ** 2 <= 1.0
    positive[inside] = True
    positive &= ~negative
    return positive, negative


def build_training_set(
    data: Sequence[tuple[ColorImage, BBox | None]],
    params: TrainingParams,
    rng: np.random.Generator,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Feature rows (n, 75) and binary labels for the subsampled pixels.

    Negatives are drawn without replacement at ``negative_ratio`` per positive
    of the same image; images without a box draw as many as an average
    positive image would.
    """
    masks = [
        label_masks((img.height, img.width), bbox, params.label_shape)
        for img, bbox in data
    ]
    counts = [int(pos.sum()) for pos, _ in masks]
    labeled = [n for n in counts if n > 0]
    if not labeled:
        err_msg = "Training corpus has no positive labels"
        raise TrainingError(err_msg)
    mean_positive = int(round(float(np.mean(labeled))))

    features, labels = [], []
    for (img, _), (positive, negative), n_pos in zip(data, masks, counts, strict=True):
        patches = patch_matrix(img)
        neg_index = np.flatnonzero(negative)
        n_neg = params.negative_ratio * (n_pos if n_pos > 0 else mean_positive)
        n_neg = min(n_neg, len(neg_index))
        chosen = rng.choice(neg_index, size=n_neg, replace=False)
        flat = patches.reshape(-1, patches.shape[-1])
        features.append(flat[positive.ravel()])
        features.append(flat[chosen])
        labels.append(np.ones(n_pos))
        labels.append(np.zeros(n_neg))
    return np.concatenate(features), np.concatenate(labels)


def loss_and_gradient(
    theta: NDArray[np.float64], X: NDArray[np.float64], y: NDArray[np.float64]
) -> tuple[float, NDArray[np.float64]]:
    """
    Mean binary cross-entropy of the logistic unit and its gradient.

    The loss is not clipped: a saturated wrong prediction makes it infinite,
    which is how divergence surfaces.
    """
    p = expit(X @ theta[:-1] + theta[-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = -np.mean(np.where(y > 0.5, np.log(p), np.log1p(-p)))  # noqa: PLR2004
    residual = p - y
    grad = np.append(X.T @ residual, residual.sum()) / len(y)
    return float(loss), grad


def initial_parameters(seed: int) -> NDArray[np.float64]:
    rng = np.random.default_rng(seed)
    return np.append(rng.normal(scale=0.01, size=N_PARAMETERS - 1), 0.0)


def train(
    data: Sequence[tuple[ColorImage, BBox | None]], params: TrainingParams
) -> TrainingReport:
    """
    Fit the convolutional unit as per-pixel logistic regression.

    Pixels inside a labeled box are positive, all others negative (see
    ``label_masks`` for the ellipse variant). Mini-batch SGD is deterministic
    for a given seed.

    The trained unit is returned as ``report.unit``, wrapped with the per-epoch
    losses and the pixel counts of the training set.
    """
    rng = np.random.default_rng(params.seed)
    X, y = build_training_set(data, params, rng)
    theta = initial_parameters(params.seed)
    report = TrainingReport(
        ConvUnit.from_vector(theta),
        n_positive=int(y.sum()),
        n_negative=int((1 - y).sum()),
    )
    logger.debug(
        f"Training on {report.n_positive} positive and {report.n_negative} "
        "negative pixels"
    )

    for epoch in range(params.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), params.batch_size):
            batch = order[start : start + params.batch_size]
            loss, grad = loss_and_gradient(theta, X[batch], y[batch])
            if not np.isfinite(loss):
                err_msg = f"Training loss became non-finite in epoch {epoch}"
                raise TrainingDivergedError(err_msg, epoch)
            theta = theta - params.learning_rate * grad
        loss, _ = loss_and_gradient(theta, X, y)
        if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
            err_msg = f"Training loss became non-finite in epoch {epoch}"
            raise TrainingDivergedError(err_msg, epoch)
        report.losses.append(loss)
        logger.debug(f"Epoch {epoch}: cross-entropy {loss:.5f}")

    report.unit = ConvUnit.from_vector(theta)
    return report
