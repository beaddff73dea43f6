import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .detect import DetectorConfig
from .errors import FormatError
from .fusion import FusionConfig
from .geometry import GeometryTolerances
from .log import logger


@dataclass
class Config:
    """Every tunable of the detection and tracking pipeline"""

    epsilon: float = 5.0
    min_inliers: int = 2
    fusion_strategy: str = "vectorized"
    t_high: float = 0.8
    t_low: float = 0.3
    connectivity: int = 8
    depth_tol: float = 1e-9
    scale_tol: float = 1e-12
    step_tol: float = 1e-10
    max_iterations: int = 10
    frame_rate: float = 200.0
    seed: int = 0

    def tolerances(self) -> GeometryTolerances:
        return GeometryTolerances(
            depth=self.depth_tol,
            scale=self.scale_tol,
            step=self.step_tol,
            max_iterations=self.max_iterations,
        )

    def fusion(self) -> FusionConfig:
        return FusionConfig(
            epsilon=self.epsilon,
            min_inliers=self.min_inliers,
            strategy=self.fusion_strategy,
            tolerances=self.tolerances(),
        )

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            t_high=self.t_high, t_low=self.t_low, connectivity=self.connectivity
        )


def _coerce(name: str, value: Any, current: Any) -> Any:
    # keep the declared type; ints are accepted where floats are expected
    kind = type(current)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        err_msg = f"Config key '{name}' expects {kind.__name__}, got {value!r}"
        raise FormatError(err_msg)
    return value


def load_config_file(config: Config, path: str | Path) -> None:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        err_msg = f"{path}: invalid JSON ({e})"
        raise FormatError(err_msg) from e
    if not isinstance(document, dict):
        err_msg = f"{path}: config must be a JSON object"
        raise FormatError(err_msg)
    known = {field.name for field in fields(Config)}
    unknown = sorted(set(document) - known)
    if unknown:
        err_msg = f"{path}: unknown config keys {', '.join(unknown)}"
        raise FormatError(err_msg)
    for name, value in document.items():
        setattr(config, name, _coerce(name, value, getattr(config, name)))
    logger.debug(f"Loaded {len(document)} settings from {path}: {', '.join(document)}")


def load_config(args: Any = None) -> Config:
    config = Config()

    # Load from a config file
    path = getattr(args, "config", None)
    if path:
        load_config_file(config, path)

    # Load from arguments
    if args:
        for field in fields(Config):
            value = getattr(args, field.name, None)
            if value is not None:
                logger.debug(f"Setting {field.name} from arguments: {value}")
                setattr(config, field.name, value)

    # validate through the per-module configs
    try:
        config.fusion()
        config.detector()
    except ValueError as e:
        err_msg = f"Invalid configuration: {e}"
        raise FormatError(err_msg) from e

    logger.info("Balltrack configuration loaded")
    return config
