"""
Command Line Interface for balltrack

Train and run the ball detector, fuse detection streams into 3D tracks, and run
the simulation studies and benchmarks.
"""

import argparse
import asyncio
import contextlib
import signal
import sys
import traceback
from collections.abc import Callable, Iterator
from pathlib import Path
from typing import TextIO

from . import __version__, formats, pipeline, sim, synthetic
from .ballistics import FlightModel
from .config import Config, load_config
from .detect import LABEL_SHAPES, TrainingParams, train
from .errors import (
    BalltrackError,
    IntegrationError,
    ScalingError,
    TrainingDivergedError,
)
from .fusion import STRATEGIES
from .log import get_format, logger

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(item) for item in text.split(","))
    except ValueError as e:
        err_msg = f"expected comma-separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(err_msg) from e


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(item) for item in text.split(","))
    except ValueError as e:
        err_msg = f"expected comma-separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(err_msg) from e


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Random seed (default: 0)")
    common.add_argument(
        "--json", action="store_true", help="Write machine-readable JSON output"
    )
    common.add_argument("--out", help="Write output to this path instead of stdout")
    common.add_argument("--config", help="JSON file with configuration overrides")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="INFO",
        help="Set logging level",
    )
    return common


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--t-high", dest="t_high", type=float, help="Gate threshold")
    parser.add_argument("--t-low", dest="t_low", type=float, help="Region threshold")
    parser.add_argument("--connectivity", type=int, choices=[4, 8])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="balltrack",
        description="Multi-camera ball detection, fusion and flight prediction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = _common_parser()
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", parents=[common], help="Train the ball detector")
    p.add_argument("--labels", required=True, help="JSON-lines label file")
    p.add_argument("--model-out", required=True, help="Where to write the model")
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--negative-ratio", type=int, default=10)
    p.add_argument("--label-shape", choices=LABEL_SHAPES, default="box")

    p = commands.add_parser("detect", parents=[common], help="Detect the ball")
    p.add_argument("--model", required=True, help="Model file written by train")
    p.add_argument("--calibration", required=True, help="Camera calibration file")
    p.add_argument(
        "--images", required=True, help="Manifest file or cam<id>/ image directory"
    )
    p.add_argument(
        "--dump-probability", metavar="DIR", help="Write probability images here"
    )
    _add_detector_flags(p)

    p = commands.add_parser("track", parents=[common], help="Fuse detections into 3D")
    p.add_argument("--calibration", required=True, help="Camera calibration file")
    p.add_argument(
        "--detections", default="-", help="Detection stream (default: stdin)"
    )
    p.add_argument("--epsilon", type=float, help="Consistency threshold in pixels")
    p.add_argument("--min-inliers", dest="min_inliers", type=int)
    p.add_argument("--fusion-strategy", dest="fusion_strategy", choices=STRATEGIES)
    p.add_argument("--frame-rate", dest="frame_rate", type=float)
    p.add_argument(
        "--latency", action="store_true", help="Add latency_ms to every record"
    )
    p.add_argument("--in-flight", type=int, default=pipeline.DEFAULT_IN_FLIGHT)

    p = commands.add_parser("simulate", parents=[common], help="Outlier study")
    p.add_argument("--cameras", type=_int_list, default=(4, 8, 15, 30))
    p.add_argument(
        "--outliers", type=_float_list, default=(0.01, 0.05, 0.10, 0.25, 0.50)
    )
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--sigma", type=float, default=1.3, help="Pixel noise in pixels")
    p.add_argument("--epsilon", type=float, help="Consistency threshold in pixels")
    p.add_argument("--epsilons", type=_float_list, help="Sweep these thresholds")
    p.add_argument("--fusion-strategy", dest="fusion_strategy", choices=STRATEGIES)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--no-baseline", action="store_true", help="Skip the all-camera baseline"
    )

    p = commands.add_parser("bench", parents=[common], help="Fusion runtime benchmark")
    p.add_argument("--cameras", type=_int_list, default=(8, 15, 30, 50))
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--fusion-strategy", dest="fusion_strategy", choices=STRATEGIES)

    p = commands.add_parser("traj", parents=[common], help="Trajectory study")
    p.add_argument("--orders", type=_int_list, default=(2, 3, 4))
    p.add_argument("--obs-counts", type=_int_list, default=(12, 25, 50, 75))
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.01, help="Noise in meters")
    p.add_argument("--beta0", type=float, default=0.15)
    p.add_argument("--beta1", type=float, default=0.012)
    p.add_argument("--t-cut", type=float, default=0.4)
    p.add_argument("--horizon", type=float, default=1.2)

    p = commands.add_parser("render", parents=[common], help="Render synthetic data")
    p.add_argument("kind", choices=["corpus", "sequence"])
    p.add_argument("directory", help="Output directory")
    p.add_argument("--images", type=int, default=200, help="Corpus size")
    p.add_argument("--frames", type=int, default=500, help="Sequence length")
    p.add_argument("--cameras", type=int, default=4)
    p.add_argument("--corrupt-camera", type=int, default=0)
    p.add_argument("--corrupt-fraction", type=float, default=0.1)
    return parser


@contextlib.contextmanager
def _output(args: argparse.Namespace) -> Iterator[TextIO]:
    if not args.out:
        yield sys.stdout
        return
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yield f


def cmd_train(args: argparse.Namespace, config: Config) -> int:
    labels = formats.load_labels(args.labels)
    data = [(formats.read_image(path), bbox) for path, bbox in labels]
    params = TrainingParams(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=config.seed,
        negative_ratio=args.negative_ratio,
        label_shape=args.label_shape,
    )
    logger.info(f"Training on {len(data)} images from {args.labels}")
    report = train(data, params)
    formats.save_model(report.unit, args.model_out)
    logger.info(f"Model written to {args.model_out}")
    with _output(args) as out:
        if args.json:
            document = {"final_loss": report.final_loss, "losses": report.losses}
            out.write(formats.dumps(document))
            out.write("\n")
        else:
            out.write(f"final loss {report.final_loss:.6f}\n")
    return EXIT_OK


def cmd_detect(args: argparse.Namespace, config: Config) -> int:
    unit = formats.load_model(args.model)
    cameras = formats.load_calibration(args.calibration)
    entries = formats.image_entries(args.images)
    dump_dir = Path(args.dump_probability) if args.dump_probability else None
    with _output(args) as out:
        asyncio.run(
            pipeline.detect_stream(
                entries, cameras, unit, config.detector(), out, dump_dir
            )
        )
    return EXIT_OK


def cmd_track(args: argparse.Namespace, config: Config) -> int:
    cameras = formats.load_calibration(args.calibration)
    counters = pipeline.TrackCounters()
    setup_signal_handlers(lambda: counters)
    with contextlib.ExitStack() as stack:
        if args.detections == "-":
            lines = sys.stdin
        else:
            lines = stack.enter_context(Path(args.detections).open(encoding="utf-8"))
        out = stack.enter_context(_output(args))
        asyncio.run(
            pipeline.track_stream(
                lines,
                cameras,
                config.fusion(),
                out,
                frame_rate=config.frame_rate,
                latency=args.latency,
                in_flight=args.in_flight,
                counters=counters,
            )
        )
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, config: Config) -> int:
    if args.epsilons and args.epsilon is not None:
        err_msg = "--epsilon and --epsilons cannot be combined"
        raise BalltrackError(err_msg)
    study = sim.OutlierStudyConfig(
        cameras=args.cameras,
        outlier_probs=args.outliers,
        pixel_noise_sigma=args.sigma,
        trials=args.trials,
        epsilon=config.epsilon,
        seed=config.seed,
        fusion_strategy=config.fusion_strategy,
        baseline=not args.no_baseline,
        workers=args.workers,
    )
    with _output(args) as out:
        if args.epsilons:
            sweep = sim.run_epsilon_sweep(study, args.epsilons)
            if args.json:
                out.write(sim.sweep_to_json(sweep))
            else:
                for eps, cells in sweep:
                    out.write(f"# epsilon {eps:g}\n{sim.format_outlier_table(cells)}")
        else:
            cells = sim.run_outlier_study(study)
            table = sim.format_outlier_table(cells)
            out.write(sim.to_json(cells) if args.json else table)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Config) -> int:
    report = sim.run_runtime_benchmark(
        args.cameras,
        args.reps,
        seed=config.seed,
        strategy=args.fusion_strategy or sim.BENCHMARK_STRATEGY,
    )
    with _output(args) as out:
        table = sim.format_runtime_table(report)
        out.write(sim.to_json(report) if args.json else table)
    return EXIT_OK


def cmd_traj(args: argparse.Namespace, config: Config) -> int:
    study = sim.TrajectoryStudyConfig(
        orders=args.orders,
        obs_counts=args.obs_counts,
        trials=args.trials,
        noise_sigma=args.noise,
        seed=config.seed,
        frame_rate=config.frame_rate,
        t_cut=args.t_cut,
        horizon=args.horizon,
        model=FlightModel(beta0=args.beta0, beta1=args.beta1),
    )
    cells = sim.run_trajectory_study(study)
    with _output(args) as out:
        table = sim.format_trajectory_table(cells)
        out.write(sim.to_json(cells) if args.json else table)
    return EXIT_OK


def cmd_render(args: argparse.Namespace, config: Config) -> int:
    if args.kind == "corpus":
        corpus = synthetic.generate_corpus(
            synthetic.CorpusConfig(images=args.images, seed=config.seed)
        )
        synthetic.write_corpus(corpus, args.directory)
    else:
        synthetic.render_sequence(
            synthetic.SequenceConfig(
                frames=args.frames,
                cameras=args.cameras,
                frame_rate=config.frame_rate,
                corrupt_camera=args.corrupt_camera,
                corrupt_fraction=args.corrupt_fraction,
                seed=config.seed,
            ),
            args.directory,
        )
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Config], int]] = {
    "train": cmd_train,
    "detect": cmd_detect,
    "track": cmd_track,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "traj": cmd_traj,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # Set up logging with loguru at specified level
    logger.remove()
    logger.add(sys.stderr, format=get_format(), level=args.log_level)
    logger.debug(f"Running {args.command} with logging level: {args.log_level}")

    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except (TrainingDivergedError, IntegrationError, ScalingError) as e:
        logger.error(f"Numerical failure: {e}")
        logger.debug(f"Traceback: {traceback.format_exc()}")
        return EXIT_NUMERIC
    except (BalltrackError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug(f"Traceback: {traceback.format_exc()}")
        return EXIT_INPUT


def setup_signal_handlers(summary: Callable[[], pipeline.TrackCounters]) -> None:
    """
    Set up signal handlers for graceful shutdown without sys.exit.
    The handler logs the tracker counters, then re-raises the signal with the
    default handler restored.
    """
    handled = {"done": False}

    def _handler(sig, frame):  # noqa: ARG001
        if handled["done"]:
            return
        handled["done"] = True

        logger.debug(f"Received signal {sig}, shutting down gracefully...")
        logger.info(f"Final counters: {summary()}")

        if sig == signal.SIGINT:
            logger.info("Process Interrupted, Shutting down gracefully...")

        signal.signal(sig, signal.SIG_DFL)
        signal.raise_signal(sig)

    signal.signal(signal.SIGTERM, _handler)
    signal.signal(signal.SIGINT, _handler)


if __name__ == "__main__":
    sys.exit(main())
