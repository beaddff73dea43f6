"""
Ball Flight Prediction

Flight ODE with quadratic air drag and a Magnus term, fixed-step Runge-Kutta
integration, and polynomial estimation of the initial state from noisy 3D
observations.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial
from numpy.typing import ArrayLike, NDArray

from .errors import FitError, GridMismatchError, IntegrationError
from .geometry import Point3

FIT_ORDERS = (2, 3, 4)
DEFAULT_DT = 1e-3
GRID_TOLERANCE = 1e-9


def _vector(value: ArrayLike, name: str) -> NDArray[np.float64]:
    array = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(array)):
        err_msg = f"{name} must be finite, got {array}"
        raise ValueError(err_msg)
    return array


@dataclass(frozen=True, eq=False)
class FlightModel:
    """
    Constants of the flight ODE.

    ``beta0`` is in 1/m so that beta0 * |v| * v is an acceleration. ``spin`` is
    held constant over the flight.
    """

    g: NDArray[np.float64] = (0.0, 0.0, -9.81)
    beta0: float = 0.15
    beta1: float = 0.012
    spin: NDArray[np.float64] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.beta0 < 0 or self.beta1 < 0:
            err_msg = (
                f"Drag and Magnus coefficients must be non-negative, got "
                f"beta0={self.beta0}, beta1={self.beta1}"
            )
            raise ValueError(err_msg)
        object.__setattr__(self, "g", _vector(self.g, "gravity"))
        object.__setattr__(self, "spin", _vector(self.spin, "spin"))


@dataclass(frozen=True, eq=False)
class BallState:
    t: float
    x: Point3
    v: NDArray[np.float64]

    def __post_init__(self):
        if not math.isfinite(self.t):
            err_msg = f"State time must be finite, got {self.t}"
            raise ValueError(err_msg)
        object.__setattr__(self, "x", _vector(self.x, "position"))
        object.__setattr__(self, "v", _vector(self.v, "velocity"))


@dataclass(frozen=True, eq=False)
class TimedObservation:
    t: float
    x: Point3

    def __post_init__(self):
        if not math.isfinite(self.t):
            err_msg = f"Observation time must be finite, got {self.t}"
            raise ValueError(err_msg)
        object.__setattr__(self, "x", _vector(self.x, "position"))


def _acceleration(v: NDArray[np.float64], m: FlightModel) -> NDArray[np.float64]:
    return m.g - m.beta0 * np.linalg.norm(v) * v - m.beta1 * np.cross(m.spin, v)


def accel(state: BallState, m: FlightModel) -> NDArray[np.float64]:
    return _acceleration(state.v, m)


def time_grid(t0: float, dt: float, horizon: float) -> NDArray[np.float64]:
    """Times t0 + k*dt up to t0 + horizon, with a shortened last step."""
    n = math.floor(horizon / dt + GRID_TOLERANCE)
    times = t0 + dt * np.arange(n + 1)
    if horizon - n * dt > GRID_TOLERANCE * dt:
        times = np.append(times, t0 + horizon)
    elif n > 0:
        times[-1] = t0 + horizon
    return times


def integrate(
    s0: BallState, m: FlightModel, dt: float = DEFAULT_DT, horizon: float = 1.0
) -> list[BallState]:
    """
    Classical fourth-order Runge-Kutta from ``s0.t`` to ``s0.t + horizon``.

    Returns every intermediate state, ``s0`` included.
    """
    if not dt > 0:
        err_msg = f"Step size must be positive, got {dt}"
        raise ValueError(err_msg)
    if horizon < 0:
        err_msg = f"Horizon must be non-negative, got {horizon}"
        raise ValueError(err_msg)

    times = time_grid(s0.t, dt, horizon)
    states = [s0]
    x, v = s0.x, s0.v
    for step, (t_prev, t_next) in enumerate(zip(times[:-1], times[1:]), start=1):
        h = t_next - t_prev
        k1x, k1v = v, _acceleration(v, m)
        k2x, k2v = v + 0.5 * h * k1v, _acceleration(v + 0.5 * h * k1v, m)
        k3x, k3v = v + 0.5 * h * k2v, _acceleration(v + 0.5 * h * k2v, m)
        k4x, k4v = v + h * k3v, _acceleration(v + h * k3v, m)
        x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            err_msg = f"Integration blew up at step {step} (t={t_next:.6f} s)"
            raise IntegrationError(err_msg, step)
        states.append(BallState(float(t_next), x, v))
    return states


def fit_initial_state(obs: Sequence[TimedObservation], order: int) -> BallState:
    """
    Least-squares polynomial fit per axis, evaluated at the last observation.

    Times are centered on the last observation, so the constant coefficient is
    the position and the linear one the velocity.
    """
    if order not in FIT_ORDERS:
        err_msg = f"Polynomial order must be one of {FIT_ORDERS}, got {order}"
        raise FitError(err_msg)
    if len(obs) < order + 1:
        err_msg = (
            f"Order {order} fit needs at least {order + 1} observations, "
            f"got {len(obs)}"
        )
        raise FitError(err_msg)
    t = np.array([o.t for o in obs])
    if np.any(np.diff(t) <= 0):
        err_msg = "Observation times must be strictly increasing"
        raise FitError(err_msg)

    t_last = float(t[-1])
    X = np.stack([o.x for o in obs])
    coef, (_, rank, _, _) = polynomial.polyfit(t - t_last, X, order, full=True)
    if rank < order + 1:
        err_msg = f"Rank-deficient design for order {order} (rank {rank})"
        raise FitError(err_msg)
    return BallState(t_last, coef[0], coef[1])


def predict(
    obs: Sequence[TimedObservation],
    order: int,
    m: FlightModel,
    horizon: float,
    dt: float = DEFAULT_DT,
) -> list[BallState]:
    return integrate(fit_initial_state(obs, order), m, dt, horizon)


def _distances(pred: Sequence[BallState], truth: Sequence[BallState]) -> NDArray:
    if len(pred) != len(truth) or not pred:
        err_msg = f"Trajectories have {len(pred)} and {len(truth)} samples"
        raise GridMismatchError(err_msg)
    t_pred = np.array([s.t for s in pred])
    t_true = np.array([s.t for s in truth])
    if np.max(np.abs(t_pred - t_true)) > GRID_TOLERANCE:
        err_msg = "Trajectories are sampled on different time grids"
        raise GridMismatchError(err_msg)
    x_pred = np.stack([s.x for s in pred])
    x_true = np.stack([s.x for s in truth])
    return np.linalg.norm(x_pred - x_true, axis=1) * 100.0


def prediction_error(pred: Sequence[BallState], truth: Sequence[BallState]) -> float:
    """Mean Euclidean distance between two trajectories, in centimeters."""
    return float(_distances(pred, truth).mean())


def prediction_error_stats(
    pred: Sequence[BallState], truth: Sequence[BallState]
) -> tuple[float, float]:
    """Mean and maximum distance in centimeters."""
    distances = _distances(pred, truth)
    return float(distances.mean()), float(distances.max())
