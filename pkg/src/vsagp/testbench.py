"""Virtual stiffness test bench.

Each data point is acquired like on the real bench: command the pressures, let
the joint settle freely for 5 s, re-zero the motor angle at the steady state,
drive the rigidly coupled motor through a +/-1 deg sine, and regress torque on
measured motor angle around the up- and down-going zero crossings. The mean of
the two slopes is the stiffness.

The simulation is vectorized: ``measure_grid`` runs every grid point in
lockstep on one batched plant state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import plant as pl
from .dataset import Dataset

logger = logging.getLogger(__name__)

SETTLE_TIME = 5.0  # s
SETTLE_TOLERANCE = 1e-3  # rad/s
SWEEP_AMPLITUDE = 1.0  # deg
SWEEP_PERIOD = 4.0  # s
SWEEP_DURATION = 1.5 * SWEEP_PERIOD  # crossings at 0, 2 (down), 4 (up), 6 s
SAMPLE_PERIOD = 2e-3  # torque sensor read at 500 Hz
DT = 1e-3
REGRESSION_WINDOW = 0.5  # deg
MIN_SAMPLES = 10


class NotSettled(RuntimeError):
    pass


class InsufficientSamples(RuntimeError):
    pass


class MeasurementError(RuntimeError):
    """A grid point failed; carries the offending pressure pair."""

    def __init__(self, p1, p2, cause):
        super().__init__(f"measurement failed at p=({p1:g}, {p2:g}) bar: {cause}")
        self.p1, self.p2, self.cause = p1, p2, cause


@dataclass(frozen=True)
class StiffnessMeasurement:
    steady_angle: float  # deg, encoder reading
    slope_up: float  # Nm/rad
    slope_down: float  # Nm/rad
    stiffness: float  # Nm/rad
    samples_angle: np.ndarray  # relative motor angle, deg
    samples_torque: np.ndarray  # Nm


@dataclass(frozen=True)
class GridSpec:
    pressure_min: float = 0.0
    pressure_max: float = 0.4
    points_per_axis: int = 23

    def __post_init__(self):
        if self.points_per_axis < 1:
            raise ValueError("points_per_axis must be >= 1")
        if not 0.0 <= self.pressure_min <= self.pressure_max <= 0.4:
            raise ValueError("grid pressures must satisfy 0 <= min <= max <= 0.4 bar")

    def pressures(self):
        """Full-factorial pairs in row-major (p1 outer, p2 inner) order."""
        axis = np.linspace(self.pressure_min, self.pressure_max, self.points_per_axis)
        p1, p2 = np.meshgrid(axis, axis, indexing="ij")
        return p1.ravel(), p2.ravel()


def motor_trajectory(t):
    """Relative motor angle command in degrees."""
    return SWEEP_AMPLITUDE * np.sin(2.0 * np.pi * np.asarray(t) / SWEEP_PERIOD)


def _as_batch(p_d):
    p1 = np.atleast_1d(np.asarray(p_d[0], dtype=float))
    p2 = np.atleast_1d(np.asarray(p_d[1], dtype=float))
    return np.broadcast_arrays(p1, p2)


def settle(params: pl.PlantParams, p_d, state: Optional[pl.PlantState] = None,
           duration: float = SETTLE_TIME, dt: float = DT):
    """Hold ``p_d`` with the joint free for ``duration`` seconds.

    ``p_d`` may hold arrays (one entry per grid point). Returns the final
    state and the encoder reading of the steady angle in degrees.
    """
    p1, p2 = _as_batch(p_d)
    if state is None:
        zeros = np.zeros_like(p1)
        state = pl.PlantState(zeros, zeros.copy(), zeros.copy(), zeros.copy(), 0.0)
    for _ in range(int(round(duration / dt))):
        state = pl.step(state, (p1, p2), pl.FREE, dt, params)
    moving = np.abs(np.broadcast_to(state.q_dot, p1.shape)) > SETTLE_TOLERANCE
    if np.any(moving):
        i = int(np.argmax(moving))
        raise NotSettled(f"|q_dot| = {abs(np.broadcast_to(state.q_dot, p1.shape)[i]):.3g} "
                         f"rad/s after {duration} s at p=({p1[i]:g}, {p2[i]:g}) bar")
    q_i = pl.quantize(np.rad2deg(state.q), params.noise.encoder_quantum_deg)
    return state, np.broadcast_to(q_i, p1.shape)


def sweep(params: pl.PlantParams, state: pl.PlantState, p_d,
          rng: Optional[np.random.Generator] = None, dt: float = DT):
    """Drive the motor trajectory from a settled state.

    Returns ``(angles, torques)`` with shape (batch, samples): motor angle
    relative to the re-zeroed origin in deg, and torque-sensor readings in Nm.
    """
    p1, p2 = _as_batch(p_d)
    # re-zero: the motor reading at steady state becomes the origin
    origin = pl.read_motor_angle(np.broadcast_to(state.q, p1.shape), params)
    every = int(round(SAMPLE_PERIOD / dt))
    n_steps = int(round(SWEEP_DURATION / dt))
    angles, torques = [], []

    def sample(st):
        _, tau, _ = pl.read_sensors(st, params, rng)
        angles.append(pl.read_motor_angle(st.q, params) - origin)
        torques.append(np.broadcast_to(tau, p1.shape))

    sample(state)
    for k in range(1, n_steps + 1):
        cmd = np.deg2rad(origin + motor_trajectory(k * dt))
        state = pl.step(state, (p1, p2), pl.ExternalCoupling("motor_locked", cmd), dt,
                        params)
        if k % every == 0:
            sample(state)
    return np.stack(angles, axis=1), np.stack(torques, axis=1)


def zero_crossing_regression(angles, torques, direction: str,
                             window: float = REGRESSION_WINDOW) -> float:
    """Least-squares slope (Nm/rad) of torque vs. angle around an interior crossing.

    Uses the contiguous monotone run through the crossing in ``direction``
    ("up" or "down") restricted to ``|angle| <= window`` degrees; the run must
    contain samples on both sides of zero.
    """
    a = np.asarray(angles, dtype=float)
    tau = np.asarray(torques, dtype=float)
    if direction == "up":
        sign = 1.0
    elif direction == "down":
        sign = -1.0
    else:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    s = sign * a
    # first sample at or past zero after a strictly negative one
    starts = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0] + 1
    for c in starts:
        lo = c
        while lo > 0 and s[lo - 1] <= s[lo] and abs(a[lo - 1]) <= window:
            lo -= 1
        hi = c
        while hi < len(a) - 1 and s[hi + 1] >= s[hi] and abs(a[hi + 1]) <= window:
            hi += 1
        seg = slice(lo, hi + 1)
        if np.any(s[seg] > 0) and np.any(s[seg] < 0):
            if hi - lo + 1 < MIN_SAMPLES:
                raise InsufficientSamples(
                    f"{hi - lo + 1} samples in the {direction} crossing window")
            x = np.deg2rad(a[seg])
            return float(np.polyfit(x, tau[seg], 1)[0])
    raise InsufficientSamples(f"no interior {direction}-going zero crossing found")


def _measure_batch(params, p1, p2, state=None, rng=None, window=REGRESSION_WINDOW):
    state, q_i = settle(params, (p1, p2), state)
    angles, torques = sweep(params, state, (p1, p2), rng)
    results = []
    for k in range(len(p1)):
        try:
            up = zero_crossing_regression(angles[k], torques[k], "up", window)
            down = zero_crossing_regression(angles[k], torques[k], "down", window)
        except InsufficientSamples as exc:
            raise MeasurementError(float(p1[k]), float(p2[k]), exc) from exc
        results.append(StiffnessMeasurement(float(q_i[k]), up, down, 0.5 * (up + down),
                                            angles[k], torques[k]))
    return results


def measure_stiffness(params: pl.PlantParams, p_d, state: Optional[pl.PlantState] = None,
                      rng: Optional[np.random.Generator] = None,
                      window: float = REGRESSION_WINDOW) -> StiffnessMeasurement:
    """Run the full settle/re-zero/sweep/regress procedure at one pressure pair."""
    p1, p2 = _as_batch(p_d)
    if p1.size != 1:
        raise ValueError("measure_stiffness takes a single pressure pair; use measure_grid")
    if state is not None:
        state = pl.PlantState(*(np.atleast_1d(np.asarray(v, dtype=float))
                                for v in (state.q, state.q_dot, state.p1, state.p2)),
                              t=state.t)
    return _measure_batch(params, p1, p2, state, rng, window)[0]


def measure_grid(params: pl.PlantParams, p1, p2, rng=None, window=REGRESSION_WINDOW,
                 chunk: int = 1024, progress: Optional[Callable[[int, int], None]] = None):
    """Measure many pressure pairs in lockstep; results are in input order."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    out = []
    for start in range(0, len(p1), chunk):
        sl = slice(start, start + chunk)
        out.extend(_measure_batch(params, p1[sl], p2[sl], None, rng, window))
        if progress is not None:
            progress(len(out), len(p1))
    return out


def generate_dataset(params: pl.PlantParams, grid: GridSpec = GridSpec(), seed: int = 0,
                     window: float = REGRESSION_WINDOW, progress=None) -> Dataset:
    """Acquire one record (angle, stiffness, p1, p2) per full-factorial grid point."""
    p1, p2 = grid.pressures()
    rng = np.random.default_rng(seed)
    logger.info("measuring %d grid points", len(p1))
    ms = measure_grid(params, p1, p2, rng=rng, window=window, progress=progress)
    inputs = np.array([[m.steady_angle, m.stiffness] for m in ms])
    return Dataset(inputs, p1, p2)
