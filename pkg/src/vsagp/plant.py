"""Synthetic antagonistic-bellows joint used in place of the physical actuator.

Two bellows act on one revolute joint through affine-in-pressure springs. The
pressure difference moves the equilibrium angle, the pressure sum sets the
stiffness. All functions broadcast over numpy arrays so a whole pressure grid
can be simulated in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class InvalidTimestep(ValueError):
    pass


@dataclass(frozen=True)
class SensorNoise:
    """Sensor resolutions of the test bench. A quantum of 0 disables rounding."""

    encoder_quantum_deg: float = 0.35
    torque_quantum: float = 0.001
    pressure_quantum: float = 0.005
    motor_quantum_deg: float = 0.03
    torque_sigma: float = 0.0

    @classmethod
    def noiseless(cls) -> "SensorNoise":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PlantParams:
    rest_offset: float = 0.3  # q0, rad
    base_rate: float = 0.05  # k0, Nm/rad
    pressure_rate: float = 1.0  # k1, Nm/(rad*bar)
    inertia: float = 1e-3  # J, kg m^2
    damping: float = 0.05  # d, Nm s/rad
    valve_time_constant: float = 0.05  # T_v, s
    angle_limit: float = 0.5  # symmetric joint limit, rad
    pressure_max: float = 0.4  # bar
    noise: SensorNoise = field(default_factory=SensorNoise)

    def __post_init__(self):
        for name in ("rest_offset", "base_rate", "pressure_rate", "inertia",
                     "damping", "valve_time_constant", "angle_limit", "pressure_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def with_noise(self, noise: SensorNoise) -> "PlantParams":
        return replace(self, noise=noise)


@dataclass(frozen=True)
class PlantState:
    """Joint angle/velocity, actual bellows pressures and time.

    Fields may be floats or equally shaped arrays (batched simulation).
    """

    q: float = 0.0
    q_dot: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    t: float = 0.0

    @property
    def p(self):
        return (self.p1, self.p2)


@dataclass(frozen=True)
class ExternalCoupling:
    mode: str = "free"  # "free" or "motor_locked"
    motor_angle_command: float = 0.0  # rad, used only when motor_locked

    def __post_init__(self):
        if self.mode not in ("free", "motor_locked"):
            raise ValueError(f"unknown coupling mode {self.mode!r}")


FREE = ExternalCoupling()


def net_torque(q, p1, p2, params: PlantParams):
    """Joint torque of the antagonistic spring pair in Nm."""
    k0, k1, q0 = params.base_rate, params.pressure_rate, params.rest_offset
    return (k0 + k1 * p1) * (q0 - q) - (k0 + k1 * p2) * (q0 + q)


def equilibrium_angle(p1, p2, params: PlantParams):
    """Closed-form root of net_torque in q (rad)."""
    k0, k1, q0 = params.base_rate, params.pressure_rate, params.rest_offset
    return q0 * k1 * (p1 - p2) / (2.0 * k0 + k1 * (p1 + p2))


def analytic_stiffness(p1, p2, params: PlantParams):
    """-d(tau)/dq, independent of q for this torque law (Nm/rad)."""
    return 2.0 * params.base_rate + params.pressure_rate * (p1 + p2)


def _derivatives(q, q_dot, p1, p2, p1_d, p2_d, params):
    tau = net_torque(q, p1, p2, params)
    q_ddot = (tau - params.damping * q_dot) / params.inertia
    tv = params.valve_time_constant
    return q_dot, q_ddot, (p1_d - p1) / tv, (p2_d - p2) / tv


def step(state: PlantState, p_d, coupling: ExternalCoupling, dt: float,
         params: PlantParams) -> PlantState:
    """Advance the plant by one RK4 step of length ``dt`` with ``p_d`` held."""
    if not (0.0 < dt <= 0.01):
        raise InvalidTimestep(f"dt must lie in (0, 0.01] s, got {dt}")
    p1_d = np.clip(p_d[0], 0.0, params.pressure_max)
    p2_d = np.clip(p_d[1], 0.0, params.pressure_max)
    y = (state.q, state.q_dot, state.p1, state.p2)

    def f(s):
        return _derivatives(s[0], s[1], s[2], s[3], p1_d, p2_d, params)

    k1 = f(y)
    k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k1)))
    k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k2)))
    k4 = f(tuple(a + dt * b for a, b in zip(y, k3)))
    q, q_dot, p1, p2 = (
        a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )

    if coupling.mode == "motor_locked":
        # rigid connection: the motor dictates the joint angle
        q = coupling.motor_angle_command
        q_dot = (q - state.q) / dt

    lim = params.angle_limit
    at_stop = np.abs(q) > lim
    if np.any(at_stop):
        q = np.clip(q, -lim, lim)
        q_dot = np.where(at_stop, 0.0, q_dot)

    return PlantState(
        q=q,
        q_dot=q_dot,
        p1=np.clip(p1, 0.0, params.pressure_max),
        p2=np.clip(p2, 0.0, params.pressure_max),
        t=state.t + dt,
    )


def quantize(x, quantum: float):
    """Round to the nearest multiple of ``quantum``; a zero quantum passes through."""
    if quantum <= 0:
        return x
    return np.round(np.asarray(x) / quantum) * quantum


def read_sensors(state: PlantState, params: PlantParams,
                 rng: Optional[np.random.Generator] = None):
    """Encoder angle (deg), torque-sensor reading (Nm) and valve pressures (bar).

    The torque is what the rigidly coupled motor has to supply to hold the
    joint, i.e. the negative of the bellows torque.
    """
    noise = params.noise
    q_deg = quantize(np.rad2deg(state.q), noise.encoder_quantum_deg)
    tau = -net_torque(state.q, state.p1, state.p2, params)
    if noise.torque_sigma > 0:
        if rng is None:
            raise ValueError("torque noise enabled but no rng supplied")
        tau = tau + rng.normal(0.0, noise.torque_sigma, size=np.shape(tau))
    tau = quantize(tau, noise.torque_quantum)
    p = (quantize(state.p1, noise.pressure_quantum),
         quantize(state.p2, noise.pressure_quantum))
    return q_deg, tau, p


def read_motor_angle(q, params: PlantParams):
    """Motor resolver reading in degrees of a rigidly coupled joint angle ``q`` (rad)."""
    return quantize(np.rad2deg(q), params.noise.motor_quantum_deg)
