"""GP feedforward + PI feedback for simultaneous angle and stiffness control.

Per cycle: read the encoder, run the PI law on the angle error, split the
resulting pressure difference equally onto the two feedforward pressures,
and command the valves. Stiffness is never fed back; it is set purely by the
feedforward mean pressure.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import gp
from . import plant as pl
from . import testbench as tb


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 0.025  # bar/deg
    ki: float = 0.05  # bar/(s deg)
    cycle_time: float = 1e-3  # s
    pressure_min: float = 0.0  # bar
    pressure_max: float = 0.4  # bar
    feedback_limit: float = 0.4  # bound on |dp_fb|, bar

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("controller gains must be non-negative")
        if not self.cycle_time > 0:
            raise ValueError("cycle_time must be positive")

    @property
    def pure_feedforward(self) -> bool:
        return self.kp == 0 and self.ki == 0


@dataclass(frozen=True)
class PiState:
    integral: float = 0.0  # deg s
    last_output: float = 0.0  # bar


@dataclass(frozen=True)
class Setpoint:
    q_d: float  # deg
    s_d: float  # Nm/rad
    hold_duration: float = 10.0  # s


def default_schedule(angles=(-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0),
                     stiffnesses=(0.3, 0.6), hold_duration=10.0):
    """Every angle visited once, low stiffness first then the higher levels."""
    return [Setpoint(float(q), float(s), float(hold_duration))
            for q in angles for s in stiffnesses]


def pi_step(state: PiState, error: float, dt: float, cfg: ControllerConfig):
    """One PI update on the angle error (deg). Returns ``(new_state, dp_fb)``.

    The integral is clamped so the output stays within the feedback limit.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    limit = cfg.feedback_limit
    integral = state.integral + error * dt
    p_term = cfg.kp * error
    if cfg.ki > 0:
        integral = min(max(integral, (-limit - p_term) / cfg.ki), (limit - p_term) / cfg.ki)
    dp = p_term + cfg.ki * integral
    dp = min(max(dp, -limit), limit)
    return PiState(integral, dp), dp


def merge_unclamped(p_ff, dp_fb):
    half = dp_fb / 2
    return p_ff[0] + half, p_ff[1] - half


def merge(p_ff, dp_fb, cfg: ControllerConfig = ControllerConfig()):
    """Desired pressures: the feedback difference is split equally, then clamped."""
    a, b = merge_unclamped(p_ff, dp_fb)
    lo, hi = cfg.pressure_min, cfg.pressure_max
    return min(max(a, lo), hi), min(max(b, lo), hi)


def feedforward(gp_I: gp.TrainedGP, gp_II: gp.TrainedGP, q_d: float, s_d: float,
                cfg: ControllerConfig = ControllerConfig()):
    """Predicted bellows pressures for a desired angle (deg) and stiffness (Nm/rad)."""
    if not (math.isfinite(q_d) and math.isfinite(s_d)):
        raise gp.NonFiniteInput(f"non-finite setpoint ({q_d}, {s_d})")
    x = np.array([[q_d, s_d]])
    lo, hi = cfg.pressure_min, cfg.pressure_max
    p1 = float(gp.predict_mean(gp_I, x)[0])
    p2 = float(gp.predict_mean(gp_II, x)[0])
    return min(max(p1, lo), hi), min(max(p2, lo), hi)


LOG_COLUMNS = ("t_s", "q_d_deg", "q_meas_deg", "s_d", "p1_ff", "p2_ff", "dp_fb",
               "p1_d", "p2_d", "p1", "p2")


@dataclass
class StiffnessCheck:
    setpoint: int
    q_d: float
    s_d: float
    p1_d: float
    p2_d: float
    s_measured: float
    s_commanded_pressures: float  # plant stiffness at the commanded pressures
    steady_mae_deg: float
    clamped: bool

    @property
    def rel_error(self) -> float:
        return abs(self.s_measured - self.s_d) / self.s_d


@dataclass
class TrackingLog:
    columns: dict
    setpoints: list
    checks: list = field(default_factory=list)
    steady_mae: list = field(default_factory=list)  # per setpoint, deg
    clamp_ticks: list = field(default_factory=list)  # per setpoint
    cfg: ControllerConfig = field(default_factory=ControllerConfig)
    steady_window: float = 2.0

    def __len__(self):
        return len(self.columns["t_s"])

    @property
    def steady_state_mae(self) -> float:
        """Mean |q_meas - q_d| over the steady windows of all holds (deg)."""
        mask = self.columns["steady"]
        err = np.abs(self.columns["q_meas_deg"] - self.columns["q_d_deg"])
        return float(err[mask].mean())

    def stiffness_increases(self) -> dict:
        """For each angle: does measured stiffness rise strictly with s_d?"""
        by_angle = {}
        for c in self.checks:
            by_angle.setdefault(c.q_d, []).append(c)
        out = {}
        for q, cs in by_angle.items():
            cs = sorted(cs, key=lambda c: c.s_d)
            out[q] = all(b.s_measured > a.s_measured for a, b in zip(cs, cs[1:]))
        return out

    def summary(self) -> dict:
        inc = self.stiffness_increases()
        within = sum(c.rel_error <= 0.10 for c in self.checks)
        return {
            "pure_feedforward": self.cfg.pure_feedforward,
            "kp_bar_per_deg": self.cfg.kp,
            "ki_bar_per_s_deg": self.cfg.ki,
            "cycle_time_s": self.cfg.cycle_time,
            "steady_window_s": self.steady_window,
            "steady_state_mae_deg": self.steady_state_mae,
            "n_configurations": len(self.setpoints),
            "n_stiffness_checks": len(self.checks),
            "stiffness_within_10pct": within,
            "stiffness_increases_at_every_angle": bool(inc) and all(inc.values()),
            "setpoints": [
                {"q_d_deg": sp.q_d, "s_d": sp.s_d, "hold_s": sp.hold_duration,
                 "steady_mae_deg": self.steady_mae[i], "clamp_ticks": self.clamp_ticks[i]}
                for i, sp in enumerate(self.setpoints)
            ],
            "stiffness_checks": [
                {**asdict(c), "rel_error": c.rel_error} for c in self.checks
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(LOG_COLUMNS) + "\n")
        data = np.column_stack([self.columns[c] for c in LOG_COLUMNS])
        np.savetxt(buf, data, fmt="%.9g", delimiter=",")
        return buf.getvalue()

    def checks_to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("setpoint,q_d_deg,s_d,p1_d,p2_d,s_measured,s_commanded_pressures,"
                  "rel_error,steady_mae_deg,clamped\n")
        for c in self.checks:
            buf.write(f"{c.setpoint},{c.q_d!r},{c.s_d!r},{c.p1_d!r},{c.p2_d!r},"
                      f"{c.s_measured!r},{c.s_commanded_pressures!r},{c.rel_error!r},"
                      f"{c.steady_mae_deg!r},{int(c.clamped)}\n")
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def run_tracking_experiment(params: pl.PlantParams, gp_I: gp.TrainedGP,
                            gp_II: gp.TrainedGP, schedule: Sequence[Setpoint],
                            cfg: ControllerConfig = ControllerConfig(),
                            measure_stiffness: bool = True, steady_window: float = 2.0,
                            seed: int = 0,
                            initial_state: Optional[pl.PlantState] = None) -> TrackingLog:
    """Closed-loop run through ``schedule``.

    After each hold the stiffness is measured with the test-bench procedure
    on a copy of the plant at the final commanded pressures; the main loop
    continues from the undisturbed state.
    """
    if not schedule:
        raise ValueError("schedule must not be empty")
    rng = np.random.default_rng(seed)
    dt = cfg.cycle_time
    state = initial_state or pl.PlantState()
    enc_q = params.noise.encoder_quantum_deg
    n_total = sum(int(round(sp.hold_duration / dt)) for sp in schedule)
    cols = {c: np.empty(n_total) for c in LOG_COLUMNS}
    cols["steady"] = np.zeros(n_total, dtype=bool)
    log = TrackingLog(cols, list(schedule), cfg=cfg, steady_window=steady_window)

    k = 0
    t = 0.0
    for i, sp in enumerate(schedule):
        p_ff = feedforward(gp_I, gp_II, sp.q_d, sp.s_d, cfg)  # constant over the hold
        pi = PiState()
        n_hold = int(round(sp.hold_duration / dt))
        n_steady = min(n_hold, int(round(steady_window / dt)))
        clamps = 0
        p_d = p_ff
        for j in range(n_hold):
            q_meas = float(pl.quantize(math.degrees(state.q), enc_q))
            pi, dp = pi_step(pi, sp.q_d - q_meas, dt, cfg)
            raw = merge_unclamped(p_ff, dp)
            p_d = merge(p_ff, dp, cfg)
            if p_d != raw:
                clamps += 1
            cols["t_s"][k] = t
            cols["q_d_deg"][k] = sp.q_d
            cols["q_meas_deg"][k] = q_meas
            cols["s_d"][k] = sp.s_d
            cols["p1_ff"][k], cols["p2_ff"][k] = p_ff
            cols["dp_fb"][k] = dp
            cols["p1_d"][k], cols["p2_d"][k] = p_d
            cols["p1"][k], cols["p2"][k] = state.p1, state.p2
            cols["steady"][k] = j >= n_hold - n_steady
            state = pl.step(state, p_d, pl.FREE, dt, params)
            state = pl.PlantState(float(state.q), float(state.q_dot), float(state.p1),
                                  float(state.p2), state.t)
            k += 1
            t = k * dt
        seg = slice(k - n_steady, k)
        mae = float(np.mean(np.abs(cols["q_meas_deg"][seg] - sp.q_d)))
        log.steady_mae.append(mae)
        log.clamp_ticks.append(clamps)
        if measure_stiffness:
            m = tb.measure_stiffness(params, p_d, state=state, rng=rng)
            log.checks.append(StiffnessCheck(
                setpoint=i, q_d=sp.q_d, s_d=sp.s_d, p1_d=float(p_d[0]), p2_d=float(p_d[1]),
                s_measured=m.stiffness,
                s_commanded_pressures=float(pl.analytic_stiffness(p_d[0], p_d[1], params)),
                steady_mae_deg=mae, clamped=p_d != raw,
            ))
    return log
