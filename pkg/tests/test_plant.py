import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bisect_root
from vsagp import plant as pl
from vsagp.plant import ExternalCoupling, PlantParams, PlantState, SensorNoise

P = PlantParams()
pressure = st.floats(0.0, 0.4, allow_nan=False)


def test_net_torque_symmetric_pressures_at_origin():
    assert pl.net_torque(0.0, 0.2, 0.2, P) == 0.0


def test_net_torque_hand_value():
    # (0.05 + 0.4) * 0.3 - 0.05 * 0.3
    assert pl.net_torque(0.0, 0.4, 0.0, P) == pytest.approx(0.12, abs=1e-15)


def test_equilibrium_angle_equal_pressures():
    assert pl.equilibrium_angle(0.3, 0.3, P) == 0.0


def test_equilibrium_angle_matches_bisection_example():
    root = bisect_root(lambda q: pl.net_torque(q, 0.4, 0.0, P), -0.5, 0.5)
    assert root == pytest.approx(0.24, abs=1e-12)
    assert pl.equilibrium_angle(0.4, 0.0, P) == pytest.approx(root, abs=1e-12)


def test_equilibrium_angle_matches_bisection_on_grid():
    axis = np.linspace(0.0, 0.4, 50)
    for p1 in axis:
        for p2 in axis:
            root = bisect_root(lambda q: pl.net_torque(q, p1, p2, P), -0.5, 0.5)
            assert abs(pl.equilibrium_angle(p1, p2, P) - root) < 1e-10


@pytest.mark.parametrize("p, expected", [((0.0, 0.0), 0.1), ((0.1, 0.3), 0.5)])
def test_analytic_stiffness_examples(p, expected):
    h = 1e-6
    fd = -(pl.net_torque(h, *p, P) - pl.net_torque(-h, *p, P)) / (2 * h)
    assert fd == pytest.approx(expected, rel=1e-6)
    assert pl.analytic_stiffness(*p, P) == pytest.approx(expected, rel=1e-12)


def test_analytic_stiffness_finite_differences_random():
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(100):
        p1, p2 = rng.uniform(0, 0.4, 2)
        q = rng.uniform(-0.4, 0.4)
        fd = -(pl.net_torque(q + h, p1, p2, P) - pl.net_torque(q - h, p1, p2, P)) / (2 * h)
        assert pl.analytic_stiffness(p1, p2, P) == pytest.approx(fd, rel=1e-6)


@given(pressure, pressure)
def test_equilibrium_antisymmetric_in_swap(p1, p2):
    assert pl.equilibrium_angle(p1, p2, P) == pytest.approx(
        -pl.equilibrium_angle(p2, p1, P), abs=1e-15)


def test_angle_envelope_monotone():
    # at fixed mean pressure the angle grows with the difference ...
    for mean in np.linspace(0.05, 0.35, 7):
        half = np.linspace(0, min(mean, 0.4 - mean), 20)
        q = pl.equilibrium_angle(mean + half, mean - half, P)
        assert np.all(np.diff(q) > 0)
    # ... and at fixed difference it shrinks as the mean rises
    for diff in np.linspace(0.02, 0.2, 7):
        mean = np.linspace(diff / 2, 0.4 - diff / 2, 20)
        q = pl.equilibrium_angle(mean + diff / 2, mean - diff / 2, P)
        assert np.all(np.diff(q) < 0)


def test_default_envelope_ranges():
    assert math.degrees(pl.equilibrium_angle(0.4, 0.0, P)) == pytest.approx(13.75, abs=0.01)
    assert pl.analytic_stiffness(0.4, 0.4, P) == pytest.approx(0.9)


def test_step_settles_to_equilibrium():
    st_ = PlantState()
    for _ in range(5000):
        st_ = pl.step(st_, (0.3, 0.1), pl.FREE, 1e-3, P)
    assert abs(st_.q - pl.equilibrium_angle(0.3, 0.1, P)) < 1e-4
    assert abs(st_.q_dot) < 1e-4
    assert st_.t == pytest.approx(5.0)


def test_step_motor_locked_fixed_point():
    st0 = PlantState(q=0.1, q_dot=0.0, p1=0.2, p2=0.3, t=1.0)
    st1 = pl.step(st0, (0.2, 0.3), ExternalCoupling("motor_locked", 0.1), 1e-3, P)
    assert (st1.q, st1.q_dot, st1.p1, st1.p2) == (0.1, 0.0, 0.2, 0.3)
    assert st1.t == pytest.approx(1.001)


def test_step_motor_locked_tracks_command():
    st_ = PlantState(p1=0.1, p2=0.2)
    for k in range(1, 200):
        cmd = 0.01 * math.sin(k * 0.01)
        st_ = pl.step(st_, (0.1, 0.2), ExternalCoupling("motor_locked", cmd), 1e-3, P)
        assert st_.q == cmd


def test_step_energy_non_increasing():
    p1, p2 = 0.35, 0.05
    s = pl.analytic_stiffness(p1, p2, P)
    q_eq = pl.equilibrium_angle(p1, p2, P)

    def energy(x):
        return 0.5 * P.inertia * x.q_dot ** 2 + 0.5 * s * (x.q - q_eq) ** 2

    st_ = PlantState(q=-0.2, q_dot=0.5, p1=p1, p2=p2)
    e_prev = energy(st_)
    for _ in range(3000):
        st_ = pl.step(st_, (p1, p2), pl.FREE, 1e-3, P)
        e = energy(st_)
        assert e <= e_prev + 1e-8
        e_prev = e


@pytest.mark.parametrize("dt", [0.0, -1e-3, 0.02])
def test_step_rejects_bad_timestep(dt):
    with pytest.raises(pl.InvalidTimestep):
        pl.step(PlantState(), (0.1, 0.1), pl.FREE, dt, P)


@settings(max_examples=50, deadline=None)
@given(pressure, pressure, st.floats(-2, 2), st.floats(-1, 1))
def test_step_respects_limits(pd1, pd2, q, p_off):
    st_ = PlantState(q=float(np.clip(q, -0.5, 0.5)), q_dot=50.0 * q,
                     p1=float(np.clip(0.2 + p_off, 0, 0.4)), p2=0.2)
    for _ in range(20):
        st_ = pl.step(st_, (pd1 * 3 - 0.4, pd2), pl.FREE, 1e-3, P)
        assert abs(st_.q) <= P.angle_limit
        assert 0 <= st_.p1 <= 0.4 and 0 <= st_.p2 <= 0.4


def test_step_deterministic():
    def run():
        st_ = PlantState()
        for _ in range(100):
            st_ = pl.step(st_, (0.25, 0.05), pl.FREE, 1e-3, P)
        return st_
    assert run() == run()


def test_read_sensors_angle_examples():
    q, _, _ = pl.read_sensors(PlantState(q=0.0), P)
    assert q == 0.0
    q, _, _ = pl.read_sensors(PlantState(q=0.30), P)
    assert q == pytest.approx(round(17.188733853924695 / 0.35) * 0.35, abs=1e-12)
    assert q == pytest.approx(17.15, abs=1e-12)


def test_read_sensors_torque_is_holding_torque():
    params = P.with_noise(SensorNoise.noiseless())
    st_ = PlantState(q=0.05, p1=0.3, p2=0.1)
    _, tau, (p1, p2) = pl.read_sensors(st_, params)
    assert tau == -pl.net_torque(0.05, 0.3, 0.1, params)
    assert (p1, p2) == (0.3, 0.1)


def test_read_sensors_repeatable_without_noise():
    st_ = PlantState(q=0.123, p1=0.21, p2=0.17)
    assert all(np.array_equal(a, b) for a, b in zip(pl.read_sensors(st_, P),
                                                   pl.read_sensors(st_, P)))


def test_read_sensors_noise_needs_rng():
    noisy = P.with_noise(SensorNoise(torque_sigma=0.01))
    with pytest.raises(ValueError):
        pl.read_sensors(PlantState(), noisy)
    _, tau, _ = pl.read_sensors(PlantState(), noisy, np.random.default_rng(0))
    assert tau != 0.0


def test_quantize_zero_quantum_passthrough():
    assert pl.quantize(0.123456, 0.0) == 0.123456


def test_params_validation():
    with pytest.raises(ValueError):
        PlantParams(inertia=0.0)
    with pytest.raises(ValueError):
        ExternalCoupling("welded")
