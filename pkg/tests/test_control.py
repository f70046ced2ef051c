import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vsagp import control as ctl
from vsagp import evaluation, gp
from vsagp.control import ControllerConfig, PiState, Setpoint

CFG = ControllerConfig()


def test_pi_zero_error_zero_output():
    _, dp = ctl.pi_step(PiState(), 0.0, 1e-3, CFG)
    assert dp == 0.0


def test_pi_constant_error_closed_form():
    s = PiState()
    for _ in range(2000):
        s, dp = ctl.pi_step(s, 1.0, 1e-3, CFG)
    assert dp == pytest.approx(0.025 + 0.05 * 2.0, abs=1e-12)
    assert dp == pytest.approx(0.125, abs=1e-12)


def test_pi_zero_gains_is_pure_feedforward():
    cfg = ControllerConfig(kp=0.0, ki=0.0)
    assert cfg.pure_feedforward
    s = PiState()
    for e in (3.0, -1.0, 100.0):
        s, dp = ctl.pi_step(s, e, 1e-3, cfg)
        assert dp == 0.0


def test_pi_anti_windup():
    s = PiState()
    for _ in range(100_000):
        s, dp = ctl.pi_step(s, 50.0, 1e-3, CFG)
        assert abs(dp) <= 0.4
    assert dp == pytest.approx(0.4, abs=1e-12)
    # the clamped integral lets the output leave saturation as soon as the error flips
    s, dp = ctl.pi_step(s, -1.0, 1e-3, CFG)
    assert dp < 0.4 - 0.02


def test_gains_must_be_non_negative():
    with pytest.raises(ValueError):
        ControllerConfig(kp=-0.1)


def test_merge_examples():
    p = ctl.merge((0.22, 0.10), 0.04)
    assert p == pytest.approx((0.24, 0.08), abs=1e-15)
    assert ctl.merge((0.22, 0.10), 0.0) == (0.22, 0.10)


def test_merge_clamps_per_bellows():
    assert ctl.merge((0.39, 0.01), 0.1) == (0.4, 0.0)


@given(st.fractions(0, Fraction(2, 5)), st.fractions(0, Fraction(2, 5)),
       st.fractions(Fraction(-2, 5), Fraction(2, 5)))
def test_merge_preserves_sum_exactly(a, b, dp):
    p1, p2 = ctl.merge_unclamped((a, b), dp)
    assert p1 + p2 == a + b
    assert p1 - p2 == a - b + dp


def test_default_schedule():
    sched = ctl.default_schedule()
    assert len(sched) == 14
    assert [(s.q_d, s.s_d) for s in sched[:4]] == [(-10, 0.3), (-10, 0.6), (-5, 0.3), (-5, 0.6)]


@pytest.fixture(scope="module")
def small_cv_mae(small_noiseless_models):
    d, _, _ = small_noiseless_models
    return evaluation.cross_validate(d, evaluation.CvConfig(n_folds=5, n_repeats=1)).grand_mean


def test_feedforward_interpolates_training_points(small_noiseless_models):
    d, g1, g2 = small_noiseless_models
    for i in (0, 17, 40, 80):
        q, s = d.inputs[i]
        p = ctl.feedforward(g1, g2, q, s)
        for g, truth, got in ((g1, d.p1[i], p[0]), (g2, d.p2[i], p[1])):
            tol = 10 * math.sqrt(g.hyperparams.noise_variance) * g.output_standardizer.standard_deviations[0]
            assert abs(got - float(np.clip(truth, 0, 0.4))) <= max(tol, 1e-12)


def test_feedforward_symmetric_at_zero_angle(small_noiseless_models, small_cv_mae):
    d, g1, g2 = small_noiseless_models
    for i in np.nonzero(np.isclose(d.p1, d.p2))[0]:
        p1, p2 = ctl.feedforward(g1, g2, 0.0, d.inputs[i, 1])
        assert abs(p1 - p2) <= 2 * small_cv_mae


def test_feedforward_mean_pressure_rises_with_stiffness(small_noiseless_models):
    _, g1, g2 = small_noiseless_models
    means = [sum(ctl.feedforward(g1, g2, 0.0, s)) / 2 for s in np.linspace(0.15, 0.85, 15)]
    assert np.all(np.diff(means) > 0)


def test_feedforward_rejects_non_finite(small_noiseless_models):
    _, g1, g2 = small_noiseless_models
    with pytest.raises(gp.NonFiniteInput):
        ctl.feedforward(g1, g2, math.inf, 0.3)


SHORT = [Setpoint(-5.0, 0.3, 3.0), Setpoint(-5.0, 0.6, 3.0), Setpoint(2.0, 0.3, 3.0),
         Setpoint(2.0, 0.6, 3.0)]


@pytest.fixture(scope="module")
def short_run(small_noiseless_models, noiseless_params):
    _, g1, g2 = small_noiseless_models
    return ctl.run_tracking_experiment(noiseless_params, g1, g2, SHORT)


def test_tracking_reaches_setpoints(short_run):
    assert short_run.steady_state_mae <= 0.35
    assert all(m <= 0.35 for m in short_run.steady_mae)


def test_tracking_stiffness_rises_when_doubled(short_run):
    assert short_run.stiffness_increases() == {-5.0: True, 2.0: True}


def test_tracking_stiffness_follows_commanded_pressures(short_run):
    for c in short_run.checks:
        assert abs(c.s_measured - c.s_commanded_pressures) <= 0.02 * c.s_commanded_pressures


def test_tracking_log_invariants(short_run):
    cols = short_run.columns
    assert len(short_run) == 12_000
    assert np.allclose(np.diff(cols["t_s"]), 1e-3)
    assert np.max(np.abs(cols["dp_fb"])) <= 0.4
    assert np.all((cols["p1_d"] >= 0) & (cols["p1_d"] <= 0.4))
    raw1 = cols["p1_ff"] + cols["dp_fb"] / 2
    raw2 = cols["p2_ff"] - cols["dp_fb"] / 2
    free = (raw1 == cols["p1_d"]) & (raw2 == cols["p2_d"])
    assert np.count_nonzero(~free) == sum(short_run.clamp_ticks)
    np.testing.assert_allclose((cols["p1_d"] + cols["p2_d"])[free],
                               (cols["p1_ff"] + cols["p2_ff"])[free], atol=1e-15)
    assert short_run.to_csv().splitlines()[0] == ",".join(ctl.LOG_COLUMNS)
    assert len(short_run.checks_to_csv().splitlines()) == 5


def test_tracking_deterministic(small_noiseless_models, default_params):
    _, g1, g2 = small_noiseless_models
    sched = SHORT[:2]
    a = ctl.run_tracking_experiment(default_params, g1, g2, sched, seed=3)
    b = ctl.run_tracking_experiment(default_params, g1, g2, sched, seed=3)
    assert a.to_csv() == b.to_csv()
    assert a.summary_json() == b.summary_json()


def test_pure_feedforward_error_bounded(small_noiseless_models, noiseless_params, small_cv_mae):
    _, g1, g2 = small_noiseless_models
    cfg = ControllerConfig(kp=0.0, ki=0.0)
    sched = [Setpoint(-5.0, 0.4, 2.0), Setpoint(5.0, 0.6, 2.0)]
    log = ctl.run_tracking_experiment(noiseless_params, g1, g2, sched, cfg,
                                      measure_stiffness=False, steady_window=1.0)
    assert log.summary()["pure_feedforward"]
    assert np.all(log.columns["dp_fb"] == 0)
    P = noiseless_params
    for sp, err in zip(sched, log.steady_mae):
        # pressure errors e1, e2 shift the equilibrium by q0*k1*(e1 - e2)/s rad;
        # pointwise GP error is taken as at most 3x the CV MAE
        bound = math.degrees(P.rest_offset * P.pressure_rate * 2 * 3 * small_cv_mae / sp.s_d)
        assert err <= bound


def test_empty_schedule_rejected(small_noiseless_models, noiseless_params):
    _, g1, g2 = small_noiseless_models
    with pytest.raises(ValueError):
        ctl.run_tracking_experiment(noiseless_params, g1, g2, [])
