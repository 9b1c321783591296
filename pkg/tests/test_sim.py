import math

import numpy as np
import pytest

from slungload.dynamics import NX, TRUTH_NX
from slungload.sim import (
    Event,
    NoiseConfig,
    RunLog,
    Scenario,
    drag,
    hover_trajectory,
    imu_measure,
    initial_truth,
    metrics,
    run,
    truth_accelerations,
    truth_step,
)

HOVER = hover_trajectory([0.0, 0.0, 1.0])


def hover_truth(params, tilt=0.0, swing=0.0):
    x = np.zeros(NX)
    rho = np.array([math.sin(tilt), 0.0, -math.cos(tilt)])
    x[0:3] = [0.0, 0.0, 1.0]
    x[6:9] = rho
    x[9:12] = [0.0, swing, 0.0]
    x[12] = 1.0
    return initial_truth(x, params, params.hover_thrust)


def make_log(x_L, ref_L, rho=(0.0, 0.0, -1.0), ref_Q=None, l=0.6):
    K = len(x_L)
    x = np.zeros((K, TRUTH_NX))
    x[:, 0:3] = x_L
    x[:, 6:9] = rho
    ref_Q = ref_L - l * np.asarray(rho) if ref_Q is None else ref_Q
    z = np.zeros((K, 4))
    return RunLog(np.arange(K) * 1e-3, x, ref_L, ref_Q, z, z, np.zeros((K, 6)), np.ones(K), np.zeros((0, 8)), [])


# --- sensors ----------------------------------------------------------------------

def test_imu_without_noise_is_truth(params):
    x = hover_truth(params, tilt=0.2, swing=0.3)
    n_cmd = x[19:23] * 1.01
    f_Q, f_L = np.array([0.1, 0, 0]), np.array([0, 0.2, 0])
    m = imu_measure(x, n_cmd, params, f_Q, f_L, NoiseConfig(0.0), np.random.default_rng(0), 0.5)
    n_dot = (n_cmd - x[19:23]) / params.rotor.dt_m
    a_Q, a_L, tv, _ = truth_accelerations(x, x[19:23], n_dot, params, f_Q, f_L)
    np.testing.assert_array_equal(m.acc_Q, a_Q)
    np.testing.assert_array_equal(m.acc_L, a_L)
    np.testing.assert_array_equal(m.thrust_vec, tv)
    assert m.stamp == 0.5


def test_imu_noise_level(params):
    x = hover_truth(params)
    rng = np.random.default_rng(7)
    clean = imu_measure(x, x[19:23], params, np.zeros(3), np.zeros(3), NoiseConfig(0.0), rng, 0.0)
    noisy = np.array(
        [imu_measure(x, x[19:23], params, np.zeros(3), np.zeros(3), NoiseConfig(0.05), rng, 0.0).acc_L for _ in range(10000)]
    )
    assert np.std(noisy - clean.acc_L) == pytest.approx(0.05, rel=0.05)


def test_noise_does_not_touch_truth(params):
    a = run(Scenario(HOVER, 0.5, noise=NoiseConfig(0.0), force_comp=False, indi=False), params)
    b = run(Scenario(HOVER, 0.5, noise=NoiseConfig(0.5), force_comp=False, indi=False), params)
    # without force compensation the measurements feed nothing back
    np.testing.assert_array_equal(a.x, b.x)


def test_drag_model():
    f = drag(np.array([4.5, 0, 0]), np.zeros(3), 0.01)
    assert f[0] == pytest.approx(0.5 * 1.225 * 0.01 * 4.5**2)
    np.testing.assert_array_equal(drag(np.ones(3), np.ones(3), 0.01), 0.0)


# --- truth integration ------------------------------------------------------------

def test_energy_conserved_under_constant_thrust(params):
    # level attitude, rotors at their commanded speed: the thrust is a constant force,
    # so kinetic + gravity potential - F z_Q is conserved
    x = hover_truth(params, tilt=0.3, swing=0.5)
    F = params.hover_thrust

    def energy(x):
        rho, rho_dot = x[6:9], x[9:12]
        x_Q = x[0:3] - params.l * rho
        v_Q = x[3:6] - params.l * rho_dot
        ke = 0.5 * params.m_Q * v_Q @ v_Q + 0.5 * params.m_L * x[3:6] @ x[3:6]
        return ke + params.g * (params.m_Q * x_Q[2] + params.m_L * x[2]) - F * x_Q[2]

    e0 = energy(x)
    z = np.zeros(3)
    T = 10.0
    n_cmd = x[19:23].copy()
    for _ in range(int(T / 1e-3)):
        x = truth_step(x, n_cmd, params, z, z, z, 1e-3)
    assert abs(energy(x) - e0) / T < 1e-4


def test_hover_is_a_fixed_point_of_the_truth(params):
    x = hover_truth(params)
    y = truth_step(x, x[19:23], params, np.zeros(3), np.zeros(3), np.zeros(3), 1e-3)
    np.testing.assert_allclose(y, x, atol=1e-12)


# --- scenarios and runs -------------------------------------------------------------

def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(HOVER, 1.0, events=(Event("wind", 2.0), Event("wind", 1.0)))
    with pytest.raises(ValueError):
        Event("teleport", 1.0)
    with pytest.raises(ValueError):
        Event("attach_mass", 1.0, mass=-0.1)
    with pytest.raises(ValueError):
        Scenario(HOVER, 1.0, outer_every=3)  # 20 ms stages are not a multiple of 3 ms
    with pytest.raises(ValueError):
        Scenario(HOVER, 0.0)
    assert Scenario(HOVER, 1.0, force_comp=False, indi=True).variant == "+indi"


def test_run_log_shape_and_timestamps(params):
    log = run(Scenario(HOVER, 0.3), params)
    K = len(log.t)
    assert K == 301
    np.testing.assert_allclose(np.diff(log.t), 1e-3, rtol=1e-12)
    assert log.x.shape == (K, TRUTH_NX) and log.u.shape == (K, 4) and log.f_est.shape == (K, 6)
    assert len(log.diag) == 31


def test_run_is_deterministic(params, tmp_path):
    sc = Scenario(HOVER, 0.5, events=(Event("wind", 0.1, vector=(3.0, 0, 0), gust=(1, 0, 0), gust_freq=0.5),), seed=3)
    a, b = run(sc, params), run(sc, params)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    a.diag_to_csv(tmp_path / "da.csv")
    b.diag_to_csv(tmp_path / "db.csv")
    assert (tmp_path / "da.csv").read_bytes() == (tmp_path / "db.csv").read_bytes()


def test_hover_without_disturbance(params):
    log = run(Scenario(HOVER, 10.0), params)
    m = metrics(log, params)
    assert not m["aborted"]
    assert m["rmse_L"] < 0.5


def test_attached_mass_shows_up_in_the_estimate(params):
    log = run(Scenario(HOVER, 3.0, events=(Event("attach_mass", 2.0, mass=0.05),)), params)
    fz = log.f_est[:, 2] + log.f_est[:, 5]
    before = fz[(log.t > 1.5) & (log.t < 2.0)].mean()
    after = fz[log.t >= 2.5]
    assert abs(before) < 0.05
    assert np.all(np.abs(after - before + 0.49) <= 0.05)
    assert log.events == [(2.0, "attach_mass")]


def test_slack_cable_aborts(params):
    # a violent updraft lifts the payload faster than the vehicle
    log = run(Scenario(HOVER, 2.0, events=(Event("wind", 0.5, vector=(0, 0, 80.0)),), force_comp=False), params)
    assert log.aborted.startswith("cable went slack")
    assert log.t[-1] < 2.0 and log.tension[-1] <= 0


# --- metrics --------------------------------------------------------------------------

def test_metrics_zero_on_reference():
    ref = np.column_stack([np.linspace(0, 1, 100), np.zeros(100), np.ones(100)])
    m = metrics(make_log(ref, ref))
    assert m["rmse_L"] == m["max_L"] == m["rmse_Q"] == m["max_Q"] == 0.0


def test_metrics_constant_offset():
    ref = np.zeros((50, 3))
    m = metrics(make_log(ref + [0.01, 0, 0], ref))
    assert m["rmse_Q"] == pytest.approx(1.0, rel=1e-12)
    assert m["max_Q"] == pytest.approx(1.0, rel=1e-12)
    assert m["rmse_L"] == pytest.approx(1.0, rel=1e-12)


def test_metrics_sinusoid():
    t = np.arange(10000) * 1e-3
    A = 0.02
    ref = np.zeros((len(t), 3))
    m = metrics(make_log(ref + np.column_stack([A * np.sin(2 * np.pi * t), 0 * t, 0 * t]), ref))
    # signed error A sin has RMS A / sqrt(2)
    assert m["rmse_L"] == pytest.approx(100 * A / math.sqrt(2), rel=0.01)


def test_metrics_rejects_empty_log():
    with pytest.raises(ValueError):
        metrics(make_log(np.zeros((0, 3)), np.zeros((0, 3))))
