"""Closed-loop simulation of the planner, NMPC, force estimator and rate loop.

The truth model is the rigid-body variant of the taut-cable dynamics with
first-order motors, integrated by RK4 at 1 kHz.  The NMPC and the estimator run
every ``outer_every`` ticks, the rate loop every tick.  Scripted events change
the true payload mass, blow wind on both bodies, or add a constant body torque;
the controllers always keep the nominal parameters.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from slungload.dynamics import NX, ExternalForces, TRUTH_NX, cable_accelerations, rigid_body_rhs, rotor_forward
from slungload.estimator import EstimatorConfig, ForceEstimator, ForceMeasurement
from slungload.flatness import cable_direction
from slungload.indi import IndiConfig, IndiController, RateController
from slungload.minco import Boundary, PiecewisePoly, construct
from slungload.nmpc import NmpcConfig, ReferenceWindow, flat_reference, rti_step, shift_warm_start
from slungload.params import SystemParams
from slungload.rotation import body_z

EVENT_KINDS = ("wind", "attach_mass", "com_torque")
RHO_AIR = 1.225  # kg/m^3


@dataclass(frozen=True)
class Event:
    """A scripted disturbance switched on at time ``t`` (and kept on)."""

    kind: str
    t: float
    vector: tuple = (0.0, 0.0, 0.0)  # wind speed m/s or body torque N m
    mass: float = 0.0  # kg added to the payload
    gust: tuple = (0.0, 0.0, 0.0)  # sinusoidal wind amplitude, m/s
    gust_freq: float = 0.0  # Hz

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        if self.t < 0 or self.mass < 0:
            raise ValueError("event time and mass must be non-negative")
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))
        object.__setattr__(self, "gust", tuple(float(v) for v in self.gust))
        if len(self.vector) != 3 or len(self.gust) != 3:
            raise ValueError("event vectors need three components")


@dataclass(frozen=True)
class NoiseConfig:
    acc_sigma: float = 0.05  # m/s^2, both accelerometers
    gyro_sigma: float = 0.0  # rad/s


@dataclass(frozen=True)
class Scenario:
    """Everything a closed-loop run depends on."""

    trajectory: PiecewisePoly
    duration: float
    events: tuple = ()
    force_comp: bool = True
    indi: bool = True
    seed: int = 0
    sim_dt: float = 1e-3
    outer_every: int = 10  # NMPC and estimator period in sim ticks
    lead_in: float = 1.0  # hover this long at the start point before the plan begins
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    cda_Q: float = 0.01  # drag area, m^2
    cda_L: float = 0.005
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    rate_loop: IndiConfig = field(default_factory=IndiConfig)

    def __post_init__(self):
        if self.duration <= 0 or self.sim_dt <= 0 or self.outer_every < 1 or self.lead_in < 0:
            raise ValueError("duration, sim_dt and outer_every must be positive")
        times = [e.t for e in self.events]
        if times != sorted(times):
            raise ValueError("events must be time-ordered")
        ratio = self.nmpc.dt / (self.sim_dt * self.outer_every)
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("NMPC stage length must be a multiple of the controller period")

    @property
    def variant(self) -> str:
        return {(False, False): "plain", (False, True): "+indi", (True, False): "+force", (True, True): "+force+indi"}[
            (self.force_comp, self.indi)
        ]


def hover_trajectory(x_L, hold: float = 1.0) -> PiecewisePoly:
    """A single resting piece at ``x_L``."""
    return construct(Boundary.rest(x_L, x_L), np.zeros((0, 3)), [hold])


# --- run log ---------------------------------------------------------------------

@dataclass
class RunLog:
    t: np.ndarray  # (K,)
    x: np.ndarray  # (K, 23) truth: packed model state, body rates, rotor speeds
    ref_L: np.ndarray  # (K, 3) payload reference position
    ref_Q: np.ndarray  # (K, 3) quadrotor reference position
    u: np.ndarray  # (K, 4) commanded thrust and body rates held by the rate loop
    n_c: np.ndarray  # (K, 4) rotor speed commands
    f_est: np.ndarray  # (K, 6) f_Q, f_L estimates fed to (or withheld from) the NMPC
    tension: np.ndarray  # (K,) true cable tension
    diag: np.ndarray  # (C, 8) per NMPC cycle: t, residual norm, shooting gap, 4 clip flags, degraded
    events: list  # (t, kind) markers
    solve_times: np.ndarray = field(default_factory=lambda: np.zeros(0))  # wall clock, kept out of the CSV
    aborted: str = ""

    @property
    def x_L(self) -> np.ndarray:
        return self.x[:, 0:3]

    def x_Q(self, l: float) -> np.ndarray:
        return self.x[:, 0:3] - l * self.x[:, 6:9]

    def to_csv(self, path) -> None:
        names = (
            ["t"]
            + [f"x_L{a}" for a in "xyz"]
            + [f"v_L{a}" for a in "xyz"]
            + [f"rho{a}" for a in "xyz"]
            + [f"rho_dot{a}" for a in "xyz"]
            + [f"q{a}" for a in "wxyz"]
            + [f"omega{a}" for a in "xyz"]
            + [f"n{i}" for i in range(4)]
            + [f"ref_L{a}" for a in "xyz"]
            + [f"ref_Q{a}" for a in "xyz"]
            + ["f_cmd", "omega_rx", "omega_ry", "omega_rz"]
            + [f"n_c{i}" for i in range(4)]
            + [f"f_Q{a}" for a in "xyz"]
            + [f"f_L{a}" for a in "xyz"]
            + ["tension"]
        )
        data = np.column_stack([self.t, self.x, self.ref_L, self.ref_Q, self.u, self.n_c, self.f_est, self.tension])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            w.writerows([[repr(float(v)) for v in row] for row in data])

    def diag_to_csv(self, path) -> None:
        names = ["t", "residual_norm", "shooting_gap", "clip_f", "clip_wx", "clip_wy", "clip_wz", "degraded"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            w.writerows([[repr(float(v)) for v in row] for row in self.diag])


# --- sensors and disturbances ------------------------------------------------------

@dataclass
class _Truth:
    params: SystemParams
    f_Q: np.ndarray
    f_L: np.ndarray
    tau: np.ndarray


def truth_accelerations(x: np.ndarray, n: np.ndarray, n_dot: np.ndarray, truth_params: SystemParams, f_Q, f_L):
    """World accelerations of both bodies, thrust vector and tension for a truth state."""
    f, _ = rotor_forward(n, n_dot, truth_params.rotor)
    thrust_vec = f * body_z(x[12:16])
    a_Q, a_L, _, tension = cable_accelerations(x[6:9], x[9:12], thrust_vec, f_Q, f_L, truth_params)
    return a_Q, a_L, thrust_vec, float(tension)


def imu_measure(x: np.ndarray, n_cmd: np.ndarray, truth_params: SystemParams, f_Q, f_L, noise: NoiseConfig, rng, stamp: float):
    """Accelerometer, cable and rotor-speed readings turned into a force-estimator sample."""
    n = np.maximum(x[19:23], 0.0)
    n_dot = (n_cmd - x[19:23]) / truth_params.rotor.dt_m
    a_Q, a_L, thrust_vec, _ = truth_accelerations(x, n, n_dot, truth_params, f_Q, f_L)
    if noise.acc_sigma > 0:
        a_Q = a_Q + rng.normal(0.0, noise.acc_sigma, 3)
        a_L = a_L + rng.normal(0.0, noise.acc_sigma, 3)
    rho = x[6:9] / np.linalg.norm(x[6:9])
    return ForceMeasurement(a_Q, a_L, rho, thrust_vec, stamp)


def drag(v_wind: np.ndarray, v: np.ndarray, cda: float) -> np.ndarray:
    rel = v_wind - v
    return 0.5 * RHO_AIR * cda * np.linalg.norm(rel) * rel


def _wind_at(events, t: float) -> np.ndarray:
    w = np.zeros(3)
    for e in events:
        if e.kind == "wind" and t >= e.t:
            w = w + np.array(e.vector) + np.array(e.gust) * math.sin(2 * math.pi * e.gust_freq * (t - e.t))
    return w


def _normalize_truth(x: np.ndarray) -> np.ndarray:
    rho = x[6:9] / np.linalg.norm(x[6:9])
    x[6:9] = rho
    x[9:12] -= rho * (rho @ x[9:12])
    x[12:16] /= np.linalg.norm(x[12:16])
    return x


class _ReferenceGrid:
    """Flatness samples on the controller tick grid, computed once each.

    Window stages fall on multiples of the tick period, so consecutive
    windows share almost all of their samples.
    """

    def __init__(self, poly: PiecewisePoly, period: float, offset: float, cfg: NmpcConfig, params: SystemParams):
        self.poly, self.period, self.offset, self.params = poly, period, offset, params
        self.N = cfg.N
        self.stride = int(round(cfg.dt / period))
        self._memo: dict[int, tuple] = {}

    def _at(self, i: int):
        if i not in self._memo:
            self._memo[i] = flat_reference(self.poly, i * self.period - self.offset, self.params)
        return self._memo[i]

    def window(self, tick: int) -> ReferenceWindow:
        xs, us = zip(*(self._at(tick + k * self.stride) for k in range(self.N + 1)))
        return ReferenceWindow(np.array(xs), np.array(us[:-1]))


def truth_step(x, n_cmd, params: SystemParams, f_Q, f_L, tau, dt: float, mats=None) -> np.ndarray:
    """One RK4 step of the truth model with rotor commands held, then re-normalized."""
    G1, G2, J_inv = mats if mats is not None else (params.rotor.G1(), params.rotor.G2(), np.linalg.inv(params.J))

    def rhs(z):
        return rigid_body_rhs(z, n_cmd, params, f_Q, f_L, tau, G1, G2, J_inv)

    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return _normalize_truth(x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))


def initial_truth(ref_state: np.ndarray, params: SystemParams, f: float) -> np.ndarray:
    x = np.zeros(TRUTH_NX)
    x[:NX] = ref_state
    x[19:23] = math.sqrt(f / (4 * params.rotor.k_f))
    return x


# --- main loop ---------------------------------------------------------------------

def run(scenario: Scenario, params: SystemParams | None = None) -> RunLog:
    """Simulate the scenario; aborts with a report if the true cable goes slack."""
    p = params or SystemParams()
    sc = scenario
    cfg = sc.nmpc
    rng = np.random.default_rng(sc.seed)
    poly = sc.trajectory
    dt = sc.sim_dt
    steps = int(round(sc.duration / dt))
    outer_dt = sc.outer_every * dt

    refs = _ReferenceGrid(poly, outer_dt, sc.lead_in, cfg, p)
    ref0 = refs.window(0)
    x = initial_truth(ref0.states[0], p, ref0.inputs[0, 0])
    estimator = ForceEstimator(p, sc.estimator) if sc.force_comp else None
    inner = IndiController(p, sc.rate_loop) if sc.indi else RateController(p, sc.rate_loop)
    G1, G2, J_inv = p.rotor.G1(), p.rotor.G2(), np.linalg.inv(p.J)

    truth = _Truth(p, np.zeros(3), np.zeros(3), np.zeros(3))
    pending = list(sc.events)
    markers: list = []

    K = steps + 1
    T_log = np.arange(K) * dt
    X_log = np.zeros((K, TRUTH_NX))
    U_log = np.zeros((K, 4))
    N_log = np.zeros((K, 4))
    F_log = np.zeros((K, 6))
    Ten_log = np.zeros(K)
    diags, times = [], []
    warm = None
    u_cmd = ref0.inputs[0].copy()
    omega_dot_r = np.zeros(3)
    ext_hat = np.zeros(6)
    n_cmd = x[19:23].copy()
    aborted = ""
    last = K

    for k in range(K):
        t = k * dt
        while pending and pending[0].t <= t + 1e-12:
            e = pending.pop(0)
            markers.append((e.t, e.kind))
            if e.kind == "attach_mass":
                truth.params = truth.params.with_payload_mass(truth.params.m_L + e.mass)
            elif e.kind == "com_torque":
                truth.tau = truth.tau + np.array(e.vector)
        v_w = _wind_at(sc.events, t)
        v_Q = x[3:6] - p.l * x[9:12]
        f_Q = drag(v_w, v_Q, sc.cda_Q)
        f_L = drag(v_w, x[3:6], sc.cda_L)

        if k % sc.outer_every == 0:
            if estimator is not None:
                estimator.push(imu_measure(x, n_cmd, truth.params, f_Q, f_L, sc.noise, rng, t))
                est = estimator.estimate()
                ext_hat = np.concatenate([est.f_Q, est.f_L])
            ref = refs.window(k // sc.outer_every)
            ext = ExternalForces(ext_hat[:3], ext_hat[3:])
            t0 = time.perf_counter()
            u0, sol, d = rti_step(x[:NX], ref, cfg, p, ext=ext, warm=warm)
            times.append(time.perf_counter() - t0)
            diags.append([t, d.residual_norm, d.shooting_gap, *d.clipped.astype(float), float(d.degraded)])
            omega_dot_r = (sol.u[1, 1:] - u0[1:]) / cfg.dt
            warm = shift_warm_start(sol, p, cfg.dt, ext) if not d.degraded else None
            u_cmd = u0

        gyro = x[16:19]
        if sc.noise.gyro_sigma > 0:
            gyro = gyro + rng.normal(0.0, sc.noise.gyro_sigma, 3)
        out = inner.step(gyro, np.maximum(x[19:23], 0.0), u_cmd[1:], omega_dot_r, u_cmd[0])
        n_cmd = out.n_c

        n_dot = (n_cmd - x[19:23]) / p.rotor.dt_m
        _, _, _, tension = truth_accelerations(x, np.maximum(x[19:23], 0.0), n_dot, truth.params, f_Q, f_L)
        X_log[k], U_log[k], N_log[k], F_log[k], Ten_log[k] = x, u_cmd, n_cmd, ext_hat, tension
        if tension <= 0:
            aborted = f"cable went slack at t={t:.3f} s (tension {tension:.3g} N)"
            last = k + 1
            break
        if k == K - 1:
            break

        x = truth_step(x, n_cmd, truth.params, f_Q, f_L, truth.tau, dt, (G1, G2, J_inv))

    T_log = T_log[:last]
    ref_L, ref_Q = reference_positions(poly, T_log - sc.lead_in, p)
    return RunLog(
        t=T_log,
        x=X_log[:last],
        ref_L=ref_L,
        ref_Q=ref_Q,
        u=U_log[:last],
        n_c=N_log[:last],
        f_est=F_log[:last],
        tension=Ten_log[:last],
        diag=np.array(diags).reshape(-1, 8),
        events=markers,
        solve_times=np.array(times),
        aborted=aborted,
    )


def rate_loop_run(controller, omega_ref, duration: float, tau_ext=(0.0, 0.0, 0.0), params: SystemParams | None = None, dt: float = 1e-3):
    """Drive the truth model with a rate loop alone, thrust held at hover.

    ``omega_ref(t)`` returns ``(omega_r, omega_dot_r)``.  Returns times and the
    rate error ``omega_r - omega`` per tick.  The cable couples to attitude
    only through the translational motion, so this isolates the rate loop.
    """
    p = params or SystemParams()
    x = initial_truth(np.r_[0, 0, 1, np.zeros(3), 0, 0, -1, np.zeros(3), 1, 0, 0, 0], p, p.hover_thrust)
    mats = (p.rotor.G1(), p.rotor.G2(), np.linalg.inv(p.J))
    tau = np.asarray(tau_ext, dtype=float)
    steps = int(round(duration / dt))
    t = np.arange(steps) * dt
    err = np.zeros((steps, 3))
    zero = np.zeros(3)
    for k in range(steps):
        w_r, w_dot_r = omega_ref(t[k])
        out = controller.step(x[16:19], np.maximum(x[19:23], 0.0), w_r, w_dot_r, p.hover_thrust)
        err[k] = np.asarray(w_r) - x[16:19]
        x = truth_step(x, out.n_c, p, zero, zero, tau, dt, mats)
    return t, err


def reference_positions(poly: PiecewisePoly, t: np.ndarray, params: SystemParams):
    """Payload and quadrotor reference positions along the plan (hover outside it)."""
    tc = np.clip(t, 0.0, poly.total_duration)
    x_L = poly.sample(tc, 0)
    moving = (t >= 0.0) & (t < poly.total_duration)
    a_L = np.where(moving[:, None], poly.sample(tc, 2), 0.0)
    rho = cable_direction(a_L, params.g)
    return x_L, x_L - params.l * rho


# --- metrics ----------------------------------------------------------------------

def metrics(log: RunLog, params: SystemParams | None = None, t_from: float = 0.0) -> dict:
    """Position tracking errors in cm against the time-aligned reference."""
    p = params or SystemParams()
    if len(log.t) == 0:
        raise ValueError("empty run log")
    sel = log.t >= t_from
    if not sel.any():
        raise ValueError("no samples after t_from")
    eL = np.linalg.norm(log.x_L[sel] - log.ref_L[sel], axis=1) * 100.0
    eQ = np.linalg.norm(log.x_Q(p.l)[sel] - log.ref_Q[sel], axis=1) * 100.0
    out = {
        "rmse_Q": float(np.sqrt(np.mean(eQ**2))),
        "max_Q": float(eQ.max()),
        "rmse_L": float(np.sqrt(np.mean(eL**2))),
        "max_L": float(eL.max()),
        "aborted": log.aborted,
    }
    if len(log.solve_times):
        st = log.solve_times * 1e3
        out["solve_ms"] = {"mean": float(st.mean()), "p95": float(np.percentile(st, 95)), "max": float(st.max())}
    return out
