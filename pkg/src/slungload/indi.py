"""Incremental nonlinear dynamic inversion for the body-rate loop.

Rates and rotor speeds pass through one shared Butterworth filter so both
feedback paths see the same delay.  The commanded moment is the filtered
measured moment plus an increment, which cancels slowly varying unmodelled
torques without knowing them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from slungload.dynamics import rotor_forward
from slungload.params import RotorGeometry, SystemParams


class Butterworth2:
    """Second-order low-pass biquad (bilinear transform, prewarped) over ``channels`` signals."""

    def __init__(self, cutoff: float = 10.0, sample_rate: float = 1000.0, channels: int = 1):
        if not 0 < cutoff < sample_rate / 2:
            raise ValueError("cutoff must lie in (0, sample_rate / 2)")
        self.cutoff = cutoff
        self.sample_rate = sample_rate
        b, a = signal.butter(2, cutoff, btype="low", fs=sample_rate)
        self.b = b / a[0]
        self.a = a / a[0]
        self.channels = channels
        self._s: np.ndarray | None = None  # transposed direct form II registers (2, channels)

    def reset(self, sample) -> None:
        """Set the registers to the steady state of a constant ``sample``."""
        x = np.broadcast_to(np.asarray(sample, dtype=float), (self.channels,))
        b, a = self.b, self.a
        s1 = (b[2] - a[2]) * x
        self._s = np.stack([(b[1] - a[1]) * x + s1, s1])

    def step(self, sample) -> np.ndarray:
        x = np.asarray(sample, dtype=float)
        if x.shape != (self.channels,):
            raise ValueError(f"expected {self.channels} channels")
        if self._s is None:
            self.reset(x)
        b, a, s = self.b, self.a, self._s
        y = b[0] * x + s[0]
        s[0] = b[1] * x - a[1] * y + s[1]
        s[1] = b[2] * x - a[2] * y
        return y

    def gain(self, freq: float) -> float:
        """Magnitude response at ``freq`` Hz."""
        _, h = signal.freqz(self.b, self.a, worN=[freq], fs=self.sample_rate)
        return float(np.abs(h[0]))


def filter_step(filt: Butterworth2, sample) -> np.ndarray:
    return filt.step(sample)


class RobustDerivative:
    """Five-point smooth noise-robust differentiator, evaluated two samples back.

    ``f'(t - 2h) ~ (2 (f[-2] - f[-4]) + f[-1] - f[-5]) / (8 h)``.
    Before five samples exist the derivative is zero.
    """

    def __init__(self, dt: float, channels: int):
        self.dt = dt
        self._hist = np.zeros((5, channels))
        self._n = 0

    def step(self, sample) -> np.ndarray:
        self._hist = np.roll(self._hist, -1, axis=0)
        self._hist[-1] = sample
        self._n += 1
        if self._n < 5:
            return np.zeros(self._hist.shape[1])
        h = self._hist
        return (2.0 * (h[3] - h[1]) + h[4] - h[0]) / (8.0 * self.dt)


def angular_accel_cmd(omega_r, omega_dot_r, omega_f, K_omega) -> np.ndarray:
    """Desired angular acceleration ``K (omega_r - omega_f) + omega_dot_r``."""
    K = np.asarray(K_omega, dtype=float)
    K = np.diag(K) if K.ndim == 1 else K
    return K @ (np.asarray(omega_r, float) - np.asarray(omega_f, float)) + np.asarray(omega_dot_r, float)


def control_moment(tau_f, omega_dot_c, omega_dot_f, J) -> np.ndarray:
    """Filtered moment plus the inertia-scaled acceleration increment."""
    return np.asarray(tau_f, float) + np.asarray(J, float) @ (np.asarray(omega_dot_c, float) - np.asarray(omega_dot_f, float))


@dataclass
class Allocation:
    n_c: np.ndarray
    residual: float  # wrench mismatch before clamping, N and N m mixed
    iterations: int
    saturated: bool


def allocate(f_tc: float, tau_c, n_f, geom: RotorGeometry, max_iter: int = 5, tol: float = 1e-10) -> Allocation:
    """Rotor speeds whose quasi-static wrench plus rotor-acceleration reaction meets the request.

    Newton on ``G1 n^2 + G2 (n - n_f) / dt_m = w`` from ``n_f`` (least-squares steps
    when the Jacobian is singular), then clamped to ``[0, n_max]``.
    """
    w = np.concatenate([[f_tc], np.asarray(tau_c, dtype=float)])
    n_f = np.asarray(n_f, dtype=float)
    G1, G2 = geom.G1(), geom.G2() / geom.dt_m
    # a stalled start has a singular Jacobian; begin from the quasi-static hover split
    n = np.where(n_f > 1.0, n_f, np.sqrt(max(f_tc, 0.0) / (4 * geom.k_f)) + 1.0)
    it = 0
    for it in range(1, max_iter + 1):
        r = G1 @ (n * n) + G2 @ (n - n_f) - w
        if np.abs(r).max() <= tol:
            it -= 1
            break
        Jac = 2.0 * G1 * n[None, :] + G2
        step = np.linalg.lstsq(Jac, r, rcond=None)[0]
        n = n - step
    r = G1 @ (n * n) + G2 @ (n - n_f) - w
    n_c = np.clip(n, 0.0, geom.n_max)
    saturated = bool(np.any(n_c != n)) or float(np.abs(r).max()) > 1e-6
    return Allocation(n_c, float(np.linalg.norm(r)), it, saturated)


def _default_gain():
    return np.array([12.0, 12.0, 6.0])


@dataclass(frozen=True)
class IndiConfig:
    K_omega: np.ndarray = field(default_factory=_default_gain)
    cutoff: float = 10.0
    rate: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "K_omega", np.asarray(self.K_omega, dtype=float))
        if self.K_omega.shape != (3,) or np.any(self.K_omega < 0):
            raise ValueError("K_omega takes three non-negative gains")


@dataclass
class IndiState:
    omega_f: np.ndarray
    n_f: np.ndarray
    omega_dot_f: np.ndarray
    K_omega: np.ndarray


@dataclass
class IndiOutput:
    n_c: np.ndarray
    tau_c: np.ndarray
    omega_f: np.ndarray
    saturated: bool


class IndiController:
    """Stateful INDI rate loop; call :meth:`step` once per inner-loop tick."""

    def __init__(self, params: SystemParams, cfg: IndiConfig | None = None):
        self.params = params
        self.cfg = cfg or IndiConfig()
        # one filter over [omega, n] keeps the two feedback paths phase matched
        self.filter = Butterworth2(self.cfg.cutoff, self.cfg.rate, channels=7)
        self.deriv = RobustDerivative(1.0 / self.cfg.rate, channels=7)
        self.state: IndiState | None = None

    def step(self, omega_meas, n_meas, omega_r, omega_dot_r, f_tc: float) -> IndiOutput:
        y = self.filter.step(np.concatenate([omega_meas, n_meas]))
        dy = self.deriv.step(y)
        omega_f, n_f = y[:3], np.maximum(y[3:], 0.0)
        omega_dot_f, n_dot_f = dy[:3], dy[3:]
        self.state = IndiState(omega_f, n_f, omega_dot_f, self.cfg.K_omega)
        _, tau_f = rotor_forward(n_f, n_dot_f, self.params.rotor)
        acc_c = angular_accel_cmd(omega_r, omega_dot_r, omega_f, self.cfg.K_omega)
        tau_c = control_moment(tau_f, acc_c, omega_dot_f, self.params.J)
        alloc = allocate(f_tc, tau_c, n_f, self.params.rotor)
        return IndiOutput(alloc.n_c, tau_c, omega_f, alloc.saturated)


class RateController:
    """Model-based rate loop without incremental feedback (the ablation baseline)."""

    def __init__(self, params: SystemParams, cfg: IndiConfig | None = None):
        self.params = params
        self.cfg = cfg or IndiConfig()

    def step(self, omega_meas, n_meas, omega_r, omega_dot_r, f_tc: float) -> IndiOutput:
        J = self.params.J
        omega = np.asarray(omega_meas, dtype=float)
        acc_c = angular_accel_cmd(omega_r, omega_dot_r, omega, self.cfg.K_omega)
        tau_c = J @ acc_c + np.cross(omega, J @ omega)
        alloc = allocate(f_tc, tau_c, n_meas, self.params.rotor)
        return IndiOutput(alloc.n_c, tau_c, omega, alloc.saturated)
