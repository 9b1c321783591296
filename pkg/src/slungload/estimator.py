"""Sliding-window estimation of the external forces on both bodies.

Every window sample carries its own pair ``(f_Q, f_L)``.  Three residuals tie
them to the measured motion:

* total momentum balance of the two bodies,
* the quadrotor balance crossed with the cable direction (the tension drops out),
* ``f_L . rho``, which fixes the along-cable split that the first two leave open.

Residuals enter through a Huber loss and the samples are pulled toward their
window mean by a Huber variance term.  The reported forces are window means.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from slungload.dynamics import E_Z, ExternalForces
from slungload.numopt import LbfgsOptions, lbfgs_minimize
from slungload.params import SystemParams


@dataclass(frozen=True)
class ForceMeasurement:
    acc_Q: np.ndarray  # world-frame quadrotor acceleration
    acc_L: np.ndarray  # world-frame payload acceleration
    rho: np.ndarray  # unit cable direction, quadrotor to payload
    thrust_vec: np.ndarray  # f R e_z in world frame
    stamp: float

    def __post_init__(self):
        for name in ("acc_Q", "acc_L", "rho", "thrust_vec"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "stamp", float(self.stamp))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(np.concatenate([self.acc_Q, self.acc_L, self.rho, self.thrust_vec, [self.stamp]]))))


@dataclass(frozen=True)
class EstimatorConfig:
    window: int = 20
    delta: float = 1.0  # Huber threshold, N
    k_r: float = 0.5  # variance regularization weight
    options: LbfgsOptions = field(default_factory=lambda: LbfgsOptions(max_iters=200, grad_tol=1e-9, rel_tol=0.0))

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must hold at least one sample")
        if self.delta <= 0 or self.k_r < 0:
            raise ValueError("need delta > 0 and k_r >= 0")


@dataclass(frozen=True)
class ForceEstimate:
    f_Q: np.ndarray
    f_L: np.ndarray
    samples_Q: np.ndarray  # (W, 3) per-sample forces
    samples_L: np.ndarray
    residual_norm: float
    stamp: float
    iterations: int = 0
    stale: bool = False
    solve_time: float = 0.0

    @property
    def ext(self) -> ExternalForces:
        return ExternalForces(self.f_Q, self.f_L)

    @property
    def total(self) -> np.ndarray:
        return self.f_Q + self.f_L


def decompose_along_cable(f, rho):
    """Split ``f`` into its component along ``rho`` and the remainder."""
    f = np.asarray(f, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if abs(np.linalg.norm(rho) - 1.0) > 1e-6:
        raise ValueError("rho must be a unit vector")
    par = (f @ rho) * rho
    return par, f - par


def _huber_rows(R: np.ndarray, delta: float):
    """Huber loss of each row's norm: values (n,) and gradients (n, d)."""
    n = np.linalg.norm(R, axis=-1)
    inner = n <= delta
    val = np.where(inner, 0.5 * n * n, delta * (n - 0.5 * delta))
    scale = np.where(inner, 1.0, delta / np.where(inner, 1.0, n))
    return val, R * scale[:, None]


def _cross_T(rho: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Adjoint of ``x -> rho x x`` applied to ``v`` (row-wise)."""
    return -np.cross(rho, v)


class ForceEstimator:
    """Ring buffer of measurements plus a warm-started robust least-squares fit."""

    def __init__(self, params: SystemParams, cfg: EstimatorConfig | None = None):
        self.params = params
        self.cfg = cfg or EstimatorConfig()
        self._buf: deque[ForceMeasurement] = deque(maxlen=self.cfg.window)
        self._z: np.ndarray | None = None  # per-sample warm start (W, 6)
        self.rejected = 0
        self.last: ForceEstimate | None = None

    def __len__(self) -> int:
        return len(self._buf)

    def push(self, meas: ForceMeasurement) -> bool:
        """Append a sample; non-finite or out-of-order samples are counted and dropped."""
        if not meas.is_finite() or abs(np.linalg.norm(meas.rho) - 1.0) > 1e-6:
            self.rejected += 1
            return False
        if self._buf and meas.stamp <= self._buf[-1].stamp:
            self.rejected += 1
            return False
        full = len(self._buf) == self._buf.maxlen
        self._buf.append(meas)
        if self._z is not None:
            mean = self._z.mean(axis=0, keepdims=True)
            self._z = np.vstack([self._z[1:] if full else self._z, mean])
        return True

    def _arrays(self):
        b = self._buf
        return (
            np.array([m.acc_Q for m in b]),
            np.array([m.acc_L for m in b]),
            np.array([m.rho for m in b]),
            np.array([m.thrust_vec for m in b]),
        )

    def objective(self):
        """The window objective ``z (W*6,) -> (value, gradient)``."""
        p, cfg = self.params, self.cfg
        aQ, aL, rho, thrust = self._arrays()
        W = len(rho)
        g = p.g * E_Z
        # constant parts of the residuals
        c1 = thrust - p.m_Q * (g + aQ) - p.m_L * (g + aL)
        c2 = thrust - p.m_Q * (g + aQ)

        def fun(z):
            Z = z.reshape(W, 6)
            FQ, FL = Z[:, :3], Z[:, 3:]
            r1 = FQ + FL + c1
            r2 = np.cross(rho, FQ + c2)
            r3 = np.sum(FL * rho, axis=1, keepdims=True)
            v1, g1 = _huber_rows(r1, cfg.delta)
            v2, g2 = _huber_rows(r2, cfg.delta)
            v3, g3 = _huber_rows(r3, cfg.delta)
            dQ = FQ - FQ.mean(axis=0)
            dL = FL - FL.mean(axis=0)
            vQ, gQ = _huber_rows(dQ, cfg.delta)
            vL, gL = _huber_rows(dL, cfg.delta)
            G = np.empty((W, 6))
            G[:, :3] = g1 + _cross_T(rho, g2) + cfg.k_r * (gQ - gQ.mean(axis=0))
            G[:, 3:] = g1 + g3 * rho + cfg.k_r * (gL - gL.mean(axis=0))
            value = v1.sum() + v2.sum() + v3.sum() + cfg.k_r * (vQ.sum() + vL.sum())
            return float(value), G.ravel()

        return fun

    def residuals(self, samples_Q: np.ndarray, samples_L: np.ndarray) -> np.ndarray:
        """Stacked (W, 7) residuals for given per-sample forces."""
        p = self.params
        aQ, aL, rho, thrust = self._arrays()
        g = p.g * E_Z
        r1 = samples_Q + samples_L + thrust - p.m_Q * (g + aQ) - p.m_L * (g + aL)
        r2 = np.cross(rho, samples_Q + thrust - p.m_Q * (g + aQ))
        r3 = np.sum(samples_L * rho, axis=1, keepdims=True)
        return np.hstack([r1, r2, r3])

    def estimate(self) -> ForceEstimate:
        if not self._buf:
            raise ValueError("estimate() needs at least one sample in the window")
        t0 = time.perf_counter()
        W = len(self._buf)
        z0 = np.zeros((W, 6)) if self._z is None or len(self._z) != W else self._z
        res = lbfgs_minimize(self.objective(), z0.ravel(), self.cfg.options)
        stamp = self._buf[-1].stamp
        if not res.converged and res.grad_norm > 1e-4 and self.last is not None:
            self.last = replace(self.last, stamp=stamp, stale=True)
            return self.last
        Z = res.x.reshape(W, 6)
        self._z = Z.copy()
        FQ, FL = Z[:, :3], Z[:, 3:]
        self.last = ForceEstimate(
            f_Q=FQ.mean(axis=0),
            f_L=FL.mean(axis=0),
            samples_Q=FQ.copy(),
            samples_L=FL.copy(),
            residual_norm=float(np.linalg.norm(self.residuals(FQ, FL))),
            stamp=stamp,
            iterations=res.iterations,
            solve_time=time.perf_counter() - t0,
        )
        return self.last
