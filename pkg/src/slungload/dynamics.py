"""Taut-cable quadrotor/payload dynamics with external forces.

The payload position is the canonical position; the quadrotor position is
always derived as ``x_Q = x_L - l * rho``.  Two state layouts are used:

* ``SystemState``: a value type with every field spelled out.
* packed vectors of length 16 ``[x_L, v_L, rho, rho_dot, q]`` for the
  controller model, where attitude is driven directly by the commanded body
  rate.  All packed functions broadcast over leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from slungload.params import RotorGeometry, SystemParams
from slungload.rotation import body_z, quat_kinematics

E_Z = np.array([0.0, 0.0, 1.0])
NX = 16
NU = 4

_ZERO3 = np.zeros(3)


def _vec(x, n=3) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {x.shape}")
    return x


@dataclass(frozen=True)
class SystemState:
    x_L: np.ndarray
    v_L: np.ndarray
    rho: np.ndarray
    rho_dot: np.ndarray
    q: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_Q: np.ndarray | None = None
    v_Q: np.ndarray | None = None

    def __post_init__(self):
        for name in ("x_L", "v_L", "rho", "rho_dot", "omega"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        object.__setattr__(self, "q", _vec(self.q, 4))
        for name in ("x_Q", "v_Q"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _vec(value))

    def quad_position(self, l: float) -> np.ndarray:
        return self.x_L - l * self.rho

    def quad_velocity(self, l: float) -> np.ndarray:
        return self.v_L - l * self.rho_dot

    def pack(self) -> np.ndarray:
        return np.concatenate([self.x_L, self.v_L, self.rho, self.rho_dot, self.q])

    @classmethod
    def unpack(cls, x: np.ndarray, params: SystemParams, omega=None) -> "SystemState":
        x = np.asarray(x, dtype=float)
        l = params.l
        return cls(
            x_L=x[0:3],
            v_L=x[3:6],
            rho=x[6:9],
            rho_dot=x[9:12],
            q=x[12:16],
            omega=np.zeros(3) if omega is None else omega,
            x_Q=x[0:3] - l * x[6:9],
            v_Q=x[3:6] - l * x[9:12],
        )


@dataclass(frozen=True)
class ControlInput:
    f: float
    omega_c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "f", float(self.f))
        object.__setattr__(self, "omega_c", _vec(self.omega_c))
        if self.f < 0:
            raise ValueError(f"thrust must be >= 0, got {self.f}")

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.f], self.omega_c])

    @classmethod
    def unpack(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(max(float(u[0]), 0.0), u[1:4])


@dataclass(frozen=True)
class ExternalForces:
    f_Q: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_L: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "f_Q", _vec(self.f_Q))
        object.__setattr__(self, "f_L", _vec(self.f_L))
        if not (np.all(np.isfinite(self.f_Q)) and np.all(np.isfinite(self.f_L))):
            raise ValueError("external forces must be finite")


ZERO_FORCES = ExternalForces()


@dataclass(frozen=True)
class StateDerivative:
    x_Q_dot: np.ndarray
    x_L_dot: np.ndarray
    v_Q_dot: np.ndarray
    v_L_dot: np.ndarray
    rho_dot: np.ndarray
    rho_ddot: np.ndarray
    q_dot: np.ndarray
    omega_dot: np.ndarray
    tension: float

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [
                self.x_Q_dot,
                self.x_L_dot,
                self.v_Q_dot,
                self.v_L_dot,
                self.rho_dot,
                self.rho_ddot,
                self.q_dot,
                self.omega_dot,
            ]
        )


def hover_state(x_L=(0.0, 0.0, 0.0), params: SystemParams | None = None) -> SystemState:
    x_L = np.asarray(x_L, dtype=float)
    rho = -E_Z.copy()
    l = params.l if params is not None else 0.0
    return SystemState(
        x_L=x_L,
        v_L=np.zeros(3),
        rho=rho,
        rho_dot=np.zeros(3),
        q=np.array([1.0, 0.0, 0.0, 0.0]),
        x_Q=x_L - l * rho if params is not None else None,
        v_Q=np.zeros(3) if params is not None else None,
    )


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite value in dynamics input")


def cable_accelerations(rho, rho_dot, thrust_vec, f_Q, f_L, params: SystemParams):
    """Accelerations of both bodies, cable direction, and tension (N).

    Broadcasts over leading axes.  Returns ``(a_Q, a_L, rho_ddot, tension)``.
    """
    m_Q, m_L, l, g = params.m_Q, params.m_L, params.l, params.g
    F = thrust_vec + f_Q
    rd2 = np.sum(rho_dot * rho_dot, axis=-1)
    tension = (m_Q * m_L / (m_Q + m_L)) * (
        l * rd2 - np.sum(rho * F, axis=-1) / m_Q + np.sum(rho * f_L, axis=-1) / m_L
    )
    T = tension[..., None]
    a_Q = (T * rho + F) / m_Q - g * E_Z
    a_L = (-T * rho + f_L) / m_L - g * E_Z
    # rho x (rho x v) = rho (rho.v) - v |rho|^2
    v = F / (m_Q * l) - f_L / (m_L * l)
    rr = np.sum(rho * rho, axis=-1)[..., None]
    rho_ddot = rho * np.sum(rho * v, axis=-1)[..., None] - v * rr - rd2[..., None] * rho
    return a_Q, a_L, rho_ddot, tension


def model_rhs(x: np.ndarray, u: np.ndarray, params: SystemParams, f_Q=_ZERO3, f_L=_ZERO3) -> np.ndarray:
    """Time derivative of packed controller-model states (batched)."""
    rho = x[..., 6:9]
    rho_dot = x[..., 9:12]
    q = x[..., 12:16]
    thrust_vec = u[..., :1] * body_z(q)
    _, a_L, rho_ddot, _ = cable_accelerations(rho, rho_dot, thrust_vec, f_Q, f_L, params)
    return np.concatenate([x[..., 3:6], a_L, rho_dot, rho_ddot, quat_kinematics(q, u[..., 1:4])], axis=-1)


def rk4(fun, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = fun(x)
    k2 = fun(x + 0.5 * dt * k1)
    k3 = fun(x + 0.5 * dt * k2)
    k4 = fun(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def model_step(x: np.ndarray, u: np.ndarray, params: SystemParams, dt: float, f_Q=_ZERO3, f_L=_ZERO3) -> np.ndarray:
    """One RK4 step of the packed model, without normalization."""
    return rk4(lambda z: model_rhs(z, u, params, f_Q, f_L), x, dt)


def normalize_packed(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float, copy=True)
    rho = x[..., 6:9] / np.linalg.norm(x[..., 6:9], axis=-1, keepdims=True)
    rho_dot = x[..., 9:12]
    rho_dot = rho_dot - rho * np.sum(rho * rho_dot, axis=-1, keepdims=True)
    x[..., 6:9] = rho
    x[..., 9:12] = rho_dot
    x[..., 12:16] /= np.linalg.norm(x[..., 12:16], axis=-1, keepdims=True)
    return x


def derivative(
    state: SystemState,
    input: ControlInput,
    params: SystemParams,
    ext: ExternalForces = ZERO_FORCES,
) -> StateDerivative:
    """Continuous dynamics with external forces on both bodies.

    Attitude follows the commanded body rate (``q' = q * [0, omega_c] / 2``),
    so ``omega_dot`` is reported as zero; the rigid-body rotational model used
    by the simulator lives in ``rigid_body_rhs``.
    """
    _check_finite(state.x_L, state.v_L, state.rho, state.rho_dot, state.q, input.omega_c, [input.f], ext.f_Q, ext.f_L)
    thrust_vec = input.f * body_z(state.q)
    a_Q, a_L, rho_ddot, tension = cable_accelerations(state.rho, state.rho_dot, thrust_vec, ext.f_Q, ext.f_L, params)
    return StateDerivative(
        x_Q_dot=state.quad_velocity(params.l),
        x_L_dot=state.v_L.copy(),
        v_Q_dot=a_Q,
        v_L_dot=a_L,
        rho_dot=state.rho_dot.copy(),
        rho_ddot=rho_ddot,
        q_dot=quat_kinematics(state.q, input.omega_c),
        omega_dot=np.zeros(3),
        tension=float(tension),
    )


def nominal_derivative(state: SystemState, input: ControlInput, params: SystemParams) -> StateDerivative:
    """Undisturbed dynamics, written directly from the two-body cable equations.

    Kept as a separate code path from ``derivative`` so the two can be
    cross-checked.
    """
    _check_finite(state.x_L, state.v_L, state.rho, state.rho_dot, state.q, input.omega_c, [input.f])
    m_Q, m_L, l, g = params.m_Q, params.m_L, params.l, params.g
    rho, rho_dot = state.rho, state.rho_dot
    F = input.f * body_z(state.q)
    rd2 = rho_dot @ rho_dot
    a_L = ((rho @ F) - m_Q * l * rd2) * rho / (m_Q + m_L) - g * E_Z
    rho_ddot = np.cross(rho, np.cross(rho, F)) / (m_Q * l) - rd2 * rho
    a_Q = a_L - l * rho_ddot
    tension = -m_L * ((a_L + g * E_Z) @ rho)
    return StateDerivative(
        x_Q_dot=state.quad_velocity(l),
        x_L_dot=state.v_L.copy(),
        v_Q_dot=a_Q,
        v_L_dot=a_L,
        rho_dot=rho_dot.copy(),
        rho_ddot=rho_ddot,
        q_dot=quat_kinematics(state.q, input.omega_c),
        omega_dot=np.zeros(3),
        tension=float(tension),
    )


def normalize_state(state: SystemState, params: SystemParams) -> SystemState:
    """Project onto the taut-cable manifold.

    Renormalizes rho and q, removes the radial part of rho_dot and rederives
    the quadrotor position and velocity from the payload.
    """
    nr = np.linalg.norm(state.rho)
    nq = np.linalg.norm(state.q)
    if not (0.9 <= nr <= 1.1) or not (0.9 <= nq <= 1.1):
        raise ValueError(f"degenerate state: |rho|={nr:.4g}, |q|={nq:.4g} (must be within 10% of 1)")
    rho = state.rho / nr
    rho_dot = state.rho_dot - rho * (rho @ state.rho_dot)
    return replace(
        state,
        rho=rho,
        rho_dot=rho_dot,
        q=state.q / nq,
        x_Q=state.x_L - params.l * rho,
        v_Q=state.v_L - params.l * rho_dot,
    )


def step_rk4(
    state: SystemState,
    input: ControlInput,
    params: SystemParams,
    ext: ExternalForces = ZERO_FORCES,
    dt: float = 0.01,
) -> SystemState:
    """Classic RK4 with the input held constant, followed by normalization."""
    if not (0.0 < dt <= 0.05):
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    _check_finite(state.pack(), input.pack(), ext.f_Q, ext.f_L)
    x = model_step(state.pack(), input.pack(), params, dt, ext.f_Q, ext.f_L)
    out = SystemState.unpack(x, params, omega=input.omega_c)
    return normalize_state(out, params)


def rotor_forward(n, n_dot, geom: RotorGeometry) -> tuple[float, np.ndarray]:
    """Collective thrust and body torque from rotor speeds and accelerations."""
    n = np.asarray(n, dtype=float)
    n_dot = np.asarray(n_dot, dtype=float)
    if n.shape != (4,) or n_dot.shape != (4,):
        raise ValueError("rotor_forward expects 4 rotor speeds and 4 accelerations")
    _check_finite(n, n_dot)
    if np.any(n < 0):
        raise ValueError("rotor speeds must be non-negative")
    wrench = geom.G1() @ (n * n) + geom.G2() @ n_dot
    return float(wrench[0]), wrench[1:]


# --- full rigid-body model used as the simulator's truth -------------------

TRUTH_NX = NX + 3 + 4  # packed model + omega + rotor speeds


def rigid_body_rhs(
    x: np.ndarray,
    n_cmd: np.ndarray,
    params: SystemParams,
    f_Q=_ZERO3,
    f_L=_ZERO3,
    tau_ext=_ZERO3,
    G1: np.ndarray | None = None,
    G2: np.ndarray | None = None,
    J_inv: np.ndarray | None = None,
) -> np.ndarray:
    """Truth dynamics with first-order motors and Euler rotational dynamics.

    ``x = [x_L, v_L, rho, rho_dot, q, omega, n]``; rotor speeds follow
    ``n' = (n_cmd - n) / dt_m``.
    """
    geom = params.rotor
    G1 = geom.G1() if G1 is None else G1
    G2 = geom.G2() if G2 is None else G2
    J_inv = np.linalg.inv(params.J) if J_inv is None else J_inv
    rho, rho_dot, q = x[6:9], x[9:12], x[12:16]
    omega, n = x[16:19], x[19:23]
    n_dot = (n_cmd - n) / geom.dt_m
    wrench = G1 @ (n * n) + G2 @ n_dot
    thrust_vec = wrench[0] * body_z(q)
    _, a_L, rho_ddot, _ = cable_accelerations(rho, rho_dot, thrust_vec, f_Q, f_L, params)
    J = params.J
    omega_dot = J_inv @ (wrench[1:] + tau_ext - np.cross(omega, J @ omega))
    return np.concatenate([x[3:6], a_L, rho_dot, rho_ddot, quat_kinematics(q, omega), omega_dot, n_dot])
