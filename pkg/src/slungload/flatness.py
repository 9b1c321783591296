"""Differential flatness of the taut-cable system.

Flat outputs are the payload position and the quadrotor yaw.  The cable
direction is the negated unit vector of the payload's specific force
``w = a_L + g e_z``; the thrust vector is

    f R e_z = (m_Q + m_L) w - m_Q l rho_ddot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from slungload.dynamics import E_Z, SystemState
from slungload.params import SystemParams
from slungload.rotation import rot_to_quat

EPS_TAUT = 0.1  # m/s^2


class FlatnessSingularity(ValueError):
    """Raised where the cable would go slack or the thrust vanishes."""


@dataclass(frozen=True)
class FlatSnapshot:
    """Payload position derivatives at one instant plus yaw.

    ``x_L_derivs`` has rows for orders 0..4; an optional sixth row (order 5)
    makes the body-rate output exact, otherwise it is taken as zero.
    """

    x_L_derivs: np.ndarray
    psi: float = 0.0
    psi_dot: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.x_L_derivs, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] not in (5, 6):
            raise ValueError(f"x_L_derivs must be (5, 3) or (6, 3), got {d.shape}")
        if d.shape[0] == 5:
            d = np.vstack([d, np.zeros(3)])
        object.__setattr__(self, "x_L_derivs", d)


@dataclass(frozen=True)
class FlatState:
    state: SystemState
    f: float
    omega: np.ndarray
    T_cable: float
    rho_ddot: np.ndarray
    thrust_vec: np.ndarray


def unit_vector_derivs(w: np.ndarray, w1: np.ndarray, w2: np.ndarray, w3: np.ndarray | None = None):
    """Derivatives of ``u = w / |w|`` given derivatives of ``w``.

    Works on (..., 3) arrays.  Returns ``(u, u1, u2)`` or, when ``w3`` is
    given, ``(u, u1, u2, u3)``.
    """
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    u = w / n
    a1 = np.sum(u * w1, axis=-1, keepdims=True)
    u1 = (w1 - u * a1) / n
    a2 = np.sum(u * w2, axis=-1, keepdims=True)
    b = np.sum(u1 * w1, axis=-1, keepdims=True)
    h = w2 - u * (a2 + b) - 2.0 * u1 * a1
    u2 = h / n
    if w3 is None:
        return u, u1, u2
    a1_dot = b + a2
    a2_dot = np.sum(u1 * w2, axis=-1, keepdims=True) + np.sum(u * w3, axis=-1, keepdims=True)
    b_dot = np.sum(u2 * w1, axis=-1, keepdims=True) + np.sum(u1 * w2, axis=-1, keepdims=True)
    h_dot = w3 - u1 * (a2 + b) - u * (a2_dot + b_dot) - 2.0 * u2 * a1 - 2.0 * u1 * a1_dot
    u3 = (h_dot - u2 * a1) / n
    return u, u1, u2, u3


def _attitude(z_b: np.ndarray, z_b_dot: np.ndarray, psi: float, psi_dot: float):
    y_c = np.array([-np.sin(psi), np.cos(psi), 0.0])
    y_c_dot = psi_dot * np.array([-np.cos(psi), -np.sin(psi), 0.0])
    v = np.cross(y_c, z_b)
    nv = np.linalg.norm(v)
    if nv < 1e-9:
        raise FlatnessSingularity("thrust axis aligned with the yaw reference axis")
    x_b = v / nv
    v_dot = np.cross(y_c_dot, z_b) + np.cross(y_c, z_b_dot)
    x_b_dot = (v_dot - x_b * (x_b @ v_dot)) / nv
    y_b = np.cross(z_b, x_b)
    R = np.column_stack([x_b, y_b, z_b])
    omega = np.array([-(y_b @ z_b_dot), x_b @ z_b_dot, y_b @ x_b_dot])
    return R, omega


def flat_to_state(snap: FlatSnapshot, params: SystemParams) -> FlatState:
    """Full state, thrust, body rates and cable tension from flat outputs."""
    x, v, a, j, s, c = snap.x_L_derivs
    m_Q, m_L, l, g = params.m_Q, params.m_L, params.l, params.g
    w = a + g * E_Z
    nw = np.linalg.norm(w)
    if not nw > EPS_TAUT:
        raise FlatnessSingularity(f"|a_L + g e_z| = {nw:.3g} <= {EPS_TAUT} (cable not taut)")
    u, u1, u2, u3 = unit_vector_derivs(w, j, s, c)
    rho, rho_dot, rho_ddot, rho_dddot = -u, -u1, -u2, -u3
    F = (m_Q + m_L) * w - m_Q * l * rho_ddot
    F_dot = (m_Q + m_L) * j - m_Q * l * rho_dddot
    f = np.linalg.norm(F)
    if not f > 1e-9:
        raise FlatnessSingularity("zero thrust direction")
    z_b = F / f
    z_b_dot = (F_dot - z_b * (z_b @ F_dot)) / f
    R, omega = _attitude(z_b, z_b_dot, snap.psi, snap.psi_dot)
    state = SystemState(
        x_L=x,
        v_L=v,
        rho=rho,
        rho_dot=rho_dot,
        q=rot_to_quat(R),
        omega=omega,
        x_Q=x - l * rho,
        v_Q=v - l * rho_dot,
    )
    return FlatState(state=state, f=float(f), omega=omega, T_cable=float(m_L * nw), rho_ddot=rho_ddot, thrust_vec=F)


def cable_direction(a_L: np.ndarray, g: float) -> np.ndarray:
    w = np.asarray(a_L, dtype=float) + g * E_Z
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(nw <= EPS_TAUT):
        raise FlatnessSingularity("cable not taut")
    return -w / nw


def system_bubbles(x_L, a_L, params: SystemParams, n_bubbles: int = 6, d_L: float = 0.15, d_Q: float = 0.3):
    """Spheres covering payload, cable and quadrotor.

    ``n_bubbles + 1`` centers are spaced uniformly from the payload (index 0)
    to the quadrotor (index ``n_bubbles``).
    """
    if n_bubbles < 1:
        raise ValueError("need at least one bubble interval")
    rho = cable_direction(a_L, params.g)
    x_L = np.asarray(x_L, dtype=float)
    out = []
    for j in range(n_bubbles + 1):
        center = x_L - (j / n_bubbles) * params.l * rho
        out.append((center, d_Q if j == n_bubbles else d_L))
    return out
