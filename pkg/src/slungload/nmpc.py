"""Real-time-iteration NMPC for the payload-quadrotor model.

Multiple shooting over the packed 16-state model with RK4 stages.  States are
perturbed in a 15-dimensional tangent space (additive for payload, velocity and
cable quantities, right-multiplicative for the attitude quaternion), so the
linear-quadratic subproblem is well posed.  Each control cycle performs one
Gauss-Newton step solved by a Riccati sweep; inputs that leave their box are
fixed at the bound and the sweep is repeated once over the remaining inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from slungload.dynamics import NU, NX, ExternalForces, SystemState, ZERO_FORCES, model_step
from slungload.flatness import FlatSnapshot, flat_to_state
from slungload.minco import PiecewisePoly
from slungload.params import SystemParams
from slungload.rotation import attitude_error, quat_mul

NT = 15  # tangent dimension
# residual blocks: x_Q, x_L, v_Q, v_L, rho, rho_dot, attitude
RESIDUAL_NAMES = ("x_Q", "x_L", "v_Q", "v_L", "rho", "rho_dot", "att")


def _default_q():
    return np.repeat([40.0, 60.0, 4.0, 6.0, 10.0, 1.0, 2.0], 3)


def _default_h():
    return np.array([1.0, 3.0, 3.0, 3.0])


@dataclass(frozen=True)
class NmpcConfig:
    N: int = 20
    dt: float = 0.05
    Q: np.ndarray = field(default_factory=_default_q)  # 21 residual weights
    H: np.ndarray = field(default_factory=_default_h)  # thrust, body rates
    Q_e: np.ndarray | None = None  # terminal, defaults to 10 Q
    b_x: float = 1.0
    b_u: float = 1.0
    u_min: np.ndarray = field(default_factory=lambda: np.array([1.0, -6.0, -6.0, -3.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([40.0, 6.0, 6.0, 3.0]))
    fd_step: float = 1e-6

    def __post_init__(self):
        for name in ("Q", "H", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        Q_e = 10.0 * self.Q if self.Q_e is None else np.asarray(self.Q_e, dtype=float)
        object.__setattr__(self, "Q_e", Q_e)
        if self.N < 5 or self.dt <= 0:
            raise ValueError("need N >= 5 and dt > 0")
        if self.Q.shape != (21,) or self.Q_e.shape != (21,) or self.H.shape != (NU,):
            raise ValueError("Q and Q_e take 21 residual weights, H takes 4")
        if np.any(self.Q < 0) or np.any(self.Q_e < 0) or np.any(self.H < 0) or self.b_x < 0 or self.b_u < 0:
            raise ValueError("weights and decay rates must be non-negative")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be below u_max componentwise")


@dataclass
class ReferenceWindow:
    states: np.ndarray  # (N+1, 16) packed
    inputs: np.ndarray  # (N, 4)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != NX or self.inputs.shape != (len(self.states) - 1, NU):
            raise ValueError("reference needs (N+1, 16) states and (N, 4) inputs")


@dataclass
class NmpcSolution:
    x: np.ndarray  # (N+1, 16)
    u: np.ndarray  # (N, 4)


@dataclass
class Diagnostics:
    solve_time: float
    residual_norm: float
    shooting_gap: float
    clipped: np.ndarray  # (4,) flags on the applied input
    degraded: bool = False


# --- weights and reference ----------------------------------------------------------

def decay_weights(cfg: NmpcConfig):
    """Stage weights ``exp(-k b / N)`` times the base diagonals for k = 0..N, plus the terminal one."""
    k = np.arange(cfg.N + 1)[:, None]
    Q = np.exp(-k * cfg.b_x / cfg.N) * cfg.Q[None, :]
    H = np.exp(-k * cfg.b_u / cfg.N) * cfg.H[None, :]
    return Q, H, cfg.Q_e.copy()


def _residual_map(l: float) -> np.ndarray:
    """Linear map from the 15-d tangent deviation to the 21 weighted residuals."""
    C = np.zeros((21, NT))
    I = np.eye(3)
    C[0:3, 0:3] = I  # x_Q = x_L - l rho
    C[0:3, 6:9] = -l * I
    C[3:6, 0:3] = I
    C[6:9, 3:6] = I  # v_Q = v_L - l rho_dot
    C[6:9, 9:12] = -l * I
    C[9:12, 3:6] = I
    C[12:15, 6:9] = I
    C[15:18, 9:12] = I
    C[18:21, 12:15] = I
    return C


def hover_reference(x_L, cfg: NmpcConfig, params: SystemParams) -> ReferenceWindow:
    x = SystemState(
        x_L=np.asarray(x_L, dtype=float),
        v_L=np.zeros(3),
        rho=np.array([0.0, 0.0, -1.0]),
        rho_dot=np.zeros(3),
        q=np.array([1.0, 0.0, 0.0, 0.0]),
    ).pack()
    u = np.array([params.hover_thrust, 0.0, 0.0, 0.0])
    return ReferenceWindow(np.repeat(x[None], cfg.N + 1, axis=0), np.repeat(u[None], cfg.N, axis=0))


def flat_reference(poly: PiecewisePoly, t: float, params: SystemParams, psi: float = 0.0):
    """Packed state and input from the planned spline at time ``t``.

    Outside ``[0, T)`` the reference hovers at the nearer end point.
    """
    if t < 0.0 or t >= poly.total_duration:
        derivs = np.zeros((6, 3))
        derivs[0] = poly.sample([min(max(t, 0.0), poly.total_duration)], 0)[0]
    else:
        derivs = np.vstack([poly.sample([t], k) for k in range(6)])
    fs = flat_to_state(FlatSnapshot(derivs, psi=psi), params)
    return fs.state.pack(), np.concatenate([[fs.f], fs.omega])


def build_reference(poly: PiecewisePoly, t0: float, cfg: NmpcConfig, params: SystemParams, psi: float = 0.0) -> ReferenceWindow:
    """Sample the flatness map along the plan; past the end the window hovers at the goal."""
    xs, us = zip(*(flat_reference(poly, t0 + k * cfg.dt, params, psi) for k in range(cfg.N + 1)))
    return ReferenceWindow(np.array(xs), np.array(us[:-1]))


# --- manifold helpers ---------------------------------------------------------------

def _quat_exp(v: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    safe = np.where(angle > 1e-12, angle, 1.0)
    s = np.where(angle > 1e-12, np.sin(half) / safe, 0.5 - angle**2 / 48.0)
    return np.concatenate([np.cos(half), s * v], axis=-1)


def retract(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``x (+) d``: additive on the first twelve entries, body-frame rotation of q."""
    out = np.empty(np.broadcast_shapes(x.shape[:-1], d.shape[:-1]) + (NX,))
    out[..., :12] = x[..., :12] + d[..., :12]
    out[..., 12:] = quat_mul(x[..., 12:], _quat_exp(d[..., 12:]))
    return out


def difference(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``y (-) x`` in the tangent space (inverse of :func:`retract` to first order)."""
    out = np.empty(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (NT,))
    out[..., :12] = y[..., :12] - x[..., :12]
    out[..., 12:] = attitude_error(y[..., 12:], x[..., 12:])
    return out


def shift_warm_start(sol: NmpcSolution, params: SystemParams | None = None, dt: float | None = None, ext: ExternalForces = ZERO_FORCES) -> NmpcSolution:
    """Drop stage 0 and repeat the last stage.

    With ``params`` and ``dt`` the appended state is the model successor of
    the old last state under the repeated input, which keeps the final
    shooting gap at zero instead of the last stage's one-step motion.
    """
    u = np.vstack([sol.u[1:], sol.u[-1:]])
    if params is None or dt is None:
        tail = sol.x[-1:]
    else:
        tail = model_step(sol.x[-1], sol.u[-1], params, dt, ext.f_Q, ext.f_L)[None]
    return NmpcSolution(np.vstack([sol.x[1:], tail]), u)


# --- linearization and Riccati ------------------------------------------------------

def linearize(xbar, ubar, ext: ExternalForces, cfg: NmpcConfig, params: SystemParams):
    """Tangent-space Jacobians of the RK4 stage map by batched central differences.

    Returns ``(F, A, B)`` with ``F`` the nominal successors (N, 16), ``A`` (N, 15, 15), ``B`` (N, 15, 4).
    """
    N = len(ubar)
    h = cfg.fd_step
    E = np.eye(NT + NU) * h
    dx = np.concatenate([E[:, :NT], -E[:, :NT]])  # (2 * 19, 15)
    du = np.concatenate([E[:, NT:], -E[:, NT:]])
    X = retract(xbar[:N, None, :], dx[None])  # (N, 38, 16)
    U = ubar[:, None, :] + du[None]
    Xs = np.concatenate([xbar[:N, None, :], X], axis=1)
    Us = np.concatenate([ubar[:, None, :], U], axis=1)
    Y = model_step(Xs, Us, params, cfg.dt, ext.f_Q, ext.f_L)
    F = Y[:, 0]
    D = difference(Y[:, 1:], F[:, None, :])  # (N, 38, 15)
    n = NT + NU
    J = (D[:, :n] - D[:, n:]) / (2 * h)  # (N, 19, 15) rows are perturbation directions
    J = np.transpose(J, (0, 2, 1))
    return F, J[:, :, :NT], J[:, :, NT:]


def _riccati(A, B, gap, Q, q, R, r, Qn, qn, dx0, fixed=None, fixed_val=None):
    """Solve the equality-constrained LQ problem; components flagged ``fixed`` take ``fixed_val``."""
    N = len(A)
    P, p = Qn, qn
    K = np.zeros((N, NU, NT))
    kff = np.zeros((N, NU))
    for k in range(N - 1, -1, -1):
        free = np.ones(NU, dtype=bool) if fixed is None else ~fixed[k]
        c = np.zeros(NU) if fixed_val is None else np.where(free, 0.0, fixed_val[k])
        Bf = B[k][:, free]
        g = gap[k] + B[k] @ c  # fixed inputs act as a known affine term
        PB = P @ Bf
        Huu = R[k][np.ix_(free, free)] + Bf.T @ PB
        Hux = PB.T @ A[k]
        hu = r[k][free] + R[k][np.ix_(free, ~free)] @ c[~free] + Bf.T @ (P @ g + p)
        if free.any():
            L = np.linalg.cholesky(Huu)
            Kf = -np.linalg.solve(L.T, np.linalg.solve(L, Hux))
            kf = -np.linalg.solve(L.T, np.linalg.solve(L, hu))
        else:
            Kf = np.zeros((0, NT))
            kf = np.zeros(0)
        K[k][free] = Kf
        kff[k] = c
        kff[k][free] = kf
        p = q[k] + A[k].T @ (P @ g + p) + Hux.T @ kf
        P = Q[k] + A[k].T @ P @ A[k] + Hux.T @ Kf
        P = 0.5 * (P + P.T)
    dx = np.zeros((N + 1, NT))
    du = np.zeros((N, NU))
    dx[0] = dx0
    for k in range(N):
        du[k] = K[k] @ dx[k] + kff[k]
        dx[k + 1] = A[k] @ dx[k] + B[k] @ du[k] + gap[k]
    return dx, du


@dataclass
class _Qp:
    A: np.ndarray
    B: np.ndarray
    gap: np.ndarray
    Q: np.ndarray
    q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    Qn: np.ndarray
    qn: np.ndarray
    dx0: np.ndarray


def _build_qp(x_now, ref: ReferenceWindow, ext, cfg: NmpcConfig, params: SystemParams, xbar, ubar):
    N = cfg.N
    F, A, B = linearize(xbar, ubar, ext, cfg, params)
    gap = difference(F, xbar[1:])
    Qd, Hd, Qe = decay_weights(cfg)
    C = _residual_map(params.l)
    Qs = np.einsum("ri,kr,rj->kij", C, Qd, C)
    e = difference(xbar, ref.states)  # linearization point minus reference
    q = np.einsum("kij,kj->ki", Qs, e)
    R = np.einsum("ki,ij->kij", Hd[:N], np.eye(NU))
    r = Hd[:N] * (ubar - ref.inputs)
    Qn = C.T @ np.diag(Qe) @ C
    qn = Qn @ e[N]
    dx0 = difference(x_now[None], xbar[:1])[0]
    return _Qp(A, B, gap, Qs[:N], q[:N], R, r, Qn, qn, dx0)


def rti_step(
    x_now: SystemState,
    ref: ReferenceWindow,
    cfg: NmpcConfig,
    params: SystemParams,
    ext: ExternalForces = ZERO_FORCES,
    warm: NmpcSolution | None = None,
):
    """One Gauss-Newton iteration; returns ``(u0, solution, diagnostics)``."""
    t0 = time.perf_counter()
    if len(ref.inputs) != cfg.N:
        raise ValueError("reference window length does not match the horizon")
    xn = x_now.pack() if isinstance(x_now, SystemState) else np.asarray(x_now, dtype=float)
    if warm is None:
        xbar, ubar = ref.states.copy(), ref.inputs.copy()
    else:
        xbar, ubar = warm.x.copy(), warm.u.copy()
    try:
        qp = _build_qp(xn, ref, ext, cfg, params, xbar, ubar)
        dx, du = _riccati(qp.A, qp.B, qp.gap, qp.Q, qp.q, qp.R, qp.r, qp.Qn, qp.qn, qp.dx0)
        u_new = ubar + du
        lo = u_new < cfg.u_min
        hi = u_new > cfg.u_max
        if lo.any() or hi.any():
            fixed = lo | hi
            val = np.where(lo, cfg.u_min, cfg.u_max) - ubar
            dx, du = _riccati(qp.A, qp.B, qp.gap, qp.Q, qp.q, qp.R, qp.r, qp.Qn, qp.qn, qp.dx0, fixed, val)
            u_new = ubar + du
    except np.linalg.LinAlgError:
        fallback = shift_warm_start(NmpcSolution(xbar, ubar)) if warm is not None else NmpcSolution(xbar, ubar)
        u0 = np.clip(fallback.u[0], cfg.u_min, cfg.u_max)
        diag = Diagnostics(time.perf_counter() - t0, np.nan, np.nan, np.zeros(NU, dtype=bool), degraded=True)
        return u0, fallback, diag
    u_clip = np.clip(u_new, cfg.u_min, cfg.u_max)
    sol = NmpcSolution(retract(xbar, dx), u_clip)
    u0 = u_clip[0].copy()
    diag = Diagnostics(
        solve_time=time.perf_counter() - t0,
        residual_norm=float(np.linalg.norm(difference(sol.x, ref.states))),
        shooting_gap=float(np.abs(qp.gap).max()),
        clipped=(u_new[0] != u0),
    )
    return u0, sol, diag
