"""Spatio-temporal trajectory optimization for the payload-quadrotor system.

Decision variables are the interior waypoints and the virtual times of a
minimum-snap spline over the payload position.  The objective is

    J = snap energy + lambda_T * sum(T) + lambda_s * S

where S integrates penalties (collision of the bubble chain, thrust bounds,
tilt, payload speed/acceleration, cable tension) over every piece with a
trapezoid rule.  All penalties are evaluated through the flatness map, and
their gradients are pushed back by hand through the unit-vector chain
``w -> rho -> rho_ddot -> thrust`` and then through the spline constructor.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from slungload.dynamics import E_Z
from slungload.esdf import EsdfMap
from slungload.flatness import EPS_TAUT, FlatSnapshot, unit_vector_derivs
from slungload.minco import (
    Boundary,
    PiecewisePoly,
    basis,
    construct,
    energy_and_grads,
    inverse_virtual_time,
    propagate_gradients,
    virtual_time,
)
from slungload.numopt import LbfgsOptions, lbfgs_minimize, smooth_l1
from slungload.params import SystemParams

CONSTRAINTS = ("collision", "thrust", "tilt", "velocity", "acceleration", "tension")


@dataclass(frozen=True)
class DynamicLimits:
    f_l: float = 3.0  # N
    f_u: float = 30.0  # N
    theta_max: float = math.radians(60.0)
    v_max: float = 3.0
    a_max: float = 3.0
    eps_tension: float = 1.0  # m/s^2
    d_Q: float = 0.3
    d_L: float = 0.15

    def __post_init__(self):
        if not 0 < self.f_l < self.f_u:
            raise ValueError("need 0 < f_l < f_u")
        if not 0 < self.theta_max < math.pi / 2:
            raise ValueError("theta_max must lie in (0, pi/2)")
        if self.eps_tension <= 0 or self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("eps_tension, v_max and a_max must be positive")
        if self.d_Q < 0 or self.d_L < 0:
            raise ValueError("safe radii must be non-negative")

    def tightened(self, frac: float = 0.03, radius_margin: float = 0.05) -> "DynamicLimits":
        """Slightly stricter copy used inside the optimizer so the dense audit passes."""
        span = self.f_u - self.f_l
        return replace(
            self,
            f_l=self.f_l + frac * span,
            f_u=self.f_u - frac * span,
            theta_max=self.theta_max * (1 - frac),
            v_max=self.v_max * (1 - frac),
            a_max=self.a_max * (1 - frac),
            eps_tension=self.eps_tension * (1 + frac) + 0.05,
            d_Q=self.d_Q + radius_margin,
            d_L=self.d_L + radius_margin,
        )


@dataclass(frozen=True)
class PlannerWeights:
    lambda_T: float = 300.0
    lambda_s: float = 1.0
    collision: float = 1e6
    thrust: float = 1e3
    tilt: float = 1e5
    velocity: float = 1e4
    acceleration: float = 1e4
    tension: float = 1e5
    kappa: int = 16
    n_bubbles: int = 6
    mu: float = 1e-2  # smooth_l1 width

    def __post_init__(self):
        vals = [self.lambda_T, self.lambda_s, self.collision, self.thrust, self.tilt, self.velocity, self.acceleration, self.tension]
        if any(v < 0 for v in vals):
            raise ValueError("weights must be non-negative")
        if self.kappa < 4 or self.n_bubbles < 1:
            raise ValueError("kappa must be >= 4 and n_bubbles >= 1")


# --- pointwise pieces ---------------------------------------------------------------

def thrust_vector(a, j, s, params: SystemParams):
    """Thrust vector, its norm and the cable-direction quantities for (..., 3) derivatives."""
    w = a + params.g * E_Z
    u, u1, u2 = unit_vector_derivs(w, j, s)
    F = params.m_total * w + params.m_Q * params.l * u2  # rho_ddot = -u2
    return F, u, u1, u2


def thrust_and_tilt(snap: FlatSnapshot, params: SystemParams):
    """Thrust magnitude and tilt cosine with gradients w.r.t. (acc, jerk, snap).

    Gradients are returned as (3, 3) arrays stacked by derivative order 2..4.
    """
    d = snap.x_L_derivs
    w = d[2] + params.g * E_Z
    if np.linalg.norm(w) <= EPS_TAUT:
        raise ValueError("cable not taut")
    F, _, _, _ = thrust_vector(d[2], d[3], d[4], params)
    f = float(np.linalg.norm(F))
    if f < 1e-9:
        raise ValueError("zero thrust")
    cos_tilt = float(F[2] / f)
    gF_f = F / f
    gF_c = E_Z / f - F[2] * F / f**3
    gf = _thrust_backward(d[2][None], d[3][None], d[4][None], gF_f[None], params)
    gc = _thrust_backward(d[2][None], d[3][None], d[4][None], gF_c[None], params)
    return f, cos_tilt, np.vstack([g[0] for g in gf]), np.vstack([g[0] for g in gc])


def thrust_violation(f, limits: DynamicLimits):
    mid = 0.5 * (limits.f_u + limits.f_l)
    half = 0.5 * (limits.f_u - limits.f_l)
    return (f - mid) ** 2 - half**2


def tilt_violation(cos_tilt, limits: DynamicLimits):
    return math.cos(limits.theta_max) - cos_tilt


def _unit_backward(w, w1, w2, gu, gu1, gu2):
    """Adjoint of ``unit_vector_derivs`` (orders 0..2); returns (gw, gw1, gw2)."""
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    u = w / n
    a1 = np.sum(u * w1, axis=-1, keepdims=True)
    q = w1 - u * a1
    u1 = q / n
    a2 = np.sum(u * w2, axis=-1, keepdims=True)
    b = np.sum(u1 * w1, axis=-1, keepdims=True)
    s = a2 + b
    h = w2 - u * s - 2.0 * u1 * a1

    gu = gu.copy()
    gu1 = gu1.copy()
    gw1 = np.zeros_like(w)
    gw2 = np.zeros_like(w)
    # u2 = h / n
    gh = gu2 / n
    gn = -np.sum(gu2 * h, axis=-1, keepdims=True) / n**2
    # h = w2 - u s - 2 u1 a1
    gw2 += gh
    gu -= gh * s
    gs = -np.sum(gh * u, axis=-1, keepdims=True)
    gu1 -= 2.0 * gh * a1
    ga1 = -2.0 * np.sum(gh * u1, axis=-1, keepdims=True)
    # s = a2 + b;  b = u1 . w1;  a2 = u . w2
    gu1 += gs * w1
    gw1 += gs * u1
    gu += gs * w2
    gw2 += gs * u
    # u1 = q / n,  q = w1 - u a1
    gq = gu1 / n
    gn -= np.sum(gu1 * q, axis=-1, keepdims=True) / n**2
    gw1 += gq
    gu -= gq * a1
    ga1 -= np.sum(gq * u, axis=-1, keepdims=True)
    # a1 = u . w1
    gu += ga1 * w1
    gw1 += ga1 * u
    # u = w / n,  n = |w|
    gw = gu / n
    gn -= np.sum(gu * w, axis=-1, keepdims=True) / n**2
    gw += gn * u
    return gw, gw1, gw2


def _thrust_backward(a, j, s, gF, params: SystemParams, gu=None):
    """Pull an adjoint on the thrust vector (and optionally on u) back to (a, j, s)."""
    w = a + params.g * E_Z
    gu = np.zeros_like(w) if gu is None else gu
    gu2 = params.m_Q * params.l * gF
    gw, gw1, gw2 = _unit_backward(w, j, s, gu, np.zeros_like(w), gu2)
    gw = gw + params.m_total * gF
    return gw, gw1, gw2


# --- penalty over the whole spline ----------------------------------------------------

@dataclass
class _Samples:
    """Spline derivatives at the quadrature nodes of every piece, shape (M, K, 3)."""

    t_frac: np.ndarray
    trap: np.ndarray
    d: list  # orders 0..5
    B: list  # basis rows per order, (M, K, 8)


def _sample_spline(poly: PiecewisePoly, kappa: int) -> _Samples:
    frac = np.arange(kappa + 1) / kappa
    trap = np.ones(kappa + 1)
    trap[[0, -1]] = 0.5
    t = poly.durations[:, None] * frac[None, :]  # (M, K)
    B = [basis(t.reshape(-1), k).reshape(poly.M, kappa + 1, 8) for k in range(6)]
    d = [np.einsum("mkn,mnd->mkd", Bk, poly.coeffs) for Bk in B]
    return _Samples(frac, trap, d, B)


def _pointwise(samples: _Samples, esdf: EsdfMap | None, limits: DynamicLimits, weights: PlannerWeights, params: SystemParams, want_grad=True):
    """Weighted penalty density per sample and its gradient w.r.t. orders 0..4."""
    x, v, a, j, s = samples.d[:5]
    shape = x.shape[:-1]
    mu = weights.mu
    dens = np.zeros(shape)
    g = [np.zeros_like(x) for _ in range(5)]

    # payload speed and acceleration
    val, der = smooth_l1(np.sum(v * v, -1) - limits.v_max**2, mu)
    dens += weights.velocity * val
    g[1] += weights.velocity * (2.0 * der)[..., None] * v
    val, der = smooth_l1(np.sum(a * a, -1) - limits.a_max**2, mu)
    dens += weights.acceleration * val
    g[2] += weights.acceleration * (2.0 * der)[..., None] * a
    # tension projected on z
    val, der = smooth_l1(limits.eps_tension - a[..., 2] - params.g, mu)
    dens += weights.tension * val
    g[2][..., 2] -= weights.tension * der

    w = a + params.g * E_Z
    nw = np.linalg.norm(w, axis=-1)
    ok = nw > 2 * EPS_TAUT
    if not ok.all():
        # singular samples: large finite penalty pushing the payload acceleration up
        bad = ~ok
        gap = 2 * EPS_TAUT - a[..., 2][bad] - params.g
        dens[bad] += 1e6 * (1.0 + np.maximum(gap, 0.0) ** 2)
        g[2][..., 2][bad] -= 2e6 * np.maximum(gap, 0.0)
    a_ok = np.where(ok[..., None], a, 0.0)
    j_ok = np.where(ok[..., None], j, 0.0)
    s_ok = np.where(ok[..., None], s, 0.0)
    F, u, u1, u2 = thrust_vector(a_ok, j_ok, s_ok, params)
    f = np.linalg.norm(F, axis=-1)
    okf = ok & (f > 1e-6)
    f_safe = np.where(okf, f, 1.0)
    gF = np.zeros_like(F)

    val, der = smooth_l1(thrust_violation(f, limits), mu)
    val, der = np.where(okf, val, 0.0), np.where(okf, der, 0.0)
    dens += weights.thrust * val
    gF += (weights.thrust * der * 2.0 * (f - 0.5 * (limits.f_u + limits.f_l)) / f_safe)[..., None] * F

    cz = F[..., 2] / f_safe
    val, der = smooth_l1(math.cos(limits.theta_max) - cz, mu)
    val, der = np.where(okf, val, 0.0), np.where(okf, der, 0.0)
    dens += weights.tilt * val
    dcz = E_Z / f_safe[..., None] - (F[..., 2] / f_safe**3)[..., None] * F
    gF -= (weights.tilt * der)[..., None] * dcz

    gu = np.zeros_like(u)
    if esdf is not None and weights.collision > 0:
        N = weights.n_bubbles
        frac = np.arange(N + 1) / N * params.l
        radii = np.full(N + 1, limits.d_L)
        radii[-1] = limits.d_Q
        # rho = -u, so centers x - frac * rho = x + frac * u
        centers = x[..., None, :] + frac[:, None] * u[..., None, :]
        dist, grad = esdf.query_batch(centers.reshape(-1, 3))
        dist = dist.reshape(centers.shape[:-1])
        grad = grad.reshape(centers.shape)
        viol = np.maximum(radii - dist, 0.0)
        viol = np.where(ok[..., None], viol, 0.0)
        dens += weights.collision * np.sum(viol**3, axis=-1)
        gc = -(weights.collision * 3.0 * viol**2)[..., None] * grad  # d/d center
        g[0] += gc.sum(axis=-2)
        gu += np.sum(gc * frac[:, None], axis=-2)

    if want_grad:
        gw, gw1, gw2 = _thrust_backward(a_ok, j_ok, s_ok, gF, params, gu=gu)
        mask = ok[..., None]
        g[2] += np.where(mask, gw, 0.0)
        g[3] += np.where(mask, gw1, 0.0)
        g[4] += np.where(mask, gw2, 0.0)
    return dens, g


def penalty_eval(poly: PiecewisePoly, esdf: EsdfMap | None, limits: DynamicLimits, weights: PlannerWeights, params: SystemParams):
    """Integrated constraint penalty ``S`` with gradients w.r.t. coefficients and durations."""
    smp = _sample_spline(poly, weights.kappa)
    dens, g = _pointwise(smp, esdf, limits, weights, params)
    T = poly.durations
    kappa = weights.kappa
    qw = (T[:, None] / kappa) * smp.trap[None, :]  # quadrature weights (M, K)
    S = float(np.sum(qw * dens))
    dc = np.zeros_like(poly.coeffs)
    dT = np.sum(smp.trap[None, :] * dens, axis=1) / kappa
    for k in range(5):
        gk = g[k] * qw[..., None]
        dc += np.einsum("mkn,mkd->mnd", smp.B[k], gk)
        # sample times move with the duration: t_j = (j / kappa) T
        dT += np.sum(np.sum(gk * smp.d[k + 1], axis=-1) * smp.t_frac[None, :], axis=1)
    return S, dc, dT


# --- optimizer ----------------------------------------------------------------------

@dataclass
class FeasibilityReport:
    max_violation: dict
    min_tension: float  # N, full cable tension along the plan
    runtime_ms: float = 0.0
    iterations: int = 0
    feasible: bool = False
    status: str = ""

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "max_violation": {k: float(v) for k, v in self.max_violation.items()},
            "min_tension_N": float(self.min_tension),
            "runtime_ms": float(self.runtime_ms),
            "iterations": int(self.iterations),
            "status": self.status,
        }


@dataclass
class PlanResult:
    poly: PiecewisePoly
    report: FeasibilityReport
    objective: float
    history: list = field(default_factory=list)


class _Problem:
    def __init__(self, boundary, M, esdf, limits, weights, params):
        self.boundary = boundary
        self.M = M
        self.esdf = esdf
        self.limits = limits
        self.weights = weights
        self.params = params

    def split(self, z):
        M = self.M
        p = z[: 3 * (M - 1)].reshape(M - 1, 3)
        sigma = z[3 * (M - 1) :]
        return p, sigma

    def poly(self, z) -> PiecewisePoly:
        p, sigma = self.split(z)
        T, _ = virtual_time(sigma)
        return construct(self.boundary, p, T)

    def __call__(self, z):
        p, sigma = self.split(z)
        T, dT_dsigma = virtual_time(sigma)
        poly = construct(self.boundary, p, T)
        w = self.weights
        J_E, dc_E, dT_E = energy_and_grads(poly)
        S, dc_S, dT_S = penalty_eval(poly, self.esdf, self.limits, w, self.params)
        J = J_E + w.lambda_T * float(T.sum()) + w.lambda_s * S
        dc = dc_E + w.lambda_s * dc_S
        dT_direct = dT_E + w.lambda_T + w.lambda_s * dT_S
        gp, gT = propagate_gradients(poly, dc, dT_direct)
        return J, np.concatenate([gp.reshape(-1), gT * dT_dsigma])


def objective_function(boundary: Boundary, M: int, esdf, limits, weights, params):
    """Callable ``z -> (J, dJ/dz)`` over stacked waypoints and virtual times."""
    return _Problem(boundary, M, esdf, limits, weights, params)


def pack(waypoints: np.ndarray, durations: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(waypoints, dtype=float).reshape(-1), inverse_virtual_time(durations)])


def initial_guess(path_t: np.ndarray, path_x: np.ndarray, piece_len: float = 1.5, min_pieces: int = 3):
    """Resample a time-stamped path into ``M`` equal-time pieces."""
    length = float(np.sum(np.linalg.norm(np.diff(path_x, axis=0), axis=1)))
    M = max(min_pieces, int(math.ceil(length / piece_len)))
    total = max(float(path_t[-1] - path_t[0]), 1e-3 * M)
    ts = path_t[0] + total * np.arange(1, M) / M
    wp = np.column_stack([np.interp(ts, path_t, path_x[:, k]) for k in range(3)])
    return wp, np.full(M, total / M)


def audit(poly: PiecewisePoly, esdf: EsdfMap | None, limits: DynamicLimits, params: SystemParams, dt: float = 0.01, n_bubbles: int = 6):
    """Raw constraint violations at dense uniform sampling, in natural units."""
    n = max(int(math.ceil(poly.total_duration / dt)), 1)
    t = np.linspace(0.0, poly.total_duration, n + 1)
    v, a, j, s = (poly.sample(t, k) for k in (1, 2, 3, 4))
    x = poly.sample(t, 0)
    w = a + params.g * E_Z
    nw = np.linalg.norm(w, axis=1)
    viol = dict.fromkeys(CONSTRAINTS, 0.0)
    viol["velocity"] = float(np.max(np.linalg.norm(v, axis=1)) - limits.v_max)
    viol["acceleration"] = float(np.max(np.linalg.norm(a, axis=1)) - limits.a_max)
    viol["tension"] = float(np.max(limits.eps_tension - a[:, 2] - params.g))
    if np.any(nw <= EPS_TAUT):
        viol["thrust"] = viol["tilt"] = viol["collision"] = math.inf
        return {k: max(v_, 0.0) for k, v_ in viol.items()}, float(params.m_L * nw.min())
    F, u, _, _ = thrust_vector(a, j, s, params)
    f = np.linalg.norm(F, axis=1)
    viol["thrust"] = float(max(np.max(f - limits.f_u), np.max(limits.f_l - f)))
    tilt = np.arccos(np.clip(F[:, 2] / f, -1.0, 1.0))
    viol["tilt"] = float(np.max(tilt) - limits.theta_max)
    if esdf is not None:
        frac = np.arange(n_bubbles + 1) / n_bubbles * params.l
        radii = np.full(n_bubbles + 1, limits.d_L)
        radii[-1] = limits.d_Q
        centers = x[:, None, :] + frac[:, None] * u[:, None, :]
        dist, _ = esdf.query_batch(centers.reshape(-1, 3))
        viol["collision"] = float(np.max(radii - dist.reshape(len(t), -1)))
        lo = esdf.origin
        hi = esdf.origin + esdf.resolution * np.array(esdf.dims)
        if np.any(centers < lo) or np.any(centers > hi):
            viol["collision"] = math.inf
    else:
        viol["collision"] = -math.inf
    return {k: max(v_, 0.0) for k, v_ in viol.items()}, float(params.m_L * nw.min())


def is_feasible(viol: dict, resolution: float, tol: float = 1e-3) -> bool:
    """Collision may dip one voxel into the safety radius; every other bound is held to ``tol``."""
    for k, v in viol.items():
        limit = resolution if k == "collision" else tol
        if not v <= limit:
            return False
    return True


def optimize(
    waypoints: np.ndarray,
    durations: np.ndarray,
    boundary: Boundary,
    esdf: EsdfMap | None,
    limits: DynamicLimits,
    weights: PlannerWeights,
    params: SystemParams,
    opts: LbfgsOptions | None = None,
) -> PlanResult:
    """L-BFGS over waypoints and virtual times from an initial spline."""
    t0 = time.perf_counter()
    M = len(durations)
    prob = _Problem(boundary, M, esdf, limits.tightened(), weights, params)
    z0 = pack(waypoints, durations)
    opts = opts or LbfgsOptions(max_iters=120, grad_tol=1e-5, rel_tol=1e-10)
    res = lbfgs_minimize(prob, z0, opts)
    poly = prob.poly(res.x)
    viol, min_tension = audit(poly, esdf, limits, params, n_bubbles=weights.n_bubbles)
    res_m = esdf.resolution if esdf is not None else 0.0
    report = FeasibilityReport(
        max_violation=viol,
        min_tension=min_tension,
        runtime_ms=1e3 * (time.perf_counter() - t0),
        iterations=res.iterations,
        feasible=is_feasible(viol, res_m),
        status=res.status,
    )
    return PlanResult(poly, report, res.value)


def plan(
    esdf: EsdfMap,
    start: np.ndarray,
    goal: np.ndarray,
    limits: DynamicLimits,
    weights: PlannerWeights,
    params: SystemParams,
    search_cfg=None,
) -> PlanResult:
    """Front end search followed by spatio-temporal refinement, rest to rest."""
    from slungload.kinoastar import SearchConfig, search

    t0 = time.perf_counter()
    cfg = search_cfg or SearchConfig(
        a_max=limits.a_max,
        v_max=limits.v_max,
        n_bubbles=weights.n_bubbles,
        d_L=limits.d_L,
        d_Q=limits.d_Q,
        heuristic_weight=1.5,
    )
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    boundary = Boundary.rest(start, goal)
    if np.linalg.norm(goal - start) < 1e-9:
        poly = construct(boundary, np.zeros((0, 3)), np.array([1.0]))
        viol, tension = audit(poly, esdf, limits, params, n_bubbles=weights.n_bubbles)
        rep = FeasibilityReport(viol, tension, 1e3 * (time.perf_counter() - t0), 0, is_feasible(viol, esdf.resolution), "trivial")
        return PlanResult(poly, rep, 0.0)
    path = search(esdf, start, np.zeros(3), goal, params, cfg)
    t, x, _, _ = path.sample(0.05)
    wp, T = initial_guess(t, x)
    res = optimize(wp, T, boundary, esdf, limits, weights, params)
    res.report.runtime_ms = 1e3 * (time.perf_counter() - t0)
    return res
