"""Kinodynamic A* over payload double-integrator primitives.

Each primitive holds the payload acceleration constant for a short
duration.  Every sampled instant is checked with the whole-body bubble
model: the cable direction follows from the primitive's acceleration, so
the quadrotor and cable spheres swing with it.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numba
import numpy as np

from slungload.dynamics import E_Z
from slungload.esdf import EsdfMap, distance_at
from slungload.flatness import EPS_TAUT
from slungload.params import SystemParams


@dataclass(frozen=True)
class SearchConfig:
    a_max: float = 3.0
    v_max: float = 3.0
    u_per_axis: int = 3
    tau_samples: tuple = (0.2, 0.4)
    lam: float = 10.0  # time weight
    goal_tol: float = 0.3
    prune_res: float = 0.4  # m, position cell for duplicate pruning
    vel_bin: float = 0.5  # m/s
    check_dt: float = 0.05
    max_expansions: int = 4000
    n_bubbles: int = 6
    d_L: float = 0.15
    d_Q: float = 0.3
    heuristic_weight: float = 1.0  # > 1 trades optimality for fewer expansions
    shot_radius: float = np.inf  # m; goal connections are attempted from the start and within this range

    def __post_init__(self):
        if self.heuristic_weight < 1.0:
            raise ValueError("heuristic_weight must be >= 1")
        if self.lam <= 0 or self.a_max <= 0 or self.v_max <= 0:
            raise ValueError("lam, a_max and v_max must be positive")
        if self.u_per_axis < 2 or any(t <= 0 for t in self.tau_samples):
            raise ValueError("need >= 2 lattice points per axis and positive durations")

    def control_lattice(self) -> np.ndarray:
        """Per-axis grid on [-a_max, a_max], pulled radially into the a_max ball."""
        axis = np.linspace(-self.a_max, self.a_max, self.u_per_axis)
        u = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        n = np.linalg.norm(u, axis=1)
        scale = np.where(n > self.a_max, self.a_max / np.maximum(n, 1e-300), 1.0)
        return u * scale[:, None]


@dataclass
class KinoNode:
    x_L: np.ndarray
    v_L: np.ndarray
    g_cost: float
    f_cost: float
    parent: int | None
    u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau: float = 0.0


@dataclass
class GoalShot:
    """Cubic connection ``x(t) = x0 + v0 t + a t^2/2 + j t^3/6`` ending at rest."""

    x0: np.ndarray
    v0: np.ndarray
    a: np.ndarray
    j: np.ndarray
    T: float

    def state(self, t):
        t = np.asarray(t, dtype=float)[:, None]
        x = self.x0 + self.v0 * t + self.a * t**2 / 2 + self.j * t**3 / 6
        v = self.v0 + self.a * t + self.j * t**2 / 2
        acc = self.a + self.j * t
        return x, v, acc


@dataclass
class KinoPath:
    nodes: list[KinoNode]
    shot: GoalShot | None
    explored: int
    cost: float

    @property
    def duration(self) -> float:
        return sum(n.tau for n in self.nodes[1:]) + (self.shot.T if self.shot else 0.0)

    def sample(self, dt: float = 0.05):
        """Times, positions, velocities and accelerations along the whole path."""
        ts, xs, vs, as_ = [], [], [], []
        t0 = 0.0
        for prev, node in zip(self.nodes, self.nodes[1:]):
            t = np.arange(0.0, node.tau, dt)[:, None]
            ts.append(t0 + t[:, 0])
            xs.append(prev.x_L + prev.v_L * t + 0.5 * node.u * t**2)
            vs.append(prev.v_L + node.u * t)
            as_.append(np.repeat(node.u[None], len(t), axis=0))
            t0 += node.tau
        if self.shot is not None:
            t = np.arange(0.0, self.shot.T, dt)
            x, v, a = self.shot.state(t)
            ts.append(t0 + t)
            xs.append(x)
            vs.append(v)
            as_.append(a)
            t0 += self.shot.T
        last = self.nodes[-1] if self.shot is None else None
        end_x = last.x_L if last is not None else self.shot.state([self.shot.T])[0][0]
        end_v = last.v_L if last is not None else np.zeros(3)
        ts.append(np.array([t0]))
        xs.append(end_x[None])
        vs.append(end_v[None])
        as_.append(np.zeros((1, 3)))
        return np.concatenate(ts), np.vstack(xs), np.vstack(vs), np.vstack(as_)


class NoPathFound(RuntimeError):
    def __init__(self, reason: str, explored: int):
        super().__init__(f"{reason} (explored {explored} nodes)")
        self.reason = reason
        self.explored = explored


def primitive_cost(u, tau: float, lam: float) -> float:
    if tau <= 0:
        raise ValueError("tau must be positive")
    u = np.asarray(u, dtype=float)
    return float(u @ u) * tau + lam * tau


def _obvp_coeffs(x0, v0, x1, v1):
    """Coefficients of the optimal cost A/T + B/T^2 + C/T^3 summed over axes (batched)."""
    d = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    A = 4.0 * np.sum(v0 * v0 + v0 * v1 + v1 * v1, axis=-1)
    B = -12.0 * np.sum(d * (v0 + v1), axis=-1)
    C = 12.0 * np.sum(d * d, axis=-1)
    return A, B, C


_T_GRID = np.geomspace(1e-4, 1e4, 97)


@numba.njit(cache=True)
def _arrival_kernel(A, B, C, lam, grid):
    """Minimize A/T + B/T^2 + C/T^3 + lam T over T > 0 for every row.

    Stationary points are the positive roots of q(T) = lam T^4 - A T^2 - 2 B T - 3 C;
    each sign change of q on a geometric grid is refined by safeguarded Newton.
    """
    n = A.shape[0]
    best = np.zeros(n)
    best_T = np.zeros(n)
    for i in range(n):
        a, b, c = A[i], B[i], C[i]
        if a == 0.0 and b == 0.0 and c == 0.0:
            continue
        c_min = np.inf
        t_min = 0.0
        lo = grid[0]
        q_lo = lam * lo**4 - a * lo**2 - 2 * b * lo - 3 * c
        for k in range(1, grid.shape[0]):
            hi = grid[k]
            q_hi = lam * hi**4 - a * hi**2 - 2 * b * hi - 3 * c
            if q_lo < 0.0 <= q_hi:  # minimum of the cost (q goes - to +)
                x0, x1 = lo, hi
                T = 0.5 * (x0 + x1)
                for _ in range(100):
                    q = lam * T**4 - a * T**2 - 2 * b * T - 3 * c
                    if q < 0.0:
                        x0 = T
                    else:
                        x1 = T
                    dq = 4 * lam * T**3 - 2 * a * T - 2 * b
                    step_ok = dq > 0.0
                    T_new = T - q / dq if step_ok else 0.5 * (x0 + x1)
                    if not (x0 < T_new < x1):
                        T_new = 0.5 * (x0 + x1)
                    if abs(T_new - T) <= 1e-15 * T:
                        T = T_new
                        break
                    T = T_new
                cost = a / T + b / T**2 + c / T**3 + lam * T
                if cost < c_min:
                    c_min = cost
                    t_min = T
            lo, q_lo = hi, q_hi
        best[i] = c_min
        best_T[i] = t_min
    return best, best_T


def optimal_arrival_batch(x0, v0, x1, v1, lam: float):
    """Vectorized :func:`optimal_arrival` over leading axes; returns (cost, T)."""
    A, B, C = (np.atleast_1d(np.asarray(c, dtype=float)) for c in _obvp_coeffs(x0, v0, x1, v1))
    return _arrival_kernel(A, B, C, float(lam), _T_GRID)


def optimal_arrival(x0, v0, x1, v1, lam: float) -> tuple[float, float]:
    """Minimal ``int ||u||^2 dt + lam T`` between two double-integrator states and its T."""
    cost, T = optimal_arrival_batch(x0, v0, x1, v1, lam)
    return float(cost[0]), float(T[0])


def heuristic(x_L, v_L, goal, lam: float) -> float:
    """Optimal double-integrator cost to reach ``goal`` at rest."""
    return optimal_arrival(x_L, v_L, goal, np.zeros(3), lam)[0]


@numba.njit(cache=True, inline="always")
def _sample_clear(x, y, z, ax, ay, az, g, frac, radii, lo, hi, D, origin, res, eps_taut):
    wz = az + g
    nw = np.sqrt(ax * ax + ay * ay + wz * wz)
    if nw <= eps_taut:
        return False
    # centers run from the payload up the cable: x - frac * rho with rho = -w / |w|
    ux, uy, uz = ax / nw, ay / nw, wz / nw
    for b in range(frac.shape[0]):
        r = radii[b]
        cx = x + frac[b] * ux
        cy = y + frac[b] * uy
        cz = z + frac[b] * uz
        if (
            cx - r < lo[0] or cy - r < lo[1] or cz - r < lo[2]
            or cx + r > hi[0] or cy + r > hi[1] or cz + r > hi[2]
            or distance_at(D, origin, res, cx, cy, cz) < r
        ):
            return False
    return True


@numba.njit(cache=True)
def _clear_kernel(x, a, g, frac, radii, lo, hi, D, origin, res, eps_taut):
    n = x.shape[0]
    out = np.ones(n, dtype=np.bool_)
    for k in range(n):
        out[k] = _sample_clear(
            x[k, 0], x[k, 1], x[k, 2], a[k, 0], a[k, 1], a[k, 2], g, frac, radii, lo, hi, D, origin, res, eps_taut
        )
    return out


@numba.njit(cache=True)
def _runs_clear_kernel(x, a, g, frac, radii, lo, hi, D, origin, res, eps_taut):
    """Per-run flag for (P, S, 3) samples; stops at the first blocked sample of each run."""
    P, S = x.shape[0], x.shape[1]
    out = np.ones(P, dtype=np.bool_)
    for p in range(P):
        # endpoint first: most rejected primitives end inside an obstacle
        for i in range(S):
            k = S - 1 if i == 0 else i - 1
            if not _sample_clear(
                x[p, k, 0], x[p, k, 1], x[p, k, 2], a[p, k, 0], a[p, k, 1], a[p, k, 2],
                g, frac, radii, lo, hi, D, origin, res, eps_taut,
            ):
                out[p] = False
                break
    return out


class _Checker:
    """Whole-body collision test against an ESDF map."""

    def __init__(self, esdf: EsdfMap, params: SystemParams, cfg: SearchConfig):
        self.esdf = esdf
        self.g = params.g
        self.cfg = cfg
        n = cfg.n_bubbles
        self.frac = np.arange(n + 1) / n * params.l  # distance from payload along the cable
        self.radii = np.full(n + 1, cfg.d_L)
        self.radii[-1] = cfg.d_Q
        self.lo = esdf.origin
        self.hi = esdf.origin + esdf.resolution * np.array(esdf.dims)

    def bubbles(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Centers (K, n+1, 3) for payload positions and accelerations (K, 3)."""
        w = a + self.g * E_Z
        rho = -w / np.linalg.norm(w, axis=-1, keepdims=True)
        return x[:, None, :] - self.frac[None, :, None] * rho[:, None, :]

    def _args(self):
        e = self.esdf
        return (
            self.g,
            self.frac,
            np.asarray(self.radii, dtype=float),
            self.lo,
            self.hi,
            e.distance,
            e.origin,
            float(e.resolution),
            EPS_TAUT,
        )

    def runs_free(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Flag per run of samples (P, S, 3): every sample of the run is free."""
        x = np.ascontiguousarray(x, dtype=float)
        a = np.ascontiguousarray(np.broadcast_to(a, x.shape), dtype=float)
        return _runs_clear_kernel(x, a, *self._args())

    def free(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Per-sample flag: taut, every bubble inside the map and clear of obstacles."""
        e = self.esdf
        return _clear_kernel(
            np.ascontiguousarray(x, dtype=float),
            np.ascontiguousarray(a, dtype=float),
            self.g,
            self.frac,
            np.asarray(self.radii, dtype=float),
            self.lo,
            self.hi,
            e.distance,
            e.origin,
            float(e.resolution),
            EPS_TAUT,
        )


def search(
    esdf: EsdfMap,
    start_x,
    start_v,
    goal,
    params: SystemParams,
    cfg: SearchConfig | None = None,
) -> KinoPath:
    """Kinodynamic A* from a payload state to ``goal`` at rest.

    Raises :class:`NoPathFound` with the explored-node count on failure.
    """
    cfg = cfg or SearchConfig()
    start_x = np.asarray(start_x, dtype=float)
    start_v = np.asarray(start_v, dtype=float)
    goal = np.asarray(goal, dtype=float)
    chk = _Checker(esdf, params, cfg)
    if not chk.free(start_x[None], np.zeros((1, 3)))[0]:
        raise NoPathFound("start state in collision", 0)
    if not chk.free(goal[None], np.zeros((1, 3)))[0]:
        raise NoPathFound("goal in collision", 0)

    U = cfg.control_lattice()
    res = esdf.resolution
    h0 = cfg.heuristic_weight * heuristic(start_x, start_v, goal, cfg.lam)
    nodes: list[KinoNode] = [KinoNode(start_x, start_v, 0.0, h0, None)]
    best_g: dict[tuple, float] = {}
    closed: set[tuple] = set()
    counter = itertools.count()
    heap = [(nodes[0].f_cost, next(counter), 0)]

    def key(x, v):
        return (
            *np.floor(x / cfg.prune_res).astype(int).tolist(),
            *np.floor(v / cfg.vel_bin).astype(int).tolist(),
        )

    best_g[key(start_x, start_v)] = 0.0
    explored = 0
    fallback = None
    while heap:
        _, _, idx = heapq.heappop(heap)
        node = nodes[idx]
        k = key(node.x_L, node.v_L)
        if k in closed:
            continue
        closed.add(k)
        explored += 1

        near = idx == 0 or np.linalg.norm(node.x_L - goal) <= cfg.shot_radius
        found = _try_shot(chk, node, goal, cfg, res) if near else None
        if found is not None:
            shot, shot_cost = found
            return _backtrack(nodes, idx, shot, explored, node.g_cost + shot_cost)
        if np.linalg.norm(node.x_L - goal) <= cfg.goal_tol and fallback is None:
            fallback = idx
        if explored >= cfg.max_expansions:
            break

        for tau in cfg.tau_samples:
            U_ok, X1, V1 = _expand(chk, node, U, tau, cfg, res)
            if not len(U_ok):
                continue
            H = optimal_arrival_batch(X1, V1, goal, np.zeros(3), cfg.lam)[0]
            G = node.g_cost + (np.sum(U_ok * U_ok, axis=1) + cfg.lam) * tau
            F = G + cfg.heuristic_weight * H
            keys = np.hstack([np.floor(X1 / cfg.prune_res), np.floor(V1 / cfg.vel_bin)]).astype(int).tolist()
            for i, ck in enumerate(map(tuple, keys)):
                g = float(G[i])
                if ck in closed or g >= best_g.get(ck, np.inf):
                    continue
                best_g[ck] = g
                nodes.append(KinoNode(X1[i], V1[i], g, float(F[i]), idx, U_ok[i], tau))
                heapq.heappush(heap, (float(F[i]), next(counter), len(nodes) - 1))
    if fallback is not None:
        return _backtrack(nodes, fallback, None, explored, nodes[fallback].g_cost)
    raise NoPathFound("open list exhausted" if not heap else "expansion budget exhausted", explored)


def _sample_times(tau: float, v_peak: float, cfg: SearchConfig, res: float) -> np.ndarray:
    # at most check_dt apart and never more than half a voxel of travel
    dt = min(cfg.check_dt, 0.5 * res / max(v_peak, 1e-6))
    n = max(int(np.ceil(tau / dt)), 1)
    return np.linspace(tau / n, tau, n)


def _expand(chk: _Checker, node: KinoNode, U: np.ndarray, tau: float, cfg: SearchConfig, res: float):
    x0, v0 = node.x_L, node.v_L
    v1 = v0 + U * tau
    ok = np.linalg.norm(v1, axis=1) <= cfg.v_max + 1e-9
    if not ok.any():
        return U[:0], U[:0], U[:0]
    U_ok = U[ok]
    v_peak = max(np.linalg.norm(v0), np.linalg.norm(v1[ok], axis=1).max())
    t = _sample_times(tau, v_peak, cfg, res)
    x = x0 + v0 * t[None, :, None] + 0.5 * U_ok[:, None, :] * t[None, :, None] ** 2
    a = np.broadcast_to(U_ok[:, None, :], x.shape)
    free = chk.runs_free(x, a)
    return U_ok[free], x[free, -1], v0 + U_ok[free] * tau


_SHOT_SCALES = np.array([1.0, 1.1, 1.25, 1.5, 2.0])
_SHOT_GRID = np.linspace(0.0, 1.0, 41)


def _try_shot(chk: _Checker, node: KinoNode, goal: np.ndarray, cfg: SearchConfig, res: float):
    _, T0 = optimal_arrival(node.x_L, node.v_L, goal, np.zeros(3), cfg.lam)
    if T0 <= 0:
        return None, 0.0  # already at the goal and at rest
    x0, v0 = node.x_L, node.v_L
    T = T0 * _SHOT_SCALES[:, None]
    d = goal - x0 - v0 * T
    j = -6.0 * v0 / T**2 - 12.0 * d / T**3
    a = -v0 / T - j * T / 2
    t = (T * _SHOT_GRID[None, :])[:, :, None]
    v = v0 + a[:, None] * t + 0.5 * j[:, None] * t**2
    acc = a[:, None] + j[:, None] * t
    v_peak = np.linalg.norm(v, axis=2).max(axis=1)
    ok = (v_peak <= cfg.v_max) & (np.linalg.norm(acc, axis=2).max(axis=1) <= cfg.a_max)
    for k in np.flatnonzero(ok):
        shot = GoalShot(x0.copy(), v0.copy(), a[k], j[k], float(T[k, 0]))
        ts = _sample_times(shot.T, v_peak[k], cfg, res)
        xs, _, as_ = shot.state(ts)
        if chk.runs_free(xs[None], as_[None])[0]:
            Tk = shot.T
            J = float(np.sum(shot.a**2) * Tk + np.sum(shot.a * shot.j) * Tk**2 + np.sum(shot.j**2) * Tk**3 / 3)
            return shot, J + cfg.lam * Tk
    return None


def _backtrack(nodes: list[KinoNode], idx: int, shot, explored: int, cost: float) -> KinoPath:
    chain = []
    while idx is not None:
        chain.append(nodes[idx])
        idx = nodes[idx].parent
    return KinoPath(chain[::-1], shot, explored, cost)
