"""Minimum-snap piecewise degree-7 splines parameterized by waypoints and durations.

Coefficients of all pieces come from one banded linear system of size 8M
(boundary jerk-level conditions, waypoint interpolation and C^6 continuity
at junctions).  The LU factors are kept so gradients with respect to the
waypoints and durations cost one transposed banded solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

ORDER = 8  # coefficients per piece (degree 7)
_KL = _KU = 11  # band widths of the constructor matrix

# FALL[k, n] = n! / (n - k)!  (zero for n < k)
FALL = np.array([[math.perm(n, k) if n >= k else 0 for n in range(ORDER)] for k in range(ORDER + 1)], dtype=float)
_N = np.arange(ORDER)


def basis(t, order: int = 0) -> np.ndarray:
    """Rows of d^k/dt^k [1, t, ..., t^7]; ``t`` scalar or 1-D."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    powers = np.clip(_N - order, 0, None)
    out = FALL[order] * t[:, None] ** powers
    return out


_POW = np.clip(_N[None, :] - np.arange(ORDER)[:, None], 0, None)  # exponent of t in row k, column n
_GP = np.add.outer(_N, _N) - 7  # snap Gram exponents (meaningful for a, b >= 4)
_GC = np.zeros((ORDER, ORDER))
_GC[4:, 4:] = np.outer(FALL[4, 4:], FALL[4, 4:])


def _deriv_rows(T: float) -> np.ndarray:
    """All derivative rows at scalar ``T``: entry [k, n] = d^k/dt^k t^n."""
    return FALL[:ORDER] * float(T) ** _POW


def _gram(T: float, weight4: bool = False) -> np.ndarray:
    """Gram matrix of the 4th derivative of the basis over [0, T] (or its T-derivative)."""
    p = np.where(_GC > 0, _GP, 1)
    if weight4:
        return _GC * float(T) ** (p - 1)
    return _GC * float(T) ** p / p


@dataclass
class Boundary:
    """Start and goal (position, velocity, acceleration, jerk) rows."""

    start: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        self.start = self._pad(self.start)
        self.goal = self._pad(self.goal)

    @staticmethod
    def _pad(a):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.shape[1] != 3 or not 1 <= a.shape[0] <= 4:
            raise ValueError("boundary rows must be (k, 3) with k <= 4")
        return np.vstack([a, np.zeros((4 - a.shape[0], 3))])

    @classmethod
    def rest(cls, start_pos, goal_pos) -> "Boundary":
        return cls(np.asarray(start_pos, dtype=float)[None], np.asarray(goal_pos, dtype=float)[None])


@dataclass
class PiecewisePoly:
    coeffs: np.ndarray  # (M, 8, 3)
    durations: np.ndarray  # (M,)
    boundary: Boundary | None = None
    _lu: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1:] != (ORDER, 3):
            raise ValueError("coeffs must be (M, 8, 3)")
        if len(self.durations) != len(self.coeffs) or np.any(self.durations <= 0):
            raise ValueError("need one positive duration per piece")

    @property
    def M(self) -> int:
        return len(self.durations)

    @property
    def total_duration(self) -> float:
        return float(self.durations.sum())

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def locate(self, t):
        """Piece index and local time for global times ``t`` (clamped), plus a clamp flag."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        total = self.total_duration
        clamped = (t < 0) | (t > total)
        tc = np.clip(t, 0.0, total)
        idx = np.searchsorted(np.cumsum(self.durations), tc, side="right")
        idx = np.minimum(idx, self.M - 1)
        local = tc - self.starts[idx]
        return idx, local, clamped

    def sample(self, t, order: int = 0) -> np.ndarray:
        """Derivatives at global times; (K, 3)."""
        idx, local, _ = self.locate(t)
        B = basis(local, order)
        return np.einsum("kn,knd->kd", B, self.coeffs[idx])

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        return self.sample(t, order)[0]

    def end_state(self, order: int) -> np.ndarray:
        return basis(self.durations[-1], order)[0] @ self.coeffs[-1]

    def waypoints(self) -> np.ndarray:
        """Positions at the interior junctions, (M-1, 3)."""
        return np.array([basis(T, 0)[0] @ c for c, T in zip(self.coeffs[:-1], self.durations[:-1])]).reshape(-1, 3)


def evaluate(poly: PiecewisePoly, t: float, order: int = 0) -> tuple[np.ndarray, bool]:
    """Derivative of the given order at time ``t``; the flag reports clamping."""
    if not 0 <= order <= ORDER - 1:
        raise ValueError("order must be in 0..7")
    idx, local, clamped = poly.locate(t)
    return basis(local, order)[0] @ poly.coeffs[idx[0]], bool(clamped[0])


def _band_put(ab, rows, cols, block):
    r = np.asarray(rows)[:, None]
    c = np.asarray(cols)[None, :]
    ab[_KL + _KU + r - c, c] = block


def _system(durations: np.ndarray):
    """Banded LAPACK storage of the constructor matrix."""
    M = len(durations)
    n = ORDER * M
    ab = np.zeros((2 * _KL + _KU + 1, n))
    at0 = _deriv_rows(0.0)
    _band_put(ab, range(0, 4), range(0, ORDER), at0[:4])
    for i in range(M - 1):
        D = _deriv_rows(durations[i])
        left = np.vstack([D[:1], D[:7]])  # waypoint row, then continuity orders 0..6
        _band_put(ab, range(8 * i + 4, 8 * i + 12), range(8 * i, 8 * i + 8), left)
        _band_put(ab, range(8 * i + 5, 8 * i + 12), range(8 * i + 8, 8 * i + 16), -at0[:7])
    _band_put(ab, range(n - 4, n), range(n - 8, n), _deriv_rows(durations[-1])[:4])
    return ab


def _rhs(boundary: Boundary, waypoints: np.ndarray, M: int) -> np.ndarray:
    b = np.zeros((ORDER * M, 3))
    b[0:4] = boundary.start
    for i in range(M - 1):
        b[8 * i + 4] = waypoints[i]
    b[-4:] = boundary.goal
    return b


def construct(boundary: Boundary, waypoints, durations) -> PiecewisePoly:
    """Minimum-snap spline through ``waypoints`` with per-piece ``durations``."""
    durations = np.asarray(durations, dtype=float).reshape(-1)
    M = len(durations)
    if M < 1:
        raise ValueError("need at least one piece")
    if np.any(~np.isfinite(durations)) or np.any(durations <= 0):
        raise ValueError("durations must be finite and positive")
    waypoints = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(waypoints) != M - 1:
        raise ValueError(f"expected {M - 1} waypoints, got {len(waypoints)}")
    ab = _system(durations)
    lu, piv, info = lapack.dgbtrf(ab, _KL, _KU)
    if info != 0:
        raise np.linalg.LinAlgError("singular spline system")
    c, info = lapack.dgbtrs(lu, _KL, _KU, _rhs(boundary, waypoints, M), piv)
    if info != 0:
        raise np.linalg.LinAlgError("banded solve failed")
    return PiecewisePoly(c.reshape(M, ORDER, 3), durations.copy(), boundary, (lu, piv))


def energy_and_grads(poly: PiecewisePoly, weights=(1.0, 1.0, 1.0)):
    """Snap energy sum_i int ||Z_i''''||_W^2 dt with gradients w.r.t. coefficients and durations."""
    w = np.asarray(weights, dtype=float)
    J = 0.0
    dc = np.zeros_like(poly.coeffs)
    dT = np.zeros(poly.M)
    for i, (c, T) in enumerate(zip(poly.coeffs, poly.durations)):
        G = _gram(T)
        Gc = G @ c
        J += float(np.sum(c * Gc * w))
        dc[i] = 2.0 * Gc * w
        dT[i] = float(np.sum(c * (_gram(T, weight4=True) @ c) * w))
    return J, dc, dT


def propagate_gradients(poly: PiecewisePoly, grad_c: np.ndarray, grad_T_direct=None):
    """Chain ``dL/dc`` through the constructor to waypoints and durations.

    Returns ``(dL/dp (M-1, 3), dL/dT (M,))``; the duration gradient includes
    ``grad_T_direct`` when given.
    """
    M = poly.M
    if poly._lu is None:
        poly._lu = lapack.dgbtrf(_system(poly.durations), _KL, _KU)[:2]
    lu, piv = poly._lu
    lam, info = lapack.dgbtrs(lu, _KL, _KU, np.asarray(grad_c, dtype=float).reshape(ORDER * M, 3), piv, trans=1)
    if info != 0:
        raise np.linalg.LinAlgError("adjoint solve failed")
    grad_p = lam[4 : ORDER * (M - 1) : ORDER].copy() if M > 1 else np.zeros((0, 3))
    grad_T = np.zeros(M) if grad_T_direct is None else np.array(grad_T_direct, dtype=float)
    for i in range(M):
        c = poly.coeffs[i]
        T = poly.durations[i]
        D = _deriv_rows(T)
        if i < M - 1:
            # rows: position, then continuity orders 0..6; d/dT shifts each order up by one
            dA = np.vstack([D[1:2], D[1:8]])
            rows = slice(8 * i + 4, 8 * i + 12)
        else:
            dA = D[1:5]
            rows = slice(ORDER * M - 4, ORDER * M)
        grad_T[i] -= float(np.sum(lam[rows] * (dA @ c)))
    return grad_p, grad_T


def virtual_time(sigma):
    """Map unconstrained ``sigma`` to positive durations; returns (T, dT/dsigma)."""
    s = np.asarray(sigma, dtype=float)
    pos = s >= 0
    sp = np.where(pos, s, 0.0)
    sn = np.where(pos, 0.0, s)
    den = 0.5 * sn * sn - sn + 1.0
    T = np.where(pos, 0.5 * sp * sp + sp + 1.0, 1.0 / den)
    dT = np.where(pos, sp + 1.0, -(sn - 1.0) / (den * den))
    return T, dT


def inverse_virtual_time(T):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("durations must be positive")
    big = T >= 1
    Tb = np.where(big, T, 1.0)
    Ts = np.where(big, 1.0, T)
    return np.where(big, -1.0 + np.sqrt(2.0 * Tb - 1.0), 1.0 - np.sqrt(2.0 / Ts - 1.0))


# --- trajectory file ----------------------------------------------------------

def save_trajectory(poly: PiecewisePoly, path: str | Path) -> None:
    """One row per piece: index, duration, then the 8x3 coefficients row-major."""
    lines = ["# piece duration c0x c0y c0z c1x ... c7z"]
    for i, (c, T) in enumerate(zip(poly.coeffs, poly.durations)):
        lines.append(" ".join([str(i), repr(float(T))] + [repr(float(v)) for v in c.reshape(-1)]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path: str | Path) -> PiecewisePoly:
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 2 + 3 * ORDER:
            raise ValueError(f"trajectory row needs {2 + 3 * ORDER} fields, got {len(vals)}")
        rows.append((int(vals[0]), float(vals[1]), np.array([float(v) for v in vals[2:]])))
    if not rows:
        raise ValueError("empty trajectory file")
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError("piece indices must be 0..M-1")
    coeffs = np.stack([r[2].reshape(ORDER, 3) for r in rows])
    return PiecewisePoly(coeffs, np.array([r[1] for r in rows]))
