"""Unconstrained optimization helpers: L-BFGS, smooth penalties, Huber loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class ObjectiveEval:
    value: float
    gradient: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gradient, dtype=float)
        if not np.isfinite(self.value) or not np.all(np.isfinite(g)):
            raise ValueError("objective returned a non-finite value or gradient")
        object.__setattr__(self, "gradient", g)


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 8
    max_iters: int = 200
    grad_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 40
    rel_tol: float = 0.0  # stop when the relative decrease falls below this

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_iters < 0:
            raise ValueError("memory must be >= 1 and max_iters >= 0")


@dataclass
class LbfgsResult:
    x: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    status: str
    n_evals: int = 0


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolant through (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _interpolate(a, fa, ga, b, fb, gb):
    lo, hi = min(a, b), max(a, b)
    t = _cubic_min(a, fa, ga, b, fb, gb)
    width = hi - lo
    # keep the trial away from the bracket ends
    if t is None or not np.isfinite(t) or t < lo + 0.1 * width or t > hi - 0.1 * width:
        t = 0.5 * (lo + hi)
    return t


def _wolfe_search(phi, f0, g0, alpha0, opts: LbfgsOptions):
    """Strong-Wolfe line search along a descent direction.

    ``phi(alpha)`` returns (value, directional derivative, payload).
    Returns (alpha, value, payload, n_evals) or None on failure.
    """
    c1, c2 = opts.c1, opts.c2
    a_prev, f_prev, g_prev = 0.0, f0, g0
    alpha = alpha0
    evals = 0
    best = None

    def zoom(lo, f_lo, g_lo, pay_lo, hi, f_hi, g_hi):
        nonlocal evals
        for _ in range(opts.max_ls_evals):
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
            a = _interpolate(lo, f_lo, g_lo, hi, f_hi, g_hi)
            fa, ga, pay = phi(a)
            evals += 1
            if armijo_fails(a, fa, ga) or fa > f_lo + f_noise:
                hi, f_hi, g_hi = a, fa, ga
            else:
                if abs(ga) <= -c2 * g0:
                    return a, fa, pay
                if ga * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo, pay_lo = a, fa, ga, pay
        # no strong-Wolfe point found; accept lo if it decreased the value
        if lo > 0 and f_lo < f0:
            return lo, f_lo, pay_lo
        return None

    f_noise = 1e-14 * max(abs(f0), 1.0)

    def armijo_fails(a, fa, ga):
        if fa <= f0 + c1 * a * g0:
            return False
        # near convergence the value test drowns in roundoff; fall back to
        # the slope form of sufficient decrease, allowing only roundoff uphill
        return not (fa <= f0 + f_noise and ga <= (2 * c1 - 1) * g0)

    pay_prev = None
    for i in range(opts.max_ls_evals):
        fa, ga, pay = phi(alpha)
        evals += 1
        if not np.isfinite(fa):
            alpha = 0.5 * (a_prev + alpha)
            continue
        if armijo_fails(alpha, fa, ga) or (i > 0 and fa > f_prev + f_noise):
            best = zoom(a_prev, f_prev, g_prev, pay_prev, alpha, fa, ga)
            break
        if abs(ga) <= -c2 * g0:
            best = (alpha, fa, pay)
            break
        if ga >= 0:
            best = zoom(alpha, fa, ga, pay, a_prev, f_prev, g_prev)
            break
        a_prev, f_prev, g_prev, pay_prev = alpha, fa, ga, pay
        alpha *= 2.0
    if best is None:
        return None
    return (*best, evals)


def lbfgs_minimize(objective: Objective, x0, opts: LbfgsOptions | None = None) -> LbfgsResult:
    """Minimize a smooth function given value and gradient.

    Accepted iterates have non-increasing values (up to roundoff in the
    objective once the gradient is tiny).  A line-search failure
    ends the run with ``status='line search failed'`` and the best point.
    """
    opts = opts or LbfgsOptions()
    x = np.array(x0, dtype=float)
    ev = ObjectiveEval(*objective(x))
    f, g = ev.value, ev.gradient
    n_evals = 1
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    status = "max iterations"
    it = 0
    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= opts.grad_tol:
            status = "converged"
            break
        if it >= opts.max_iters:
            break
        # two-loop recursion
        d = -g
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = (s @ d) / (y @ s)
            alphas.append(a)
            d = d - a * y
        if s_hist:
            d = d * (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = (y @ d) / (y @ s)
            d = d + (a - b) * s
        slope = g @ d
        if not slope < 0:
            # lost descent; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -gnorm * gnorm
        alpha0 = 1.0 if s_hist else min(1.0, 1.0 / gnorm)

        def phi(alpha, d=d):
            xa = x + alpha * d
            try:
                e = ObjectiveEval(*objective(xa))
            except (ValueError, FloatingPointError):
                return np.inf, np.nan, None
            return e.value, float(e.gradient @ d), (xa, e.gradient)

        found = _wolfe_search(phi, f, slope, alpha0, opts)
        if found is None:
            n_evals += opts.max_ls_evals
            if s_hist:
                # retry once from steepest descent before giving up
                s_hist.clear()
                y_hist.clear()
                continue
            status = "line search failed"
            break
        _, f_new, (x_new, g_new), ne = found
        n_evals += ne
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        it += 1
        if opts.rel_tol > 0 and decrease <= opts.rel_tol * max(abs(f), 1.0):
            status = "converged (relative decrease)"
            break
    return LbfgsResult(
        x=x,
        value=float(f),
        iterations=it,
        grad_norm=float(np.linalg.norm(g)),
        converged=status.startswith("converged"),
        status=status,
        n_evals=n_evals,
    )


def smooth_l1(x, mu: float = 1e-2):
    """Smoothed ``max(x, 0)``: zero, then a cubic ramp on (0, mu], then ``x - mu/2``.

    Works elementwise on arrays; returns (value, derivative).
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    x = np.asarray(x, dtype=float)
    ramp = (x > 0) & (x <= mu)
    lin = x > mu
    xr = np.where(ramp, x, 0.0)
    val = np.where(ramp, xr**3 / mu**2 - xr**4 / (2 * mu**3), 0.0)
    der = np.where(ramp, 3 * xr**2 / mu**2 - 2 * xr**3 / mu**3, 0.0)
    val = np.where(lin, x - 0.5 * mu, val)
    der = np.where(lin, 1.0, der)
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


def huber(r, delta: float):
    """Huber loss of the residual norm; returns (value, gradient w.r.t. ``r``)."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = np.asarray(r, dtype=float)
    n = float(np.linalg.norm(r))
    if n <= delta:
        return 0.5 * n * n, r.copy()
    return delta * (n - 0.5 * delta), delta * r / n


def grad_check(objective: Objective, x, h: float = 1e-6) -> float:
    """Largest central-difference mismatch, relative to the gradient's max-norm."""
    x = np.array(x, dtype=float)
    _, g = objective(x)
    g = np.asarray(g, dtype=float)
    fd = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (objective(x + e)[0] - objective(x - e)[0]) / (2 * h)
    scale = max(np.abs(fd).max(initial=0.0), 1e-12)
    return float(np.abs(g - fd).max(initial=0.0) / scale)
