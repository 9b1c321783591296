"""Reference trajectories, benchmark suites, scenario files and experiment drivers."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from slungload.esdf import EsdfMap, load_map, parse_primitive
from slungload.kinoastar import NoPathFound
from slungload.minco import Boundary, PiecewisePoly, construct, load_trajectory
from slungload.params import SystemParams
from slungload.sim import Event, NoiseConfig, RunLog, Scenario, hover_trajectory, metrics, run
from slungload.trajopt import DynamicLimits, PlannerWeights, audit, is_feasible, plan
from slungload.worlds import FAMILIES, World, gate_world, make_world

VARIANTS = {"plain": (False, False), "+indi": (False, True), "+force": (True, False), "+force+indi": (True, True)}

# a real mount point never sits exactly on the centre of mass; every disturbance row carries this
STANDARD_COM_TORQUE = (0.006, -0.004, 0.0)  # N m


def figure_eight(
    v_max: float = 4.0,
    A: float = 3.0,
    loops: int = 1,
    per_loop: int = 16,
    center=(0.0, 0.0, 1.5),
    ramp=(2.5, 1.6, 1.2),
) -> PiecewisePoly:
    """Lemniscate of Gerono through fixed waypoints, time-scaled to peak speed ``v_max``.

    Starts and ends at rest at a lobe tip; the first and last pieces are
    stretched by ``ramp`` so the vehicle speeds up gently.  With rest
    boundaries a uniform scaling of all durations is an exact time scaling,
    so the peak speed lands on ``v_max``.
    """
    c = np.asarray(center, dtype=float)
    n = per_loop * loops
    th = np.pi / 2 + 2 * np.pi * loops * np.arange(n + 1) / n
    pts = c + np.column_stack([A * np.sin(th), 0.5 * A * np.sin(2 * th), np.zeros(n + 1)])
    T = np.full(n, 2 * np.pi / per_loop)
    for i, r in enumerate(ramp):
        T[i] *= r
        T[-1 - i] *= r
    b = Boundary.rest(pts[0], pts[-1])
    poly = construct(b, pts[1:-1], T)
    t = np.linspace(0.0, poly.total_duration, 20001)
    scale = np.linalg.norm(poly.sample(t, 1), axis=1).max() / v_max
    return construct(b, pts[1:-1], T * scale)


def peak_kinematics(poly: PiecewisePoly, dt: float = 1e-3) -> tuple[float, float]:
    """Largest payload speed and acceleration along the plan."""
    t = np.linspace(0.0, poly.total_duration, max(int(poly.total_duration / dt), 1) + 1)
    return float(np.linalg.norm(poly.sample(t, 1), axis=1).max()), float(np.linalg.norm(poly.sample(t, 2), axis=1).max())


# --- planning -------------------------------------------------------------------------

@dataclass
class PlanOutcome:
    """A plan (or the reason there is none) with an independent audit."""

    poly: PiecewisePoly | None
    feasible: bool
    plan_ms: float
    violations: dict
    min_tension: float
    reason: str = ""
    iterations: int = 0

    @property
    def length(self) -> float:
        if self.poly is None:
            return 0.0
        t = np.linspace(0.0, self.poly.total_duration, 2001)
        return float(np.linalg.norm(np.diff(self.poly.sample(t), axis=0), axis=1).sum())

    def report(self) -> dict:
        return {
            "feasible": self.feasible,
            "reason": self.reason,
            "max_violation": {k: float(v) for k, v in self.violations.items()},
            "min_tension_N": float(self.min_tension),
            "length_m": self.length,
            "duration_s": float(self.poly.total_duration) if self.poly is not None else 0.0,
            "iterations": self.iterations,
        }


def plan_and_audit(
    esdf: EsdfMap,
    start,
    goal,
    limits: DynamicLimits | None = None,
    weights: PlannerWeights | None = None,
    params: SystemParams | None = None,
) -> PlanOutcome:
    """Run search plus refinement and grade the result with the dense audit.

    Only the planning call is timed.  Endpoints inside the safety radius fail
    up front with a reason instead of sending the search on a hopeless hunt.
    """
    limits = limits or DynamicLimits()
    weights = weights or PlannerWeights()
    p = params or SystemParams()
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    for name, pt in (("start", start), ("goal", goal)):
        d, _ = esdf.query_batch(pt[None])
        if not d[0] > limits.d_L:
            return PlanOutcome(None, False, 0.0, {}, 0.0, f"{name} {pt.tolist()} lies inside an obstacle or its safety margin")
    t0 = time.perf_counter()
    try:
        res = plan(esdf, start, goal, limits, weights, p)
    except NoPathFound as exc:
        return PlanOutcome(None, False, 1e3 * (time.perf_counter() - t0), {}, 0.0, f"search failed: {exc}")
    ms = 1e3 * (time.perf_counter() - t0)
    viol, tension = audit(res.poly, esdf, limits, p, n_bubbles=weights.n_bubbles)
    ok = is_feasible(viol, esdf.resolution)
    reason = "" if ok else "audit: " + ", ".join(f"{k}={v:.3g}" for k, v in viol.items() if v > 0)
    return PlanOutcome(res.poly, ok, ms, viol, tension, reason, res.report.iterations)


@dataclass
class InstanceResult:
    seed: int
    success: bool
    plan_ms: float
    length_m: float
    reason: str = ""


@dataclass
class BenchSuite:
    family: str
    count: int = 10
    seed_base: int = 0
    budget_s: float = 10.0
    results: list = field(default_factory=list)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.count < 1:
            raise ValueError("need at least one instance")

    @property
    def successes(self) -> int:
        return sum(r.success for r in self.results)

    @property
    def mean_plan_ms(self) -> float:
        return float(np.mean([r.plan_ms for r in self.results])) if self.results else 0.0

    def summary(self) -> dict:
        return {
            "family": self.family,
            "instances": len(self.results),
            "successes": self.successes,
            "success_rate": self.successes / max(len(self.results), 1),
            "mean_plan_ms": self.mean_plan_ms,
            "max_plan_ms": max((r.plan_ms for r in self.results), default=0.0),
        }


def bench_planning(
    family: str,
    count: int = 10,
    seed_base: int = 0,
    budget_s: float = 10.0,
    workers: int = 1,
    limits: DynamicLimits | None = None,
    params: SystemParams | None = None,
) -> BenchSuite:
    """Plan on ``count`` seeded worlds of one family; success means audit-feasible within budget.

    With ``workers > 1`` instances run on a thread pool; each owns its map and
    planner state.  Timings are then inflated by contention, so the default
    is serial.
    """
    suite = BenchSuite(family, count, seed_base, budget_s)

    def one(seed: int) -> InstanceResult:
        world = make_world(family, seed)
        out = plan_and_audit(world.esdf(), world.start, world.goal, limits, None, params)
        ok = out.feasible and out.plan_ms <= 1e3 * budget_s
        reason = out.reason or ("" if ok else "over budget")
        return InstanceResult(seed, ok, out.plan_ms, out.length, reason)

    seeds = range(seed_base, seed_base + count)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            suite.results = list(pool.map(one, seeds))
    else:
        suite.results = [one(s) for s in seeds]
    return suite


# --- gate run ---------------------------------------------------------------------------

GATE_LIMITS = DynamicLimits(v_max=5.9, a_max=9.0, theta_max=math.radians(70.0), f_u=40.0)


def gate_run(opening: float = 1.0, limits: DynamicLimits = GATE_LIMITS, params: SystemParams | None = None) -> dict:
    """Aggressive pass through a square gate; reports plan time, peaks and the collision audit."""
    world = gate_world(opening)
    esdf = world.esdf()
    out = plan_and_audit(esdf, world.start, world.goal, limits, PlannerWeights(lambda_T=3000.0), params)
    result = {"opening_m": opening, "plan": out.report(), "plan_ms": out.plan_ms}
    if out.poly is not None:
        v, a = peak_kinematics(out.poly)
        result.update(peak_speed=v, peak_accel=a, collision_free=out.violations.get("collision", math.inf) <= esdf.resolution)
    else:
        result.update(peak_speed=0.0, peak_accel=0.0, collision_free=False)
    return result


# --- ablation -----------------------------------------------------------------------------

def standard_rows() -> dict:
    """Disturbance rows of the figure-eight ablation, keyed by row name."""
    com = Event("com_torque", 0.0, vector=STANDARD_COM_TORQUE)
    return {
        "none": (),
        "+50g": (com, Event("attach_mass", 3.0, mass=0.05)),
        "+200g": (com, Event("attach_mass", 3.0, mass=0.2)),
        "wind 4.5": (com, Event("wind", 0.0, vector=(4.5, 0.0, 0.0))),
        "wind 9": (com, Event("wind", 0.0, vector=(9.0, 0.0, 0.0))),
    }


def ablate(
    trajectory: PiecewisePoly,
    events=(),
    variants=tuple(VARIANTS),
    seed: int = 0,
    tail: float = 3.0,
    params: SystemParams | None = None,
    base: Scenario | None = None,
) -> dict:
    """Run the same scenario once per controller variant; returns metrics per variant."""
    p = params or SystemParams()
    out = {}
    for name in variants:
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; expected one of {tuple(VARIANTS)}")
        fc, indi = VARIANTS[name]
        if base is None:
            sc = Scenario(trajectory, trajectory.total_duration + tail, tuple(events), force_comp=fc, indi=indi, seed=seed)
        else:
            sc = replace(base, force_comp=fc, indi=indi)
        out[name] = metrics(run(sc, p), p)
    return out


# --- scenario files -----------------------------------------------------------------------

@dataclass
class ScenarioFile:
    """A JSON scenario: a map, a trajectory source, disturbances and controller flags.

    ``trajectory`` is one of ``{"plan": true}`` (plan from ``start`` to ``goal``
    on the map), ``{"figure_eight": {...kwargs}}``, ``{"hover": [x, y, z]}`` or
    ``{"file": path}``.  ``map`` is ``{"family": name, "seed": k}``,
    ``{"file": path}`` or ``{"primitives": [["box", cx, cy, cz, sx, sy, sz], ...],
    "bounds": [[...], [...]]}``.
    """

    trajectory: dict = field(default_factory=lambda: {"plan": True})
    map: dict = field(default_factory=lambda: {"family": "empty", "seed": 0})
    start: list | None = None
    goal: list | None = None
    limits: dict = field(default_factory=dict)
    duration: float | None = None
    tail: float = 3.0
    events: list = field(default_factory=list)
    force_comp: bool = True
    indi: bool = True
    seed: int = 0
    noise: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "ScenarioFile":
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        sf = cls(**data, base_dir=Path(base_dir))
        sf.dynamic_limits()
        sf.event_list()
        NoiseConfig(**sf.noise)
        return sf

    @classmethod
    def load(cls, path) -> "ScenarioFile":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def dynamic_limits(self) -> DynamicLimits:
        return DynamicLimits(**self.limits)

    def event_list(self) -> tuple:
        return tuple(Event(**{k: tuple(v) if isinstance(v, list) else v for k, v in e.items()}) for e in self.events)

    def world(self) -> World | None:
        m = self.map
        if "family" in m:
            w = make_world(m["family"], int(m.get("seed", 0)))
        elif "file" in m:
            grid = load_map(self.base_dir / m["file"])
            hi = grid.origin + grid.resolution * np.array(grid.dims)
            w = World("file", [], (tuple(grid.origin), tuple(hi)), np.zeros(3), np.zeros(3), grid)
        elif "primitives" in m:
            prims = [parse_primitive([str(t) for t in row]) for row in m["primitives"]]
            bounds = m.get("bounds", ((-1.0, -3.0, 0.0), (11.0, 3.0, 3.0)))
            w = World("primitives", prims, tuple(map(tuple, bounds)), np.zeros(3), np.zeros(3))
        else:
            raise ValueError("map needs 'family', 'file' or 'primitives'")
        if self.start is not None:
            w.start = np.asarray(self.start, float)
        if self.goal is not None:
            w.goal = np.asarray(self.goal, float)
        return w

    def esdf(self) -> EsdfMap:
        return self.world().esdf(float(self.map.get("resolution", 0.1)))

    def plan(self, params: SystemParams | None = None) -> PlanOutcome:
        w = self.world()
        return plan_and_audit(self.esdf(), w.start, w.goal, self.dynamic_limits(), None, params)

    def build_trajectory(self, params: SystemParams | None = None) -> PiecewisePoly:
        tr = self.trajectory
        if "figure_eight" in tr:
            return figure_eight(**(tr["figure_eight"] or {}))
        if "hover" in tr:
            return hover_trajectory(tr["hover"])
        if "file" in tr:
            return load_trajectory(self.base_dir / tr["file"])
        if tr.get("plan"):
            out = self.plan(params)
            if out.poly is None or not out.feasible:
                raise RuntimeError(f"no feasible plan: {out.reason}")
            return out.poly
        raise ValueError("trajectory needs 'plan', 'figure_eight', 'hover' or 'file'")

    def scenario(self, trajectory: PiecewisePoly, variant: str | None = None) -> Scenario:
        fc, indi = VARIANTS[variant] if variant else (self.force_comp, self.indi)
        duration = self.duration if self.duration is not None else trajectory.total_duration + self.tail
        return Scenario(
            trajectory, duration, self.event_list(), force_comp=fc, indi=indi, seed=self.seed, noise=NoiseConfig(**self.noise)
        )

    def simulate(self, variant: str | None = None, params: SystemParams | None = None) -> tuple[RunLog, dict]:
        p = params or SystemParams()
        log = run(self.scenario(self.build_trajectory(p), variant), p)
        return log, metrics(log, p)
