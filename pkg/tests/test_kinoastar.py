import numpy as np
import pytest

from oracles import rest_to_rest_cost_grid
from slungload.esdf import Box, build_esdf, rasterize
from slungload.kinoastar import (
    NoPathFound,
    SearchConfig,
    heuristic,
    optimal_arrival,
    primitive_cost,
    search,
)
from slungload.kinoastar import _Checker

BOUNDS = ((-1.0, -2.0, 0.0), (7.0, 2.0, 3.0))


def empty_map():
    return build_esdf(rasterize([], BOUNDS, 0.1))


def gap_map(gap, x=3.0):
    w = (4.0 - gap) / 2
    boxes = [Box((x, -2 + w / 2, 1.5), (0.2, w, 3.0)), Box((x, 2 - w / 2, 1.5), (0.2, w, 3.0))]
    return build_esdf(rasterize(boxes, BOUNDS, 0.1))


def audit(esdf, path, params, cfg, shrink):
    """Dense re-check of every bubble with radii reduced by ``shrink``."""
    chk = _Checker(esdf, params, cfg)
    chk.radii = chk.radii - shrink
    _, x, _, a = path.sample(0.01)
    return chk.free(x, a).all()


def test_primitive_cost():
    assert primitive_cost([1, 0, 0], 2.0, 10.0) == 22.0
    assert primitive_cost([0, 0, 0], 0.4, 10.0) == 4.0
    u = np.array([0.3, -1.0, 2.0])
    c1 = primitive_cost(u, 0.7, 0.0)
    assert primitive_cost(2 * u, 0.7, 0.0) == 4 * c1


def test_heuristic_examples():
    assert heuristic(np.ones(3), np.zeros(3), np.ones(3), 10.0) == 0.0
    T_grid = np.linspace(0.05, 20, 400001)
    for d, lam in ((5.0, 10.0), (1.0, 1.0), (0.3, 50.0)):
        h = heuristic(np.zeros(3), np.zeros(3), np.array([d, 0, 0]), lam)
        assert h == pytest.approx(rest_to_rest_cost_grid(d, lam, T_grid), abs=1e-6)


def test_arrival_time_is_stationary(rng):
    for _ in range(20):
        x0, v0, x1 = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3) * 3
        cost, T = optimal_arrival(x0, v0, x1, np.zeros(3), 5.0)
        # compare with a dense scan of the closed-form cost in T
        d = x1 - x0
        Ts = np.linspace(0.01, 30, 300001)
        A = 4 * (v0 @ v0)
        B = -12 * (d @ v0)
        C = 12 * (d @ d)
        grid = A / Ts + B / Ts**2 + C / Ts**3 + 5.0 * Ts
        assert cost == pytest.approx(grid.min(), rel=1e-6)


def test_lattice_inside_ball():
    cfg = SearchConfig(a_max=2.0, u_per_axis=3)
    U = cfg.control_lattice()
    assert len(U) == 27
    assert np.all(np.linalg.norm(U, axis=1) <= 2.0 + 1e-12)


def test_empty_map_near_optimal(params):
    cfg = SearchConfig()
    path = search(empty_map(), [0, 0, 1], [0, 0, 0], [5, 0, 1], params, cfg)
    h = heuristic(np.array([0, 0, 1.0]), np.zeros(3), np.array([5, 0, 1.0]), cfg.lam)
    assert h <= path.cost <= 1.1 * h
    _, x, v, _ = path.sample(0.01)
    np.testing.assert_allclose(x[-1], [5, 0, 1], atol=1e-9)
    np.testing.assert_allclose(v[-1], 0, atol=1e-9)


def test_enclosed_start_fails(params):
    walls = []
    c = np.array([3.0, 0.0, 1.5])
    for axis in range(3):
        for s in (-1, 1):
            center = c.copy()
            center[axis] += s * 1.0
            size = np.full(3, 2.2)
            size[axis] = 0.2
            walls.append(Box(tuple(center), tuple(size)))
    esdf = build_esdf(rasterize(walls, BOUNDS, 0.1))
    with pytest.raises(NoPathFound) as err:
        search(esdf, [3, 0, 1.2], [0, 0, 0], [6, 0, 1.2], params, SearchConfig(max_expansions=300))
    assert err.value.explored == 300
    assert "300" in str(err.value)


def test_goal_in_obstacle(params):
    esdf = build_esdf(rasterize([Box((5, 0, 1), (0.6, 0.6, 0.6))], BOUNDS, 0.1))
    with pytest.raises(NoPathFound):
        search(esdf, [0, 0, 1], [0, 0, 0], [5, 0, 1], params)


def test_gap_passage(params):
    cfg = SearchConfig()
    esdf = gap_map(0.9)
    path = search(esdf, [0, 0.8, 1], [0, 0, 0], [5, -0.8, 1], params, cfg)
    _, x, _, _ = path.sample(0.01)
    crossing = x[np.argmin(np.abs(x[:, 0] - 3.0))]
    assert abs(crossing[1]) < 0.45
    assert audit(esdf, path, params, cfg, shrink=0.1)


def test_admissible_on_random_instances(params):
    rng = np.random.default_rng(7)
    cfg = SearchConfig()
    checked = 0
    while checked < 50:
        boxes = [Box(tuple(rng.uniform([1, -1.5, 0.5], [5, 1.5, 2.5])), tuple(rng.uniform(0.2, 0.8, 3))) for _ in range(3)]
        esdf = build_esdf(rasterize(boxes, BOUNDS, 0.1))
        start = np.array([0.0, rng.uniform(-1, 1), rng.uniform(0.8, 1.4)])
        goal = np.array([6.0, rng.uniform(-1, 1), rng.uniform(0.8, 1.4)])
        try:
            path = search(esdf, start, np.zeros(3), goal, params, cfg)
        except NoPathFound:
            continue
        assert heuristic(start, np.zeros(3), goal, cfg.lam) <= path.cost + 1e-9
        assert audit(esdf, path, params, cfg, shrink=0.1)
        checked += 1


def test_refined_lattice_not_worse(params):
    esdf = gap_map(1.0)
    coarse = search(esdf, [0, 0.8, 1], [0, 0, 0], [5, -0.8, 1], params, SearchConfig(u_per_axis=3))
    fine = search(esdf, [0, 0.8, 1], [0, 0, 0], [5, -0.8, 1], params, SearchConfig(u_per_axis=5))
    assert fine.cost <= coarse.cost + 1e-9


def test_deterministic(params):
    esdf = gap_map(0.9)
    a = search(esdf, [0, 0.8, 1], [0, 0, 0], [5, -0.8, 1], params)
    b = search(esdf, [0, 0.8, 1], [0, 0, 0], [5, -0.8, 1], params)
    assert a.cost == b.cost and a.explored == b.explored
