import math

import numpy as np
import pytest
from scipy import ndimage

from oracles import brute_force_edt
from slungload.esdf import (
    MAX_DISTANCE,
    Box,
    OccupancyGrid,
    Sphere,
    build_esdf,
    distance_transform,
    load_map,
    query,
    rasterize,
    save_map,
)


def grid_from_mask(mask, res=0.1, origin=(0.0, 0.0, 0.0)):
    return OccupancyGrid(np.array(origin), res, mask)


def test_three_four_five():
    mask = np.zeros((10, 10, 3), dtype=bool)
    mask[1, 1, 1] = True
    esdf = build_esdf(grid_from_mask(mask, 0.1))
    assert esdf.distance[4, 5, 1] == pytest.approx(0.5, abs=1e-12)
    assert esdf.distance[1, 1, 1] <= 0


def test_random_grids_match_brute_force(rng):
    for _ in range(5):
        mask = rng.random((16, 16, 16)) < rng.uniform(0.01, 0.2)
        ref = brute_force_edt(mask)
        np.testing.assert_allclose(distance_transform(mask), ref, atol=1e-6)


def test_matches_scipy_transform(rng):
    mask = rng.random((20, 25, 15)) < 0.05
    ours = distance_transform(mask)
    ref = ndimage.distance_transform_edt(~mask)
    np.testing.assert_allclose(ours, ref, atol=1e-9)


def test_signs(rng):
    mask = rng.random((12, 12, 12)) < 0.3
    esdf = build_esdf(grid_from_mask(mask, 0.2))
    assert np.all(esdf.distance[mask] <= 0)
    assert np.all(esdf.distance[~mask] >= 0)
    # inside depth equals distance to the nearest free voxel
    inside = brute_force_edt(~mask) * 0.2
    np.testing.assert_allclose(esdf.distance[mask], 0.2 - inside[mask], atol=1e-9)


def test_all_free_and_all_occupied():
    free = build_esdf(grid_from_mask(np.zeros((4, 4, 4), dtype=bool)))
    np.testing.assert_array_equal(free.distance, MAX_DISTANCE)
    full = build_esdf(grid_from_mask(np.ones((4, 4, 4), dtype=bool)))
    np.testing.assert_array_equal(full.distance, -MAX_DISTANCE)


def test_lipschitz(rng):
    mask = rng.random((14, 14, 14)) < 0.1
    esdf = build_esdf(grid_from_mask(mask, 0.1))
    for axis in range(3):
        diff = np.abs(np.diff(esdf.distance, axis=axis))
        assert diff.max() <= 0.1 * math.sqrt(3) + 1e-12


def test_query_at_centers(rng):
    mask = rng.random((8, 9, 10)) < 0.1
    esdf = build_esdf(grid_from_mask(mask, 0.25, (-1.0, 2.0, 0.5)))
    centers = esdf.grid.centers().reshape(-1, 3)
    d, _ = esdf.query_batch(centers)
    np.testing.assert_allclose(d, esdf.distance.reshape(-1), atol=1e-12)


def test_query_midpoint_linear():
    mask = np.zeros((2, 1, 1), dtype=bool)
    esdf = build_esdf(grid_from_mask(mask, 0.1))
    esdf.distance[:] = np.array([0.2, 0.4]).reshape(2, 1, 1)
    d, g = query(esdf, np.array([0.1, 0.05, 0.05]))
    assert d == pytest.approx(0.3, abs=1e-14)
    assert g[0] == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_array_equal(g[1:], 0.0)


def test_query_gradient_finite_difference(rng):
    mask = rng.random((10, 10, 10)) < 0.08
    esdf = build_esdf(grid_from_mask(mask, 0.1))
    h = 1e-7
    checked = 0
    while checked < 100:
        p = rng.uniform(0.06, 0.94, 3)
        s = p / 0.1 - 0.5
        if np.any(np.abs(s - np.round(s)) < 1e-4):
            continue  # finite differences across a cell face are meaningless
        _, g = query(esdf, p)
        fd = np.array([(query(esdf, p + h * e)[0] - query(esdf, p - h * e)[0]) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(g, fd, atol=1e-6)
        checked += 1


def test_query_clamps_outside():
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[2, 2, 2] = True
    esdf = build_esdf(grid_from_mask(mask, 0.1))
    d, g = query(esdf, np.array([-3.0, 0.25, 0.25]))
    d_edge, _ = query(esdf, np.array([0.05, 0.25, 0.25]))
    assert d == pytest.approx(d_edge)
    assert g[0] == 0.0


def test_gradient_points_away():
    mask = np.zeros((9, 9, 9), dtype=bool)
    mask[4, 4, 4] = True
    esdf = build_esdf(grid_from_mask(mask, 0.1))
    c = esdf.grid.centers()
    for offset in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, 0, -1), (1, 1, 0)]:
        idx = tuple(4 + np.array(offset))
        # nudge off the exact center so the cell is unambiguous
        p = c[idx] + 0.01 * np.array(offset)
        _, g = query(esdf, p)
        assert g @ np.array(offset, dtype=float) > 0


def test_rasterize_single_voxel_box():
    grid = rasterize([Box((0.25, 0.25, 0.25), (0.1, 0.1, 0.1))], ((0, 0, 0), (1, 1, 1)), 0.1)
    assert grid.occupancy.sum() == 1
    assert grid.occupancy[2, 2, 2]


def test_rasterize_sphere_volume():
    r, res = 0.25, 0.1
    grid = rasterize([Sphere((0.5, 0.5, 0.5), r)], ((0, 0, 0), (1, 1, 1)), res)
    expected = 4 / 3 * math.pi * r**3 / res**3
    assert abs(grid.occupancy.sum() - expected) <= 0.2 * expected


def test_rasterize_empty_and_clipping():
    grid = rasterize([], ((0, 0, 0), (1, 1, 1)), 0.1)
    assert grid.dims == (10, 10, 10) and not grid.occupancy.any()
    clipped = Box((0, 0.5, 0.5), (0.3, 0.3, 0.3))
    grid = rasterize([Box((5, 5, 5), (1, 1, 1)), clipped], ((0, 0, 0), (1, 1, 1)), 0.1)
    # only the in-bounds part of the second box survives; the first is dropped
    assert grid.occupancy.sum() == clipped.contains(grid.centers().reshape(-1, 3)).sum()
    assert not grid.occupancy[3:].any()


def test_map_file_round_trip(tmp_path, rng):
    grid = OccupancyGrid(np.array([-1.0, 0.5, 0.0]), 0.2, rng.random((4, 5, 6)) < 0.3)
    path = tmp_path / "m.map"
    save_map(grid, path)
    back = load_map(path)
    np.testing.assert_array_equal(back.occupancy, grid.occupancy)
    np.testing.assert_array_equal(back.origin, grid.origin)
    assert back.resolution == grid.resolution


def test_map_file_primitives(tmp_path):
    path = tmp_path / "p.map"
    path.write_text("origin 0 0 0\nresolution 0.1\ndims 10 10 10\nprimitives\nbox 0.25 0.25 0.25 0.1 0.1 0.1\n")
    grid = load_map(path)
    assert grid.occupancy.sum() == 1
    path.write_text("origin 0 0 0\nresolution 0.1\n")
    with pytest.raises(ValueError):
        load_map(path)
