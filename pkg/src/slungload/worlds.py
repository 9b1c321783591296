"""Seeded obstacle worlds for the planning benchmark families and the gate run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from slungload.esdf import Box, EsdfMap, OccupancyGrid, build_esdf, rasterize

FAMILIES = ("12-squares", "random-gap", "clutter")
RESOLUTION = 0.1
BOUNDS = ((-1.0, -3.0, 0.0), (11.0, 3.0, 3.0))
START = (0.0, 0.0, 1.2)
GOAL = (10.0, 0.0, 1.2)
HEIGHT = BOUNDS[1][2] - BOUNDS[0][2]


@dataclass
class World:
    name: str
    primitives: list
    bounds: tuple
    start: np.ndarray
    goal: np.ndarray
    grid: OccupancyGrid | None = None  # a loaded map replaces the primitives

    def esdf(self, resolution: float = RESOLUTION) -> EsdfMap:
        if self.grid is not None:
            return build_esdf(self.grid)
        return build_esdf(rasterize(self.primitives, self.bounds, resolution))


def _pillar(x, y, w, d=None):
    return Box((x, y, HEIGHT / 2), (w, w if d is None else d, HEIGHT))


def twelve_squares(rng: np.random.Generator) -> list:
    """Twelve square pillars (0.4 to 0.7 m) scattered between start and goal."""
    boxes: list = []
    centers: list = []
    while len(boxes) < 12:
        c = np.array([rng.uniform(1.5, 8.5), rng.uniform(-2.4, 2.4)])
        w = rng.uniform(0.4, 0.7)
        if centers and np.min(np.linalg.norm(np.array(centers) - c, axis=1)) < 1.6:
            continue
        centers.append(c)
        boxes.append(_pillar(c[0], c[1], w))
    return boxes


def random_gap(rng: np.random.Generator) -> list:
    """A full-height wall across the corridor with one vertical slot."""
    x = rng.uniform(4.0, 6.0)
    width = rng.uniform(0.9, 1.2)
    yc = rng.uniform(-1.5, 1.5)
    lo, hi = BOUNDS[0][1], BOUNDS[1][1]
    y0, y1 = yc - width / 2, yc + width / 2
    return [
        Box((x, (lo + y0) / 2, HEIGHT / 2), (0.2, y0 - lo, HEIGHT)),
        Box((x, (y1 + hi) / 2, HEIGHT / 2), (0.2, hi - y1, HEIGHT)),
    ]


def clutter(rng: np.random.Generator, density: float = 0.4, cell: float = 1.25) -> list:
    """Pillars on a jittered lattice; each lattice cell is occupied with probability ``density``."""
    boxes = []
    xs = np.arange(2.0, 8.0 + 1e-9, cell)
    ys = np.arange(-2.5, 2.5 + 1e-9, cell)
    for x in xs:
        for y in ys:
            if rng.random() >= density:
                continue
            w = rng.uniform(0.25, 0.45)
            jitter = rng.uniform(-0.15, 0.15, 2)
            boxes.append(_pillar(x + jitter[0], y + jitter[1], w))
    return boxes


def make_world(family: str, seed: int) -> World:
    rng = np.random.default_rng(seed)
    if family == "12-squares":
        prims = twelve_squares(rng)
    elif family == "random-gap":
        prims = random_gap(rng)
    elif family == "clutter":
        prims = clutter(rng)
    elif family == "empty":
        prims = []
    else:
        raise ValueError(f"unknown scenario family {family!r}")
    return World(family, prims, BOUNDS, np.array(START), np.array(GOAL))


def gate_world(opening: float = 1.0) -> World:
    """A wall with a square gate of side ``opening`` centred at the flight height plus slack above."""
    x = 5.0
    z0, z1 = 0.6, 0.6 + opening + 0.7  # tall enough for the hanging payload and the vehicle
    lo, hi = BOUNDS[0][1], BOUNDS[1][1]
    y0, y1 = -opening / 2, opening / 2
    prims = [
        Box((x, (lo + y0) / 2, HEIGHT / 2), (0.2, y0 - lo, HEIGHT)),
        Box((x, (y1 + hi) / 2, HEIGHT / 2), (0.2, hi - y1, HEIGHT)),
        Box((x, 0.0, z0 / 2), (0.2, opening, z0)),
        Box((x, 0.0, (z1 + HEIGHT) / 2), (0.2, opening, HEIGHT - z1)),
    ]
    return World("gate", prims, BOUNDS, np.array(START), np.array(GOAL))
