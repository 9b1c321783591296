"""Voxel occupancy, Euclidean signed distance field and trilinear queries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

MAX_DISTANCE = 10.0  # m
_INF = 1e20


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        half = 0.5 * np.asarray(self.size, dtype=float)
        return np.all(np.abs(pts - np.asarray(self.center, dtype=float)) <= half + 1e-12, axis=-1)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.center, dtype=float)
        return np.sum(d * d, axis=-1) <= self.radius**2 + 1e-12


@dataclass
class OccupancyGrid:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray  # bool, shape dims

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 1:
            raise ValueError("occupancy must be a non-empty 3-D array")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    def centers(self) -> np.ndarray:
        axes = [self.origin[i] + (np.arange(n) + 0.5) * self.resolution for i, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def index_of(self, p: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(p) - self.origin) / self.resolution).astype(int)

    def in_bounds(self, p: np.ndarray) -> np.ndarray:
        idx = self.index_of(p)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.array(self.dims)


@numba.njit(cache=True)
def _edt_1d(f, out, v, z):
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -_INF
    z[1] = _INF
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@numba.njit(cache=True)
def _edt_squared(mask):
    """Squared distance (voxel units) to the nearest True voxel.

    Separable lower-envelope-of-parabolas transform, one pass per axis.
    """
    nx, ny, nz = mask.shape
    d = np.empty((nx, ny, nz))
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                d[i, j, k] = 0.0 if mask[i, j, k] else _INF
    n = max(nx, ny, nz)
    f = np.empty(n)
    out = np.empty(n)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = d[i, j, k]
            _edt_1d(f[:nz], out[:nz], v, z)
            for k in range(nz):
                d[i, j, k] = out[k]
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = d[i, j, k]
            _edt_1d(f[:ny], out[:ny], v, z)
            for j in range(ny):
                d[i, j, k] = out[j]
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = d[i, j, k]
            _edt_1d(f[:nx], out[:nx], v, z)
            for i in range(nx):
                d[i, j, k] = out[i]
    return d


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance in voxels from each center to the nearest True voxel."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return np.sqrt(_edt_squared(mask))


@dataclass
class EsdfMap:
    origin: np.ndarray
    resolution: float
    distance: np.ndarray
    occupancy: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.distance.shape)

    @property
    def grid(self) -> OccupancyGrid:
        return OccupancyGrid(self.origin, self.resolution, self.occupancy)

    def query(self, p):
        """Trilinear distance and gradient; see :func:`query`."""
        return query(self, p)

    def query_batch(self, pts: np.ndarray):
        return _trilinear(self, np.asarray(pts, dtype=float).reshape(-1, 3))


def build_esdf(grid: OccupancyGrid, max_distance: float = MAX_DISTANCE) -> EsdfMap:
    occ = grid.occupancy
    res = grid.resolution
    outside = distance_transform(occ) * res
    inside = distance_transform(~occ) * res
    # shift the interior by one voxel so the field stays 1-Lipschitz across
    # the obstacle surface (boundary voxels read 0, not -resolution)
    dist = np.where(occ, res - inside, outside)
    dist = np.clip(np.nan_to_num(dist, posinf=max_distance, neginf=-max_distance), -max_distance, max_distance)
    return EsdfMap(grid.origin.copy(), res, dist, occ.copy())


@numba.njit(cache=True)
def _trilinear_kernel(D, origin, res, pts):
    n = pts.shape[0]
    dims = D.shape
    d_out = np.empty(n)
    g_out = np.zeros((n, 3))
    idx0 = np.empty(3, dtype=np.int64)
    idx1 = np.empty(3, dtype=np.int64)
    t = np.empty(3)
    live = np.empty(3, dtype=np.bool_)
    for p in range(n):
        for a in range(3):
            s = (pts[p, a] - origin[a]) / res - 0.5
            upper = dims[a] - 1.0
            live[a] = dims[a] > 1 and 0.0 <= s <= upper
            if s < 0.0:
                s = 0.0
            elif s > upper:
                s = upper
            i0 = int(np.floor(s))
            if i0 > dims[a] - 2:
                i0 = max(dims[a] - 2, 0)
            idx0[a] = i0
            idx1[a] = min(i0 + 1, dims[a] - 1)
            t[a] = s - i0
        x0, y0, z0 = idx0[0], idx0[1], idx0[2]
        x1, y1, z1 = idx1[0], idx1[1], idx1[2]
        tx, ty, tz = t[0], t[1], t[2]
        c000 = D[x0, y0, z0]
        c001 = D[x0, y0, z1]
        c010 = D[x0, y1, z0]
        c011 = D[x0, y1, z1]
        c100 = D[x1, y0, z0]
        c101 = D[x1, y0, z1]
        c110 = D[x1, y1, z0]
        c111 = D[x1, y1, z1]
        # blend along z, then y, then x
        c00 = c000 * (1 - tz) + c001 * tz
        c01 = c010 * (1 - tz) + c011 * tz
        c10 = c100 * (1 - tz) + c101 * tz
        c11 = c110 * (1 - tz) + c111 * tz
        c0 = c00 * (1 - ty) + c01 * ty
        c1 = c10 * (1 - ty) + c11 * ty
        d_out[p] = c0 * (1 - tx) + c1 * tx
        if live[0]:
            g_out[p, 0] = (c1 - c0) / res
        if live[1]:
            g_out[p, 1] = ((c01 - c00) * (1 - tx) + (c11 - c10) * tx) / res
        if live[2]:
            dz0 = (c001 - c000) * (1 - ty) + (c011 - c010) * ty
            dz1 = (c101 - c100) * (1 - ty) + (c111 - c110) * ty
            g_out[p, 2] = (dz0 * (1 - tx) + dz1 * tx) / res
    return d_out, g_out


@numba.njit(cache=True, inline="always")
def _axis(p, o, res, n):
    s = min(max((p - o) / res - 0.5, 0.0), n - 1.0)
    i = min(int(s), max(n - 2, 0))
    return i, min(i + 1, n - 1), s - i


@numba.njit(cache=True)
def distance_at(D, origin, res, x, y, z):
    """Trilinear distance only, for use inside other jitted loops."""
    nx, ny, nz = D.shape
    x0, x1, tx = _axis(x, origin[0], res, nx)
    y0, y1, ty = _axis(y, origin[1], res, ny)
    z0, z1, tz = _axis(z, origin[2], res, nz)
    c00 = D[x0, y0, z0] * (1 - tz) + D[x0, y0, z1] * tz
    c01 = D[x0, y1, z0] * (1 - tz) + D[x0, y1, z1] * tz
    c10 = D[x1, y0, z0] * (1 - tz) + D[x1, y0, z1] * tz
    c11 = D[x1, y1, z0] * (1 - tz) + D[x1, y1, z1] * tz
    return (c00 * (1 - ty) + c01 * ty) * (1 - tx) + (c10 * (1 - ty) + c11 * ty) * tx


def _trilinear(esdf: EsdfMap, pts: np.ndarray):
    return _trilinear_kernel(esdf.distance, esdf.origin, float(esdf.resolution), np.ascontiguousarray(pts, dtype=float))


def query(esdf: EsdfMap, p) -> tuple[float, np.ndarray]:
    """Distance (m) and gradient at ``p``.

    Points outside the span of voxel centers are clamped to it and the
    gradient is zeroed on the clamped axes.
    """
    d, g = _trilinear(esdf, np.asarray(p, dtype=float).reshape(1, 3))
    return float(d[0]), g[0]


def rasterize(primitives, bounds, resolution: float) -> OccupancyGrid:
    """Voxelize boxes and spheres; a voxel is occupied iff its center is inside a primitive."""
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    dims = np.maximum(np.ceil((hi - lo) / resolution - 1e-9).astype(int), 1)
    grid = OccupancyGrid(lo, resolution, np.zeros(dims, dtype=bool))
    if not primitives:
        return grid
    centers = grid.centers()
    occ = grid.occupancy
    for prim in primitives:
        # restrict the test to the primitive's bounding slab
        if isinstance(prim, Box):
            half = 0.5 * np.asarray(prim.size, dtype=float)
        else:
            half = np.full(3, prim.radius)
        c = np.asarray(prim.center, dtype=float)
        i_lo = np.clip(np.floor((c - half - lo) / resolution).astype(int) - 1, 0, dims)
        i_hi = np.clip(np.ceil((c + half - lo) / resolution).astype(int) + 1, 0, dims)
        sl = tuple(slice(a, b) for a, b in zip(i_lo, i_hi))
        occ[sl] |= prim.contains(centers[sl])
    return grid


# --- map file ---------------------------------------------------------------

def save_map(grid: OccupancyGrid, path: str | Path) -> None:
    lines = [
        "# slungload map",
        "origin " + " ".join(repr(float(v)) for v in grid.origin),
        f"resolution {grid.resolution!r}",
        "dims " + " ".join(str(n) for n in grid.dims),
        "occupancy",
    ]
    nx, ny, _ = grid.dims
    for i in range(nx):
        for j in range(ny):
            lines.append("".join("1" if v else "0" for v in grid.occupancy[i, j]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_primitive(tokens: list[str]):
    kind, *vals = tokens
    vals = [float(v) for v in vals]
    if kind == "box" and len(vals) == 6:
        return Box(tuple(vals[:3]), tuple(vals[3:]))
    if kind == "sphere" and len(vals) == 4:
        return Sphere(tuple(vals[:3]), vals[3])
    raise ValueError(f"bad primitive line: {' '.join(tokens)}")


def load_map(path: str | Path) -> OccupancyGrid:
    """Read a map file: header, optional ``occupancy`` rows, optional ``primitives``.

    Occupancy rows are ordered by (i, j) with one character per k.
    """
    origin = resolution = dims = None
    rows: list[str] = []
    prims = []
    section = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] == "origin":
            origin = [float(v) for v in tokens[1:4]]
        elif tokens[0] == "resolution":
            resolution = float(tokens[1])
        elif tokens[0] == "dims":
            dims = [int(v) for v in tokens[1:4]]
        elif tokens[0] in ("occupancy", "primitives"):
            section = tokens[0]
        elif section == "occupancy":
            rows.append(line)
        elif section == "primitives":
            prims.append(parse_primitive(tokens))
        else:
            raise ValueError(f"unexpected line in map file: {line!r}")
    if origin is None or resolution is None or dims is None:
        raise ValueError("map file needs origin, resolution and dims")
    occ = np.zeros(dims, dtype=bool)
    if rows:
        if len(rows) != dims[0] * dims[1] or any(len(r) != dims[2] for r in rows):
            raise ValueError("occupancy block does not match dims")
        occ = np.array([[c == "1" for c in r] for r in rows], dtype=bool).reshape(dims)
    if prims:
        lo = np.array(origin)
        hi = lo + resolution * np.array(dims)
        occ |= rasterize(prims, (lo, hi), resolution).occupancy
    return OccupancyGrid(np.array(origin), resolution, occ)
