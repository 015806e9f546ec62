"""Voxel environments, belief maps, the inclusive voxel-line rule and the sensor.

Voxel ``(i, j, k)`` is the closed cube of side ``resolution`` centered at
``(i, j, k) * resolution`` in the world frame ``(x, y, h)``, ``h`` up.  The grid
therefore covers ``[-0.5, dims - 0.5] * resolution`` on each axis.

Grid file layout (little endian)::

    8 bytes   magic b"AMPGRID1"
    uint32    length n of the JSON header
    n bytes   UTF-8 JSON header: kind ("environment" or "map"), dims,
              resolution, water_level, seed, free_planes
    runs      (uint8 cell value, uint32 run length) pairs over the cells in
              C order (x slowest, h fastest)
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np

GRID_MAGIC = b"AMPGRID1"

# environment cells
FREE, OCCUPIED = 0, 1
# belief cells
ASSUMED_FREE, ASSUMED_OBSTACLE, CONFIRMED_FREE, CONFIRMED_OBSTACLE = 0, 1, 2, 3


class Medium(enum.Enum):
    AIR = "air"
    WATER = "water"


class EdgeClass(enum.IntEnum):
    FREE = 0
    ASSUMED_BLOCKED = 1
    CONFIRMED_BLOCKED = 2


class BoundsError(ValueError):
    pass


class GenerationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class WaterSurface:
    """Horizontal surface at world height ``level``: water below, air at and above."""

    level: float

    def medium_at(self, h):
        return Medium.AIR if h >= self.level else Medium.WATER

    @classmethod
    def half_height(cls, dims_h, resolution=1.0):
        # the floor face sits half a voxel below the first center
        return cls((dims_h / 2.0 - 0.5) * resolution)


def medium_at(h, water: WaterSurface):
    return water.medium_at(h)


@dataclass
class VoxelGrid:
    """Dense 3-D cell array with its geometry.

    ``cells`` holds environment values (``FREE``/``OCCUPIED``) or belief
    values (``ASSUMED_*``/``CONFIRMED_*``) depending on ``kind``.
    """

    cells: np.ndarray
    resolution: float = 1.0
    kind: str = "environment"
    water: WaterSurface | None = None
    seed: int | None = None
    free_planes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 3 or min(self.cells.shape) < 2:
            raise ValueError("grid needs three axes of at least two voxels")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.water is not None and not 0 < self.water.level + 0.5 * self.resolution \
                < self.dims[2] * self.resolution:
            raise ValueError("water level outside the grid")

    @property
    def dims(self):
        return self.cells.shape

    def in_bounds(self, idx):
        return all(0 <= c < n for c, n in zip(idx, self.dims))

    def is_boundary(self, idx):
        return any(c == 0 or c == n - 1 for c, n in zip(idx, self.dims))

    def center(self, idx):
        return np.asarray(idx, dtype=float) * self.resolution

    def voxel_of(self, p):
        idx = tuple(int(c) for c in np.floor(np.asarray(p, dtype=float) / self.resolution + 0.5))
        if not self.in_bounds(idx):
            raise BoundsError(f"point {tuple(p)} outside grid")
        return idx

    def contains_point(self, p):
        u = np.asarray(p, dtype=float) / self.resolution
        return bool(np.all(u >= -0.5) and np.all(u <= np.asarray(self.dims) - 0.5))

    def medium_of(self, idx):
        if self.water is None:
            return Medium.AIR
        return self.water.medium_at(idx[2] * self.resolution)

    def copy(self):
        return VoxelGrid(self.cells.copy(), self.resolution, self.kind, self.water, self.seed,
                         dict(self.free_planes))

    # ---- persistence
    def save(self, path):
        flat = self.cells.ravel()
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], change])
        runs = np.diff(np.concatenate([starts, [flat.size]]))
        rec = np.empty(len(starts), dtype=[("v", "u1"), ("n", "<u4")])
        rec["v"] = flat[starts]
        rec["n"] = runs
        header = {"kind": self.kind, "dims": list(self.dims), "resolution": self.resolution,
                  "water_level": None if self.water is None else self.water.level,
                  "seed": self.seed, "free_planes": self.free_planes}
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(GRID_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(rec.tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:8] != GRID_MAGIC:
            raise ValueError(f"{path} is not a grid file")
        (n,) = struct.unpack("<I", raw[8:12])
        h = json.loads(raw[12:12 + n].decode())
        rec = np.frombuffer(raw[12 + n:], dtype=[("v", "u1"), ("n", "<u4")])
        cells = np.repeat(rec["v"], rec["n"].astype(np.int64)).reshape(h["dims"])
        water = None if h["water_level"] is None else WaterSurface(h["water_level"])
        return cls(cells, h["resolution"], h["kind"], water, h["seed"], h["free_planes"])


WorldMap = VoxelGrid


# --------------------------------------------------------------------------
# voxel-line rule

def _exact_groups(u0, u1):
    """Voxel index groups met by the segment ``u0 -> u1`` in voxel units.

    Works in exact rational arithmetic: every parameter where some axis sits
    on a voxel face is visited, and at such a parameter the axis contributes
    both neighbouring indices, so segments through shared faces, edges or
    vertices pick up every voxel sharing that feature.
    """
    ratios = [float(c).as_integer_ratio() for c in (*u0, *u1)]
    den = max(r[1] for r in ratios)
    scaled = [2 * num * (den // d) for num, d in ratios]
    A, B = scaled[:3], scaled[3:]
    D = [b - a for a, b in zip(A, B)]
    # positions are X / (2 den); faces at odd multiples of den
    events = set()
    for a, b, d in zip(A, B, D):
        if d == 0:
            continue
        lo, hi = min(a, b), max(a, b)
        k = (lo + den) // (2 * den)
        face = (2 * k + 1) * den
        if face <= lo:
            face += 2 * den
        while face < hi:
            events.add(Fraction(face - a, d))
            face += 2 * den
    ts = sorted(events)
    samples = [Fraction(0)]
    for t in ts:
        samples.append((samples[-1] + t) / 2)
        samples.append(t)
    samples.append((samples[-1] + 1) / 2)
    samples.append(Fraction(1))
    groups = []
    period = 2 * den
    for t in samples:
        p, q = t.numerator, t.denominator
        axes = []
        for a, d in zip(A, D):
            X = a * q + p * d
            k = (X + den * q) // (period * q)
            if X % (period * q) == den * q:
                axes.append((k - 1, k))
            else:
                axes.append((k,))
        groups.append(list(product(*axes)))
    return groups


@lru_cache(maxsize=65536)
def _center_groups(d):
    return tuple(tuple(g) for g in _exact_groups((0.0, 0.0, 0.0), tuple(float(c) for c in d)))


def line_voxel_groups(p0, p1, grid: VoxelGrid):
    """Voxels met by the segment, grouped by contact point along it.

    Consecutive groups may share voxels; the union of all groups is
    :func:`line_voxels`.  Out-of-grid indices are dropped.
    """
    if not (grid.contains_point(p0) and grid.contains_point(p1)):
        raise BoundsError(f"segment {tuple(p0)} -> {tuple(p1)} leaves the grid")
    u0 = np.asarray(p0, dtype=float) / grid.resolution
    u1 = np.asarray(p1, dtype=float) / grid.resolution
    if np.all(u0 == np.round(u0)) and np.all(u1 == np.round(u1)):
        # center-to-center segments are translation invariant
        o = tuple(int(c) for c in u0)
        rel = _center_groups(tuple(int(c) for c in u1 - u0))
        raw = [[(v[0] + o[0], v[1] + o[1], v[2] + o[2]) for v in g] for g in rel]
    else:
        raw = _exact_groups(u0, u1)
    out = []
    for g in raw:
        g = [v for v in g if grid.in_bounds(v)]
        if g and (not out or g != out[-1]):
            out.append(g)
    return out


def line_voxels(p0, p1, grid: VoxelGrid):
    """Every voxel the closed segment ``p0 -> p1`` touches, in order along it."""
    seen = {}
    for g in line_voxel_groups(p0, p1, grid):
        for v in g:
            seen.setdefault(v, None)
    return list(seen)


def classify_edge(world: WorldMap, p0, p1, voxels=None):
    """Blocking class of the straight edge between two points.

    Grid boundary voxels count as confirmed walls.
    """
    if voxels is None:
        voxels = line_voxels(p0, p1, world)
    if not voxels:
        return EdgeClass.FREE
    idx = np.array(voxels).T
    vals = world.cells[tuple(idx)]
    dims = np.asarray(world.dims)[:, None]
    wall = np.any((idx == 0) | (idx == dims - 1))
    if wall or np.any(vals == CONFIRMED_OBSTACLE):
        return EdgeClass.CONFIRMED_BLOCKED
    if np.any(vals == ASSUMED_OBSTACLE):
        return EdgeClass.ASSUMED_BLOCKED
    return EdgeClass.FREE


# --------------------------------------------------------------------------
# noise and cave generation

_FADE = (6.0, -15.0, 10.0)
PERLIN_BOUND = math.sqrt(3.0) / 2.0


class Perlin3:
    """Classic lattice gradient noise with unit gradients, period 256."""

    def __init__(self, seed):
        rng = np.random.default_rng(seed)
        perm = rng.permutation(256)
        self.perm = np.concatenate([perm, perm]).astype(np.int64)
        g = rng.normal(size=(256, 3))
        self.grad = g / np.linalg.norm(g, axis=1, keepdims=True)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        scalar = p.ndim == 1
        p = np.atleast_2d(p)
        cell = np.floor(p)
        f = p - cell
        c = cell.astype(np.int64) & 255
        w = f * f * f * (f * (f * _FADE[0] + _FADE[1]) + _FADE[2])
        perm = self.perm
        total = np.zeros(len(p))
        for corner in product((0, 1), repeat=3):
            o = np.array(corner)
            hsh = perm[perm[perm[c[:, 0] + o[0]] + c[:, 1] + o[1]] + c[:, 2] + o[2]]
            dot = np.einsum("ij,ij->i", self.grad[hsh], f - o)
            wt = np.prod(np.where(o == 1, w, 1.0 - w), axis=1)
            total += wt * dot
        return float(total[0]) if scalar else total


def perlin3(p, seed):
    """Gradient noise at ``p``; zero on the integer lattice, within [-1, 1]."""
    return Perlin3(seed)(p)


@dataclass(frozen=True)
class CaveParams:
    n_bores: int = 6
    n_min: int = 10
    n_max: int = 40
    l_bore: float = 3.0
    r_bore: float = 2.0
    noise_scale: float = 0.08
    max_attempts: int = 2000

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise ValueError("n_min must not exceed n_max")
        if self.l_bore <= 0 or self.r_bore < 1 or self.n_bores < 1:
            raise ValueError("invalid bore geometry")


def bore_angles(p, theta_noise, phi_noise, scale):
    """Polar and azimuth angles of the next bore step from the two noise fields."""
    q = np.asarray(p, dtype=float) * scale
    theta = 0.5 * math.pi + 0.5 * math.pi * theta_noise(q) / PERLIN_BOUND
    phi = 0.55 * math.pi * phi_noise(q) / PERLIN_BOUND
    return theta, phi


def _walk_bores(params: CaveParams, dims, resolution, rng, theta_noise, phi_noise):
    lo = np.full(3, 1.0 * resolution)
    hi = (np.asarray(dims) - 2) * resolution
    bores = []
    attempts = 0
    while len(bores) < params.n_bores:
        attempts += 1
        if attempts > params.max_attempts:
            raise GenerationFailed(f"only {len(bores)} of {params.n_bores} bores after "
                                   f"{params.max_attempts} attempts")
        p = lo + rng.random(3) * (hi - lo)
        pts = [p]
        while len(pts) - 1 < params.n_max:
            th, ph = bore_angles(p, theta_noise, phi_noise, params.noise_scale)
            step = params.l_bore * np.array([math.sin(th) * math.cos(ph),
                                             math.sin(th) * math.sin(ph), math.cos(th)])
            p = p + step
            if np.any(p < lo) or np.any(p > hi):
                break
            pts.append(p)
        if len(pts) - 1 > params.n_min:
            bores.append(np.array(pts))
    return bores


def _carve(free, bores, r, resolution):
    """Mark voxels within ``r`` of any bore polyline."""
    dims = free.shape
    for pts in bores:
        for a, b in zip(pts[:-1], pts[1:]):
            lo = np.maximum(np.floor((np.minimum(a, b) - r) / resolution), 1).astype(int)
            hi = np.minimum(np.ceil((np.maximum(a, b) + r) / resolution),
                            np.asarray(dims) - 2).astype(int)
            ix = np.stack(np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)],
                                      indexing="ij"), axis=-1).reshape(-1, 3)
            c = ix * resolution
            ab = b - a
            s = np.clip(((c - a) @ ab) / (ab @ ab), 0.0, 1.0)
            d = np.linalg.norm(c - (a + s[:, None] * ab), axis=1)
            keep = ix[d <= r + 1e-9]
            free[tuple(keep.T)] = True


def generate_cave(params: CaveParams | None = None, dims=(40, 40, 20), seed=0, resolution=1.0):
    """Bore-walk cave: rock everywhere except tubes of radius ``r_bore``.

    Returns ``(environment, water)``.  The two free planes are drawn here and
    recorded on the environment; only the initial map treats them as free.
    """
    params = params or CaveParams()
    dims = tuple(int(d) for d in dims)
    if min(dims) < 3:
        raise ValueError("cave needs an interior")
    rng = np.random.default_rng(seed)
    theta_noise = Perlin3(rng.integers(2 ** 32))
    phi_noise = Perlin3(rng.integers(2 ** 32))
    bores = _walk_bores(params, dims, resolution, rng, theta_noise, phi_noise)
    free = np.zeros(dims, dtype=bool)
    _carve(free, bores, params.r_bore, resolution)
    planes = {"x": int(rng.integers(1, dims[0] - 1)), "h": int(rng.integers(1, dims[2] - 1))}
    water = WaterSurface.half_height(dims[2], resolution)
    cells = np.where(free, FREE, OCCUPIED).astype(np.uint8)
    env = VoxelGrid(cells, resolution, "environment", water, int(seed), planes)
    env.bores = bores
    return env, water


def initial_map(environment: VoxelGrid, seed=None):
    """Prior belief: the environment's rock as assumed obstacles, the rest and
    the two recorded free planes as assumed free."""
    cells = np.where(environment.cells == OCCUPIED, ASSUMED_OBSTACLE, ASSUMED_FREE).astype(np.uint8)
    planes = dict(environment.free_planes)
    if not planes and seed is not None:
        rng = np.random.default_rng(seed)
        d = environment.dims
        planes = {"x": int(rng.integers(1, d[0] - 1)), "h": int(rng.integers(1, d[2] - 1))}
    if "x" in planes:
        cells[planes["x"], 1:-1, 1:-1] = ASSUMED_FREE
    if "h" in planes:
        cells[1:-1, 1:-1, planes["h"]] = ASSUMED_FREE
    return VoxelGrid(cells, environment.resolution, "map", environment.water,
                     environment.seed, planes)


# --------------------------------------------------------------------------
# sensing

@dataclass(frozen=True)
class SensorParams:
    angular_resolution: float = 45.0
    radius: float = 5.0

    def __post_init__(self):
        if not 0 < self.angular_resolution <= 90 or self.radius <= 0:
            raise ValueError("invalid sensor parameters")

    def directions(self):
        """Unit ray directions: azimuth x elevation lattice, poles once."""
        step = self.angular_resolution
        out = [(0.0, 0.0, -1.0)]
        n_el = int(round(180.0 / step))
        n_az = int(round(360.0 / step))
        for i in range(1, n_el):
            el = math.radians(-90.0 + i * step)
            if el >= math.pi / 2 - 1e-12:
                break
            for j in range(n_az):
                az = math.radians(j * step)
                out.append((math.cos(el) * math.cos(az), math.cos(el) * math.sin(az),
                            math.sin(el)))
        out.append((0.0, 0.0, 1.0))
        dirs = np.array(out)
        # exact zeros and ones keep rays through voxel features exact
        return np.where(np.abs(dirs) < 1e-12, 0.0, dirs)


@dataclass(frozen=True)
class SensorReading:
    position: tuple
    free: frozenset
    occupied: frozenset

    @property
    def sensed(self):
        return self.free | self.occupied


def _clip_ray(grid: VoxelGrid, p, d, radius):
    u = np.asarray(p, dtype=float)
    lo = -0.5 * grid.resolution
    hi = (np.asarray(grid.dims) - 0.5) * grid.resolution
    t = radius
    for i in range(3):
        if d[i] > 0:
            t = min(t, (hi[i] - u[i]) / d[i])
        elif d[i] < 0:
            t = min(t, (lo - u[i]) / d[i])
    end = u + t * d
    return np.clip(end, lo, hi)


def sense(environment: VoxelGrid, world: WorldMap, position, water: WaterSurface | None,
          sp: SensorParams | None = None) -> SensorReading:
    """Noise-free ray sensor.

    Each ray walks its voxel groups outward, reporting free voxels as seen
    and stopping at the first group that contains rock (that rock is
    reported) or that lies across the water surface (nothing reported).
    """
    sp = sp or SensorParams()
    p = np.asarray(position, dtype=float)
    home = None if water is None else water.medium_at(p[2])
    free, occ = set(), set()
    res = environment.resolution
    for d in sp.directions():
        end = _clip_ray(environment, p, d, sp.radius)
        for g in line_voxel_groups(p, end, environment):
            if home is not None and any(water.medium_at(v[2] * res) != home for v in g):
                break
            hit = [v for v in g if environment.cells[v] == OCCUPIED]
            free.update(v for v in g if environment.cells[v] != OCCUPIED)
            if hit:
                occ.update(hit)
                break
    return SensorReading(tuple(p), frozenset(free), frozenset(occ))


def apply_reading(world: WorldMap, reading: SensorReading):
    """Move sensed cells to confirmed states; return the cells whose belief changed."""
    changed = []
    for v in sorted(reading.free):
        if world.cells[v] in (ASSUMED_FREE, ASSUMED_OBSTACLE):
            world.cells[v] = CONFIRMED_FREE
            changed.append(v)
    for v in sorted(reading.occupied):
        if world.cells[v] in (ASSUMED_FREE, ASSUMED_OBSTACLE):
            world.cells[v] = CONFIRMED_OBSTACLE
            changed.append(v)
    return changed


def discrepancies(environment: VoxelGrid, world: WorldMap):
    """Cells where the belief disagrees with the truth."""
    truth_occ = environment.cells == OCCUPIED
    belief_occ = np.isin(world.cells, (ASSUMED_OBSTACLE, CONFIRMED_OBSTACLE))
    return np.argwhere(truth_occ != belief_occ)
