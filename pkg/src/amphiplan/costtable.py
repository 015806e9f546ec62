"""Stop-stop energy tables used as roadmap edge prices.

Each entry is the electrical energy the closed-loop vehicle spends moving by
an integer displacement, starting and ending at rest, up to the moment it has
settled inside a per-axis corridor around the target.  Only the quadrant
``dx, dy >= 0`` is simulated; the rest follows from the mirror symmetry of the
dynamics in x and y.  Heave is not folded because gravity breaks the symmetry.

File layout (little endian)::

    8 bytes   magic b"AMPCOST1"
    uint32    length n of the JSON header
    n bytes   UTF-8 JSON header: medium, params_hash, resolution, reach,
              shape, settling, v_c, gains
    float64   energy[reach+1, reach+1, 2*reach+1]    indexed [dx, dy, dh+reach]
    float64   duration[reach+1, reach+1, 2*reach+1]

The origin slot holds zeros.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import ControllerGains, build_spline
from .simulate import Executor
from .vehicle import MediumParams, VehicleParams, VehicleState

MAGIC = b"AMPCOST1"
REACH = 8


class UnreachableEntry(RuntimeError):
    """A stop-stop maneuver failed to settle."""

    def __init__(self, disp, reason):
        super().__init__(f"displacement {tuple(disp)} did not settle ({reason})")
        self.disp = tuple(disp)
        self.reason = reason


class StaleTable(RuntimeError):
    pass


@dataclass(frozen=True)
class SettlingCriterion:
    fraction: float = 0.02
    floor: float = 0.02
    hold: float = 3.0
    timeout: float = 120.0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("settling fraction must lie in (0, 1)")

    def corridor(self, disp):
        return np.maximum(self.fraction * np.abs(np.asarray(disp, dtype=float)), self.floor)


# bump when the control law changes so cached tables are rebuilt
CONTROLLER_REVISION = 2


@dataclass(frozen=True)
class TableParams:
    """Everything a table entry depends on."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    air: MediumParams = field(default_factory=MediumParams.air)
    water: MediumParams = field(default_factory=MediumParams.water)
    gains_air: ControllerGains = field(default_factory=ControllerGains.air)
    gains_water: ControllerGains = field(default_factory=ControllerGains.water)
    v_c: float = 1.0
    dt: float = 0.005
    settling: SettlingCriterion = field(default_factory=SettlingCriterion)
    resolution: float = 1.0

    def medium(self, name):
        return {"air": self.air, "water": self.water}[name]

    def gains(self, name):
        return {"air": self.gains_air, "water": self.gains_water}[name]

    def to_dict(self, medium):
        return {
            "controller": CONTROLLER_REVISION,
            "vehicle": asdict(self.vehicle),
            "medium": asdict(self.medium(medium)),
            "gains": self.gains(medium).to_dict(),
            "v_c": self.v_c,
            "dt": self.dt,
            "settling": asdict(self.settling),
            "resolution": self.resolution,
        }

    def hash(self, medium):
        blob = json.dumps(self.to_dict(medium), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def executor(self, medium):
        return Executor(vp=self.vehicle, air=self.air, water=self.water,
                        gains_air=self.gains_air, gains_water=self.gains_water,
                        dt=self.dt, force_medium=0 if medium == "air" else 1)


def simulate_stop_stop(disp, medium="air", params: TableParams | None = None, record=False):
    """Energy (J) and settling time (s) of a rest-to-rest move by ``disp`` voxels.

    With ``record`` the closed-loop trace is returned as a third item.
    """
    params = params or TableParams()
    d = np.asarray(disp, dtype=float) * params.resolution
    if not np.any(d):
        raise ValueError("displacement must be nonzero")
    crit = params.settling
    seg = build_spline((np.zeros(3), np.zeros(3), np.zeros(3)), d, d, params.v_c)
    ex = params.executor(medium)
    res = ex.run(VehicleState(), seg, settle=True, target=d, tol=crit.corridor(d),
                 hold=crit.hold, t_max=crit.timeout, record=record)
    if res.status != "settled":
        raise UnreachableEntry(disp, res.status)
    out = (float(res.E_settle), float(res.t_settle))
    return out + (res.trace,) if record else out


@dataclass
class CostTable:
    medium: str
    resolution: float
    params_hash: str
    energy: np.ndarray
    duration: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def reach(self):
        return self.energy.shape[0] - 1

    def _index(self, disp):
        d = tuple(int(c) for c in disp)
        if d != tuple(disp) and not np.allclose(disp, d):
            raise ValueError(f"displacement {disp} is not integral")
        r = self.reach
        if not any(d):
            raise ValueError("zero displacement has no cost")
        if max(abs(c) for c in d) > r:
            raise ValueError(f"displacement {d} outside table range +-{r}")
        return abs(d[0]), abs(d[1]), d[2] + r

    def lookup(self, disp, expected_hash=None):
        self.require(expected_hash)
        return float(self.energy[self._index(disp)])

    def lookup_duration(self, disp):
        return float(self.duration[self._index(disp)])

    def require(self, expected_hash):
        if expected_hash is not None and expected_hash != self.params_hash:
            raise StaleTable(f"{self.medium} table was built for parameters "
                             f"{self.params_hash[:12]}, expected {expected_hash[:12]}")

    def entries(self):
        """Every logical displacement and its energy, mirrored quadrant included."""
        r = self.reach
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dh in range(-r, r + 1):
                    if dx or dy or dh:
                        yield (dx, dy, dh), float(self.energy[abs(dx), abs(dy), dh + r])

    def min_rate(self):
        """Smallest energy per meter over all entries."""
        r = self.reach
        ix = np.indices(self.energy.shape).astype(float)
        ix[2] -= r
        dist = np.sqrt((ix ** 2).sum(axis=0)) * self.resolution
        dist[0, 0, r] = 1.0
        rate = self.energy / dist
        rate[0, 0, r] = np.inf
        return float(np.min(rate))

    def unit_cost(self):
        """Largest cost of a one-voxel axis move."""
        r = self.reach
        return float(max(self.energy[1, 0, r], self.energy[0, 1, r],
                         self.energy[0, 0, r + 1], self.energy[0, 0, r - 1]))

    def save(self, path):
        header = dict(self.meta)
        header.update(medium=self.medium, params_hash=self.params_hash,
                      resolution=self.resolution, reach=self.reach,
                      shape=list(self.energy.shape))
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.energy, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.duration, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, expected_hash=None):
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise ValueError(f"{path} is not a cost table")
        (n,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12:12 + n].decode())
        shape = tuple(header["shape"])
        size = int(np.prod(shape))
        body = np.frombuffer(raw[12 + n:], dtype="<f8")
        if body.size != 2 * size:
            raise ValueError(f"{path} payload is truncated")
        table = cls(medium=header["medium"], resolution=header["resolution"],
                    params_hash=header["params_hash"],
                    energy=body[:size].reshape(shape).copy(),
                    duration=body[size:].reshape(shape).copy(),
                    meta={k: v for k, v in header.items()
                          if k not in ("medium", "resolution", "params_hash", "reach", "shape")})
        table.require(expected_hash)
        return table


def build_table(medium="air", params: TableParams | None = None, reach=REACH, progress=None):
    """Simulate the quadrant ``dx, dy in [0, reach]``, ``dh in [-reach, reach]``."""
    params = params or TableParams()
    shape = (reach + 1, reach + 1, 2 * reach + 1)
    energy = np.zeros(shape)
    duration = np.zeros(shape)
    for dx in range(reach + 1):
        for dy in range(reach + 1):
            for dh in range(-reach, reach + 1):
                if not (dx or dy or dh):
                    continue
                energy[dx, dy, dh + reach], duration[dx, dy, dh + reach] = \
                    simulate_stop_stop((dx, dy, dh), medium, params)
        if progress is not None:
            progress(dx, reach)
    meta = {"v_c": params.v_c, "gains": params.gains(medium).to_dict(),
            "settling": asdict(params.settling)}
    return CostTable(medium, params.resolution, params.hash(medium), energy, duration, meta)


def transition_cost(tables, src, dst, water_level, resolution=1.0, duration=False):
    """Price of the vertical edge ``src -> dst`` across the water surface.

    The part above the surface is charged from the air table and the part
    below from the water table, each rounded up to whole voxels (at least
    one).  Positions are world ``(x, y, h)`` in meters.  With ``duration`` the
    stop-stop times are summed instead of energies.
    """
    a = np.asarray(src, dtype=float)
    b = np.asarray(dst, dtype=float)
    if a[0] != b[0] or a[1] != b[1]:
        raise ValueError("transition edges must be vertical")
    lo, hi = sorted((a[2], b[2]))
    if not lo < water_level <= hi:
        raise ValueError("transition edge must straddle the water surface")
    sign = 1 if b[2] > a[2] else -1
    n_air = max(1, math.ceil((hi - water_level) / resolution - 1e-9))
    n_water = max(1, math.ceil((water_level - lo) / resolution - 1e-9))
    if duration:
        return (tables["air"].lookup_duration((0, 0, sign * n_air))
                + tables["water"].lookup_duration((0, 0, sign * n_water)))
    return (tables["air"].lookup((0, 0, sign * n_air))
            + tables["water"].lookup((0, 0, sign * n_water)))


def cached_tables(directory, params: TableParams | None = None, reach=REACH):
    """Load ``air`` and ``water`` tables from ``directory``, building any that
    are missing or were built for other parameters."""
    params = params or TableParams()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for medium in ("air", "water"):
        path = directory / f"{medium}_{params.hash(medium)[:16]}_r{reach}.tbl"
        if path.exists():
            out[medium] = CostTable.load(path, expected_hash=params.hash(medium))
        else:
            out[medium] = build_table(medium, params, reach)
            out[medium].save(path)
    return out
