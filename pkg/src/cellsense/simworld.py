"""Synthetic cellular RF environment and war-driving trace generator.

Received power follows a log-distance path loss plus a per-tower shadowing
field that is fixed in space (bilinear interpolation over a coarse grid of
Gaussian draws), plus fresh measurement noise on every reading. Persistent
shadowing is what gives each location a distinctive signature; without it
every fingerprinting method degenerates to a path loss model.

Drives follow random walks over a rectangular street lattice.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .errors import InvalidInputError
from .geo import GeoPoint, LocalPoint, unproject
from .trace_io import RssiScan, TowerReading, Trace, clamp_rssi

MAX_TOWERS_PER_SCAN = 7


@dataclass(frozen=True)
class WorldSpec:
    width_m: float = 2000.0
    height_m: float = 2000.0
    n_towers: int = 30
    tx_power_dbm: float = -30.0
    path_loss_exponent: float = 3.0
    d0_m: float = 1.0
    shadow_sigma_db: float = 6.0
    shadow_grid_m: float = 50.0
    meas_sigma_db: float = 2.0
    sensitivity_dbm: float = -110.0
    max_towers_per_scan: int = MAX_TOWERS_PER_SCAN
    street_spacing_m: float = 100.0
    origin_lat: float = 31.2
    origin_lon: float = 29.9
    seed: int = 0

    def __post_init__(self):
        if not (self.width_m > 0 and self.height_m > 0):
            raise InvalidInputError("world dimensions must be positive")
        if self.n_towers < 1:
            raise InvalidInputError("need at least one tower")
        if self.shadow_sigma_db < 0 or self.meas_sigma_db < 0:
            raise InvalidInputError("sigma values must be non-negative")
        if self.d0_m <= 0 or self.shadow_grid_m <= 0 or self.street_spacing_m <= 0:
            raise InvalidInputError("d0, shadow grid and street spacing must be positive")
        if self.max_towers_per_scan != MAX_TOWERS_PER_SCAN:
            raise InvalidInputError("a GSM scan reports the serving cell plus six neighbours")
        GeoPoint(self.origin_lat, self.origin_lon)


# Rural: fewer, more widely spaced towers reaching further over open
# terrain, with rougher shadowing; urban: dense towers, steeper path loss.
PRESETS: dict[str, WorldSpec] = {
    "urban": WorldSpec(),
    "rural": WorldSpec(width_m=2000.0, height_m=2000.0, n_towers=12,
                       path_loss_exponent=2.8, shadow_sigma_db=8.0, shadow_grid_m=30.0,
                       street_spacing_m=200.0, origin_lat=30.07, origin_lon=31.02),
}


def preset(name: str, seed: int = 0) -> WorldSpec:
    try:
        return dataclasses.replace(PRESETS[name], seed=seed)
    except KeyError:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def parse_world_spec(stream: TextIO, base: WorldSpec | None = None) -> WorldSpec:
    """Read ``key=value`` lines (``#`` comments allowed) over ``base`` (default urban)."""
    fields = {f.name: f.type for f in dataclasses.fields(WorldSpec)}
    values = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            base = preset(value)
            continue
        if key not in fields:
            raise InvalidInputError(f"line {lineno}: unknown world parameter {key!r}")
        try:
            values[key] = int(value) if fields[key] in ("int", int) else float(value)
        except ValueError:
            raise InvalidInputError(f"line {lineno}: bad value {value!r} for {key}") from None
    return dataclasses.replace(base or PRESETS["urban"], **values)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible generator for one named purpose."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _derived_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(2**32))


@dataclass(frozen=True)
class ShadowField:
    spacing_m: float
    values: np.ndarray  # (rows, cols) Gaussian draws at lattice nodes

    def at(self, p: LocalPoint) -> float:
        gx = min(max(p.x / self.spacing_m, 0.0), self.values.shape[1] - 1.0)
        gy = min(max(p.y / self.spacing_m, 0.0), self.values.shape[0] - 1.0)
        c0, r0 = min(int(gx), self.values.shape[1] - 2), min(int(gy), self.values.shape[0] - 2)
        fx, fy = gx - c0, gy - r0
        v = self.values
        return float((1 - fy) * ((1 - fx) * v[r0, c0] + fx * v[r0, c0 + 1])
                     + fy * ((1 - fx) * v[r0 + 1, c0] + fx * v[r0 + 1, c0 + 1]))


@dataclass(frozen=True)
class World:
    spec: WorldSpec
    towers: tuple[tuple[str, LocalPoint], ...]
    shadow_fields: dict[str, ShadowField]

    @property
    def origin(self) -> GeoPoint:
        return GeoPoint(self.spec.origin_lat, self.spec.origin_lon)

    def tower(self, tower_id: str) -> LocalPoint:
        for tid, p in self.towers:
            if tid == tower_id:
                return p
        raise InvalidInputError(f"unknown tower {tower_id!r}")

    def __eq__(self, other):
        if not isinstance(other, World):
            return NotImplemented
        return (self.spec == other.spec and self.towers == other.towers
                and self.shadow_fields.keys() == other.shadow_fields.keys()
                and all(np.array_equal(self.shadow_fields[t].values, other.shadow_fields[t].values)
                        for t in self.shadow_fields))

    __hash__ = None


def _tower_id(i: int) -> str:
    # MCC-MNC-LAC-CID, the way GSM scanners print a global cell identity
    return f"602-01-{100 + i // 16}-{1001 + i}"


def generate_world(spec: WorldSpec) -> World:
    rng = substream(spec.seed, "world")
    n = spec.n_towers
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    sx, sy = spec.width_m / cols, spec.height_m / rows
    slots = sorted(rng.choice(rows * cols, size=n, replace=False).tolist())
    towers = []
    for i, slot in enumerate(slots):
        r, c = divmod(slot, cols)
        # odd rows shift half a spacing for a hexagon-like layout
        x = ((c + 0.5 + 0.5 * (r % 2)) * sx) % spec.width_m
        y = (r + 0.5) * sy
        x += rng.uniform(-0.25, 0.25) * sx
        y += rng.uniform(-0.25, 0.25) * sy
        x = min(max(x, 0.0), spec.width_m)
        y = min(max(y, 0.0), spec.height_m)
        towers.append((_tower_id(i), LocalPoint(x, y)))

    g = spec.shadow_grid_m
    shape = (math.ceil(spec.height_m / g) + 2, math.ceil(spec.width_m / g) + 2)
    fields = {tid: ShadowField(g, rng.normal(0.0, spec.shadow_sigma_db, size=shape))
              for tid, _ in towers}
    return World(spec, tuple(towers), fields)


def mean_rssi(world: World, p: LocalPoint, tower_id: str) -> float:
    """Path loss plus shadowing, before noise, sensitivity and quantization."""
    s = world.spec
    t = world.tower(tower_id)
    d = math.hypot(p.x - t.x, p.y - t.y)
    path = s.tx_power_dbm - 10.0 * s.path_loss_exponent * math.log10(max(d, s.d0_m) / s.d0_m)
    return path + world.shadow_fields[tower_id].at(p)


def rssi_at(world: World, p: LocalPoint, tower_id: str, noise_draw: float = 0.0) -> int | None:
    """Quantized reading, or None when the signal falls below receiver sensitivity."""
    raw = mean_rssi(world, p, tower_id) + noise_draw
    if raw < world.spec.sensitivity_dbm:
        return None
    return clamp_rssi(int(round(raw)))


def _scan_at(world: World, p: LocalPoint, noise: np.ndarray) -> list[TowerReading]:
    heard = []
    for (tid, _), eps in zip(world.towers, noise):
        v = rssi_at(world, p, tid, float(eps))
        if v is not None:
            heard.append((v, tid))
    heard.sort(key=lambda h: (-h[0], h[1]))
    heard = heard[: world.spec.max_towers_per_scan]
    return [TowerReading(tid, v, i == 0) for i, (v, tid) in enumerate(heard)]


def sample_route(route: Sequence[LocalPoint], spacing_m: float,
                 offset_m: float = 0.0) -> list[LocalPoint]:
    """Points every ``spacing_m`` along a polyline, starting ``offset_m`` in."""
    pts = [(p.x, p.y) for p in route]
    seg = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:])]
    total = math.fsum(seg)
    if total <= 0:
        raise InvalidInputError("route has zero length")
    n = math.floor((total - offset_m) / spacing_m + 1e-9) + 1
    out = []
    i, start = 0, 0.0
    for j in range(n):
        s = offset_m + j * spacing_m
        while i < len(seg) - 1 and s > start + seg[i]:
            start += seg[i]
            i += 1
        f = 0.0 if seg[i] == 0 else min(max((s - start) / seg[i], 0.0), 1.0)
        a, b = pts[i], pts[i + 1]
        out.append(LocalPoint(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])))
    return out


def synthesize_drive(world: World, route: Sequence[LocalPoint], speed_mps: float = 10.0,
                     rate_hz: float = 1.0, seed: int = 0, *, offset_m: float = 0.0,
                     first_scan_id: int = 0, start_ms: int = 0) -> Trace:
    """Scan the world every 1/rate_hz seconds while driving ``route`` at ``speed_mps``.

    Each scan keeps the strongest towers (at most seven), the strongest being
    the serving cell. Positions where nothing is heard produce no scan.
    """
    if len(route) < 2:
        raise InvalidInputError("route needs at least two waypoints")
    if not (speed_mps > 0 and rate_hz > 0):
        raise InvalidInputError("speed and rate must be positive")
    rng = substream(seed, "noise")
    positions = sample_route(route, speed_mps / rate_hz, offset_m)
    sigma = world.spec.meas_sigma_db
    origin = world.origin
    scans = []
    for j, p in enumerate(positions):
        noise = rng.normal(0.0, sigma, size=len(world.towers)) if sigma > 0 else \
            np.zeros(len(world.towers))
        readings = _scan_at(world, p, noise)
        if not readings:
            continue
        ts = start_ms + int(round(j * 1000.0 / rate_hz))
        scans.append(RssiScan(first_scan_id + j, ts, unproject(p, origin), tuple(readings)))
    return Trace(tuple(scans))


# -- street-lattice drives --------------------------------------------------------------

def _lattice(spec: WorldSpec) -> tuple[int, int]:
    return (int(spec.width_m // spec.street_spacing_m) + 1,
            int(spec.height_m // spec.street_spacing_m) + 1)


def _node_point(spec: WorldSpec, node: tuple[int, int]) -> LocalPoint:
    return LocalPoint(node[0] * spec.street_spacing_m, node[1] * spec.street_spacing_m)


def _neighbours(node, nx, ny):
    i, j = node
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        a, b = i + di, j + dj
        if 0 <= a < nx and 0 <= b < ny:
            yield (a, b)


def random_street_route(spec: WorldSpec, length_m: float, rng: np.random.Generator,
                        allowed_edges: set | None = None) -> list[LocalPoint]:
    """Random walk over the street lattice, avoiding U-turns where possible.

    With ``allowed_edges`` the walk stays on those edges (each a frozenset of
    two lattice nodes), e.g. to drive a test route over trained streets.
    """
    nx, ny = _lattice(spec)
    if nx < 2 and ny < 2:
        raise InvalidInputError("area too small for a street lattice")

    def options(node, prev):
        nbrs = [n for n in _neighbours(node, nx, ny)
                if allowed_edges is None or frozenset((node, n)) in allowed_edges]
        fwd = [n for n in nbrs if n != prev]
        return fwd or nbrs

    if allowed_edges:
        nodes = sorted({n for e in allowed_edges for n in e})
        node = nodes[rng.integers(len(nodes))]
    else:
        node = (int(rng.integers(nx)), int(rng.integers(ny)))
    path = [node]
    prev = None
    walked = 0.0
    while walked < length_m:
        opts = options(node, prev)
        if not opts:
            break
        nxt = opts[rng.integers(len(opts))]
        prev, node = node, nxt
        path.append(node)
        walked += spec.street_spacing_m
    return [_node_point(spec, n) for n in path]


def route_edges(spec: WorldSpec, route: Sequence[LocalPoint]) -> set:
    s = spec.street_spacing_m
    nodes = [(round(p.x / s), round(p.y / s)) for p in route]
    return {frozenset(e) for e in zip(nodes, nodes[1:]) if e[0] != e[1]}


@dataclass(frozen=True)
class Dataset:
    world: World
    train: Trace
    test: Trace


def make_dataset(spec: WorldSpec, train_len_m: float = 22_000.0, test_len_m: float = 6_000.0,
                 speed_mps: float = 10.0, rate_hz: float = 1.0) -> Dataset:
    """A world plus two independent drives: training, and testing over trained streets.

    Both drives start at a random phase so test positions do not coincide
    with training positions.
    """
    world = generate_world(spec)
    route_rng = substream(spec.seed, "route")
    step = speed_mps / rate_hz
    train_route = random_street_route(spec, train_len_m, route_rng)
    train = synthesize_drive(world, train_route, speed_mps, rate_hz,
                             seed=_derived_seed(spec.seed, "train-noise"),
                             offset_m=float(route_rng.uniform(0, step)))
    test_route = random_street_route(spec, test_len_m, route_rng,
                                     allowed_edges=route_edges(spec, train_route))
    test = synthesize_drive(world, test_route, speed_mps, rate_hz,
                            seed=_derived_seed(spec.seed, "test-noise"),
                            offset_m=float(route_rng.uniform(0, step)))
    return Dataset(world, train, test)
