"""Radio maps built from a training trace.

Three maps come out of the same war-driving data:

* :class:`ProbabilisticFingerprint` -- the area is cut into square cells and
  every cell pools the readings of all training scans that fall inside it
  into one RSSI histogram per tower.
* :class:`DeterministicFingerprint` -- one raw RSSI vector per training scan,
  searched by nearest neighbours.
* :class:`TowerDb` -- an estimated position for every tower, used by the
  cell-ID baseline.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import TextIO

import numpy as np

from .errors import FormatError, InvalidInputError
from .geo import GeoPoint, LocalPoint, centroid, project
from .trace_io import N_RSSI_BINS, RSSI_MAX, RSSI_MIN, Trace

FORMAT_VERSION = 1
# Last line of a fingerprint file; its absence means the file was cut short.
END_MARKER = "#end"
DEFAULT_ALPHA = 1.0
DEFAULT_CELL_LENGTH_M = 20.0
# Tower positions average the scans heard within this margin of the peak.
TOWER_DB_MARGIN_DB = 5


@dataclass(frozen=True)
class GridSpec:
    origin: GeoPoint
    min_corner: LocalPoint
    cell_length_m: float
    n_cols: int
    n_rows: int

    def __post_init__(self):
        if not (self.cell_length_m > 0 and math.isfinite(self.cell_length_m)):
            raise InvalidInputError("cell_length_m must be positive")
        if self.n_cols < 1 or self.n_rows < 1:
            raise InvalidInputError("grid needs at least one row and column")

    def cell_of(self, p: LocalPoint) -> tuple[int, int]:
        """(row, col) of ``p``; boundaries belong to the higher-index cell."""
        row = math.floor((p.y - self.min_corner.y) / self.cell_length_m)
        col = math.floor((p.x - self.min_corner.x) / self.cell_length_m)
        return row, col

    def contains_index(self, index: tuple[int, int]) -> bool:
        row, col = index
        return 0 <= row < self.n_rows and 0 <= col < self.n_cols

    def cell_center(self, index: tuple[int, int]) -> LocalPoint:
        row, col = index
        L = self.cell_length_m
        return LocalPoint(self.min_corner.x + (col + 0.5) * L,
                          self.min_corner.y + (row + 0.5) * L)


@dataclass
class TowerHistogram:
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, rssi: int, n: int = 1) -> None:
        if not RSSI_MIN <= rssi <= RSSI_MAX:
            raise InvalidInputError(f"rssi {rssi} outside [{RSSI_MIN}, {RSSI_MAX}]")
        self.counts[rssi] = self.counts.get(rssi, 0) + n


def smoothed_prob(h: TowerHistogram, rssi: int, alpha: float = DEFAULT_ALPHA) -> float:
    """Laplace-smoothed P(rssi) over the 63 integer dBm bins."""
    if not RSSI_MIN <= rssi <= RSSI_MAX:
        raise InvalidInputError(f"rssi {rssi} outside [{RSSI_MIN}, {RSSI_MAX}]")
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    return (h.counts.get(rssi, 0) + alpha) / (h.total + alpha * N_RSSI_BINS)


@dataclass
class FingerprintCell:
    cell_index: tuple[int, int]
    rep_location: LocalPoint
    sample_count: int
    histograms: dict[str, TowerHistogram] = field(default_factory=dict)


@dataclass
class ProbabilisticFingerprint:
    grid: GridSpec
    cells: dict[tuple[int, int], FingerprintCell]
    alpha: float = DEFAULT_ALPHA
    n_bins: int = N_RSSI_BINS

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")
        if self.n_bins != N_RSSI_BINS:
            raise InvalidInputError(f"n_bins must be {N_RSSI_BINS}")

    # The dense tables below are derived once and reused by every locate
    # call; a fingerprint must not be mutated after they are first read.

    @cached_property
    def cell_order(self) -> list[tuple[int, int]]:
        return sorted(self.cells)

    @cached_property
    def tower_index(self) -> dict[str, int]:
        towers = sorted({t for c in self.cells.values() for t in c.histograms})
        return {t: i for i, t in enumerate(towers)}

    @cached_property
    def rep_array(self) -> np.ndarray:
        return np.array([[self.cells[i].rep_location.x, self.cells[i].rep_location.y]
                         for i in self.cell_order], dtype=float).reshape(-1, 2)

    @cached_property
    def log_table(self) -> np.ndarray:
        """log smoothed_prob with shape (tower, rssi bin, cell)."""
        a = self.alpha
        n_cells, n_towers = len(self.cell_order), len(self.tower_index)
        counts = np.zeros((n_towers, N_RSSI_BINS, n_cells))
        for c, idx in enumerate(self.cell_order):
            for tower, h in self.cells[idx].histograms.items():
                t = self.tower_index[tower]
                for rssi, n in h.counts.items():
                    counts[t, rssi - RSSI_MIN, c] = n
        totals = counts.sum(axis=1, keepdims=True)
        return np.log((counts + a) / (totals + a * N_RSSI_BINS))

    @property
    def unknown_log_prob(self) -> float:
        """Score of a tower that a cell has never heard."""
        return math.log(self.alpha / (self.alpha * N_RSSI_BINS))


@dataclass
class DeterministicFingerprint:
    origin: GeoPoint
    points: list[tuple[LocalPoint, dict[str, int]]]

    @cached_property
    def tower_index(self) -> dict[str, int]:
        towers = sorted({t for _, v in self.points for t in v})
        return {t: i for i, t in enumerate(towers)}

    @cached_property
    def matrix(self) -> np.ndarray:
        """RSSI matrix (point, tower), missing readings at the receiver floor."""
        m = np.full((len(self.points), len(self.tower_index)), float(RSSI_MIN))
        for i, (_, vec) in enumerate(self.points):
            for tower, rssi in vec.items():
                m[i, self.tower_index[tower]] = rssi
        return m

    @cached_property
    def locations(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p, _ in self.points], dtype=float).reshape(-1, 2)


@dataclass
class TowerDb:
    origin: GeoPoint
    towers: dict[str, LocalPoint]


def _require_truth(trace: Trace) -> list[GeoPoint]:
    if len(trace) == 0:
        raise InvalidInputError("empty training trace")
    return trace.truths()


def trace_origin(trace: Trace) -> GeoPoint:
    """Projection origin used by every map: the centroid of the truth positions."""
    return centroid(_require_truth(trace))


def build_grid(trace: Trace, cell_length_m: float = DEFAULT_CELL_LENGTH_M) -> GridSpec:
    if not cell_length_m > 0:
        raise InvalidInputError("cell_length_m must be positive")
    truths = _require_truth(trace)
    origin = centroid(truths)
    pts = [project(p, origin) for p in truths]
    min_x = min(p.x for p in pts)
    min_y = min(p.y for p in pts)
    max_x = max(p.x for p in pts)
    max_y = max(p.y for p in pts)
    n_cols = math.floor((max_x - min_x) / cell_length_m) + 1
    n_rows = math.floor((max_y - min_y) / cell_length_m) + 1
    return GridSpec(origin, LocalPoint(min_x, min_y), float(cell_length_m), n_cols, n_rows)


def build_probabilistic_fingerprint(trace: Trace, grid: GridSpec,
                                    alpha: float = DEFAULT_ALPHA) -> ProbabilisticFingerprint:
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    truths = _require_truth(trace)
    members: dict[tuple[int, int], list[LocalPoint]] = {}
    hists: dict[tuple[int, int], dict[str, TowerHistogram]] = {}
    for scan, truth in zip(trace.scans, truths):
        p = project(truth, grid.origin)
        idx = grid.cell_of(p)
        if not grid.contains_index(idx):
            raise InvalidInputError(f"scan {scan.scan_id} falls outside the grid")
        members.setdefault(idx, []).append(p)
        cell_hists = hists.setdefault(idx, {})
        for r in scan.readings:
            cell_hists.setdefault(r.tower_id, TowerHistogram()).add(r.rssi_dbm)

    cells = {}
    for idx, pts in members.items():
        rep = LocalPoint(math.fsum(p.x for p in pts) / len(pts),
                         math.fsum(p.y for p in pts) / len(pts))
        cells[idx] = FingerprintCell(idx, rep, len(pts), hists[idx])
    return ProbabilisticFingerprint(grid, cells, float(alpha))


def build_fingerprint(trace: Trace, cell_length_m: float = DEFAULT_CELL_LENGTH_M,
                      alpha: float = DEFAULT_ALPHA) -> ProbabilisticFingerprint:
    return build_probabilistic_fingerprint(trace, build_grid(trace, cell_length_m), alpha)


def build_deterministic_fingerprint(trace: Trace,
                                    origin: GeoPoint | None = None) -> DeterministicFingerprint:
    truths = _require_truth(trace)
    if origin is None:
        origin = centroid(truths)
    points = [(project(t, origin), s.as_dict()) for s, t in zip(trace.scans, truths)]
    return DeterministicFingerprint(origin, points)


def build_tower_db(trace: Trace, origin: GeoPoint | None = None) -> TowerDb:
    """Place each tower at the mean position of the scans that hear it near its peak RSSI.

    This is a heuristic stand-in for an operator's tower database.
    """
    truths = _require_truth(trace)
    if origin is None:
        origin = centroid(truths)
    heard: dict[str, list[tuple[int, LocalPoint]]] = {}
    for scan, truth in zip(trace.scans, truths):
        p = project(truth, origin)
        for r in scan.readings:
            heard.setdefault(r.tower_id, []).append((r.rssi_dbm, p))
    towers = {}
    for tower, obs in heard.items():
        peak = max(rssi for rssi, _ in obs)
        near = [p for rssi, p in obs if rssi >= peak - TOWER_DB_MARGIN_DB]
        towers[tower] = LocalPoint(math.fsum(p.x for p in near) / len(near),
                                   math.fsum(p.y for p in near) / len(near))
    return TowerDb(origin, towers)


# -- serialization -------------------------------------------------------------

def save_fingerprint(fp: ProbabilisticFingerprint, stream: TextIO) -> None:
    g = fp.grid
    for c in fp.cells.values():
        for tower in c.histograms:
            if "," in tower or "\n" in tower or "\r" in tower:
                raise InvalidInputError(f"tower id {tower!r} cannot be stored in a fingerprint file")
    n_hist = sum(len(c.histograms[t].counts) for c in fp.cells.values() for t in c.histograms)
    stream.write(f"#version={FORMAT_VERSION}\n")
    stream.write(f"#origin_lat={g.origin.lat!r},#origin_lon={g.origin.lon!r}\n")
    stream.write(f"#min_x={g.min_corner.x!r},#min_y={g.min_corner.y!r},"
                 f"#cell_length={g.cell_length_m!r},#n_cols={g.n_cols},#n_rows={g.n_rows},"
                 f"#alpha={fp.alpha!r}\n")
    stream.write(f"#n_cells={len(fp.cells)},#n_histogram_rows={n_hist}\n")
    for idx in fp.cell_order:
        c = fp.cells[idx]
        stream.write(f"C,{idx[0]},{idx[1]},{c.rep_location.x!r},{c.rep_location.y!r},"
                     f"{c.sample_count}\n")
    for idx in fp.cell_order:
        c = fp.cells[idx]
        for tower in sorted(c.histograms):
            for rssi, n in sorted(c.histograms[tower].counts.items()):
                stream.write(f"H,{idx[0]},{idx[1]},{tower},{rssi},{n}\n")
    stream.write(f"{END_MARKER}\n")


def _header_fields(line: str, lineno: int) -> dict[str, str]:
    out = {}
    for part in line.strip().split(","):
        if not part.startswith("#") or "=" not in part:
            raise FormatError(f"bad header field {part!r}", lineno)
        key, value = part[1:].split("=", 1)
        out[key] = value
    return out


def load_fingerprint(stream: TextIO) -> ProbabilisticFingerprint:
    """Parse a fingerprint file; any inconsistency raises :class:`FormatError`."""
    try:
        lines = stream.read().splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8: {exc}") from None
    header: dict[str, str] = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#") or line == END_MARKER:
            body_start = i
            break
        header.update(_header_fields(line, i + 1))
    else:
        body_start = len(lines)

    if header.get("version") != str(FORMAT_VERSION):
        raise FormatError(f"unsupported fingerprint version {header.get('version')!r}", 1)
    try:
        origin = GeoPoint(float(header["origin_lat"]), float(header["origin_lon"]))
        grid = GridSpec(origin, LocalPoint(float(header["min_x"]), float(header["min_y"])),
                        float(header["cell_length"]), int(header["n_cols"]),
                        int(header["n_rows"]))
        alpha = float(header["alpha"])
        n_cells = int(header["n_cells"])
        n_hist = int(header["n_histogram_rows"])
    except KeyError as exc:
        raise FormatError(f"missing header field {exc.args[0]}") from None
    except (ValueError, InvalidInputError) as exc:
        raise FormatError(f"bad header value: {exc}") from None

    while lines and not lines[-1]:
        lines.pop()
    if not lines or lines[-1] != END_MARKER:
        raise FormatError(f"truncated fingerprint: missing {END_MARKER} line")
    cells: dict[tuple[int, int], FingerprintCell] = {}
    seen_hist = 0
    for lineno, line in enumerate(lines[body_start:-1], start=body_start + 1):
        if not line:
            continue
        parts = line.split(",")
        try:
            if parts[0] == "C" and len(parts) == 6:
                idx = (int(parts[1]), int(parts[2]))
                if idx in cells or not grid.contains_index(idx):
                    raise FormatError(f"duplicate or out-of-grid cell {idx}", lineno)
                count = int(parts[5])
                if count < 1:
                    raise FormatError("cell sample_count must be positive", lineno)
                cells[idx] = FingerprintCell(idx, LocalPoint(float(parts[3]), float(parts[4])),
                                             count)
            elif parts[0] == "H" and len(parts) == 6:
                idx = (int(parts[1]), int(parts[2]))
                if idx not in cells:
                    raise FormatError(f"histogram row for unknown cell {idx}", lineno)
                tower, rssi, n = parts[3], int(parts[4]), int(parts[5])
                if not tower or n < 1:
                    raise FormatError("bad histogram row", lineno)
                h = cells[idx].histograms.setdefault(tower, TowerHistogram())
                if rssi in h.counts:
                    raise FormatError("duplicate histogram bin", lineno)
                h.add(rssi, n)
                seen_hist += 1
            else:
                raise FormatError(f"unrecognised row {line!r}", lineno)
        except (ValueError, InvalidInputError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(str(exc), lineno) from None

    if len(cells) != n_cells or seen_hist != n_hist:
        raise FormatError(
            f"truncated fingerprint: expected {n_cells} cells / {n_hist} histogram rows, "
            f"found {len(cells)} / {seen_hist}")
    for c in cells.values():
        for h in c.histograms.values():
            if h.total > c.sample_count:
                raise FormatError(f"cell {c.cell_index} histogram exceeds its sample count")
    try:
        return ProbabilisticFingerprint(grid, cells, alpha)
    except InvalidInputError as exc:
        raise FormatError(str(exc)) from None


def fingerprint_to_text(fp: ProbabilisticFingerprint) -> str:
    buf = io.StringIO()
    save_fingerprint(fp, buf)
    return buf.getvalue()
