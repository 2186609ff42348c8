"""War-driving trace files.

A trace is stored in long form, one row per tower reading::

    scan_id,timestamp_ms,lat,lon,tower_id,rssi_dbm,serving
    0,0,31.200000000,29.900000000,602-01-100-1001,-71,1
    0,0,31.200000000,29.900000000,602-01-100-1002,-88,0

Rows of one scan may be scattered through the file but must agree on the
timestamp and position. Position columns are either both set or both empty
(live scans carry no ground truth).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import FormatError, InvalidInputError
from .geo import GeoPoint

RSSI_MIN = -113
RSSI_MAX = -51
N_RSSI_BINS = RSSI_MAX - RSSI_MIN + 1

HEADER = ("scan_id", "timestamp_ms", "lat", "lon", "tower_id", "rssi_dbm", "serving")


@dataclass(frozen=True)
class TowerReading:
    tower_id: str
    rssi_dbm: int
    serving: bool = False

    def __post_init__(self):
        if not self.tower_id:
            raise InvalidInputError("empty tower_id")
        if not RSSI_MIN <= self.rssi_dbm <= RSSI_MAX:
            raise InvalidInputError(
                f"rssi {self.rssi_dbm} outside [{RSSI_MIN}, {RSSI_MAX}]"
            )


@dataclass(frozen=True)
class RssiScan:
    scan_id: int
    timestamp_ms: int
    truth: GeoPoint | None
    readings: tuple[TowerReading, ...]

    def __post_init__(self):
        object.__setattr__(self, "readings", tuple(self.readings))
        if self.scan_id < 0 or self.timestamp_ms < 0:
            raise InvalidInputError("scan_id and timestamp_ms must be non-negative")
        if not self.readings:
            raise InvalidInputError(f"scan {self.scan_id} has no readings")
        ids = [r.tower_id for r in self.readings]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"scan {self.scan_id} repeats a tower")
        if sum(r.serving for r in self.readings) > 1:
            raise InvalidInputError(f"scan {self.scan_id} has more than one serving tower")

    def as_dict(self) -> dict[str, int]:
        return {r.tower_id: r.rssi_dbm for r in self.readings}

    @property
    def serving(self) -> TowerReading | None:
        for r in self.readings:
            if r.serving:
                return r
        return None


@dataclass(frozen=True)
class Trace:
    scans: tuple[RssiScan, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scans", tuple(self.scans))
        seen = set()
        prev = -1
        for s in self.scans:
            if s.scan_id in seen:
                raise InvalidInputError(f"duplicate scan_id {s.scan_id}")
            if s.timestamp_ms < prev:
                raise InvalidInputError("scans are not ordered by timestamp")
            seen.add(s.scan_id)
            prev = s.timestamp_ms

    def __len__(self):
        return len(self.scans)

    def __iter__(self):
        return iter(self.scans)

    def truths(self) -> list[GeoPoint]:
        """Ground-truth positions, failing on the first scan without one."""
        out = []
        for s in self.scans:
            if s.truth is None:
                raise InvalidInputError(f"scan {s.scan_id} has no ground-truth position")
            out.append(s.truth)
        return out


@dataclass
class ParseReport:
    n_rows: int = 0
    n_clamped: int = 0
    # first line number at which each scan_id appeared, for error messages
    scan_lines: dict[int, int] = field(default_factory=dict)


def clamp_rssi(value: int) -> int:
    return min(RSSI_MAX, max(RSSI_MIN, value))


def _parse_uint(text: str, name: str, line: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise FormatError(f"{name} {text!r} is not an integer", line) from None
    if value < 0:
        raise FormatError(f"{name} {value} is negative", line)
    return value


def _parse_position(lat: str, lon: str, line: int) -> GeoPoint | None:
    lat, lon = lat.strip(), lon.strip()
    if not lat and not lon:
        return None
    if not lat or not lon:
        raise FormatError("lat and lon must both be set or both be empty", line)
    try:
        flat, flon = float(lat), float(lon)
    except ValueError:
        raise FormatError(f"non-numeric position ({lat!r}, {lon!r})", line) from None
    try:
        return GeoPoint(flat, flon)
    except InvalidInputError as exc:
        raise FormatError(str(exc), line) from None


def parse_trace_with_report(stream: TextIO) -> tuple[Trace, ParseReport]:
    report = ParseReport()
    try:
        rows = list(csv.reader(stream))
    except (csv.Error, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable CSV: {exc}") from None
    if not rows:
        raise FormatError("missing header", 1)
    if tuple(c.strip() for c in rows[0]) != HEADER:
        raise FormatError(f"expected header {','.join(HEADER)}", 1)

    meta: dict[int, tuple[int, GeoPoint | None]] = {}
    readings: dict[int, list[TowerReading]] = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise FormatError(f"expected {len(HEADER)} fields, got {len(row)}", line)
        sid = _parse_uint(row[0], "scan_id", line)
        ts = _parse_uint(row[1], "timestamp_ms", line)
        truth = _parse_position(row[2], row[3], line)
        tower = row[4].strip()
        if not tower:
            raise FormatError("empty tower_id", line)
        try:
            rssi = int(row[5])
        except ValueError:
            raise FormatError(f"rssi_dbm {row[5]!r} is not an integer", line) from None
        if row[6].strip() not in ("0", "1"):
            raise FormatError(f"serving must be 0 or 1, got {row[6]!r}", line)
        serving = row[6].strip() == "1"

        if sid in meta:
            if meta[sid] != (ts, truth):
                raise FormatError(f"scan {sid} rows disagree on timestamp or position", line)
            if any(r.tower_id == tower for r in readings[sid]):
                raise FormatError(f"duplicate tower {tower} in scan {sid}", line)
            if serving and any(r.serving for r in readings[sid]):
                raise FormatError(f"scan {sid} has more than one serving tower", line)
        else:
            meta[sid] = (ts, truth)
            readings[sid] = []
            report.scan_lines[sid] = line

        clamped = clamp_rssi(rssi)
        if clamped != rssi:
            report.n_clamped += 1
        readings[sid].append(TowerReading(tower, clamped, serving))
        report.n_rows += 1

    # dicts keep first-appearance order; the sort is stable
    order = sorted(meta, key=lambda sid: meta[sid][0])
    scans = [RssiScan(sid, meta[sid][0], meta[sid][1], tuple(readings[sid])) for sid in order]
    return Trace(tuple(scans)), report


def parse_trace(stream: TextIO) -> Trace:
    return parse_trace_with_report(stream)[0]


def read_trace(path) -> tuple[Trace, ParseReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_trace_with_report(fh)


def format_degrees(value: float) -> str:
    """Shortest fixed-point rendering with at least 6 decimals that parses back exactly."""
    for places in range(6, 30):
        text = f"{value:.{places}f}"
        if float(text) == value:
            return text
    return repr(value)


def write_trace(trace: Trace, stream: TextIO | None = None) -> TextIO:
    """Write ``trace`` as CSV to ``stream`` (a new StringIO if omitted) and return the stream."""
    if stream is None:
        stream = io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HEADER)
    for s in trace.scans:
        if s.truth is None:
            lat = lon = ""
        else:
            lat, lon = format_degrees(s.truth.lat), format_degrees(s.truth.lon)
        for r in s.readings:
            writer.writerow((s.scan_id, s.timestamp_ms, lat, lon, r.tower_id,
                             r.rssi_dbm, 1 if r.serving else 0))
    return stream


def trace_to_text(trace: Trace) -> str:
    return write_trace(trace).getvalue()


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_trace(trace, fh)


def split_train_test(trace: Trace, test_fraction: float, seed: int) -> tuple[Trace, Trace]:
    """Random partition by scan; both halves keep the original scan order."""
    n = len(trace)
    if n < 2:
        raise InvalidInputError("need at least 2 scans to split")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError("test_fraction must lie in (0, 1)")
    n_test = int(round(test_fraction * n))
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(n)[:n_test].tolist())
    train = [s for i, s in enumerate(trace.scans) if i not in test_idx]
    test = [s for i, s in enumerate(trace.scans) if i in test_idx]
    return Trace(tuple(train)), Trace(tuple(test))


def concat_traces(traces: Iterable[Trace]) -> Trace:
    return Trace(tuple(s for t in traces for s in t.scans))
