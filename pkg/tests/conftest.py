import os
import sys

import pytest

from cellsense.geo import GeoPoint, LocalPoint, unproject
from cellsense.simworld import make_dataset, preset
from cellsense.trace_io import RssiScan, TowerReading, Trace

sys.path.insert(0, os.path.dirname(__file__))

ORIGIN = GeoPoint(30.0, 31.0)


def reading(tower, rssi, serving=False):
    return TowerReading(tower, rssi, serving)


def scan_at(scan_id, x, y, readings, origin=ORIGIN, ts=None):
    """Scan whose ground truth sits at local (x, y) relative to ``origin``."""
    truth = None if x is None else unproject(LocalPoint(x, y), origin)
    rs = tuple(r if isinstance(r, TowerReading) else reading(*r) for r in readings)
    return RssiScan(scan_id, scan_id * 1000 if ts is None else ts, truth, rs)


def trace_of(*scans):
    return Trace(tuple(scans))


@pytest.fixture(scope="session")
def urban0():
    return make_dataset(preset("urban", 0))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion, ok, detail=""):
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
