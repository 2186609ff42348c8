"""Online location estimators.

All estimators return a :class:`LocationEstimate` carrying the local-frame
position, its GPS equivalent, the candidates that contributed and the
wall-clock time the estimate took.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Mapping, Sequence, Union

import numpy as np

from .errors import InvalidInputError, NotLocatableError
from .fingerprint import DeterministicFingerprint, ProbabilisticFingerprint, TowerDb
from .geo import GeoPoint, LocalPoint, unproject
from .trace_io import RSSI_MIN, RssiScan

ALL = "ALL"
KParam = Union[int, str]


class Method(str, Enum):
    CELLSENSE = "cellsense"
    KNN = "knn"
    CELLID = "cellid"
    GP = "gp"


@dataclass(frozen=True)
class EstimatorParams:
    k: KParam = ALL
    n_samples: int = 1

    def __post_init__(self):
        if self.k != ALL and not (isinstance(self.k, int) and self.k >= 1):
            raise InvalidInputError(f"k must be a positive integer or {ALL!r}, got {self.k!r}")
        if not (isinstance(self.n_samples, int) and self.n_samples >= 1):
            raise InvalidInputError("n_samples must be a positive integer")


def parse_k(text: str) -> KParam:
    if text.strip().upper() == ALL:
        return ALL
    try:
        k = int(text)
    except ValueError:
        raise InvalidInputError(f"k must be a positive integer or ALL, got {text!r}") from None
    if k < 1:
        raise InvalidInputError(f"k must be positive, got {k}")
    return k


@dataclass(frozen=True)
class LocationEstimate:
    location: LocalPoint
    geo: GeoPoint
    method: Method
    top_candidates: tuple[tuple[Hashable, float], ...] = field(default=())
    elapsed_ns: int = 1


def _elapsed_since(t0: int) -> int:
    return max(1, time.perf_counter_ns() - t0)


# -- CellSense ------------------------------------------------------------------

def _window_log_likelihood(fp: ProbabilisticFingerprint, scans: Sequence[RssiScan]) -> np.ndarray:
    if not fp.cells:
        raise InvalidInputError("empty fingerprint")
    if not scans:
        raise InvalidInputError("need at least one scan")
    table = fp.log_table
    tower_index = fp.tower_index
    total = np.zeros(len(fp.cell_order))
    # sum within each scan first so that repeating a scan scales its term exactly
    for scan in scans:
        per_scan = np.zeros(len(fp.cell_order))
        for r in scan.readings:
            t = tower_index.get(r.tower_id)
            if t is None:
                per_scan += fp.unknown_log_prob
            else:
                per_scan += table[t, r.rssi_dbm - RSSI_MIN]
        total += per_scan
    return total


def log_posterior(fp: ProbabilisticFingerprint,
                  scans: Sequence[RssiScan]) -> dict[tuple[int, int], float]:
    """log P(s | cell) for every stored cell, summed over all readings of all scans.

    A tower the cell never heard scores as an empty smoothed histogram.
    Towers missing from the scans contribute nothing.
    """
    ll = _window_log_likelihood(fp, scans)
    return {idx: float(v) for idx, v in zip(fp.cell_order, ll)}


def _resolve_k(k: KParam, n: int) -> int:
    return n if k == ALL else min(int(k), n)


def select_top_k(log_lik: np.ndarray, k: KParam,
                 prior: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the K most probable candidates and their normalized weights.

    Likelihoods are exponentiated after subtracting their maximum, then scaled
    by ``prior`` if given. Equal posteriors keep candidate order, so callers
    pass candidates already sorted by their tie-break key.
    """
    n = len(log_lik)
    k = _resolve_k(k, n)
    rel = np.exp(log_lik - np.max(log_lik))
    if prior is not None:
        rel = rel * prior
    order = np.argsort(-rel, kind="stable")
    top = order[:k]
    w = rel[top]
    s = w.sum()
    if not s > 0:
        raise NotLocatableError("all candidate weights are zero")
    return top, w / s


def weighted_centroid(locs: np.ndarray, weights: np.ndarray) -> LocalPoint:
    return LocalPoint(float(weights @ locs[:, 0]), float(weights @ locs[:, 1]))


def _prior_array(fp: ProbabilisticFingerprint, prior: Mapping | None) -> np.ndarray | None:
    if prior is None:
        return None
    arr = np.array([float(prior.get(idx, 0.0)) for idx in fp.cell_order])
    if np.any(arr < 0) or not np.isfinite(arr).all():
        raise InvalidInputError("prior weights must be finite and non-negative")
    return arr


def cellsense_locate(fp: ProbabilisticFingerprint, scans: Sequence[RssiScan],
                     params: EstimatorParams = EstimatorParams(),
                     prior: Mapping[tuple[int, int], float] | None = None,
                     _log_offset: float = 0.0) -> LocationEstimate:
    """Weighted centroid of the K most probable cells given N successive scans.

    ``prior`` optionally weights cells (uniform if omitted). ``_log_offset``
    is added to every cell's log-likelihood and exists only so tests can
    check that a common factor cancels.
    """
    t0 = time.perf_counter_ns()
    if len(scans) != params.n_samples:
        raise InvalidInputError(
            f"expected {params.n_samples} scans, got {len(scans)}")
    ll = _window_log_likelihood(fp, scans)
    if _log_offset:
        ll = ll + _log_offset
    top, w = select_top_k(ll, params.k, _prior_array(fp, prior))
    loc = weighted_centroid(fp.rep_array[top], w)
    cands = tuple((fp.cell_order[i], float(wi)) for i, wi in zip(top, w))
    geo = unproject(loc, fp.grid.origin)
    return LocationEstimate(loc, geo, Method.CELLSENSE, cands, _elapsed_since(t0))


# -- deterministic KNN --------------------------------------------------------------

def knn_distances(dfp: DeterministicFingerprint, scan: RssiScan) -> np.ndarray:
    """Euclidean RSSI-space distance from ``scan`` to every fingerprint point.

    Towers missing on either side are read as the -113 dBm receiver floor.
    """
    m = dfp.matrix
    vec = np.full(m.shape[1], float(RSSI_MIN))
    extra = 0.0
    for r in scan.readings:
        t = dfp.tower_index.get(r.tower_id)
        if t is None:
            extra += float(r.rssi_dbm - RSSI_MIN) ** 2
        else:
            vec[t] = r.rssi_dbm
    d2 = ((m - vec) ** 2).sum(axis=1) + extra
    return np.sqrt(d2)


def knn_locate(dfp: DeterministicFingerprint, scan: RssiScan, k: int = 3) -> LocationEstimate:
    t0 = time.perf_counter_ns()
    if not dfp.points:
        raise InvalidInputError("empty deterministic fingerprint")
    if not (isinstance(k, int) and k >= 1):
        raise InvalidInputError("k must be a positive integer")
    d = knn_distances(dfp, scan)
    nearest = np.argsort(d, kind="stable")[: min(k, len(d))]
    locs = dfp.locations[nearest]
    loc = LocalPoint(math.fsum(locs[:, 0]) / len(nearest), math.fsum(locs[:, 1]) / len(nearest))
    w = 1.0 / len(nearest)
    cands = tuple((int(i), w) for i in nearest)
    return LocationEstimate(loc, unproject(loc, dfp.origin), Method.KNN, cands, _elapsed_since(t0))


# -- cell-ID ------------------------------------------------------------------------

def cellid_locate(db: TowerDb, scan: RssiScan) -> LocationEstimate:
    """Position of the serving tower, or of the strongest tower the database knows."""
    t0 = time.perf_counter_ns()
    serving = scan.serving
    if serving is not None and serving.tower_id in db.towers:
        chosen = serving.tower_id
    else:
        known = [r for r in scan.readings if r.tower_id in db.towers]
        if not known:
            raise NotLocatableError(f"no tower of scan {scan.scan_id} is in the tower database")
        chosen = min(known, key=lambda r: (-r.rssi_dbm, r.tower_id)).tower_id
    loc = db.towers[chosen]
    return LocationEstimate(loc, unproject(loc, db.origin), Method.CELLID,
                            ((chosen, 1.0),), _elapsed_since(t0))
