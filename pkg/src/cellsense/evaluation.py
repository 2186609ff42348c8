"""Accuracy and runtime evaluation, parameter sweeps and the four-way comparison."""

from __future__ import annotations

import csv
import hashlib
import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

from .errors import InvalidInputError, NotLocatableError
from .estimators import (
    ALL,
    EstimatorParams,
    KParam,
    LocationEstimate,
    Method,
    cellid_locate,
    cellsense_locate,
    knn_locate,
)
from .fingerprint import (
    DEFAULT_ALPHA,
    DEFAULT_CELL_LENGTH_M,
    ProbabilisticFingerprint,
    build_deterministic_fingerprint,
    build_fingerprint,
    build_tower_db,
)
from .geo import distance, project, LocalPoint
from .gp import GpLocator, fit_tower_models, gp_locate
from .trace_io import RssiScan, Trace

DEFAULT_KNN_K = 3
REPORT_HEADER = ("method", "param_k", "param_n", "cell_length", "n", "median_m", "mean_m",
                 "mean_runtime_ns")

LocateFn = Callable[[Sequence[RssiScan]], LocationEstimate]


@dataclass
class EvalReport:
    method: str
    n_estimates: int
    median_error_m: float
    mean_error_m: float
    error_cdf: list[tuple[float, float]]
    mean_runtime_ns: float
    params: EstimatorParams = EstimatorParams()
    cell_length_m: float | None = None
    n_not_locatable: int = 0
    windows_digest: str = ""
    errors_m: list[float] = field(default_factory=list, repr=False)

    def cdf_at(self, error_m: float) -> float:
        frac = 0.0
        for e, f in self.error_cdf:
            if e <= error_m:
                frac = f
            else:
                break
        return frac


def windows(trace: Trace, n: int) -> list[tuple[RssiScan, ...]]:
    """Consecutive, non-overlapping groups of ``n`` scans; a short tail is dropped."""
    if n < 1:
        raise InvalidInputError("window size must be positive")
    scans = trace.scans
    return [tuple(scans[i:i + n]) for i in range(0, len(scans) - n + 1, n)]


def windows_digest(wins: Iterable[Sequence[RssiScan]]) -> str:
    h = hashlib.sha256()
    for w in wins:
        h.update((",".join(str(s.scan_id) for s in w) + ";").encode())
    return h.hexdigest()


def error_cdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    xs = sorted(errors)
    n = len(xs)
    out: list[tuple[float, float]] = []
    for i, e in enumerate(xs, start=1):
        if out and out[-1][0] == e:
            out[-1] = (e, i / n)
        else:
            out.append((e, i / n))
    return out


def localization_error(est: LocationEstimate, scan: RssiScan) -> float:
    """Meters between the estimate and the scan's ground truth."""
    if scan.truth is None:
        raise InvalidInputError(f"scan {scan.scan_id} has no ground truth")
    return distance(project(est.geo, scan.truth), LocalPoint(0.0, 0.0))


def evaluate(locate_fn: LocateFn, test_trace: Trace,
             params: EstimatorParams = EstimatorParams(), *, method: str | None = None,
             cell_length_m: float | None = None) -> EvalReport:
    """Run ``locate_fn`` on every N-scan window of ``test_trace``.

    The truth of a window is that of its last scan. Windows the estimator
    cannot locate are counted in ``n_not_locatable`` and left out of the
    error statistics.
    """
    if len(test_trace) == 0:
        raise InvalidInputError("empty test trace")
    test_trace.truths()
    wins = windows(test_trace, params.n_samples)
    errors, runtimes = [], []
    failed = 0
    seen_method = method
    for w in wins:
        try:
            est = locate_fn(w)
        except NotLocatableError:
            failed += 1
            continue
        seen_method = seen_method or est.method.value
        errors.append(localization_error(est, w[-1]))
        runtimes.append(est.elapsed_ns)
    return EvalReport(
        method=seen_method or "unknown",
        n_estimates=len(errors),
        median_error_m=statistics.median(errors) if errors else math.nan,
        mean_error_m=math.fsum(errors) / len(errors) if errors else math.nan,
        error_cdf=error_cdf(errors),
        mean_runtime_ns=math.fsum(runtimes) / len(runtimes) if runtimes else math.nan,
        params=params,
        cell_length_m=cell_length_m,
        n_not_locatable=failed,
        windows_digest=windows_digest(wins),
        errors_m=errors,
    )


def cellsense_fn(fp: ProbabilisticFingerprint, params: EstimatorParams) -> LocateFn:
    return lambda w: cellsense_locate(fp, w, params)


def sweep_k(fp: ProbabilisticFingerprint, test: Trace,
            ks: Sequence[KParam]) -> list[tuple[KParam, float]]:
    rows = []
    for k in ks:
        p = EstimatorParams(k=k, n_samples=1)
        r = evaluate(cellsense_fn(fp, p), test, p, cell_length_m=fp.grid.cell_length_m)
        rows.append((k, r.median_error_m))
    return rows


def sweep_grid(train: Trace, test: Trace, lengths: Sequence[float],
               alpha: float = DEFAULT_ALPHA) -> list[tuple[float, float, int]]:
    rows = []
    p = EstimatorParams(k=ALL, n_samples=1)
    for length in lengths:
        fp = build_fingerprint(train, length, alpha)
        r = evaluate(cellsense_fn(fp, p), test, p, cell_length_m=length)
        rows.append((length, r.median_error_m, len(fp.cells)))
    return rows


def sweep_n(fp: ProbabilisticFingerprint, test: Trace,
            ns: Sequence[int]) -> list[tuple[int, float]]:
    rows = []
    for n in ns:
        p = EstimatorParams(k=ALL, n_samples=n)
        r = evaluate(cellsense_fn(fp, p), test, p, cell_length_m=fp.grid.cell_length_m)
        rows.append((n, r.median_error_m))
    return rows


@dataclass
class Comparison:
    reports: list[EvalReport]
    # percentage by which each method's median error exceeds CellSense's
    degradation_pct: dict[str, float]

    def by_method(self) -> dict[str, EvalReport]:
        return {r.method: r for r in self.reports}


ALL_METHODS = (Method.CELLID, Method.KNN, Method.GP, Method.CELLSENSE)


def compare_all(train: Trace, test: Trace, params: EstimatorParams = EstimatorParams(), *,
                cell_length_m: float = DEFAULT_CELL_LENGTH_M, alpha: float = DEFAULT_ALPHA,
                knn_k: int = DEFAULT_KNN_K, methods: Sequence[Method] = ALL_METHODS,
                gp_cache: bool = True, seed: int = 0) -> Comparison:
    """Build every radio map from ``train`` and evaluate each method on the same windows.

    KNN and cell-ID use only the last scan of each window. The GP candidates
    are the CellSense cell representatives. With ``gp_cache`` the GP field at
    the candidates is computed once per tower; runtimes then exclude that cost.
    """
    methods = [Method(m) for m in methods]
    fp = build_fingerprint(train, cell_length_m, alpha)
    origin = fp.grid.origin
    fns: dict[Method, LocateFn] = {}
    if Method.CELLID in methods:
        db = build_tower_db(train, origin)
        fns[Method.CELLID] = lambda w: cellid_locate(db, w[-1])
    if Method.KNN in methods:
        dfp = build_deterministic_fingerprint(train, origin)
        fns[Method.KNN] = lambda w: knn_locate(dfp, w[-1], knn_k)
    if Method.GP in methods:
        models = fit_tower_models(train, origin, seed=seed)
        cands = [(idx, fp.cells[idx].rep_location) for idx in fp.cell_order]
        if gp_cache:
            locator = GpLocator(models, cands, origin)
            fns[Method.GP] = lambda w: locator.locate(w[-1], params.k)
        else:
            fns[Method.GP] = lambda w: gp_locate(models, cands, w[-1], params.k, origin=origin)
    if Method.CELLSENSE in methods:
        fns[Method.CELLSENSE] = cellsense_fn(fp, params)

    # KNN and cell-ID ignore K; their reports carry the K they actually used
    used = {Method.KNN: EstimatorParams(knn_k, params.n_samples),
            Method.CELLID: EstimatorParams(1, params.n_samples)}
    reports = [evaluate(fns[m], test, params, method=m.value, cell_length_m=cell_length_m)
               for m in ALL_METHODS if m in fns]
    for r in reports:
        r.params = used.get(Method(r.method), params)
    base = next((r.median_error_m for r in reports if r.method == Method.CELLSENSE.value), None)
    degradation = {}
    if base:
        degradation = {r.method: 100.0 * (r.median_error_m - base) / base for r in reports}
    return Comparison(reports, degradation)


def write_reports(reports: Sequence[EvalReport], stream: TextIO,
                  degradation_pct: dict[str, float] | None = None,
                  include_runtime: bool = True) -> None:
    header = list(REPORT_HEADER)
    if degradation_pct is not None:
        header.append("degradation_pct")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for r in reports:
        row = [r.method, r.params.k, r.params.n_samples,
               "" if r.cell_length_m is None else f"{r.cell_length_m:g}",
               r.n_estimates, f"{r.median_error_m:.3f}", f"{r.mean_error_m:.3f}",
               f"{r.mean_runtime_ns:.0f}" if include_runtime else ""]
        if degradation_pct is not None:
            d = degradation_pct.get(r.method)
            row.append("" if d is None else f"{d:.1f}")
        w.writerow(row)


def write_cdf(report: EvalReport, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("error_m", "cumulative_fraction"))
    for e, f in report.error_cdf:
        w.writerow((f"{e:.3f}", f"{f:.6f}"))
