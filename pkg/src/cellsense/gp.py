"""Gaussian-process RSSI regression baseline.

Each tower gets an independent GP over the plane with a squared-exponential
kernel. A scan is located by scoring candidate positions with the Gaussian
predictive likelihood of the readings and taking the K-weighted centroid,
the same way CellSense treats its grid cells.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import InvalidInputError, NotLocatableError, NumericError
from .estimators import ALL, KParam, LocationEstimate, Method, select_top_k, weighted_centroid
from .geo import GeoPoint, LocalPoint, project, unproject
from .trace_io import RssiScan, Trace

LENGTH_SCALES_M = (50.0, 100.0, 200.0, 400.0, 800.0)
SIGMA_F_DB = (2.0, 4.0, 8.0, 16.0)
SIGMA_N_DB = (2.0, 4.0, 8.0)
SELECTION_SUBSAMPLE = 300
MAX_TRAINING_POINTS = 1000
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GpHyper:
    length_scale_m: float
    sigma_f_db: float
    sigma_n_db: float

    def __post_init__(self):
        for name in ("length_scale_m", "sigma_f_db", "sigma_n_db"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidInputError(f"{name} must be positive and finite, got {v}")


def kernel(a: LocalPoint, b: LocalPoint, hyper: GpHyper) -> float:
    d2 = (a.x - b.x) ** 2 + (a.y - b.y) ** 2
    return hyper.sigma_f_db ** 2 * math.exp(-d2 / (2.0 * hyper.length_scale_m ** 2))


def kernel_matrix(xa: np.ndarray, xb: np.ndarray, hyper: GpHyper) -> np.ndarray:
    d2 = ((xa[:, None, :] - xb[None, :, :]) ** 2).sum(axis=-1)
    return hyper.sigma_f_db ** 2 * np.exp(-d2 / (2.0 * hyper.length_scale_m ** 2))


def _as_array(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return np.asarray(points, dtype=float).reshape(-1, 2)
    return np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)


@dataclass
class GpModel:
    inputs: np.ndarray           # (n, 2) local meters
    targets: np.ndarray          # (n,) dBm, as given
    hyper: GpHyper
    prior_mean: float
    factor: np.ndarray           # lower Cholesky factor of K + sigma_n^2 I
    weights: np.ndarray          # (K + sigma_n^2 I)^-1 (targets - prior_mean)
    n_source_points: int = field(default=0)

    @property
    def n(self) -> int:
        return len(self.targets)


def fit(points, targets, hyper: GpHyper, prior_mean: float | None = None) -> GpModel:
    """Condition a GP on ``targets`` observed at ``points``.

    ``prior_mean`` defaults to the mean of the targets, so far-field
    predictions revert to the average RSSI rather than to 0 dBm.
    """
    x = _as_array(points)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(y) < 1 or len(x) != len(y):
        raise InvalidInputError("need matching, non-empty inputs and targets")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NumericError("non-finite training data")
    mu = float(np.mean(y)) if prior_mean is None else float(prior_mean)
    K = kernel_matrix(x, x, hyper)
    K[np.diag_indices_from(K)] += hyper.sigma_n_db ** 2
    try:
        L = cholesky(K, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericError(f"covariance factorization failed: {exc}") from None
    alpha = cho_solve((L, True), y - mu)
    return GpModel(x, y, hyper, mu, L, alpha, len(y))


def predict_many(model: GpModel, xs) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance (of the latent field) at each row of ``xs``."""
    xs = _as_array(xs)
    ks = kernel_matrix(model.inputs, xs, model.hyper)
    mean = model.prior_mean + ks.T @ model.weights
    v = solve_triangular(model.factor, ks, lower=True, check_finite=False)
    var = model.hyper.sigma_f_db ** 2 - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def predict(model: GpModel, x: LocalPoint) -> tuple[float, float]:
    mean, var = predict_many(model, [x])
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(model: GpModel) -> float:
    resid = model.targets - model.prior_mean
    log_det = 2.0 * float(np.sum(np.log(np.diag(model.factor))))
    return float(-0.5 * resid @ model.weights - 0.5 * log_det - 0.5 * model.n * _LOG_2PI)


def _subsample(n: int, cap: int, seed: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=cap, replace=False))


def select_hyperparams(points, targets, *, seed: int = 0) -> GpHyper:
    """Grid search for the (l, sigma_f, sigma_n) triple with the highest log marginal likelihood.

    Runs on a seeded subsample of at most 300 points. Ties go to the smaller
    length scale, then smaller sigma_f, then smaller sigma_n.
    """
    x = _as_array(points)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(y) < 5:
        raise InvalidInputError("hyperparameter selection needs at least 5 points")
    idx = _subsample(len(y), SELECTION_SUBSAMPLE, seed)
    x, y = x[idx], y[idx]
    resid = y - y.mean()
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    n = len(y)
    best, best_lml = None, -math.inf
    # product() iterates in exactly the tie-break order, so strict > keeps the first winner
    for l, sf, sn in itertools.product(LENGTH_SCALES_M, SIGMA_F_DB, SIGMA_N_DB):
        K = sf ** 2 * np.exp(-d2 / (2.0 * l ** 2))
        K[np.diag_indices_from(K)] += sn ** 2
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except LinAlgError:
            continue
        a = cho_solve((L, True), resid, check_finite=False)
        lml = -0.5 * resid @ a - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG_2PI
        if lml > best_lml:
            best, best_lml = GpHyper(l, sf, sn), lml
    if best is None:
        raise NumericError("no hyperparameter triple gave a positive definite covariance")
    return best


def fit_tower_models(trace: Trace, origin: GeoPoint, *, seed: int = 0,
                     min_points: int = 5,
                     max_points: int = MAX_TRAINING_POINTS) -> dict[str, GpModel]:
    """One GP per tower heard in at least ``min_points`` training scans."""
    obs: dict[str, tuple[list, list]] = {}
    for scan in trace.scans:
        if scan.truth is None:
            raise InvalidInputError(f"scan {scan.scan_id} has no ground-truth position")
        p = project(scan.truth, origin)
        for r in scan.readings:
            pts, ys = obs.setdefault(r.tower_id, ([], []))
            pts.append((p.x, p.y))
            ys.append(r.rssi_dbm)
    models = {}
    for i, tower in enumerate(sorted(obs)):
        pts, ys = obs[tower]
        if len(ys) < min_points:
            continue
        x, y = np.array(pts, dtype=float), np.array(ys, dtype=float)
        hyper = select_hyperparams(x, y, seed=seed + i)
        keep = _subsample(len(y), max_points, seed + 7919 * (i + 1))
        model = fit(x[keep], y[keep], hyper)
        model.n_source_points = len(y)
        models[tower] = model
    return models


def _gaussian_log_pdf(s: float, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * (_LOG_2PI + np.log(var) + (s - mean) ** 2 / var)


def _locate_from_predictions(preds: Sequence[tuple[float, np.ndarray, np.ndarray]],
                             cand_ids: Sequence, cand_xy: np.ndarray, k: KParam,
                             origin: GeoPoint, t0: int) -> LocationEstimate:
    ll = np.zeros(len(cand_xy))
    for s, mean, var in preds:
        ll += _gaussian_log_pdf(s, mean, var)
    top, w = select_top_k(ll, k)
    loc = weighted_centroid(cand_xy[top], w)
    cands = tuple((cand_ids[i], float(wi)) for i, wi in zip(top, w))
    return LocationEstimate(loc, unproject(loc, origin), Method.GP, cands,
                            max(1, time.perf_counter_ns() - t0))


def gp_locate(models: Mapping[str, GpModel], candidates: Sequence[tuple[object, LocalPoint]],
              scan: RssiScan, k: KParam = ALL, *, origin: GeoPoint) -> LocationEstimate:
    """Score every candidate by sum_i log N(s_i; mean_i(c), var_i(c) + sigma_n,i^2).

    Predictions are recomputed on every call; :class:`GpLocator` caches them.
    """
    t0 = time.perf_counter_ns()
    if not candidates:
        raise InvalidInputError("no candidate locations")
    ids = [c[0] for c in candidates]
    xy = _as_array([c[1] for c in candidates])
    preds = []
    for r in scan.readings:
        m = models.get(r.tower_id)
        if m is None:
            continue
        mean, var = predict_many(m, xy)
        preds.append((float(r.rssi_dbm), mean, var + m.hyper.sigma_n_db ** 2))
    if not preds:
        raise NotLocatableError(f"no tower of scan {scan.scan_id} has a GP model")
    return _locate_from_predictions(preds, ids, xy, k, origin, t0)


class GpLocator:
    """gp_locate with per-tower predictions at the candidates computed once and reused.

    Results are identical to :func:`gp_locate`; only the cost moves from every
    call to the first call that needs a given tower.
    """

    def __init__(self, models: Mapping[str, GpModel],
                 candidates: Sequence[tuple[object, LocalPoint]], origin: GeoPoint):
        if not candidates:
            raise InvalidInputError("no candidate locations")
        self.models = dict(models)
        self.ids = [c[0] for c in candidates]
        self.xy = _as_array([c[1] for c in candidates])
        self.origin = origin
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _field(self, tower: str) -> tuple[np.ndarray, np.ndarray]:
        if tower not in self._cache:
            m = self.models[tower]
            mean, var = predict_many(m, self.xy)
            self._cache[tower] = (mean, var + m.hyper.sigma_n_db ** 2)
        return self._cache[tower]

    def locate(self, scan: RssiScan, k: KParam = ALL) -> LocationEstimate:
        t0 = time.perf_counter_ns()
        preds = [(float(r.rssi_dbm), *self._field(r.tower_id))
                 for r in scan.readings if r.tower_id in self.models]
        if not preds:
            raise NotLocatableError(f"no tower of scan {scan.scan_id} has a GP model")
        return _locate_from_predictions(preds, self.ids, self.xy, k, self.origin, t0)
