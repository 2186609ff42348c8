"""Probabilistic RSSI fingerprint localization for cellular phones."""

from .errors import (
    CellSenseError,
    FormatError,
    InvalidInputError,
    NotLocatableError,
    NumericError,
)
from .estimators import (
    ALL,
    EstimatorParams,
    LocationEstimate,
    Method,
    cellid_locate,
    cellsense_locate,
    knn_locate,
    log_posterior,
)
from .fingerprint import (
    build_deterministic_fingerprint,
    build_fingerprint,
    build_tower_db,
    load_fingerprint,
    save_fingerprint,
)
from .geo import GeoPoint, LocalPoint, distance, project, unproject
from .trace_io import RssiScan, TowerReading, Trace, parse_trace, write_trace

__all__ = [
    "ALL", "CellSenseError", "EstimatorParams", "FormatError", "GeoPoint", "InvalidInputError",
    "LocalPoint", "LocationEstimate", "Method", "NotLocatableError", "NumericError", "RssiScan",
    "TowerReading", "Trace", "build_deterministic_fingerprint", "build_fingerprint",
    "build_tower_db", "cellid_locate", "cellsense_locate", "distance", "knn_locate",
    "load_fingerprint", "log_posterior", "parse_trace", "project", "save_fingerprint",
    "unproject", "write_trace",
]
