"""Local planar frame for GPS coordinates.

Everything downstream works in meters east/north of an origin. The
equirectangular approximation is accurate to well under a decimeter over
the few-kilometre areas a war-driving fingerprint covers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidInputError

EARTH_RADIUS_M = 6_371_000.0
_DEG = math.pi / 180.0
# project() only promises accuracy close to the origin.
MAX_OFFSET_DEG = 1.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidInputError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInputError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class LocalPoint:
    """Meters east (x) and north (y) of a projection origin."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite local point ({self.x}, {self.y})")


def project(p: GeoPoint, origin: GeoPoint) -> LocalPoint:
    if abs(p.lat - origin.lat) >= MAX_OFFSET_DEG or abs(p.lon - origin.lon) >= MAX_OFFSET_DEG:
        raise InvalidInputError(
            f"{p} is more than {MAX_OFFSET_DEG} degree from origin {origin}"
        )
    x = EARTH_RADIUS_M * (p.lon - origin.lon) * _DEG * math.cos(origin.lat * _DEG)
    y = EARTH_RADIUS_M * (p.lat - origin.lat) * _DEG
    return LocalPoint(x, y)


def unproject(p: LocalPoint, origin: GeoPoint) -> GeoPoint:
    """Inverse of :func:`project`."""
    lat = origin.lat + p.y / (EARTH_RADIUS_M * _DEG)
    coslat = math.cos(origin.lat * _DEG)
    if coslat <= 0.0:
        raise InvalidInputError("cannot unproject about a pole")
    lon = origin.lon + p.x / (EARTH_RADIUS_M * _DEG * coslat)
    return GeoPoint(lat, lon)


def distance(a: LocalPoint, b: LocalPoint) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def centroid(points) -> GeoPoint:
    """Arithmetic mean of lat and lon; fine for small areas away from the antimeridian."""
    pts = list(points)
    if not pts:
        raise InvalidInputError("centroid of an empty point set")
    return GeoPoint(math.fsum(p.lat for p in pts) / len(pts),
                    math.fsum(p.lon for p in pts) / len(pts))
