"""Delimited-text ingestion and export of location data.

A domain file has one row per location with columns

``id, x, y, area, y_t0, y_t1, s[, alt]``

where ``x``/``y`` may be replaced by ``lon``/``lat`` in degrees.  Geographic
coordinates are projected to planar kilometres with a cylindrical
equal-area projection so that areas and local distances share units.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import PLANAR, SpatialDomain, build_domain

#: authalic Earth radius (km), the radius of the sphere with the ellipsoid's area
EARTH_RADIUS_KM = 6371.0072

REQUIRED = ("id", "area", "y_t0", "y_t1", "s")


@dataclass
class LocationData:
    """Domain plus the observed fields, all in density units."""

    domain: SpatialDomain
    y0: np.ndarray
    y1: np.ndarray
    s: np.ndarray
    alt: np.ndarray | None = None

    @property
    def ids(self):
        return self.domain.ids


def project_equal_area(lon, lat, lon0=None, lat_ts=None, radius=EARTH_RADIUS_KM):
    """Cylindrical equal-area projection of degrees to kilometres.

    ``x = R cos(lat_ts) (lon - lon0)``, ``y = R sin(lat) / cos(lat_ts)``.
    ``lon0`` and the true-scale latitude ``lat_ts`` default to the data
    means, which keeps distances nearly undistorted over a compact region.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if np.any(np.abs(lat) > 90):
        raise ValueError("latitude outside [-90, 90]")
    lon0 = float(np.mean(lon)) if lon0 is None else lon0
    lat_ts = float(np.mean(lat)) if lat_ts is None else lat_ts
    k = math.cos(math.radians(lat_ts))
    x = radius * k * np.radians(lon - lon0)
    y = radius * np.sin(np.radians(lat)) / k
    return np.column_stack([x, y])


def read_locations(path, totals=False, lon0=None, lat_ts=None) -> LocationData:
    """Read a domain file.

    Parameters
    ----------
    path : CSV file with a header row
    totals : if true, ``y_t0``/``y_t1`` hold per-location totals and are
        divided by ``area`` to get densities
    lon0, lat_ts : projection centre for ``lon``/``lat`` inputs

    Raises
    ------
    ConfigError
        On missing columns or non-numeric values.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    cols = set(rows[0])
    missing = [c for c in REQUIRED if c not in cols]
    geographic = {"lon", "lat"} <= cols
    if not geographic and not {"x", "y"} <= cols:
        missing.append("x,y or lon,lat")
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")

    def column(name):
        try:
            return np.array([float(r[name]) for r in rows])
        except ValueError as exc:
            raise ConfigError(f"{path}: column {name!r}: {exc}") from None

    if geographic:
        pts = project_equal_area(column("lon"), column("lat"), lon0, lat_ts)
    else:
        pts = np.column_stack([column("x"), column("y")])
    area = column("area")
    ids = [r["id"] for r in rows]
    domain = build_domain(pts, area, topology=PLANAR, ids=ids)
    y0, y1 = column("y_t0"), column("y_t1")
    if totals:
        y0, y1 = y0 / area, y1 / area
    alt = column("alt") if "alt" in cols else None
    return LocationData(domain, y0, y1, column("s"), alt)


def write_locations(path, data: LocationData) -> None:
    """Write planar coordinates and density fields in the domain-file layout."""
    d = data.domain
    header = ["id", "x", "y", "area", "y_t0", "y_t1", "s"] + (["alt"] if data.alt is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(d.n):
            row = [d.ids[i], *(repr(float(v)) for v in (d.locations[i, 0], d.locations[i, 1], d.areas[i],
                                                        data.y0[i], data.y1[i], data.s[i]))]
            if data.alt is not None:
                row.append(repr(float(data.alt[i])))
            w.writerow(row)


def write_columns(path, columns: dict, ids=None) -> Path:
    """Write equal-length named columns (plus an optional leading ``id``) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    n = len(data[0]) if data else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["id"] if ids is not None else []) + names)
        for i in range(n):
            vals = [_fmt(c[i]) for c in data]
            w.writerow(([ids[i]] if ids is not None else []) + vals)
    return path


def _fmt(v):
    if isinstance(v, (str, bytes)):
        return v
    if isinstance(v, (bool, int, np.bool_, np.integer)):
        return str(int(v))
    f = float(v)
    return "" if math.isnan(f) else repr(f)
