"""POI semantic zones and the distance-weighted spatial likelihood."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .core import EARTH_RADIUS_M, N_ACTIVITIES, haversine, normalize_rows
from .ingest import fmt_float
from .staypoints import dbscan_haversine
from .tables import PoiTable

SIGMA_M = 150.0
SEARCH_RADIUS_M = 500.0
EPS_POI_M = 100.0
MIN_PTS_POI = 3

_UNIFORM = np.full(N_ACTIVITIES, 1.0 / N_ACTIVITIES)


@dataclass(frozen=True)
class SemanticZone:
    zone_id: int
    centroid: tuple
    radius: float
    dist: np.ndarray
    member_count: int


@dataclass
class ZoneTable:
    """Columnar semantic zones; ``poi_zone[j]`` is the zone of POI ``j``."""

    lat: np.ndarray
    lon: np.ndarray
    radius: np.ndarray
    dist: np.ndarray
    member_count: np.ndarray
    poi_zone: np.ndarray

    def __len__(self) -> int:
        return int(self.lat.shape[0])

    def to_zones(self) -> list:
        return [
            SemanticZone(i, (float(self.lat[i]), float(self.lon[i])), float(self.radius[i]), self.dist[i].copy(), int(self.member_count[i]))
            for i in range(len(self))
        ]


def build_zones(pois: PoiTable, eps_poi: float = EPS_POI_M, min_pts_poi: int = MIN_PTS_POI) -> ZoneTable:
    """DBSCAN the POIs into zones; noise POIs become singleton zones.

    Zone centroid is the unweighted member mean, radius the largest member
    distance to it, and the distribution the normalized sum of member
    distributions.
    """
    n = len(pois)
    labels = dbscan_haversine(pois.lat, pois.lon, eps_poi, min_pts_poi)
    labels = labels.copy()
    noise = labels < 0
    base = labels.max() + 1 if (~noise).any() else 0
    labels[noise] = base + np.arange(int(noise.sum()))
    k = int(labels.max()) + 1 if n else 0
    count = np.bincount(labels, minlength=k)
    lat = np.bincount(labels, weights=pois.lat, minlength=k) / np.maximum(count, 1)
    lon = np.bincount(labels, weights=pois.lon, minlength=k) / np.maximum(count, 1)
    dist = np.zeros((k, N_ACTIVITIES))
    np.add.at(dist, labels, pois.dist)
    dist = normalize_rows(dist)
    radius = np.zeros(k)
    if n:
        np.maximum.at(radius, labels, np.atleast_1d(haversine(pois.lat, pois.lon, lat[labels], lon[labels])))
    radius[count == 1] = 0.0
    return ZoneTable(lat, lon, radius, dist, count, labels)


class ZoneIndex:
    """Uniform lat/lon grid over zone centroids.

    Cells are sized so that every zone within ``search_radius`` of a query
    lies in the query's cell or one of its eight neighbours (longitudes are
    assumed not to straddle the antimeridian).
    """

    def __init__(self, zones: ZoneTable, sigma: float = SIGMA_M, search_radius: float = SEARCH_RADIUS_M):
        if sigma <= 0 or search_radius <= 0:
            raise ValueError("sigma and search_radius must be positive")
        self.zones = zones
        self.sigma = float(sigma)
        self.search_radius = float(search_radius)
        ang = self.search_radius / EARTH_RADIUS_M
        self.cell_lat = math.degrees(ang) * (1 + 1e-9)
        lat_max = (float(np.max(np.abs(zones.lat))) if len(zones) else 0.0) + self.cell_lat
        if lat_max >= 89.0:
            self.cell_lon = 360.0
        else:
            s = math.sin(ang / 2.0) / math.cos(math.radians(lat_max))
            self.cell_lon = math.degrees(2.0 * math.asin(min(1.0, s))) * (1 + 1e-9)
        iy, ix = self._cells(zones.lat, zones.lon)
        keys = self._key(iy, ix)
        self._order = np.argsort(keys, kind="stable")
        sk = keys[self._order]
        self._keys, self._start = np.unique(sk, return_index=True)
        self._end = np.append(self._start[1:], sk.size)

    def _cells(self, lat, lon):
        return (
            np.floor(np.asarray(lat) / self.cell_lat).astype(np.int64),
            np.floor(np.asarray(lon) / self.cell_lon).astype(np.int64),
        )

    @staticmethod
    def _key(iy, ix):
        return (iy + (1 << 20)) * (1 << 22) + (ix + (1 << 21))

    def pairs_within(self, lat, lon):
        """(query index, zone index, distance) for every zone within the radius."""
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        if len(self.zones) == 0 or lat.size == 0:
            e = np.zeros(0, dtype=np.int64)
            return e, e.copy(), np.zeros(0)
        iy, ix = self._cells(lat, lon)
        qs, zs, ds = [], [], []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                key = self._key(iy + dy, ix + dx)
                pos = np.searchsorted(self._keys, key)
                pos_c = np.minimum(pos, self._keys.size - 1)
                hit = self._keys[pos_c] == key
                q = np.flatnonzero(hit)
                if q.size == 0:
                    continue
                start = self._start[pos_c[hit]]
                length = self._end[pos_c[hit]] - start
                q_rep = np.repeat(q, length)
                within = np.arange(q_rep.size) - np.repeat(np.cumsum(length) - length, length)
                z = self._order[np.repeat(start, length) + within]
                d = haversine(lat[q_rep], lon[q_rep], self.zones.lat[z], self.zones.lon[z])
                d = np.atleast_1d(d)
                keep = d <= self.search_radius
                qs.append(q_rep[keep])
                zs.append(z[keep])
                ds.append(d[keep])
        if not qs:
            e = np.zeros(0, dtype=np.int64)
            return e, e.copy(), np.zeros(0)
        return np.concatenate(qs), np.concatenate(zs), np.concatenate(ds)

    def query_radius(self, lat: float, lon: float) -> np.ndarray:
        """Sorted indices of zones within the search radius of one point."""
        _, z, _ = self.pairs_within([lat], [lon])
        return np.sort(z)

    def likelihood(self, lat, lon, chunk: int = 20000):
        """Batch spatial likelihood; returns ``(P, flagged)`` with P of shape (n, 15).

        Queries without any zone in range (or whose kernel weights all
        underflow) get the uniform vector and ``flagged=True``.
        """
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        n = lat.size
        out = np.empty((n, N_ACTIVITIES))
        flagged = np.zeros(n, dtype=bool)
        for s in range(0, n, chunk):
            e = min(s + chunk, n)
            q, z, d = self.pairs_within(lat[s:e], lon[s:e])
            w = np.exp(-(d * d) / (2.0 * self.sigma * self.sigma))
            m = csr_matrix((w, (q, z)), shape=(e - s, len(self.zones)))
            acc = np.asarray(m @ self.zones.dist)
            tot = acc.sum(axis=1)
            ok = tot > 0
            out[s:e][ok] = acc[ok] / tot[ok, None]
            out[s:e][~ok] = _UNIFORM
            flagged[s:e] = ~ok
        return out, flagged


def spatial_likelihood(index: ZoneIndex, lat: float, lon: float) -> np.ndarray:
    """Normalized distance-weighted mixture of zone distributions at one point."""
    p, _ = index.likelihood([lat], [lon])
    return p[0]


def write_zones(zones: ZoneTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "lat", "lon", "radius_m", "member_count"] + [f"p{k}" for k in range(1, N_ACTIVITIES + 1)])
        for i in range(len(zones)):
            w.writerow(
                [i, fmt_float(zones.lat[i]), fmt_float(zones.lon[i]), fmt_float(zones.radius[i]), int(zones.member_count[i])]
                + [fmt_float(v) for v in zones.dist[i]]
            )
