"""Staypoint extraction and per-agent location clustering."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import EARTH_RADIUS_M, haversine, local_day
from .tables import PingTable, StaypointTable

D_MAX_M = 200.0
T_MIN_S = 300
GAP_MAX_S = 3600
EPS_AGENT_M = 100.0


@numba.njit(cache=True)
def _hav(lat1, lon1, lat2, lon2):
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    if a > 1.0:
        a = 1.0
    return 2.0 * 6371000.0 * math.asin(math.sqrt(a))


@numba.njit(cache=True)
def _segment(offsets, t, lat, lon, d_max, t_min, gap_max):
    n = t.shape[0]
    seg_agent = np.empty(n, np.int64)
    seg_lo = np.empty(n, np.int64)
    seg_hi = np.empty(n, np.int64)
    k = 0
    for a in range(offsets.shape[0] - 1):
        i = offsets[a]
        end = offsets[a + 1]
        while i < end:
            slat = lat[i]
            slon = lon[i]
            m = 1
            j = i + 1
            while j < end:
                if t[j] - t[j - 1] > gap_max:
                    break
                if _hav(slat / m, slon / m, lat[j], lon[j]) > d_max:
                    break
                slat += lat[j]
                slon += lon[j]
                m += 1
                j += 1
            if t[j - 1] - t[i] >= t_min:
                seg_agent[k] = a
                seg_lo[k] = i
                seg_hi[k] = j
                k += 1
                i = j
            else:
                i += 1
    return seg_agent[:k], seg_lo[:k], seg_hi[:k]


def extract_staypoints(
    pings: PingTable,
    d_max: float = D_MAX_M,
    t_min: int = T_MIN_S,
    gap_max: int = GAP_MAX_S,
) -> StaypointTable:
    """Greedy distance/duration segmentation of time-sorted pings.

    An episode grows while each next ping lies within ``d_max`` meters of the
    running centroid and follows the previous ping by at most ``gap_max``
    seconds; it becomes a staypoint when it spans at least ``t_min`` seconds
    (and at least one second). Staypoint location is the mean of its pings.
    """
    if len(pings) == 0:
        return StaypointTable.empty(pings.agent_ids)
    t_min = max(int(t_min), 1)
    agent, lo, hi = _segment(
        np.ascontiguousarray(pings.offsets, dtype=np.int64),
        np.ascontiguousarray(pings.t, dtype=np.int64),
        np.ascontiguousarray(pings.lat, dtype=np.float64),
        np.ascontiguousarray(pings.lon, dtype=np.float64),
        float(d_max),
        t_min,
        int(gap_max),
    )
    counts = hi - lo
    csum_lat = np.concatenate([[0.0], np.cumsum(pings.lat)])
    csum_lon = np.concatenate([[0.0], np.cumsum(pings.lon)])
    return StaypointTable(
        agent_ids=list(pings.agent_ids),
        agent=agent,
        lat=(csum_lat[hi] - csum_lat[lo]) / counts,
        lon=(csum_lon[hi] - csum_lon[lo]) / counts,
        t_start=pings.t[lo].astype(np.int64),
        t_end=pings.t[hi - 1].astype(np.int64),
    )


# ---------------------------------------------------------------------------
# density clustering

def _unit_xyz(lat, lon):
    p = np.radians(lat)
    l = np.radians(lon)
    return np.column_stack([np.cos(p) * np.cos(l), np.cos(p) * np.sin(l), np.sin(p)])


def dbscan_haversine(lat, lon, eps_m: float, min_pts: int, group: Optional[np.ndarray] = None) -> np.ndarray:
    """DBSCAN under the great-circle metric; returns labels with -1 for noise.

    Neighborhoods include the point itself. When ``group`` is given, points
    in different groups are never neighbors. Labels follow the classic
    sequential algorithm: clusters are numbered by their lowest-index core
    point and a border point joins the lowest-numbered cluster reaching it.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = lat.size
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    xyz = _unit_xyz(lat, lon)
    chord = 2.0 * math.sin(min(eps_m / (2.0 * EARTH_RADIUS_M), math.pi / 2))
    if group is not None:
        # separate groups along a fourth axis, far beyond any chord length
        xyz = np.column_stack([xyz, 10.0 * np.asarray(group, dtype=float)])
    pairs = cKDTree(xyz).query_pairs(chord, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    counts = 1 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = counts >= min_pts
    labels = np.full(n, -1, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels
    cc = core[i] & core[j]
    graph = coo_matrix((np.ones(int(cc.sum())), (i[cc], j[cc])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    comp_core = comp[core_idx]
    # order components by their lowest core index
    first = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, comp_core, core_idx)
    used = np.unique(comp_core)
    rank = np.full(comp.max() + 1, -1, dtype=np.int64)
    rank[used[np.argsort(first[used], kind="stable")]] = np.arange(used.size)
    labels[core_idx] = rank[comp_core]
    # border points: lowest cluster label among core neighbours
    border_best = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    for a, b in ((i, j), (j, i)):
        m = core[b] & ~core[a]
        np.minimum.at(border_best, a[m], labels[b[m]])
    has = (~core) & (border_best != np.iinfo(np.int64).max)
    labels[has] = border_best[has]
    return labels


# ---------------------------------------------------------------------------
# per-agent clustering

@dataclass
class CandidateLocation:
    location_id: int
    centroid: tuple
    member_staypoints: list
    visit_days: frozenset
    radius: float

    @property
    def is_candidate(self) -> bool:
        return len(self.visit_days) >= 2


@dataclass
class ClusterTable:
    """Per-agent location clusters of a staypoint table.

    ``sp_cluster[r]`` is the global cluster index of staypoint row ``r``;
    clusters are ordered by (agent, first member row) and ``local_id`` is
    the per-agent location id.
    """

    sp_cluster: np.ndarray
    agent: np.ndarray
    local_id: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    radius: np.ndarray
    n_members: np.ndarray
    n_days: np.ndarray

    def __len__(self) -> int:
        return int(self.agent.shape[0])

    @property
    def candidate(self) -> np.ndarray:
        return self.n_days >= 2


def staypoint_days(sp: StaypointTable, tz_offset_min: int):
    """(row, local day) pairs for every local day a staypoint overlaps."""
    d0 = np.asarray(local_day(sp.t_start, tz_offset_min), dtype=np.int64)
    d1 = np.asarray(local_day(sp.t_end - 1, tz_offset_min), dtype=np.int64)
    d1 = np.maximum(d1, d0)
    span = d1 - d0 + 1
    rows = np.repeat(np.arange(len(sp)), span)
    within = np.arange(rows.size) - np.repeat(np.cumsum(span) - span, span)
    return rows, d0[rows] + within


def cluster_staypoints(
    sp: StaypointTable,
    eps_agent: float = EPS_AGENT_M,
    min_pts: int = 1,
    tz_offset_min: int = 0,
) -> ClusterTable:
    """Cluster each agent's staypoints; noise points become singleton clusters."""
    n = len(sp)
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return ClusterTable(z, z.copy(), z.copy(), np.zeros(0), np.zeros(0), np.zeros(0), z.copy(), z.copy())
    raw = dbscan_haversine(sp.lat, sp.lon, eps_agent, min_pts, group=sp.agent)
    noise = raw < 0
    raw = raw.copy()
    raw[noise] = raw.max() + 1 + np.arange(int(noise.sum()))
    # renumber by (agent, first member row): rows are agent-sorted already
    first = np.full(raw.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, raw, np.arange(n))
    used = np.unique(raw)
    order = used[np.argsort(first[used], kind="stable")]
    remap = np.empty(raw.max() + 1, dtype=np.int64)
    remap[order] = np.arange(order.size)
    cid = remap[raw]
    k = order.size

    w = sp.duration.astype(float)
    w = np.where(w > 0, w, 1.0)
    wsum = np.bincount(cid, weights=w, minlength=k)
    lat = np.bincount(cid, weights=w * sp.lat, minlength=k) / wsum
    lon = np.bincount(cid, weights=w * sp.lon, minlength=k) / wsum
    dist = haversine(sp.lat, sp.lon, lat[cid], lon[cid])
    radius = np.zeros(k)
    np.maximum.at(radius, cid, np.atleast_1d(dist))
    agent = sp.agent[first[order]]
    local = np.arange(k) - np.searchsorted(agent, agent, side="left")

    rows, days = staypoint_days(sp, tz_offset_min)
    pair = np.unique(np.column_stack([cid[rows], days]), axis=0)
    n_days = np.bincount(pair[:, 0], minlength=k)
    return ClusterTable(
        sp_cluster=cid,
        agent=agent.astype(np.int64),
        local_id=local.astype(np.int64),
        lat=lat,
        lon=lon,
        radius=radius,
        n_members=np.bincount(cid, minlength=k),
        n_days=n_days.astype(np.int64),
    )


def cluster_agent_staypoints(
    sp: StaypointTable,
    eps_agent: float = EPS_AGENT_M,
    min_pts: int = 1,
    tz_offset_min: int = 0,
) -> list:
    """Candidate locations of a single agent's staypoints."""
    if len(np.unique(sp.agent)) > 1:
        raise ValueError("cluster_agent_staypoints expects staypoints of one agent")
    ct = cluster_staypoints(sp, eps_agent, min_pts, tz_offset_min)
    rows, days = staypoint_days(sp, tz_offset_min)
    out = []
    for c in range(len(ct)):
        members = np.flatnonzero(ct.sp_cluster == c)
        out.append(
            CandidateLocation(
                location_id=int(ct.local_id[c]),
                centroid=(float(ct.lat[c]), float(ct.lon[c])),
                member_staypoints=members.tolist(),
                visit_days=frozenset(int(d) for d in days[np.isin(rows, members)]),
                radius=float(ct.radius[c]),
            )
        )
    return out


def snap_to_centroids(sp: StaypointTable, clusters: ClusterTable) -> StaypointTable:
    """Staypoints moved onto their cluster centroid."""
    out = sp.take(np.arange(len(sp)))
    out.lat = clusters.lat[clusters.sp_cluster].copy()
    out.lon = clusters.lon[clusters.sp_cluster].copy()
    return out
