import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trippurpose.core import haversine, meters_per_degree
from trippurpose.staypoints import (
    cluster_agent_staypoints,
    cluster_staypoints,
    dbscan_haversine,
    extract_staypoints,
    snap_to_centroids,
)
from trippurpose.tables import PingTable, StaypointTable

from oracles import dbscan_oracle

LAT0, LON0 = 34.05, -118.25
M_LAT, M_LON = meters_per_degree(LAT0)
T0 = 1546819200


def _pings(t, lat, lon, agent="a"):
    return PingTable.from_arrays([agent] * len(t), t, lat, lon)


def _offset(north_m, east_m):
    return LAT0 + np.asarray(north_m) / M_LAT, LON0 + np.asarray(east_m) / M_LON


def _greedy_oracle(t, lat, lon, d_max, t_min, gap_max):
    """Plain-Python greedy segmentation with running-centroid membership."""
    out, i, n = [], 0, len(t)
    while i < n:
        members = [i]
        j = i + 1
        while j < n:
            if t[j] - t[j - 1] > gap_max:
                break
            c_lat = sum(lat[k] for k in members) / len(members)
            c_lon = sum(lon[k] for k in members) / len(members)
            if haversine(c_lat, c_lon, lat[j], lon[j]) > d_max:
                break
            members.append(j)
            j += 1
        if t[j - 1] - t[i] >= t_min:
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def _valid_windows(t, lat, lon, d_max, t_min):
    """All index windows [i, j) whose pings sit within d_max of their mean
    and span at least t_min; exhaustive over every split point."""
    out = []
    for i in range(len(t)):
        for j in range(i + 1, len(t) + 1):
            c = lat[i:j].mean(), lon[i:j].mean()
            if np.all(haversine(c[0], c[1], lat[i:j], lon[i:j]) <= d_max) and t[j - 1] - t[i] >= t_min:
                out.append((i, j))
    return out


class TestExtraction:
    def test_single_dwell(self):
        t = T0 + np.arange(10) * 133
        t[-1] = T0 + 1200
        sp = extract_staypoints(_pings(t, np.full(10, LAT0), np.full(10, LON0)), t_min=600)
        assert len(sp) == 1
        assert sp.duration[0] == 1200

    def test_straight_path(self):
        t = T0 + np.arange(30) * 60
        lat, lon = _offset(np.arange(30) * 1000.0, np.zeros(30))
        assert len(extract_staypoints(_pings(t, lat, lon), d_max=100)) == 0

    def test_two_dwells(self):
        t = T0 + np.concatenate([np.arange(16) * 60, 3000 + np.arange(16) * 60])
        north = np.concatenate([np.zeros(16), np.full(16, 5000.0)])
        lat, lon = _offset(north, np.zeros(32))
        sp = extract_staypoints(_pings(t, lat, lon), t_min=600)
        assert len(sp) == 2
        # oracle: maximal valid windows over every split point
        windows = _valid_windows(t, lat, lon, 200.0, 600)
        maximal = [w for w in windows if not any(v != w and v[0] <= w[0] and w[1] <= v[1] for v in windows)]
        assert sorted(maximal) == [(0, 16), (16, 32)]
        assert list(zip(sp.t_start, sp.t_end)) == [(t[0], t[15]), (t[16], t[31])]

    def test_gap_splits(self):
        t = T0 + np.array([0, 300, 600, 5000, 5300, 5600])
        sp = extract_staypoints(_pings(t, np.full(6, LAT0), np.full(6, LON0)), t_min=300, gap_max=3600)
        assert len(sp) == 2

    def test_empty(self):
        assert len(extract_staypoints(PingTable.empty())) == 0

    def test_matches_oracle_on_random_walks(self, rng):
        for trial in range(20):
            n = 120
            t = T0 + np.cumsum(rng.integers(30, 400, n))
            # alternate dwelling (tiny jitter) and moving (large steps)
            step = np.where((np.arange(n) // 15) % 2 == 0, 15.0, 180.0)
            north = np.cumsum(rng.normal(0, 1, n) * step)
            east = np.cumsum(rng.normal(0, 1, n) * step)
            lat, lon = _offset(north, east)
            sp = extract_staypoints(_pings(t, lat, lon), d_max=200, t_min=300, gap_max=3600)
            expect = _greedy_oracle(t, lat, lon, 200, 300, 3600)
            assert list(zip(sp.t_start, sp.t_end)) == [(t[i], t[j - 1]) for i, j in expect]
            for (i, j), la, lo in zip(expect, sp.lat, sp.lon):
                assert la == pytest.approx(lat[i:j].mean(), abs=1e-12)
                assert lo == pytest.approx(lon[i:j].mean(), abs=1e-12)

    def test_contract_on_corpus(self, small_corpus):
        sp = small_corpus.sp
        assert np.all(sp.duration >= 300)
        for a in range(sp.n_agents):
            rows = np.flatnonzero(sp.agent == a)
            assert np.all(sp.t_start[rows][1:] > sp.t_end[rows][:-1])

    def test_deterministic(self, small_corpus):
        again = extract_staypoints(small_corpus.pings)
        assert np.array_equal(again.t_start, small_corpus.sp.t_start)
        assert np.array_equal(again.lat, small_corpus.sp.lat)


class TestDbscan:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("min_pts", [1, 2, 4])
    def test_matches_oracle(self, seed, min_pts):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-3000, 3000, (25, 2))
        pts = centers[rng.integers(0, 25, 500)] + rng.normal(0, 60, (500, 2))
        lat, lon = _offset(pts[:, 0], pts[:, 1])
        got = dbscan_haversine(lat, lon, 100.0, min_pts)
        assert np.array_equal(got, dbscan_oracle(lat, lon, 100.0, min_pts))

    def test_groups_never_mix(self):
        lat = np.full(4, LAT0)
        lon = np.full(4, LON0)
        labels = dbscan_haversine(lat, lon, 100.0, 1, group=np.array([0, 0, 1, 1]))
        assert labels.tolist() == [0, 0, 1, 1]


def _agent_sp(north, east, t_start, dur):
    lat, lon = _offset(north, east)
    n = len(lat)
    return StaypointTable.from_arrays(["a"], np.zeros(n, dtype=int), lat, lon, t_start, np.asarray(t_start) + np.asarray(dur))


class TestClustering:
    def test_one_point_three_days(self):
        starts = T0 + np.arange(3) * 86400 + 3600
        locs = cluster_agent_staypoints(_agent_sp([0, 0, 0], [0, 0, 0], starts, [3600] * 3))
        assert len(locs) == 1
        assert len(locs[0].visit_days) == 3 and locs[0].is_candidate

    def test_two_far_points(self):
        sp = _agent_sp([0, 10000], [0, 0], [T0, T0 + 20000], [3600, 3600])
        locs = cluster_agent_staypoints(sp, eps_agent=100)
        assert len(locs) == 2
        assert not any(c.is_candidate for c in locs)

    def test_duration_weighted_centroid(self):
        sp = _agent_sp([0, 50], [0, 40], [T0, T0 + 10000], [3600, 3 * 3600])
        (loc,) = cluster_agent_staypoints(sp, eps_agent=100)
        a = np.array([sp.lat[0], sp.lon[0]])
        b = np.array([sp.lat[1], sp.lon[1]])
        assert np.allclose(loc.centroid, 0.25 * a + 0.75 * b, atol=1e-12)

    def test_partition_and_snapping_idempotent(self, small_corpus):
        sp = small_corpus.sp
        ct = cluster_staypoints(sp, 100.0, tz_offset_min=-480)
        assert ct.n_members.sum() == len(sp)
        snapped = snap_to_centroids(sp, ct)
        again = cluster_staypoints(snapped, 100.0, tz_offset_min=-480)
        assert np.array_equal(again.sp_cluster, ct.sp_cluster)
        assert np.allclose(again.lat, ct.lat, atol=1e-12) and np.allclose(again.lon, ct.lon, atol=1e-12)
        assert np.array_equal(again.n_days, ct.n_days)

    def test_clusters_stay_within_agent(self, small_corpus):
        ct = cluster_staypoints(small_corpus.sp, 100.0)
        assert np.array_equal(ct.agent[ct.sp_cluster], small_corpus.sp.agent)

    @given(st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)), min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_every_staypoint_in_one_cluster(self, pts):
        pts = np.array(pts)
        n = len(pts)
        sp = _agent_sp(pts[:, 0], pts[:, 1], T0 + np.arange(n) * 7200, [1800] * n)
        locs = cluster_agent_staypoints(sp)
        members = sorted(m for c in locs for m in c.member_staypoints)
        assert members == list(range(n))
