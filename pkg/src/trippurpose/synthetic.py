"""Synthetic desk-scale corpora with known ground truth.

The world is a rectangular region holding residential POIs, office parks,
schools, mixed commercial districts and standalone amenities. Each agent
has a home anchor, optionally a work or school anchor visited on weekdays,
and non-mandatory visits whose start times and durations are sampled from
the reference priors and whose locations sit next to POIs of the visited
activity type. Pings are emitted at a 1-5 minute cadence with Gaussian
positional noise.
"""
from __future__ import annotations

import bisect
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    N_ACTIVITIES,
    N_SLOTS,
    NON_SLICE,
    EARTH_RADIUS_M,
    SECONDS_PER_DAY,
    ActivityType,
    ReferenceStats,
    duration_bin,
    haversine,
    meters_per_degree,
    normalize,
    slot_of,
)
from .errors import ConfigError
from .ingest import load_enrichment
from .tables import PingTable, PoiTable, StaypointTable

# (hour, sd hours, weight) bumps for the start-time prior, and
# (median minutes, log-sd) for the duration prior
_START_BUMPS = {
    ActivityType.HOME: [(17.5, 2.0, 0.55), (12.5, 2.0, 0.20), (21.5, 1.5, 0.25)],
    ActivityType.WORK: [(8.0, 1.2, 0.70), (13.0, 1.0, 0.15), (17.0, 3.0, 0.15)],
    ActivityType.SCHOOL: [(7.8, 0.6, 0.80), (12.5, 2.0, 0.20)],
    ActivityType.CAREGIVING: [(9.0, 2.0, 0.5), (16.0, 2.0, 0.5)],
    ActivityType.SHOP_GOODS: [(11.0, 2.5, 0.5), (17.0, 2.0, 0.5)],
    ActivityType.SHOP_SERVICES: [(11.0, 2.0, 0.7), (15.0, 2.0, 0.3)],
    ActivityType.MEALS_OUT: [(12.3, 0.9, 0.5), (18.8, 1.2, 0.4), (8.0, 1.0, 0.1)],
    ActivityType.ERRANDS: [(10.5, 2.0, 0.5), (15.0, 2.0, 0.5)],
    ActivityType.LEISURE: [(14.0, 3.0, 0.5), (19.5, 1.5, 0.5)],
    ActivityType.EXERCISE: [(6.5, 1.0, 0.4), (17.8, 1.3, 0.6)],
    ActivityType.SOCIAL: [(15.0, 3.0, 0.5), (19.0, 1.5, 0.5)],
    ActivityType.HEALTHCARE: [(10.0, 2.0, 0.6), (14.5, 1.5, 0.4)],
    ActivityType.WORSHIP: [(9.5, 1.0, 0.6), (19.0, 1.0, 0.4)],
    ActivityType.OTHER: [(12.0, 4.0, 1.0)],
    ActivityType.PICKUP_DROP: [(7.8, 0.7, 0.5), (15.2, 0.8, 0.5)],
}
_DURATIONS = {
    ActivityType.HOME: (480.0, 0.9),
    ActivityType.WORK: (480.0, 0.35),
    ActivityType.SCHOOL: (390.0, 0.3),
    ActivityType.CAREGIVING: (60.0, 0.8),
    ActivityType.SHOP_GOODS: (25.0, 0.7),
    ActivityType.SHOP_SERVICES: (45.0, 0.6),
    ActivityType.MEALS_OUT: (50.0, 0.5),
    ActivityType.ERRANDS: (20.0, 0.7),
    ActivityType.LEISURE: (120.0, 0.6),
    ActivityType.EXERCISE: (60.0, 0.4),
    ActivityType.SOCIAL: (120.0, 0.7),
    ActivityType.HEALTHCARE: (60.0, 0.6),
    ActivityType.WORSHIP: (90.0, 0.4),
    ActivityType.OTHER: (45.0, 0.9),
    ActivityType.PICKUP_DROP: (8.0, 0.5),
}
_SHARES = [0.34, 0.11, 0.035, 0.02, 0.11, 0.04, 0.08, 0.06, 0.04, 0.035, 0.045, 0.02, 0.01, 0.025, 0.03]


def default_reference(tz_offset_min: int = -480) -> ReferenceStats:
    """Survey-like reference statistics bundled with the package.

    Smooth start-time mixtures and log-normal durations in the shape of a
    metropolitan household travel survey; used by the synthetic generator
    and as a stand-in when no survey extract is available.
    """
    from scipy.stats import norm

    hours = (np.arange(N_SLOTS) + 0.5) / 4.0
    start = np.zeros((N_ACTIVITIES, N_SLOTS))
    dur = np.zeros((N_ACTIVITIES, N_SLOTS))
    edges = np.arange(N_SLOTS + 1) * 15.0
    for a in ActivityType:
        for h, sd, w in _START_BUMPS[a]:
            d = (hours - h + 12.0) % 24.0 - 12.0
            start[a.index] += w * np.exp(-0.5 * (d / sd) ** 2)
        median, s = _DURATIONS[a]
        cdf = norm.cdf((np.log(np.maximum(edges, 1e-9)) - np.log(median)) / s)
        cdf[0] = 0.0
        cdf[-1] = 1.0
        dur[a.index] = np.diff(cdf)
    return ReferenceStats(np.array(_SHARES), start, dur, tz_offset_min)


NM_RETRIES = 100


@dataclass
class SyntheticConfig:
    n_agents: int = 100
    n_days: int = 14
    # (lat_min, lat_max, lon_min, lon_max)
    bbox: tuple = (34.00, 34.09, -118.30, -118.19)
    sigma_gen_m: float = 8.0
    reference: Optional[ReferenceStats] = None
    start_date: str = "2019-01-07"
    cadence_s: tuple = (60, 300)
    p_work: float = 0.6
    p_school: float = 0.15
    attendance: float = 0.92
    nm_rate: float = 1.3
    p_favorite: float = 0.7
    n_favorites: int = 2
    speed_mps: float = 10.0
    n_residential: int = 600
    n_office_parks: int = 25
    n_schools: int = 30
    n_districts: int = 120
    n_standalone: int = 500
    anchor_offset_m: float = 10.0


@dataclass
class SyntheticGroundTruth:
    """Planted stays (home stays included) and per-agent anchors.

    ``mand_type`` is 0 when the agent has no work/school anchor, else the
    activity code (2 or 3).
    """

    agent_ids: list
    visit_agent: np.ndarray
    visit_t0: np.ndarray
    visit_t1: np.ndarray
    visit_label: np.ndarray
    visit_lat: np.ndarray
    visit_lon: np.ndarray
    home_lat: np.ndarray
    home_lon: np.ndarray
    mand_type: np.ndarray
    mand_lat: np.ndarray
    mand_lon: np.ndarray
    nm_shares: np.ndarray = field(default=None)

    def label_staypoints(self, sp: StaypointTable) -> np.ndarray:
        """True label of each extracted staypoint: the planted stay with the
        largest time overlap (0 when nothing overlaps)."""
        pos = {a: i for i, a in enumerate(self.agent_ids)}
        out = np.zeros(len(sp), dtype=np.int8)
        vo = np.concatenate([[0], np.cumsum(np.bincount(self.visit_agent, minlength=len(self.agent_ids)))])
        for j, aid in enumerate(sp.agent_ids):
            i = pos.get(aid)
            rows = np.flatnonzero(sp.agent == j)
            if i is None or rows.size == 0:
                continue
            v0, v1 = vo[i], vo[i + 1]
            t0, t1 = self.visit_t0[v0:v1], self.visit_t1[v0:v1]
            for r in rows:
                lo = bisect.bisect_right(t1, sp.t_start[r])
                hi = bisect.bisect_left(t0, sp.t_end[r])
                best, best_ov = 0, 0
                for k in range(max(lo - 1, 0), min(hi + 1, len(t0))):
                    ov = min(t1[k], sp.t_end[r]) - max(t0[k], sp.t_start[r])
                    if ov > best_ov:
                        best, best_ov = int(self.visit_label[v0 + k]), ov
                out[r] = best
        return out


def _category_types(enrichment: dict) -> dict:
    return {c: ActivityType(int(np.argmax(v)) + 1) for c, v in enrichment.items()}


def _scatter(rng, n, center_lat, center_lon, sd_m):
    m_lat, m_lon = meters_per_degree(center_lat)
    return (
        center_lat + rng.normal(0.0, sd_m, n) / m_lat,
        center_lon + rng.normal(0.0, sd_m, n) / m_lon,
    )


def _build_world(cfg: SyntheticConfig, rng, enrichment: dict) -> PoiTable:
    lat0, lat1, lon0, lon1 = cfg.bbox
    types = _category_types(enrichment)
    by_type: dict = {}
    for c, a in types.items():
        by_type.setdefault(a, []).append(c)
    residential = by_type[ActivityType.HOME]
    offices = by_type[ActivityType.WORK]
    schools = by_type[ActivityType.SCHOOL]
    nm_types = [a for a in ActivityType if a.index >= 3 and a in by_type]

    lats, lons, cats = [], [], []

    def add(la, lo, cs):
        lats.extend(np.atleast_1d(la))
        lons.extend(np.atleast_1d(lo))
        cats.extend(cs)

    def uniform(n):
        return rng.uniform(lat0, lat1, n), rng.uniform(lon0, lon1, n)

    la, lo = uniform(cfg.n_residential)
    add(la, lo, [residential[i] for i in rng.integers(0, len(residential), cfg.n_residential)])
    for _ in range(cfg.n_office_parks):
        c_la, c_lo = uniform(1)
        n = int(rng.integers(4, 13))
        la, lo = _scatter(rng, n, c_la[0], c_lo[0], 40.0)
        add(la, lo, [offices[i] for i in rng.integers(0, len(offices), n)])
    la, lo = uniform(cfg.n_schools)
    add(la, lo, [schools[i] for i in rng.integers(0, len(schools), cfg.n_schools)])

    def nm_category():
        a = nm_types[int(rng.integers(0, len(nm_types)))]
        cs = by_type[a]
        return cs[int(rng.integers(0, len(cs)))]

    for _ in range(cfg.n_districts):
        c_la, c_lo = uniform(1)
        n = int(rng.integers(3, 11))
        la, lo = _scatter(rng, n, c_la[0], c_lo[0], 30.0)
        add(la, lo, [nm_category() for _ in range(n)])
    la, lo = uniform(cfg.n_standalone)
    add(la, lo, [nm_category() for _ in range(cfg.n_standalone)])

    n = len(cats)
    dist = np.array([enrichment[c] for c in cats])
    return PoiTable([f"p{i:06d}" for i in range(n)], np.array(lats), np.array(lons), dist, cats)


def _draw(rng, cdf_row) -> int:
    return min(int(np.searchsorted(cdf_row, rng.random() * cdf_row[-1], side="right")), cdf_row.size - 1)


def _sample_duration(rng, cdf_row) -> int:
    b = _draw(rng, cdf_row)
    lo = max(b * 900, 600)
    hi = (b + 1) * 900
    return int(rng.integers(lo, hi)) if hi > lo else lo


def _sample_start(rng, cdf_row, midnight: int) -> int:
    s = _draw(rng, cdf_row)
    return midnight + s * 900 + int(rng.integers(0, 900))


class _Agent:
    def __init__(self, cfg, ref, pois, poi_type, rng, period_start, nm_shares):
        self.cfg = cfg
        self.rng = rng
        lat0, lat1, lon0, lon1 = cfg.bbox
        m_lat, m_lon = meters_per_degree(0.5 * (lat0 + lat1))
        self.m_lat, self.m_lon = m_lat, m_lon
        home_pool = np.flatnonzero(poi_type == ActivityType.HOME)
        if home_pool.size:
            h = int(rng.choice(home_pool))
            self.home = self._jitter(pois.lat[h], pois.lon[h])
        else:
            self.home = (rng.uniform(lat0, lat1), rng.uniform(lon0, lon1))
        self.mand_type = 0
        self.mand = (np.nan, np.nan)
        u = rng.random()
        role = None
        if u < cfg.p_work:
            role = ActivityType.WORK
        elif u < cfg.p_work + cfg.p_school:
            role = ActivityType.SCHOOL
        if role is not None:
            pool = np.flatnonzero(poi_type == role)
            if pool.size:
                j = int(rng.choice(pool))
                self.mand = self._jitter(pois.lat[j], pois.lon[j])
                self.mand_type = int(role)
        d_home = haversine(self.home[0], self.home[1], pois.lat, pois.lon)
        self.pois = pois
        self.poi_type = poi_type
        self.weights = np.exp(-d_home / 2500.0)
        self.favorites = {}
        for a in range(4, N_ACTIVITIES + 1):
            pool = np.flatnonzero(poi_type == a)
            if pool.size:
                w = self.weights[pool] / self.weights[pool].sum()
                k = min(cfg.n_favorites, pool.size)
                self.favorites[a] = rng.choice(pool, size=k, replace=False, p=w)
        self.ref = ref
        self.start_cdf = np.cumsum(ref.start_prior, axis=1)
        self.dur_cdf = np.cumsum(ref.duration_prior, axis=1)
        self.period_start = period_start
        self.nm_shares = nm_shares

    def _jitter(self, lat, lon):
        off = self.rng.normal(0.0, self.cfg.anchor_offset_m, 2)
        return (float(lat + off[0] / self.m_lat), float(lon + off[1] / self.m_lon))

    def travel(self, a, b) -> int:
        # scalar great-circle distance; numpy overhead dominates on single points
        p1, p2 = math.radians(a[0]), math.radians(b[0])
        h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(b[1] - a[1]) / 2) ** 2
        dist = 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))
        return int(dist / self.cfg.speed_mps) + 120

    def nm_location(self, a: int):
        rng = self.rng
        if a in self.favorites and rng.random() < self.cfg.p_favorite:
            j = int(rng.choice(self.favorites[a]))
        else:
            pool = np.flatnonzero(self.poi_type == a)
            if pool.size == 0:
                return None
            w = self.weights[pool] / self.weights[pool].sum()
            j = int(rng.choice(pool, p=w))
        return self._jitter(self.pois.lat[j], self.pois.lon[j])

    def plan(self):
        """Accepted (start, end, label, loc) events, mandatory placed first."""
        cfg, rng, ref = self.cfg, self.rng, self.ref
        mand, nm = [], []
        for d in range(cfg.n_days):
            midnight = self.period_start + d * SECONDS_PER_DAY
            if self.mand_type and d % 7 < 5 and rng.random() < cfg.attendance:
                k = self.mand_type - 1
                s = _sample_start(rng, self.start_cdf[k], midnight)
                mand.append((s, s + _sample_duration(rng, self.dur_cdf[k]), self.mand_type, self.mand))
            for _ in range(int(rng.poisson(cfg.nm_rate))):
                a = int(rng.choice(np.arange(4, N_ACTIVITIES + 1), p=self.nm_shares))
                loc = self.nm_location(a)
                if loc is None:
                    continue
                nm.append((midnight, a, loc))
        lo = self.period_start + 3600
        hi = self.period_start + cfg.n_days * SECONDS_PER_DAY - 3600
        starts, accepted = [], []

        def place(ev):
            s, e, _, loc = ev
            if s < lo or e > hi:
                return False
            i = bisect.bisect_left(starts, s)
            if i > 0:
                p = accepted[i - 1]
                if s < p[1] + self.travel(p[3], loc) + 600:
                    return False
            if i < len(accepted):
                q = accepted[i]
                if e + self.travel(loc, q[3]) + 600 > q[0]:
                    return False
            starts.insert(i, s)
            accepted.insert(i, ev)
            return True

        for ev in mand:
            place(ev)
        # a colliding stay is re-timed rather than dropped, so that accepted
        # labels keep the configured shares instead of favoring short stays
        for midnight, a, loc in nm:
            for _ in range(NM_RETRIES):
                s = _sample_start(rng, self.start_cdf[a - 1], midnight)
                if place((s, s + _sample_duration(rng, self.dur_cdf[a - 1]), a, loc)):
                    break
        return accepted

    def timeline(self, events):
        """Stay and travel segments: (t0, t1, lat0, lon0, lat1, lon1, label)."""
        end = self.period_start + self.cfg.n_days * SECONDS_PER_DAY
        home = self.home
        segs = []
        cur_loc, cur_t, cur_label = home, self.period_start, int(ActivityType.HOME)
        min_home = 1200

        def stay(t0, t1, loc, label):
            segs.append((t0, t1, loc[0], loc[1], loc[0], loc[1], label))

        def move(t0, t1, a, b):
            if t1 > t0:
                segs.append((t0, t1, a[0], a[1], b[0], b[1], 0))

        for s, e, label, loc in events:
            if cur_label == ActivityType.HOME:
                dep = s - self.travel(home, loc)
                stay(cur_t, dep, home, cur_label)
                move(dep, s, home, loc)
            else:
                back, out = self.travel(cur_loc, home), self.travel(home, loc)
                if s - cur_t >= back + out + min_home:
                    move(cur_t, cur_t + back, cur_loc, home)
                    stay(cur_t + back, s - out, home, int(ActivityType.HOME))
                    move(s - out, s, home, loc)
                else:
                    dep = s - self.travel(cur_loc, loc)
                    # linger at the previous place until departure
                    t0, _, la, lo, _, _, lab = segs.pop()
                    stay(t0, dep, (la, lo), lab)
                    move(dep, s, cur_loc, loc)
            stay(s, e, loc, label)
            cur_loc, cur_t, cur_label = loc, e, label
        if cur_label == ActivityType.HOME:
            stay(cur_t, end, home, cur_label)
        else:
            back = self.travel(cur_loc, home)
            move(cur_t, cur_t + back, cur_loc, home)
            stay(cur_t + back, end, home, int(ActivityType.HOME))
        return segs

    def pings(self, segs):
        cfg, rng = self.cfg, self.rng
        start, end = segs[0][0], segs[-1][1]
        lo, hi = cfg.cadence_s
        n_est = int((end - start) / lo) + 2
        gaps = rng.integers(lo, hi + 1, n_est)
        t = start + np.concatenate([[0], np.cumsum(gaps)])
        t = t[t <= end]
        bounds = np.array([(s[0], s[1]) for s in segs if s[6] != 0]).ravel()
        t = np.unique(np.concatenate([t, bounds]))
        seg = np.array(segs, dtype=float)
        t0 = seg[:, 0]
        j = np.clip(np.searchsorted(t0, t, side="right") - 1, 0, len(segs) - 1)
        # travel runs at constant speed; the fixed trip overhead is spent
        # half before leaving and half after reaching the destination
        span = seg[j, 1] - seg[j, 0]
        dist = haversine(seg[j, 2], seg[j, 3], seg[j, 4], seg[j, 5])
        drive = np.minimum(dist / cfg.speed_mps, span)
        wait = 0.5 * (span - drive)
        frac = np.where(drive > 0, (t - seg[j, 0] - wait) / np.where(drive > 0, drive, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        lat = seg[j, 2] + (seg[j, 4] - seg[j, 2]) * frac
        lon = seg[j, 3] + (seg[j, 5] - seg[j, 3]) * frac
        noise = rng.normal(0.0, cfg.sigma_gen_m, (2, t.size))
        return t.astype(np.int64), lat + noise[0] / self.m_lat, lon + noise[1] / self.m_lon


def _period_start(cfg: SyntheticConfig, ref: ReferenceStats) -> int:
    day = dt.date.fromisoformat(cfg.start_date)
    local_midnight = (day - dt.date(1970, 1, 1)).days * SECONDS_PER_DAY
    return local_midnight - ref.tz_offset_min * 60


def generate_synthetic(config: SyntheticConfig, seed: int, emit_pings: bool = True):
    """Generate ``(pings, pois, truth)`` deterministically from ``seed``.

    Each agent draws from its own generator seeded by ``(seed, agent index)``,
    so agents can be produced independently. With ``emit_pings=False`` only
    the planted stays are simulated and the ping table is empty.
    """
    cfg = config
    lat0, lat1, lon0, lon1 = cfg.bbox
    if not (lat1 > lat0 and lon1 > lon0):
        raise ConfigError(f"empty bounding box {cfg.bbox}")
    if cfg.n_agents < 0 or cfg.n_days < 1:
        raise ConfigError("n_agents must be >= 0 and n_days >= 1")
    ref = cfg.reference if cfg.reference is not None else default_reference()
    enrichment = load_enrichment()
    world_rng = np.random.default_rng([seed, 0])
    pois = _build_world(cfg, world_rng, enrichment)
    poi_type = np.argmax(pois.dist, axis=1) + 1
    nm_shares = normalize(ref.activity_shares[NON_SLICE])
    period_start = _period_start(cfg, ref)

    ids = [f"a{i:05d}" for i in range(cfg.n_agents)]
    ts, las, los = [], [], []
    v_agent, v_t0, v_t1, v_lab, v_lat, v_lon = [], [], [], [], [], []
    home = np.zeros((cfg.n_agents, 2))
    mand = np.full((cfg.n_agents, 2), np.nan)
    mand_type = np.zeros(cfg.n_agents, dtype=np.int8)
    for i in range(cfg.n_agents):
        rng = np.random.default_rng([seed, 1, i])
        agent = _Agent(cfg, ref, pois, poi_type, rng, period_start, nm_shares)
        segs = agent.timeline(agent.plan())
        if emit_pings:
            t, la, lo = agent.pings(segs)
        else:
            t, la, lo = np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0)
        ts.append(t)
        las.append(la)
        los.append(lo)
        for s in segs:
            if s[6] != 0 and s[1] > s[0]:
                v_agent.append(i)
                v_t0.append(s[0])
                v_t1.append(s[1])
                v_lab.append(s[6])
                v_lat.append(s[2])
                v_lon.append(s[3])
        home[i] = agent.home
        mand[i] = agent.mand
        mand_type[i] = agent.mand_type

    counts = np.array([len(t) for t in ts], dtype=np.int64)
    pings = PingTable(
        agent_ids=ids,
        offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
        t=np.concatenate(ts) if ts else np.zeros(0, dtype=np.int64),
        lat=np.concatenate(las) if las else np.zeros(0),
        lon=np.concatenate(los) if los else np.zeros(0),
    )
    truth = SyntheticGroundTruth(
        agent_ids=ids,
        visit_agent=np.array(v_agent, dtype=np.int64),
        visit_t0=np.array(v_t0, dtype=np.int64),
        visit_t1=np.array(v_t1, dtype=np.int64),
        visit_label=np.array(v_lab, dtype=np.int8),
        visit_lat=np.array(v_lat),
        visit_lon=np.array(v_lon),
        home_lat=home[:, 0],
        home_lon=home[:, 1],
        mand_type=mand_type,
        mand_lat=mand[:, 0],
        mand_lon=mand[:, 1],
        nm_shares=nm_shares,
    )
    return pings, pois, truth


def survey_reference(truth: SyntheticGroundTruth, tz_offset_min: int = -480, pseudo_count: float = 0.5) -> ReferenceStats:
    """Reference statistics tabulated from planted stays, as a travel survey
    of the simulated population would report them.

    Stays cut by the start or end of the simulated period are left out; a
    small pseudo count keeps every bin positive.
    """
    t0, t1, lab = truth.visit_t0, truth.visit_t1, truth.visit_label.astype(np.int64)
    keep = np.ones(t0.size, dtype=bool)
    for a in np.unique(truth.visit_agent):
        rows = np.flatnonzero(truth.visit_agent == a)
        keep[rows[0]] = keep[rows[-1]] = False
    t0, t1, a = t0[keep], t1[keep], lab[keep] - 1
    shares = np.bincount(a, minlength=N_ACTIVITIES) + pseudo_count
    start = np.full((N_ACTIVITIES, N_SLOTS), pseudo_count / N_SLOTS)
    dur = np.full((N_ACTIVITIES, N_SLOTS), pseudo_count / N_SLOTS)
    np.add.at(start, (a, slot_of(t0, tz_offset_min)), 1.0)
    np.add.at(dur, (a, duration_bin(t1 - t0)), 1.0)
    return ReferenceStats(shares / shares.sum(), start, dur, tz_offset_min)
