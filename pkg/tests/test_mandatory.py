import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trippurpose.core import ActivityType, ReferenceStats, meters_per_degree
from trippurpose.errors import NoHomeEvidence
from trippurpose.ingest import load_enrichment
from trippurpose.mandatory import (
    BidTable,
    MandatoryAssignment,
    label_mandatory,
    run_bidding,
    select_anchors,
    stability_weight,
    time_evidence,
)
from trippurpose.staypoints import cluster_agent_staypoints
from trippurpose.synthetic import default_reference
from trippurpose.tables import PoiTable, StaypointTable
from trippurpose.zones import ZoneIndex, build_zones

MONDAY = 1546819200  # 2019-01-07 00:00 UTC
H = 3600
LAT0, LON0 = 34.05, -118.25
M_LAT, M_LON = meters_per_degree(LAT0)


def _uniform_ref():
    return ReferenceStats(np.ones(15), np.ones((15, 96)), np.ones((15, 96)), 0)


def _stays(intervals, lat=LAT0, lon=LON0):
    t0 = np.array([a for a, _ in intervals])
    t1 = np.array([b for _, b in intervals])
    n = len(intervals)
    return StaypointTable.from_arrays(["u"], np.zeros(n, dtype=int), np.full(n, lat), np.full(n, lon), t0, t1)


def _presence_integral(profile_row, t0, t1, tz):
    """Minute-by-minute integral of a slot profile over [t0, t1), split per local day."""
    per_day = {}
    for m in range((t1 - t0) // 60):
        local = t0 + 60 * m + tz * 60
        day, sec = divmod(local, 86400)
        per_day[day] = per_day.get(day, 0.0) + profile_row[sec // 900] / 15.0
    return per_day


class TestTimeEvidence:
    def test_full_day(self):
        p = time_evidence(_stays([(MONDAY, MONDAY + 24 * H)]), _uniform_ref(), tau=(np.inf,) * 3)
        assert p[0] == pytest.approx(1.0, abs=1e-12)

    def test_three_days_additive(self):
        stays = [(MONDAY + d * 24 * H, MONDAY + (d + 1) * 24 * H) for d in range(3)]
        p = time_evidence(_stays(stays), _uniform_ref(), tau=(np.inf,) * 3)
        assert p[0] == pytest.approx(3.0, abs=1e-12)

    def test_daily_cap(self):
        # raw integrals 0.4 and 0.5 on the same day
        a = (MONDAY, MONDAY + int(0.4 * 24 * H))
        b = (MONDAY + 12 * H, MONDAY + 12 * H + int(0.5 * 24 * H) - 1)
        ref = _uniform_ref()
        assert time_evidence(_stays([a]), ref, tau=(0.6,) * 3)[0] == pytest.approx(0.4)
        assert time_evidence(_stays([a, b]), ref, tau=(0.6,) * 3)[0] == pytest.approx(0.6)

    def test_weekend_zero_for_work(self):
        saturday = MONDAY + 5 * 24 * H
        p = time_evidence(_stays([(saturday + 9 * H, saturday + 17 * H)]), default_reference(0))
        assert p[1] == 0 and p[2] == 0 and p[0] > 0

    def test_matches_minute_integral(self, rng):
        ref = default_reference(-480)
        prof = ref.presence_profile
        for _ in range(20):
            starts = np.sort(rng.integers(0, 10 * 24 * 60, 4)) * 60 + MONDAY
            stays = [(int(s), int(s) + int(rng.integers(5, 30 * 60)) * 60) for s in starts]
            stays = [s for k, s in enumerate(stays) if k == 0 or s[0] >= stays[k - 1][1]]
            tau = (0.7, 0.3, 0.2)
            got = time_evidence(_stays(stays), ref, tau)
            for a in range(3):
                daily = {}
                for t0, t1 in stays:
                    for d, v in _presence_integral(prof[a], t0, t1, -480).items():
                        daily[d] = daily.get(d, 0.0) + v
                expect = sum(0.0 if (a > 0 and (d + 3) % 7 >= 5) else min(v, tau[a]) for d, v in daily.items())
                assert got[a] == pytest.approx(expect, abs=1e-9)

    @given(st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_cap_monotone(self, t1, t2):
        lo, hi = sorted((t1, t2))
        sp = _stays([(MONDAY + d * 24 * H + 8 * H, MONDAY + d * 24 * H + 18 * H) for d in range(6)])
        ref = default_reference(0)
        assert np.all(time_evidence(sp, ref, (lo,) * 3) <= time_evidence(sp, ref, (hi,) * 3) + 1e-15)

    def test_weekend_visits_never_raise_work_time(self):
        ref = default_reference(0)
        week = [(MONDAY + d * 24 * H + 9 * H, MONDAY + d * 24 * H + 17 * H) for d in range(5)]
        weekend = [(MONDAY + d * 24 * H + 9 * H, MONDAY + d * 24 * H + 17 * H) for d in (5, 6)]
        base = time_evidence(_stays(week), ref)
        more = time_evidence(_stays(week + weekend), ref)
        assert more[1] == base[1] and more[2] == base[2]


def test_stability_weight():
    assert stability_weight(1) == 1.0
    assert stability_weight(3) == 2.0
    assert np.allclose(stability_weight([0, 7]), [0.0, 3.0])


def _table(home_bids, work_bids=None, school_space=None):
    n = len(home_bids)
    work = np.zeros(n) if work_bids is None else np.asarray(work_bids, float)
    p_time = np.column_stack([home_bids, work, work])
    p_space = np.ones((n, 3))
    if school_space is not None:
        p_space[:, 2] = school_space
    return BidTable(np.arange(n), p_time, np.ones(n), p_space)


class TestSelectAnchors:
    def test_single_candidate(self):
        a = select_anchors(_table([2.0]), 0.1)
        assert a.home == (0, 1.0) and a.mandatory2 is None

    def test_tie(self):
        a = select_anchors(_table([1.5, 1.5]), 0.1)
        assert a.home == (0, 0.0)

    def test_no_home(self):
        with pytest.raises(NoHomeEvidence):
            select_anchors(_table([0.0, 0.0]), 0.1)

    def test_theta_exist(self):
        assert select_anchors(_table([3.0, 0.1], [0.0, 0.5]), 0.6).mandatory2 is None
        a = select_anchors(_table([3.0, 0.1], [0.0, 0.5]), 0.4)
        assert a.mandatory2 == (1, ActivityType.WORK, 1.0)

    def test_school_typed_by_space(self):
        a = select_anchors(_table([3.0, 0.1, 0.0], [0.0, 2.0, 1.0], school_space=[1.0, 3.0, 3.0]), 0.1)
        loc, act, conf = a.mandatory2
        assert loc == 1 and act is ActivityType.SCHOOL
        # runner-up School bid: 1.0 * 3.0 against 2.0 * 3.0
        assert conf == pytest.approx(0.5)

    def test_per_activity_toggle(self):
        t = _table([3.0, 0.1, 0.0], [0.0, 1.0, 0.9], school_space=[1.0, 0.2, 2.0])
        assert select_anchors(t, 0.1).mandatory2[0] == 1
        loc, act, _ = select_anchors(t, 0.1, per_activity=True).mandatory2
        assert (loc, act) == (2, ActivityType.SCHOOL)

    @given(st.lists(st.floats(0, 100), min_size=2, max_size=8).filter(lambda b: max(b) > 0), st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, bids, lam):
        a = select_anchors(_table(bids), 0.0)
        b = select_anchors(_table([x * lam for x in bids]), 0.0)
        assert a.home[0] == b.home[0]
        assert a.home[1] == pytest.approx(b.home[1], abs=1e-9)
        assert 0.0 <= a.home[1] <= 1.0

    def test_gamma_clamp(self):
        a = select_anchors(_table([4.0, 3.0]), 0.0, gamma_m=3.0)
        assert a.home_margin == pytest.approx(0.25)
        assert a.home[1] == pytest.approx(0.75)
        assert select_anchors(_table([4.0, 1.0]), 0.0, gamma_m=3.0).home[1] == 1.0


def _local(day, hour):
    # local time at UTC-8
    return MONDAY + day * 24 * H + int(hour * H) + 480 * 60


@pytest.fixture
def three_location_agent():
    places = {"home": (0.0, 0.0), "work": (3000.0, 1500.0), "cafe": (-1200.0, 2200.0)}
    stays = []
    for d in range(7):
        stays.append(("home", _local(d, 22 - 24) if d else _local(0, 0), _local(d, 6)))
    for d in range(5):
        stays.append(("work", _local(d, 9), _local(d, 17)))
    for d in (1, 3):
        stays.append(("cafe", _local(d, 18), _local(d, 19)))
    stays.sort(key=lambda s: s[1])
    lat = [LAT0 + places[p][0] / M_LAT for p, _, _ in stays]
    lon = [LON0 + places[p][1] / M_LON for p, _, _ in stays]
    sp = StaypointTable.from_arrays(["u"], np.zeros(len(stays), dtype=int), lat, lon, [s[1] for s in stays], [s[2] for s in stays])
    table = load_enrichment()
    cats = {"home": "house", "work": "office", "cafe": "cafe"}
    pois = PoiTable(
        list(places),
        np.array([LAT0 + places[p][0] / M_LAT for p in places]),
        np.array([LON0 + places[p][1] / M_LON for p in places]),
        np.array([table[cats[p]] for p in places]),
    )
    names = [p for p, _, _ in stays]
    return sp, ZoneIndex(build_zones(pois, 100, 1)), names


class TestRunBidding:
    def test_three_location_agent(self, three_location_agent):
        sp, index, names = three_location_agent
        ref = default_reference(-480)
        cands = cluster_agent_staypoints(sp, 100, tz_offset_min=-480)
        assignment, table = run_bidding(cands, sp, ref, index, theta_exist=0.0)
        loc_name = {c.location_id: names[c.member_staypoints[0]] for c in cands}
        assert loc_name[assignment.home[0]] == "home"
        assert loc_name[assignment.mandatory2[0]] == "work"
        assert assignment.mandatory2[1] is ActivityType.WORK

        # exhaustive oracle over (home location, second-anchor location) pairs
        B = table.bids
        ids = list(table.location_id)
        best = max(
            itertools.permutations(range(len(ids)), 2),
            key=lambda hm: (B[hm[0], 0], B[hm[1], 1], -hm[0], -hm[1]),
        )
        assert (ids[best[0]], ids[best[1]]) == (assignment.home[0], assignment.mandatory2[0])

    def test_no_candidates(self):
        sp = _stays([(MONDAY, MONDAY + H)])
        cands = cluster_agent_staypoints(sp)
        assignment, table = run_bidding(cands, sp, _uniform_ref(), None)
        assert assignment.is_empty and len(table) == 0

    def test_weekend_visits_on_known_day_leave_work_bid(self, three_location_agent):
        sp, index, names = three_location_agent
        ref = default_reference(-480)
        base_c = cluster_agent_staypoints(sp, 100, tz_offset_min=-480)
        _, base = run_bidding(base_c, sp, ref, index)
        # copy Monday's work stay onto Sunday: the location gains a visit day
        # (so w_stab grows) but its Work time evidence must not move
        work = [i for i, n in enumerate(names) if n == "work"]
        extra = sp.take(np.array(work[:1]))
        extra.t_start = extra.t_start + 6 * 24 * H
        extra.t_end = extra.t_end + 6 * 24 * H
        more = StaypointTable.from_arrays(
            ["u"], np.zeros(len(sp) + 1, dtype=int), np.append(sp.lat, extra.lat), np.append(sp.lon, extra.lon),
            np.append(sp.t_start, extra.t_start), np.append(sp.t_end, extra.t_end),
        )
        cands = cluster_agent_staypoints(more, 100, tz_offset_min=-480)
        _, after = run_bidding(cands, more, ref, index)
        wrow = lambda t: int(np.argmax(t.p_time[:, 1]))
        assert after.p_time[wrow(after), 1] == pytest.approx(base.p_time[wrow(base), 1], abs=1e-12)


class TestLabelMandatory:
    def test_empty(self):
        label, conf = label_mandatory(np.arange(4), MandatoryAssignment())
        assert not label.any() and np.isnan(conf).all()

    def test_home_cluster(self):
        loc = np.array([0, 0, 1, 0, 2, 0, 0])
        a = MandatoryAssignment(home=(0, 0.8), mandatory2=(2, ActivityType.SCHOOL, 0.4))
        label, conf = label_mandatory(loc, a)
        assert (label == 1).sum() == 5 and np.all(conf[label == 1] == 0.8)
        assert label[4] == ActivityType.SCHOOL and conf[4] == 0.4
        unl = label == 0
        assert unl.sum() == 1 and np.isnan(conf[unl]).all()
