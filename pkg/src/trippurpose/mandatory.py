"""Home and work/school anchors by weighted bidding over candidate locations.

Each candidate location bids for each mandatory activity with

    B(l, a) = P_time(a | l) * w_stab(l) * P_space(a | l)

where ``P_time`` sums, over the days the location was visited, the
time-use prior integrated over that day's stays and capped at ``tau_a``;
``w_stab = log2(1 + visit days)``. Home goes to the top Home bidder; the
best remaining Work bidder becomes the second anchor if its bid clears
``theta_exist`` and is typed Work or School by the spatial prior.
Confidence is the normalized margin over the runner-up.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import N_SLOTS, SECONDS_PER_DAY, ActivityType, ReferenceStats, is_weekend_day
from .errors import NoHomeEvidence
from .staypoints import ClusterTable, staypoint_days
from .tables import StaypointTable

TAU_DEFAULT = (1.0, 0.6, 0.5)  # Home, Work, School
THETA_EXIST_REL = 0.05


def _cumulative(profile: np.ndarray) -> np.ndarray:
    """Cumulative mass at slot boundaries, shape (..., 97)."""
    c = np.cumsum(profile, axis=-1)
    return np.concatenate([np.zeros(profile.shape[:-1] + (1,)), c], axis=-1)


def _mass_between(cum: np.ndarray, profile: np.ndarray, x0, x1) -> np.ndarray:
    """Integral of a piecewise-constant slot profile over [x0, x1] (slot units,
    0 <= x0 <= x1 <= 96); broadcasts over rows of ``profile``."""

    def at(x):
        i = np.minimum(np.floor(x).astype(np.int64), N_SLOTS - 1)
        frac = x - i
        return cum[..., i] + frac * profile[..., i]

    return at(np.asarray(x1, dtype=float)) - at(np.asarray(x0, dtype=float))


def _day_segments(sp: StaypointTable, tz_offset_min: int):
    """Split staypoints at local midnight: (row, day, x0, x1) in slot units."""
    rows, days = staypoint_days(sp, tz_offset_min)
    day_start = days * SECONDS_PER_DAY - tz_offset_min * 60
    s0 = np.maximum(sp.t_start[rows], day_start)
    s1 = np.minimum(sp.t_end[rows], day_start + SECONDS_PER_DAY)
    x0 = (s0 - day_start) / 900.0
    x1 = (s1 - day_start) / 900.0
    return rows, days, x0, x1


@dataclass
class BidTable:
    """Per-location bidding factors for (Home, Work, School)."""

    location_id: np.ndarray
    p_time: np.ndarray
    w_stab: np.ndarray
    p_space: np.ndarray

    @property
    def bids(self) -> np.ndarray:
        return self.p_time * self.w_stab[:, None] * self.p_space

    def __len__(self) -> int:
        return int(self.location_id.shape[0])

    def take(self, rows) -> "BidTable":
        return BidTable(self.location_id[rows], self.p_time[rows], self.w_stab[rows], self.p_space[rows])


@dataclass
class MandatoryAssignment:
    """Selected anchors; ``None`` members mean no assignment.

    Margins are the raw normalized bid margins; confidences are the margins
    after the (monotone) confidence transform.
    """

    home: Optional[tuple] = None  # (location_id, confidence)
    mandatory2: Optional[tuple] = None  # (location_id, ActivityType, confidence)
    home_margin: float = float("nan")
    mand_margin: float = float("nan")

    @property
    def is_empty(self) -> bool:
        return self.home is None


def time_evidence_batch(
    sp: StaypointTable,
    clusters: ClusterTable,
    profile: np.ndarray,
    tau: Sequence[float],
    tz_offset_min: int,
) -> np.ndarray:
    """P_time for every cluster and mandatory activity, shape (n_clusters, 3).

    ``profile`` is the (3, 96) time-use prior for Home, Work, School.
    """
    k = len(clusters)
    out = np.zeros((k, 3))
    if len(sp) == 0:
        return out
    rows, days, x0, x1 = _day_segments(sp, tz_offset_min)
    prof = np.asarray(profile, dtype=float)
    cum = _cumulative(prof)
    mass = _mass_between(cum, prof, x0, x1).T  # (segments, 3)
    cid = clusters.sp_cluster[rows]
    keys, inv = np.unique(np.column_stack([cid, days]), axis=0, return_inverse=True)
    inv = inv.ravel()
    daily = np.column_stack([np.bincount(inv, weights=mass[:, a], minlength=len(keys)) for a in range(3)])
    daily = np.minimum(daily, np.asarray(tau, dtype=float)[None, :])
    weekend = is_weekend_day(keys[:, 1])
    daily[weekend, 1:] = 0.0
    for a in range(3):
        out[:, a] = np.bincount(keys[:, 0], weights=daily[:, a], minlength=k)
    return out


def time_evidence(
    staypoints: StaypointTable,
    ref: ReferenceStats,
    tau: Sequence[float] = TAU_DEFAULT,
) -> np.ndarray:
    """P_time(a | l) for (Home, Work, School) over the stays of one location.

    All given staypoints are taken to be snapped to the same location.
    """
    n = len(staypoints)
    days = np.unique(staypoint_days(staypoints, ref.tz_offset_min)[1]) if n else np.zeros(0)
    ct = ClusterTable(
        sp_cluster=np.zeros(n, dtype=np.int64),
        agent=np.zeros(1, dtype=np.int64),
        local_id=np.zeros(1, dtype=np.int64),
        lat=np.zeros(1),
        lon=np.zeros(1),
        radius=np.zeros(1),
        n_members=np.array([n]),
        n_days=np.array([days.size]),
    )
    return time_evidence_batch(staypoints, ct, ref.presence_profile[:3], tau, ref.tz_offset_min)[0]


def stability_weight(n_days) -> np.ndarray:
    return np.log2(1.0 + np.asarray(n_days, dtype=float))


def _margin(b1: float, b2: Optional[float]) -> float:
    if b2 is None:
        return 1.0
    if b1 <= 0:
        return 0.0
    return float(np.clip((b1 - b2) / b1, 0.0, 1.0))


def select_anchors(
    table: BidTable,
    theta_exist: float,
    per_activity: bool = False,
    gamma_m: float = 1.0,
) -> MandatoryAssignment:
    """Pick Home and the Work/School anchor from one agent's candidate bids.

    ``table`` rows must be candidate locations sorted by location id (ties
    in every argmax go to the lowest id). With ``per_activity`` each
    remaining location bids for Work and School separately instead of the
    Work-bid-then-type procedure.
    """
    if len(table) == 0:
        return MandatoryAssignment()
    order = np.argsort(table.location_id, kind="stable")
    table = table.take(order)
    bids = table.bids
    home_bids = bids[:, 0]
    if not np.any(home_bids > 0):
        raise NoHomeEvidence("all Home bids are zero")
    h = int(np.argmax(home_bids))
    rest = np.delete(np.arange(len(table)), h)
    runner = float(np.max(home_bids[rest])) if rest.size else None
    home_margin = _margin(float(home_bids[h]), runner)
    out = MandatoryAssignment(
        home=(int(table.location_id[h]), _transform(home_margin, gamma_m)),
        home_margin=home_margin,
    )
    if rest.size == 0:
        return out
    if per_activity:
        sub = bids[rest][:, 1:3]
        flat = int(np.argmax(sub.ravel()))  # row-major: lowest id first, Work before School
        m_local, a_off = divmod(flat, 2)
        m = int(rest[m_local])
        a = ActivityType.WORK if a_off == 0 else ActivityType.SCHOOL
        if bids[m, a.index] < theta_exist:
            return out
    else:
        m = int(rest[int(np.argmax(bids[rest, 1]))])
        if bids[m, 1] < theta_exist:
            return out
        a = ActivityType.WORK if table.p_space[m, 1] >= table.p_space[m, 2] else ActivityType.SCHOOL
    others = rest[rest != m]
    runner2 = float(np.max(bids[others, a.index])) if others.size else None
    mand_margin = _margin(float(bids[m, a.index]), runner2)
    out.mandatory2 = (int(table.location_id[m]), a, _transform(mand_margin, gamma_m))
    out.mand_margin = mand_margin
    return out


def _transform(margin: float, gamma_m: float) -> float:
    return float(np.clip(gamma_m * margin, 0.0, 1.0))


def run_bidding(
    candidates,
    staypoints: StaypointTable,
    ref: ReferenceStats,
    zone_index,
    tau: Sequence[float] = TAU_DEFAULT,
    theta_exist: float = 0.0,
    per_activity: bool = False,
):
    """Bid one agent's candidate locations; returns ``(assignment, bid_table)``.

    ``candidates`` are :class:`~trippurpose.staypoints.CandidateLocation`
    objects over ``staypoints``; those seen on fewer than two days do not bid.
    """
    cands = [c for c in candidates if c.is_candidate]
    if not cands:
        return MandatoryAssignment(), BidTable(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))
    cands.sort(key=lambda c: c.location_id)
    p_time = np.array([time_evidence(staypoints.take(np.asarray(c.member_staypoints)), ref, tau) for c in cands])
    lat = np.array([c.centroid[0] for c in cands])
    lon = np.array([c.centroid[1] for c in cands])
    p_space, _ = zone_index.likelihood(lat, lon)
    table = BidTable(
        location_id=np.array([c.location_id for c in cands], dtype=np.int64),
        p_time=p_time,
        w_stab=stability_weight([len(c.visit_days) for c in cands]),
        p_space=p_space[:, :3],
    )
    return select_anchors(table, theta_exist, per_activity), table


def label_mandatory(sp_location: np.ndarray, assignment: MandatoryAssignment):
    """Labels and confidences for one agent's staypoints given their location ids.

    Staypoints outside the anchor locations stay unlabeled (label 0, NaN).
    """
    sp_location = np.asarray(sp_location)
    label = np.zeros(sp_location.size, dtype=np.int8)
    conf = np.full(sp_location.size, np.nan)
    if assignment.home is not None:
        m = sp_location == assignment.home[0]
        label[m] = int(ActivityType.HOME)
        conf[m] = assignment.home[1]
    if assignment.mandatory2 is not None:
        loc, a, c = assignment.mandatory2
        m = sp_location == loc
        label[m] = int(a)
        conf[m] = c
    return label, conf
