"""Activity taxonomy, time binning, distance kernel and reference statistics.

Everything in here is pure and immutable; the rest of the package builds on
these definitions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DegenerateDistribution, SchemaError

EARTH_RADIUS_M = 6_371_000.0
N_ACTIVITIES = 15
N_SLOTS = 96
SLOT_MINUTES = 15
SECONDS_PER_DAY = 86_400
PROB_TOL = 1e-9


class ActivityClass(enum.Enum):
    MANDATORY = "mandatory"
    NON_MANDATORY = "non_mandatory"


class ActivityType(enum.IntEnum):
    HOME = 1
    WORK = 2
    SCHOOL = 3
    CAREGIVING = 4
    SHOP_GOODS = 5
    SHOP_SERVICES = 6
    MEALS_OUT = 7
    ERRANDS = 8
    LEISURE = 9
    EXERCISE = 10
    SOCIAL = 11
    HEALTHCARE = 12
    WORSHIP = 13
    OTHER = 14
    PICKUP_DROP = 15

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def activity_class(self) -> ActivityClass:
        if self <= ActivityType.SCHOOL:
            return ActivityClass.MANDATORY
        return ActivityClass.NON_MANDATORY

    @property
    def index(self) -> int:
        """Zero-based position in 15-entry vectors."""
        return int(self) - 1


_LABELS = {
    ActivityType.HOME: "Home",
    ActivityType.WORK: "Work",
    ActivityType.SCHOOL: "School",
    ActivityType.CAREGIVING: "Caregiving",
    ActivityType.SHOP_GOODS: "Shop Goods",
    ActivityType.SHOP_SERVICES: "Shop Services",
    ActivityType.MEALS_OUT: "Meals Out",
    ActivityType.ERRANDS: "Errands",
    ActivityType.LEISURE: "Leisure",
    ActivityType.EXERCISE: "Exercise",
    ActivityType.SOCIAL: "Social",
    ActivityType.HEALTHCARE: "Healthcare",
    ActivityType.WORSHIP: "Worship",
    ActivityType.OTHER: "Other",
    ActivityType.PICKUP_DROP: "Pickup/Drop",
}

MANDATORY = tuple(a for a in ActivityType if a.activity_class is ActivityClass.MANDATORY)
NON_MANDATORY = tuple(a for a in ActivityType if a.activity_class is ActivityClass.NON_MANDATORY)
# zero-based slices into 15-vectors
MAND_SLICE = slice(0, 3)
NON_SLICE = slice(3, 15)


def normalize(v) -> np.ndarray:
    """Scale a non-negative vector so it sums to one."""
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DegenerateDistribution("non-finite entry in distribution")
    if np.any(arr < 0):
        raise DegenerateDistribution("negative entry in distribution")
    total = arr.sum()
    if total <= 0:
        raise DegenerateDistribution("distribution has no positive mass")
    return arr / total


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise normalize; all-zero rows stay zero."""
    m = np.asarray(m, dtype=float)
    s = m.sum(axis=-1, keepdims=True)
    return np.divide(m, s, out=np.zeros_like(m), where=s > 0)


# ---------------------------------------------------------------------------
# time binning

def local_seconds(t, tz_offset_min: int) -> np.ndarray:
    return np.asarray(t, dtype=np.int64) + np.int64(tz_offset_min) * 60


def slot_of(t, tz_offset_min: int = 0):
    """15-minute time-of-day slot (0..95) of UTC instant(s) ``t`` in local time."""
    sec = np.mod(local_seconds(t, tz_offset_min), SECONDS_PER_DAY)
    out = sec // (SLOT_MINUTES * 60)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def duration_bin(d_seconds):
    """15-minute duration bin, clamped to the last bin (95) at 24 h."""
    d = np.asarray(d_seconds)
    out = np.minimum(np.floor_divide(d, SLOT_MINUTES * 60), N_SLOTS - 1)
    out = np.maximum(out, 0)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def local_day(t, tz_offset_min: int = 0):
    """Local calendar day number (days since 1970-01-01 local)."""
    out = np.floor_divide(local_seconds(t, tz_offset_min), SECONDS_PER_DAY)
    return int(out) if np.ndim(out) == 0 else out


def weekday_of_day(day):
    """Monday=0 ... Sunday=6 for a local day number."""
    out = np.mod(np.asarray(day) + 3, 7)
    return int(out) if np.ndim(out) == 0 else out


def is_weekend_day(day):
    return weekday_of_day(day) >= 5


# ---------------------------------------------------------------------------
# geometry

def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; broadcasts over array inputs."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def meters_per_degree(lat_deg: float) -> tuple[float, float]:
    """(m per degree latitude, m per degree longitude) at a latitude."""
    m_lat = np.pi * EARTH_RADIUS_M / 180.0
    return m_lat, m_lat * float(np.cos(np.radians(lat_deg)))


def offset_latlon(lat, lon, north_m, east_m, ref_lat: Optional[float] = None):
    """Shift coordinates by a local metric offset (flat-earth at ``ref_lat``)."""
    ref = float(np.mean(lat)) if ref_lat is None else ref_lat
    m_lat, m_lon = meters_per_degree(ref)
    return np.asarray(lat) + np.asarray(north_m) / m_lat, np.asarray(lon) + np.asarray(east_m) / m_lon


def valid_latlon(lat, lon) -> np.ndarray:
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    return np.isfinite(lat) & np.isfinite(lon) & (np.abs(lat) <= 90) & (np.abs(lon) <= 180)


# ---------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class Staypoint:
    """One stationary episode; ``label``/``confidence`` set after inference."""

    agent_id: str
    lat: float
    lon: float
    t_start: int
    t_end: int
    label: Optional[ActivityType] = None
    confidence: Optional[float] = None

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("t_end must be after t_start")
        if not valid_latlon(self.lat, self.lon):
            raise ValueError(f"invalid location ({self.lat}, {self.lon})")
        if (self.label is None) != (self.confidence is None):
            raise ValueError("label and confidence must be set together")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    @property
    def location(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True, eq=False)
class ReferenceStats:
    """Survey reference distributions.

    ``start_prior`` and ``duration_prior`` are (15, 96) arrays; row ``k - 1``
    holds activity ``k``. Rows with no survey mass are all zero and listed in
    ``empty_activities``.
    """

    activity_shares: np.ndarray
    start_prior: np.ndarray
    duration_prior: np.ndarray
    tz_offset_min: int = 0
    empty_activities: tuple = field(default=())

    def __post_init__(self):
        shares = np.asarray(self.activity_shares, dtype=float)
        start = np.asarray(self.start_prior, dtype=float)
        dur = np.asarray(self.duration_prior, dtype=float)
        if shares.shape != (N_ACTIVITIES,):
            raise SchemaError(f"shares must have {N_ACTIVITIES} entries, got {shares.shape}")
        for name, m in (("start", start), ("duration", dur)):
            if m.shape != (N_ACTIVITIES, N_SLOTS):
                raise SchemaError(f"{name} prior must be {N_ACTIVITIES}x{N_SLOTS}, got {m.shape}")
            if np.any(~np.isfinite(m)) or np.any(m < 0):
                raise SchemaError(f"{name} prior has negative or non-finite entries")
        shares = normalize(shares)
        start = normalize_rows(start)
        dur = normalize_rows(dur)
        empty = tuple(
            ActivityType(k + 1)
            for k in range(N_ACTIVITIES)
            if start[k].sum() == 0 or dur[k].sum() == 0
        )
        for name, arr in (("activity_shares", shares), ("start_prior", start), ("duration_prior", dur)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tz_offset_min", int(self.tz_offset_min))
        object.__setattr__(self, "empty_activities", empty)

    @cached_property
    def presence_profile(self) -> np.ndarray:
        """Time-use profile P_ref(a, slot): probability of being engaged in
        activity ``a`` during a slot, normalized over the 96 slots.

        Circular convolution of the start-time prior with the survival
        function of the duration prior (bin ``b`` lasts ``b + 0.5`` slots).
        """
        lengths = np.arange(N_SLOTS) + 0.5
        lengths[-1] = N_SLOTS
        offsets = np.arange(N_SLOTS)
        # cover[j, b]: fraction of slot offset j covered by a stay of length L_b
        cover = np.clip(lengths[None, :] - offsets[:, None], 0.0, 1.0)
        kernel = self.duration_prior @ cover.T  # (15, 96) over offsets
        spectrum = np.fft.rfft(self.start_prior, axis=1) * np.fft.rfft(kernel, axis=1)
        pres = np.fft.irfft(spectrum, n=N_SLOTS, axis=1)
        pres = np.clip(pres, 0.0, None)
        pres = normalize_rows(pres)
        pres.setflags(write=False)
        return pres

    def share(self, activity: ActivityType) -> float:
        return float(self.activity_shares[activity.index])
