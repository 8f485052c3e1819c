"""Label stability under GPS noise and POI loss.

A perturbed corpus is labeled from scratch and its staypoints are joined
back to the original run on (agent, start, end). Stability is the share of
matched staypoints keeping their label, overall, per original activity and
per confidence stratum of the original run.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import EARTH_RADIUS_M, ActivityType, ReferenceStats
from .errors import EmptyCorpus
from .params import ParamVector
from .pipeline import infer_corpus
from .staypoints import D_MAX_M, GAP_MAX_S, T_MIN_S, extract_staypoints
from .tables import PingTable, PoiTable, StaypointTable

HIGH_CONF = 0.5
LOW_CONF = 0.3
NOISE_LEVELS_M = (5.0, 10.0, 20.0)
POI_DELETION_RATES = (0.05, 0.10)
_M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0


def perturb_pings(pings: PingTable, sigma_m: float, seed: int) -> PingTable:
    """Displace each ping by independent north/east Gaussian noise in meters."""
    if sigma_m < 0:
        raise ValueError("sigma_m must be non-negative")
    if sigma_m == 0 or len(pings) == 0:
        return pings.with_coords(pings.lat.copy(), pings.lon.copy())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma_m, size=(2, len(pings)))
    lat = pings.lat + noise[0] / _M_PER_DEG
    lon = pings.lon + noise[1] / (_M_PER_DEG * np.cos(np.radians(pings.lat)))
    return pings.with_coords(lat, lon)


def delete_pois(pois: PoiTable, rate: float, seed: int) -> PoiTable:
    """Keep a uniformly random ``ceil((1 - rate) * n)`` POIs, in input order."""
    if not 0 <= rate < 1:
        raise ValueError("rate must lie in [0, 1)")
    n = len(pois)
    keep = math.ceil(round((1.0 - rate) * n, 9))
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=keep, replace=False)) if keep < n else np.arange(n)
    return pois.take(rows)


def match_staypoints(orig: StaypointTable, pert: StaypointTable, tolerance_s: int = 0) -> np.ndarray:
    """For each original staypoint the matching perturbed row, or -1.

    With a positive tolerance both endpoints may differ by up to
    ``tolerance_s`` seconds; the closest candidate (smallest summed endpoint
    difference, then lowest row) wins.
    """
    out = np.full(len(orig), -1, dtype=np.int64)
    if len(orig) == 0 or len(pert) == 0:
        return out
    pert_ids = np.asarray(pert.agent_ids, dtype=object)[pert.agent]
    orig_ids = np.asarray(orig.agent_ids, dtype=object)[orig.agent]
    if tolerance_s <= 0:
        index = {}
        for j, key in enumerate(zip(pert_ids, pert.t_start.tolist(), pert.t_end.tolist())):
            index.setdefault(key, j)
        for i, key in enumerate(zip(orig_ids, orig.t_start.tolist(), orig.t_end.tolist())):
            out[i] = index.get(key, -1)
        return out
    by_agent = defaultdict(list)
    for j, a in enumerate(pert_ids):
        by_agent[a].append(j)
    for a, rows in by_agent.items():
        rows = np.array(rows)
        order = np.argsort(pert.t_start[rows], kind="stable")
        rows = rows[order]
        starts = pert.t_start[rows]
        for i in np.flatnonzero(orig_ids == a):
            lo = np.searchsorted(starts, orig.t_start[i] - tolerance_s, "left")
            hi = np.searchsorted(starts, orig.t_start[i] + tolerance_s, "right")
            cand = rows[lo:hi]
            if cand.size == 0:
                continue
            de = np.abs(pert.t_end[cand] - orig.t_end[i])
            ok = de <= tolerance_s
            if not ok.any():
                continue
            cand = cand[ok]
            cost = np.abs(pert.t_start[cand] - orig.t_start[i]) + de[ok]
            best = np.lexsort((cand, cost))[0]
            out[i] = cand[best]
    return out


@dataclass
class StabilityReport:
    experiment: str
    level: float
    n_original: int
    n_matched: int
    match_rate: float
    stability_all: float
    stability_high: float
    stability_low: float
    n_high: int
    n_low: int
    per_activity: dict = field(default_factory=dict)  # activity code -> stability (None if absent)
    per_activity_count: dict = field(default_factory=dict)
    weighted_avg: float = 0.0
    confidence_cdf: list = field(default_factory=list)  # (upper edge, cumulative share) of original confidences

    @property
    def gap(self) -> float:
        return self.stability_high - self.stability_low

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _share(x: np.ndarray) -> float:
    return float(x.mean()) if x.size else 0.0


def match_and_score(
    orig: StaypointTable,
    pert: StaypointTable,
    tolerance_s: int = 0,
    experiment: str = "",
    level: float = 0.0,
) -> StabilityReport:
    """Join the two labeled corpora and score label stability."""
    if len(orig) == 0:
        raise EmptyCorpus("original corpus has no staypoints")
    j = match_staypoints(orig, pert, tolerance_s)
    m = j >= 0
    same = orig.label[m] == pert.label[j[m]]
    conf = orig.confidence[m]
    lab = orig.label[m]
    high = conf >= HIGH_CONF
    low = conf < LOW_CONF
    per, cnt = {}, {}
    for a in ActivityType:
        sel = lab == int(a)
        cnt[int(a)] = int(sel.sum())
        per[int(a)] = float(same[sel].mean()) if sel.any() else None
    n_m = int(m.sum())
    weighted = sum(cnt[a] / n_m * per[a] for a in per if per[a] is not None) if n_m else 0.0
    edges = np.linspace(0.05, 1.0, 20)
    cdf = [[float(e), float(np.mean(orig.confidence <= e + 1e-12))] for e in edges]
    return StabilityReport(
        experiment=experiment,
        level=float(level),
        n_original=len(orig),
        n_matched=n_m,
        match_rate=n_m / len(orig),
        stability_all=_share(same),
        stability_high=_share(same[high]),
        stability_low=_share(same[low]),
        n_high=int(high.sum()),
        n_low=int(low.sum()),
        per_activity=per,
        per_activity_count=cnt,
        weighted_avg=float(weighted),
        confidence_cdf=cdf,
    )


def noise_experiment(
    pings: PingTable,
    pois: PoiTable,
    ref: ReferenceStats,
    params: Optional[ParamVector] = None,
    levels=NOISE_LEVELS_M,
    seed: int = 0,
    original: Optional[StaypointTable] = None,
    tolerance_s: int = 0,
    extract_kw: Optional[dict] = None,
    workers: int = 1,
) -> list:
    """Stability reports for each positional noise level (meters)."""
    params = params or ParamVector()
    kw = {"d_max": D_MAX_M, "t_min": T_MIN_S, "gap_max": GAP_MAX_S, **(extract_kw or {})}
    if original is None:
        original = infer_corpus(extract_staypoints(pings, **kw), pois, ref, params, workers).staypoints
    out = []
    for k, sigma in enumerate(levels):
        noisy = perturb_pings(pings, sigma, seed=seed * 1000 + k)
        sp = extract_staypoints(noisy, **kw)
        del noisy
        labeled = infer_corpus(sp, pois, ref, params, workers).staypoints
        out.append(match_and_score(original, labeled, tolerance_s, "noise", sigma))
    return out


def poi_experiment(
    sp: StaypointTable,
    pois: PoiTable,
    ref: ReferenceStats,
    params: Optional[ParamVector] = None,
    rates=POI_DELETION_RATES,
    seed: int = 0,
    original: Optional[StaypointTable] = None,
    workers: int = 1,
) -> list:
    """Stability reports for each POI deletion rate; staypoints are unchanged."""
    params = params or ParamVector()
    if original is None:
        original = infer_corpus(sp, pois, ref, params, workers).staypoints
    out = []
    for k, rate in enumerate(rates):
        kept = delete_pois(pois, rate, seed=seed * 1000 + 500 + k)
        labeled = infer_corpus(sp, kept, ref, params, workers).staypoints
        out.append(match_and_score(original, labeled, 0, "poi", rate))
    return out
