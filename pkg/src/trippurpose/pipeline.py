"""End-to-end labeling of a staypoint corpus.

The run is split into stages so that calibration can reuse work:

* spatial: per-agent location clusters, semantic zones and the spatial
  likelihood at each cluster centroid (genes sigma, search_radius, eps_poi,
  eps_agent);
* bidding: time evidence and bids per candidate location (tau genes);
* anchors: Home and Work/School selection (theta_exist);
* scoring: non-mandatory scores for the remaining staypoints (Phase-2 genes);
* confidences: the monotone confidence transforms (gamma genes).
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ActivityType, ReferenceStats
from .errors import NoHomeEvidence
from .mandatory import BidTable, MandatoryAssignment, select_anchors, stability_weight, time_evidence_batch
from .nonmandatory import posterior_from_scores, score_batch
from .params import ParamVector
from .staypoints import ClusterTable, cluster_staypoints
from .tables import PoiTable, StaypointTable
from .zones import ZoneIndex, ZoneTable, build_zones

log = logging.getLogger(__name__)


@dataclass
class SpatialStage:
    clusters: ClusterTable
    p_space: np.ndarray  # (n_clusters, 15)
    flagged: np.ndarray  # (n_clusters,)


@dataclass
class AnchorStage:
    bids: BidTable  # candidate clusters only; location_id holds the global cluster index
    max_home_bid: np.ndarray  # per agent, 0 when no positive bid


@dataclass
class InferenceResult:
    """Labels plus the raw quantities the confidence transforms act on."""

    staypoints: StaypointTable  # labeled
    mand_margin: np.ndarray  # per staypoint, NaN off the anchors
    nm_rows: np.ndarray  # staypoint rows scored as non-mandatory
    nm_scores: np.ndarray  # (len(nm_rows), 12)
    flagged: np.ndarray  # per staypoint: no zone in range
    assignments: list  # MandatoryAssignment per agent
    no_home_agents: int
    theta_exist: float

    def with_confidence_transform(self, gamma_m: float, gamma_n: float) -> "InferenceResult":
        """Recompute confidences only; labels are left untouched."""
        sp = self.staypoints
        conf = sp.confidence.copy()
        m = ~np.isnan(self.mand_margin)
        conf[m] = np.clip(gamma_m * self.mand_margin[m], 0.0, 1.0)
        if self.nm_rows.size:
            _, c, _ = posterior_from_scores(self.nm_scores, gamma_n)
            conf[self.nm_rows] = c
        return InferenceResult(
            sp.with_labels(sp.label.copy(), conf),
            self.mand_margin,
            self.nm_rows,
            self.nm_scores,
            self.flagged,
            self.assignments,
            self.no_home_agents,
            self.theta_exist,
        )


def spatial_stage(sp: StaypointTable, zones: ZoneTable, ref: ReferenceStats, params: ParamVector) -> SpatialStage:
    clusters = cluster_staypoints(sp, params["eps_agent"], 1, ref.tz_offset_min)
    index = ZoneIndex(zones, params["sigma"], params["search_radius"])
    p_space, flagged = index.likelihood(clusters.lat, clusters.lon)
    return SpatialStage(clusters, p_space, flagged)


def bidding_stage(sp: StaypointTable, spatial: SpatialStage, ref: ReferenceStats, params: ParamVector) -> AnchorStage:
    ct = spatial.clusters
    p_time = time_evidence_batch(sp, ct, ref.presence_profile[:3], params.tau, ref.tz_offset_min)
    cand = np.flatnonzero(ct.candidate)
    bids = BidTable(
        location_id=cand,
        p_time=p_time[cand],
        w_stab=stability_weight(ct.n_days[cand]),
        p_space=spatial.p_space[cand, :3],
    )
    max_home = np.zeros(sp.n_agents)
    if len(cand):
        np.maximum.at(max_home, ct.agent[cand], bids.bids[:, 0])
    return AnchorStage(bids, max_home)


def theta_from_bids(max_home_bid: np.ndarray, theta_rel: float) -> float:
    """Absolute existence threshold: a fraction of the median top Home bid."""
    pos = max_home_bid[max_home_bid > 0]
    return float(theta_rel * np.median(pos)) if pos.size else 0.0


def anchor_stage(sp: StaypointTable, spatial: SpatialStage, bids: AnchorStage, theta_exist: float, per_activity: bool = False):
    """Mandatory labels and margins per staypoint, plus per-agent assignments."""
    ct = spatial.clusters
    n = len(sp)
    label = np.zeros(n, dtype=np.int8)
    margin = np.full(n, np.nan)
    cand_agent = ct.agent[bids.bids.location_id]
    bounds = np.searchsorted(cand_agent, np.arange(sp.n_agents + 1))
    offsets = sp.offsets
    assignments = []
    no_home = 0
    for a in range(sp.n_agents):
        table = bids.bids.take(slice(bounds[a], bounds[a + 1]))
        try:
            asg = select_anchors(table, theta_exist, per_activity)
        except NoHomeEvidence:
            no_home += 1
            assignments.append(MandatoryAssignment())
            continue
        # report per-agent location ids
        if asg.home is not None:
            rows = slice(offsets[a], offsets[a + 1])
            cl = ct.sp_cluster[rows]
            m = cl == asg.home[0]
            label[rows][m] = int(ActivityType.HOME)
            margin[rows][m] = asg.home_margin
            if asg.mandatory2 is not None:
                m2 = cl == asg.mandatory2[0]
                label[rows][m2] = int(asg.mandatory2[1])
                margin[rows][m2] = asg.mand_margin
            local = ct.local_id
            asg = MandatoryAssignment(
                home=(int(local[asg.home[0]]), asg.home[1]),
                mandatory2=None if asg.mandatory2 is None else (int(local[asg.mandatory2[0]]),) + tuple(asg.mandatory2[1:]),
                home_margin=asg.home_margin,
                mand_margin=asg.mand_margin,
            )
        assignments.append(asg)
    return label, margin, assignments, no_home


def scoring_stage(sp: StaypointTable, spatial: SpatialStage, mand_label: np.ndarray, ref: ReferenceStats, params: ParamVector):
    rows = np.flatnonzero(mand_label == 0)
    p = spatial.p_space[spatial.clusters.sp_cluster[rows]]
    labels, _, S = score_batch(p, sp.t_start[rows], sp.t_end[rows], ref, params.scoring())
    return rows, labels, S


def _assemble(sp, spatial, mand_label, margin, rows, nm_labels, S, assignments, no_home, theta, params):
    label = mand_label.copy()
    label[rows] = nm_labels
    res = InferenceResult(
        sp.with_labels(label, np.full(len(sp), np.nan)),
        margin,
        rows,
        S,
        spatial.flagged[spatial.clusters.sp_cluster] if len(sp) else np.zeros(0, dtype=bool),
        assignments,
        no_home,
        theta,
    )
    return res.with_confidence_transform(params["gamma_m"], params["gamma_n"])


class Pipeline:
    """Labels one staypoint corpus, caching stage outputs by their genes.

    Only the most recent output of each stage is kept, which is what a
    phase-by-phase calibration needs: within Phase 2 the spatial and anchor
    stages never change, and within Phase 3 only confidences do.
    """

    def __init__(self, sp: StaypointTable, pois: PoiTable, ref: ReferenceStats, per_activity: bool = False):
        self.sp = sp
        self.pois = pois
        self.ref = ref
        self.per_activity = per_activity
        self._cache = {}

    def _stage(self, name, key, fn):
        hit = self._cache.get(name)
        if hit is not None and hit[0] == key:
            return hit[1]
        val = fn()
        self._cache[name] = (key, val)
        return val

    def zones(self, params: ParamVector) -> ZoneTable:
        return self._stage("zones", (params["eps_poi"],), lambda: build_zones(self.pois, params["eps_poi"]))

    def run(self, params: ParamVector, theta_exist: Optional[float] = None) -> InferenceResult:
        """Label the corpus. ``theta_exist`` overrides the relative threshold
        with an absolute one (used when labeling a subset of a corpus)."""
        p = params
        k1 = tuple(p[n] for n in ("sigma", "search_radius", "eps_poi", "eps_agent"))
        spatial = self._stage("spatial", k1, lambda: spatial_stage(self.sp, self.zones(p), self.ref, p))
        k2 = k1 + p.tau
        bids = self._stage("bids", k2, lambda: bidding_stage(self.sp, spatial, self.ref, p))
        theta = theta_from_bids(bids.max_home_bid, p["theta_exist"]) if theta_exist is None else float(theta_exist)
        k3 = k2 + (theta,)
        mand = self._stage("anchors", k3, lambda: anchor_stage(self.sp, spatial, bids, theta, self.per_activity))
        k4 = k3 + tuple(p[n] for n in ("epsilon", "alpha_short", "alpha_mid", "alpha_long", "delta", "cutoff"))
        nm = self._stage("scoring", k4, lambda: scoring_stage(self.sp, spatial, mand[0], self.ref, p))
        return _assemble(self.sp, spatial, mand[0], mand[1], nm[0], nm[1], nm[2], mand[2], mand[3], theta, p)


def infer_corpus(
    sp: StaypointTable,
    pois: PoiTable,
    ref: ReferenceStats,
    params: Optional[ParamVector] = None,
    workers: int = 1,
    chunk_agents: int = 2000,
    per_activity: bool = False,
) -> InferenceResult:
    """Label every staypoint; with ``workers > 1`` agent chunks run in a
    process pool and give the same result as a single worker."""
    params = params or ParamVector()
    t0 = time.perf_counter()
    if workers <= 1 or sp.n_agents <= chunk_agents:
        res = Pipeline(sp, pois, ref, per_activity).run(params)
    else:
        res = _infer_parallel(sp, pois, ref, params, workers, chunk_agents, per_activity)
    dt = time.perf_counter() - t0
    log.info("inference: %d staypoints in %.2f s (%.0f staypoints/s)", len(sp), dt, len(sp) / max(dt, 1e-9))
    return res


def _chunk_bids(args):
    sp, zones, ref, params = args
    spatial = spatial_stage(sp, zones, ref, params)
    return spatial, bidding_stage(sp, spatial, ref, params)


def _chunk_finish(args):
    sp, spatial, bids, ref, params, theta, per_activity = args
    label, margin, asg, no_home = anchor_stage(sp, spatial, bids, theta, per_activity)
    rows, nm_labels, S = scoring_stage(sp, spatial, label, ref, params)
    return _assemble(sp, spatial, label, margin, rows, nm_labels, S, asg, no_home, theta, params)


def _infer_parallel(sp, pois, ref, params, workers, chunk_agents, per_activity):
    zones = build_zones(pois, params["eps_poi"])
    chunks = [sp.subset_agents(range(s, min(s + chunk_agents, sp.n_agents))) for s in range(0, sp.n_agents, chunk_agents)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        first = list(ex.map(_chunk_bids, [(c, zones, ref, params) for c in chunks]))
        theta = theta_from_bids(np.concatenate([b.max_home_bid for _, b in first]), params["theta_exist"])
        parts = list(ex.map(_chunk_finish, [(c, s, b, ref, params, theta, per_activity) for c, (s, b) in zip(chunks, first)]))
    return merge_results(parts, sp)


def merge_results(parts, sp: StaypointTable) -> InferenceResult:
    """Concatenate per-chunk results (chunks in agent order)."""
    offs = np.cumsum([0] + [len(p.staypoints) for p in parts])
    label = np.concatenate([p.staypoints.label for p in parts])
    conf = np.concatenate([p.staypoints.confidence for p in parts])
    return InferenceResult(
        sp.with_labels(label, conf),
        np.concatenate([p.mand_margin for p in parts]),
        np.concatenate([p.nm_rows + o for p, o in zip(parts, offs)]),
        np.concatenate([p.nm_scores for p in parts]),
        np.concatenate([p.flagged for p in parts]),
        [a for p in parts for a in p.assignments],
        sum(p.no_home_agents for p in parts),
        parts[0].theta_exist if parts else 0.0,
    )
