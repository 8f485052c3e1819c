"""Columnar containers for pings and staypoints.

Per-record dataclasses (:class:`RawPing`, :class:`~trippurpose.core.Staypoint`)
are convenient at the edges; the bulk pipeline works on these tables, which
keep one numpy array per field and contiguous per-agent blocks.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import ActivityType, Staypoint


@dataclass(frozen=True)
class RawPing:
    agent_id: str
    timestamp: int
    lat: float
    lon: float
    accuracy: Optional[float] = None


def _offsets(agent: np.ndarray, n_agents: int) -> np.ndarray:
    counts = np.bincount(agent, minlength=n_agents)
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


@dataclass
class PingTable:
    """Pings of many agents, sorted by (agent, timestamp)."""

    agent_ids: list
    offsets: np.ndarray
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    accuracy: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def agent_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def agent_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_agents), np.diff(self.offsets))

    @classmethod
    def empty(cls) -> "PingTable":
        z = np.zeros(0)
        return cls([], np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64), z, z.copy())

    @classmethod
    def from_arrays(cls, agent_ids: Sequence[str], t, lat, lon, accuracy=None) -> "PingTable":
        """Build from unsorted per-row arrays; rows are sorted by agent then time."""
        agent_ids = np.asarray(agent_ids, dtype=object)
        if len(agent_ids) == 0:
            return cls.empty()
        uniq, inverse = np.unique(agent_ids.astype(str), return_inverse=True)
        t = np.asarray(t, dtype=np.int64)
        order = np.lexsort((t, inverse))
        acc = None if accuracy is None else np.asarray(accuracy, dtype=float)[order]
        return cls(
            agent_ids=[str(u) for u in uniq],
            offsets=_offsets(inverse[order], len(uniq)),
            t=t[order],
            lat=np.asarray(lat, dtype=float)[order],
            lon=np.asarray(lon, dtype=float)[order],
            accuracy=acc,
        )

    @classmethod
    def from_pings(cls, pings: Iterable[RawPing]) -> "PingTable":
        pings = list(pings)
        acc = [np.nan if p.accuracy is None else p.accuracy for p in pings]
        has_acc = any(p.accuracy is not None for p in pings)
        return cls.from_arrays(
            [p.agent_id for p in pings],
            [p.timestamp for p in pings],
            [p.lat for p in pings],
            [p.lon for p in pings],
            acc if has_acc else None,
        )

    @classmethod
    def concat(cls, parts: Sequence["PingTable"]) -> "PingTable":
        parts = [p for p in parts if p.n_agents]
        if not parts:
            return cls.empty()
        ids, offs, base = [], [np.zeros(1, dtype=np.int64)], 0
        for p in parts:
            ids.extend(p.agent_ids)
            offs.append(p.offsets[1:] + base)
            base += len(p)
        has_acc = all(p.accuracy is not None for p in parts)
        return cls(
            agent_ids=ids,
            offsets=np.concatenate(offs),
            t=np.concatenate([p.t for p in parts]),
            lat=np.concatenate([p.lat for p in parts]),
            lon=np.concatenate([p.lon for p in parts]),
            accuracy=np.concatenate([p.accuracy for p in parts]) if has_acc else None,
        )

    def subset_agents(self, idx: Sequence[int]) -> "PingTable":
        sl = [self.agent_slice(i) for i in idx]
        rows = np.concatenate([np.arange(s.start, s.stop) for s in sl]) if sl else np.zeros(0, dtype=np.int64)
        counts = np.array([s.stop - s.start for s in sl], dtype=np.int64)
        return PingTable(
            agent_ids=[self.agent_ids[i] for i in idx],
            offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            t=self.t[rows],
            lat=self.lat[rows],
            lon=self.lon[rows],
            accuracy=None if self.accuracy is None else self.accuracy[rows],
        )

    def iter_pings(self) -> Iterator[RawPing]:
        agent = self.agent_index
        for r in range(len(self)):
            acc = None
            if self.accuracy is not None and np.isfinite(self.accuracy[r]):
                acc = float(self.accuracy[r])
            yield RawPing(self.agent_ids[agent[r]], int(self.t[r]), float(self.lat[r]), float(self.lon[r]), acc)

    def with_coords(self, lat: np.ndarray, lon: np.ndarray) -> "PingTable":
        return replace(self, lat=lat, lon=lon)


@dataclass
class StaypointTable:
    """Staypoints of many agents, sorted by (agent, t_start).

    ``label`` holds activity codes with 0 meaning unlabeled; ``confidence``
    is NaN where unlabeled.
    """

    agent_ids: list
    agent: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    label: np.ndarray = field(default=None)
    confidence: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.t_start)
        if self.label is None:
            self.label = np.zeros(n, dtype=np.int8)
        if self.confidence is None:
            self.confidence = np.full(n, np.nan)

    def __len__(self) -> int:
        return int(self.t_start.shape[0])

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def duration(self) -> np.ndarray:
        return self.t_end - self.t_start

    @property
    def offsets(self) -> np.ndarray:
        return _offsets(self.agent, self.n_agents)

    @property
    def labeled(self) -> np.ndarray:
        return self.label > 0

    @classmethod
    def empty(cls, agent_ids=()) -> "StaypointTable":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(list(agent_ids), zi, z, z.copy(), zi.copy(), zi.copy())

    @classmethod
    def from_arrays(cls, agent_ids, agent, lat, lon, t_start, t_end, label=None, confidence=None) -> "StaypointTable":
        agent = np.asarray(agent, dtype=np.int64)
        t_start = np.asarray(t_start, dtype=np.int64)
        order = np.lexsort((t_start, agent))
        return cls(
            agent_ids=list(agent_ids),
            agent=agent[order],
            lat=np.asarray(lat, dtype=float)[order],
            lon=np.asarray(lon, dtype=float)[order],
            t_start=t_start[order],
            t_end=np.asarray(t_end, dtype=np.int64)[order],
            label=None if label is None else np.asarray(label, dtype=np.int8)[order],
            confidence=None if confidence is None else np.asarray(confidence, dtype=float)[order],
        )

    @classmethod
    def from_staypoints(cls, sps: Iterable[Staypoint]) -> "StaypointTable":
        sps = list(sps)
        ids = sorted({s.agent_id for s in sps})
        pos = {a: i for i, a in enumerate(ids)}
        return cls.from_arrays(
            ids,
            [pos[s.agent_id] for s in sps],
            [s.lat for s in sps],
            [s.lon for s in sps],
            [s.t_start for s in sps],
            [s.t_end for s in sps],
            [0 if s.label is None else int(s.label) for s in sps],
            [np.nan if s.confidence is None else s.confidence for s in sps],
        )

    def to_staypoints(self) -> list:
        out = []
        for i in range(len(self)):
            lab = int(self.label[i])
            out.append(
                Staypoint(
                    agent_id=self.agent_ids[self.agent[i]],
                    lat=float(self.lat[i]),
                    lon=float(self.lon[i]),
                    t_start=int(self.t_start[i]),
                    t_end=int(self.t_end[i]),
                    label=ActivityType(lab) if lab else None,
                    confidence=float(self.confidence[i]) if lab else None,
                )
            )
        return out

    def take(self, rows: np.ndarray) -> "StaypointTable":
        """Row subset (keeps the full agent id list)."""
        return StaypointTable(
            agent_ids=self.agent_ids,
            agent=self.agent[rows],
            lat=self.lat[rows],
            lon=self.lon[rows],
            t_start=self.t_start[rows],
            t_end=self.t_end[rows],
            label=self.label[rows],
            confidence=self.confidence[rows],
        )

    def subset_agents(self, idx: Sequence[int]) -> "StaypointTable":
        """Keep only the listed agents, re-indexed in the given order."""
        idx = list(idx)
        remap = np.full(self.n_agents, -1, dtype=np.int64)
        remap[idx] = np.arange(len(idx))
        new_agent = remap[self.agent]
        rows = np.flatnonzero(new_agent >= 0)
        return StaypointTable.from_arrays(
            [self.agent_ids[i] for i in idx],
            new_agent[rows],
            self.lat[rows],
            self.lon[rows],
            self.t_start[rows],
            self.t_end[rows],
            self.label[rows],
            self.confidence[rows],
        )

    def with_labels(self, label: np.ndarray, confidence: np.ndarray) -> "StaypointTable":
        return replace(self, label=np.asarray(label, dtype=np.int8), confidence=np.asarray(confidence, dtype=float))

    def unlabeled(self) -> "StaypointTable":
        return replace(self, label=np.zeros(len(self), dtype=np.int8), confidence=np.full(len(self), np.nan))


@dataclass(frozen=True)
class Poi:
    poi_id: str
    lat: float
    lon: float
    activity_dist: np.ndarray
    name: Optional[str] = None
    category: Optional[str] = None


@dataclass
class PoiTable:
    """POIs with their normalized 15-entry activity distributions."""

    poi_ids: list
    lat: np.ndarray
    lon: np.ndarray
    dist: np.ndarray
    category: list = field(default_factory=list)

    def __post_init__(self):
        if not self.category:
            self.category = [""] * len(self.poi_ids)

    def __len__(self) -> int:
        return len(self.poi_ids)

    @classmethod
    def from_pois(cls, pois: Iterable[Poi]) -> "PoiTable":
        pois = list(pois)
        return cls(
            poi_ids=[p.poi_id for p in pois],
            lat=np.array([p.lat for p in pois], dtype=float),
            lon=np.array([p.lon for p in pois], dtype=float),
            dist=np.array([p.activity_dist for p in pois], dtype=float).reshape(len(pois), 15),
            category=[p.category or "" for p in pois],
        )

    def to_pois(self) -> list:
        return [
            Poi(self.poi_ids[i], float(self.lat[i]), float(self.lon[i]), self.dist[i].copy(), None, self.category[i] or None)
            for i in range(len(self))
        ]

    def take(self, rows) -> "PoiTable":
        rows = np.asarray(rows, dtype=np.int64)
        return PoiTable(
            poi_ids=[self.poi_ids[i] for i in rows],
            lat=self.lat[rows],
            lon=self.lon[rows],
            dist=self.dist[rows],
            category=[self.category[i] for i in rows],
        )
