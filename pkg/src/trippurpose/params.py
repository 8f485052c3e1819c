"""Calibrable parameters, their bounds and phase membership."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .nonmandatory import ScoringParams, alpha_schedule


@dataclass(frozen=True)
class Gene:
    name: str
    default: float
    lo: float
    hi: float
    phase: int
    integer: bool = False


GENES = (
    # spatial influence and anchor bidding
    Gene("sigma", 150.0, 25.0, 2500.0, 1),
    Gene("search_radius", 500.0, 100.0, 3000.0, 1),
    Gene("eps_poi", 100.0, 20.0, 300.0, 1),
    Gene("eps_agent", 100.0, 20.0, 300.0, 1),
    Gene("tau_home", 1.0, 0.05, 1.0, 1),
    Gene("tau_work", 0.6, 0.05, 1.0, 1),
    Gene("tau_school", 0.5, 0.05, 1.0, 1),
    Gene("theta_exist", 0.05, 0.0, 0.5, 1),
    # evidence integration for non-mandatory scoring
    Gene("epsilon", 1e-4, 1e-6, 1e-2, 2),
    Gene("alpha_short", 0.3, 0.05, 1.0, 2),
    Gene("alpha_mid", 0.7, 0.05, 1.0, 2),
    Gene("alpha_long", 1.0, 0.05, 1.0, 2),
    Gene("delta", 0.15, 0.0, 0.3, 2),
    Gene("cutoff", 4, 1, 8, 2, integer=True),
    # confidence transforms
    Gene("gamma_m", 1.0, 0.25, 4.0, 3),
    Gene("gamma_n", 1.0, 0.25, 4.0, 3),
)
GENE_BY_NAME = {g.name: g for g in GENES}
PHASE_OBJECTIVES = {
    1: ("jsd_freq", "jsd_start"),
    2: ("jsd_start", "jsd_dur"),
    3: ("hcr_mandatory", "hcr_nonmandatory"),
}


def phase_genes(phase: int) -> tuple:
    return tuple(g.name for g in GENES if g.phase == phase)


class ParamVector(Mapping):
    """Immutable mapping of gene name to value, clipped to the gene bounds.

    Integer genes are rounded and the alpha schedule is made non-decreasing
    (``alpha_mid >= alpha_short``, ``alpha_long >= alpha_mid``) on
    construction.
    """

    def __init__(self, values: Mapping | None = None, **kw):
        vals = {g.name: float(g.default) for g in GENES}
        for src in (values or {}), kw:
            for k, v in src.items():
                if k not in GENE_BY_NAME:
                    raise KeyError(f"unknown parameter {k!r}")
                vals[k] = float(v)
        for g in GENES:
            v = float(np.clip(vals[g.name], g.lo, g.hi))
            vals[g.name] = float(round(v)) if g.integer else v
        vals["alpha_mid"] = max(vals["alpha_mid"], vals["alpha_short"])
        vals["alpha_long"] = max(vals["alpha_long"], vals["alpha_mid"])
        self._v = vals

    def __getitem__(self, k):
        return self._v[k]

    def __iter__(self):
        return iter(self._v)

    def __len__(self):
        return len(self._v)

    def __repr__(self):
        return f"ParamVector({self._v!r})"

    def __eq__(self, other):
        return isinstance(other, ParamVector) and self._v == other._v

    def __hash__(self):
        return hash(tuple(self._v.values()))

    def replace(self, **kw) -> "ParamVector":
        return ParamVector(self._v, **kw)

    def to_dict(self) -> dict:
        return dict(self._v)

    def array(self, names: Iterable[str]) -> np.ndarray:
        return np.array([self._v[n] for n in names])

    def with_array(self, names, arr) -> "ParamVector":
        return ParamVector(self._v, **dict(zip(names, (float(x) for x in arr))))

    def digest(self) -> str:
        blob = json.dumps({k: repr(v) for k, v in self._v.items()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def tau(self) -> tuple:
        return (self._v["tau_home"], self._v["tau_work"], self._v["tau_school"])

    def scoring(self) -> ScoringParams:
        return ScoringParams(
            epsilon=self._v["epsilon"],
            alpha=alpha_schedule(self._v["alpha_short"], self._v["alpha_mid"], self._v["alpha_long"]),
            delta=self._v["delta"],
            cutoff=int(self._v["cutoff"]),
        )


def detuned_params() -> ParamVector:
    """A deliberately poor starting point: wide kernel, no caps, flat alpha."""
    return ParamVector(sigma=2000.0, tau_home=1.0, tau_work=1.0, tau_school=1.0, alpha_short=1.0, alpha_mid=1.0, alpha_long=1.0)
