"""Phase-by-phase calibration of the parameter vector with NSGA-II.

Phase 1 tunes the spatial and bidding genes against (jsd_freq, jsd_start),
Phase 2 the scoring genes against (jsd_start, jsd_dur) and Phase 3 the
confidence transforms against (-HCR_M, -HCR_N). Each phase runs on an agent
subsample, then one configuration is taken from its front and frozen.

Selection is guarded: a front member qualifies only if it is no worse than
the incumbent on the phase objectives and does not move any other headline
metric by more than ``tolerance``. Qualified members are tried in order of
knee distance and must pass the same check on the full corpus; if none
does, the incumbent is kept.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ReferenceStats
from .metrics import EvalReport, build_report
from .nsga2 import evolve, knee_point
from .params import GENE_BY_NAME, PHASE_OBJECTIVES, ParamVector, phase_genes
from .pipeline import Pipeline
from .tables import PoiTable, StaypointTable

log = logging.getLogger(__name__)

REGRESSION_TOL = 0.01
_HIGHER_IS_BETTER = {"hcr_mandatory", "hcr_nonmandatory"}


def objectives(report: EvalReport, phase: int) -> np.ndarray:
    """Phase objectives in minimization form."""
    return np.array([-getattr(report, k) if k in _HIGHER_IS_BETTER else getattr(report, k) for k in PHASE_OBJECTIVES[phase]])


def regressions(before: EvalReport, after: EvalReport, phase: int, tol: float = REGRESSION_TOL) -> dict:
    """Headline metrics outside the phase objectives that got worse by more than ``tol``."""
    out = {}
    for k in EvalReport.HEADLINE:
        if k in PHASE_OBJECTIVES[phase]:
            continue
        d = getattr(after, k) - getattr(before, k)
        worse = -d if k in _HIGHER_IS_BETTER else d
        if worse > tol:
            out[k] = worse
    return out


def _no_worse(f: np.ndarray, g: np.ndarray, slack: float = 1e-12) -> bool:
    return bool(np.all(f <= g + slack))


class Evaluator:
    """Objective function over one pipeline; deterministic and memoized by
    the pipeline's stage cache."""

    def __init__(self, pipeline: Pipeline, base: ParamVector, phase: int):
        self.pipeline = pipeline
        self.base = base
        self.phase = phase
        self.names = phase_genes(phase)

    def params(self, x) -> ParamVector:
        return self.base.with_array(self.names, x)

    def report(self, params: ParamVector) -> EvalReport:
        res = self.pipeline.run(params)
        return build_report(res.staypoints, self.pipeline.ref, res.flagged)

    def __call__(self, x) -> np.ndarray:
        return objectives(self.report(self.params(x)), self.phase)


_WORKER = None


def _init_worker(ev):
    global _WORKER
    _WORKER = ev


def _worker_eval(x):
    return _WORKER(x)


def _round_fn(names):
    ints = [i for i, n in enumerate(names) if GENE_BY_NAME[n].integer]

    def canon(x):
        x = np.asarray(x, dtype=float).copy()
        x[ints] = np.round(x[ints])
        return x

    return canon


@dataclass
class PhaseTrace:
    phase: int
    genes: tuple
    objectives: tuple
    front_genes: list = field(default_factory=list)
    front_objectives: list = field(default_factory=list)
    knee_index: Optional[int] = None
    chosen_index: Optional[int] = None
    params: dict = field(default_factory=dict)
    report_before: dict = field(default_factory=dict)
    report_after: dict = field(default_factory=dict)
    subsample_before: dict = field(default_factory=dict)
    subsample_after: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    evaluations: int = 0
    seconds: float = 0.0
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CalibrationResult:
    start: ParamVector
    params: ParamVector
    initial_report: EvalReport
    final_report: EvalReport
    phases: list

    def to_dict(self) -> dict:
        return {
            "initial_params": self.start.to_dict(),
            "final_params": self.params.to_dict(),
            "initial_report": self.initial_report.to_dict(histograms=False),
            "final_report": self.final_report.to_dict(histograms=False),
            "phases": [p.to_dict() for p in self.phases],
        }


def subsample_agents(n_agents: int, size: int, seed: int) -> np.ndarray:
    """Sorted agent indices of a seeded subsample (all agents if fewer)."""
    if size >= n_agents:
        return np.arange(n_agents)
    rng = np.random.default_rng([seed, 7])
    return np.sort(rng.choice(n_agents, size=size, replace=False))


def scaled_subsample(n_agents: int, reference_size: int = 20000, reference_corpus: int = 426875) -> int:
    """Subsample size keeping the reference subsample-to-corpus ratio."""
    return max(1, math.ceil(n_agents * reference_size / reference_corpus))


def run_phases(
    sp: StaypointTable,
    pois: PoiTable,
    ref: ReferenceStats,
    start: Optional[ParamVector] = None,
    generations=(30, 30, 30),
    pop_size: int = 40,
    subsample: int = 20000,
    seed: int = 0,
    workers: int = 1,
    tolerance: float = REGRESSION_TOL,
    max_validations: int = 8,
    bounds: Optional[dict] = None,
) -> CalibrationResult:
    """Calibrate phases 1-3 in order; returns the final parameters and trace.

    ``generations`` gives the budget of each phase (0 skips the search and
    keeps the incumbent); ``bounds`` narrows the search box of named genes.
    """
    bounds = bounds or {}
    params = start or ParamVector()
    full = Pipeline(sp, pois, ref)
    agents = subsample_agents(sp.n_agents, subsample, seed)
    sub = full if agents.size == sp.n_agents else Pipeline(sp.subset_agents(agents), pois, ref)

    def full_report(p):
        r = full.run(p)
        return build_report(r.staypoints, ref, r.flagged)

    initial = full_report(params)
    incumbent_full = initial
    traces = []
    for phase, gens in zip((1, 2, 3), generations):
        t0 = time.perf_counter()
        ev = Evaluator(sub, params, phase)
        names = ev.names
        x0 = params.array(names)
        sub_before = ev.report(params)
        before_full = incumbent_full
        tr = PhaseTrace(phase, names, PHASE_OBJECTIVES[phase], report_before=before_full.to_dict(False), subsample_before=sub_before.to_dict(False))
        chosen = params
        if gens > 0:
            lo = [bounds.get(n, (GENE_BY_NAME[n].lo, GENE_BY_NAME[n].hi))[0] for n in names]
            hi = [bounds.get(n, (GENE_BY_NAME[n].lo, GENE_BY_NAME[n].hi))[1] for n in names]
            kw = dict(pop_size=pop_size, generations=gens, seed=seed * 1000 + phase, initial=x0[None, :], round_fn=_round_fn(names))
            if workers > 1:
                with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ev,)) as ex:
                    front = evolve(_worker_eval, lo, hi, map_fn=lambda f, xs: ex.map(_worker_eval, xs), **kw)
            else:
                front = evolve(ev, lo, hi, **kw)
            tr.front_genes = front.genes.tolist()
            tr.front_objectives = front.objectives.tolist()
            tr.evaluations = front.evaluations
            tr.history = [h.tolist() for h in front.history]
            tr.knee_index = knee_point(front.objectives)
            chosen, tr.chosen_index, after_full = _guarded_choice(front, ev, params, sub_before, incumbent_full, phase, full_report, tolerance, max_validations, tr)
            if after_full is not None:
                incumbent_full = after_full
        else:
            tr.warnings.append("no generations: incumbent kept")
        tr.params = chosen.to_dict()
        tr.subsample_after = ev.report(chosen).to_dict(False)
        after = incumbent_full if chosen == params else full_report(chosen)
        for k, v in regressions(before_full, after, phase, tolerance).items():
            tr.warnings.append(f"PhaseRegression: {k} worse by {v:.4f}")
        tr.report_after = after.to_dict(False)
        tr.seconds = time.perf_counter() - t0
        log.info("phase %d: %d evaluations in %.1f s, objectives %s", phase, tr.evaluations, tr.seconds, objectives(after, phase))
        params = chosen
        incumbent_full = after
        traces.append(tr)
    return CalibrationResult(start or ParamVector(), params, initial, incumbent_full, traces)


def _guarded_choice(front, ev, incumbent, sub_before, full_before, phase, full_report, tol, max_validations, tr):
    """Pick a front member per the guard; returns (params, index, full report)."""
    G = front.objectives
    lo, hi = G.min(axis=0), G.max(axis=0)
    f0 = objectives(sub_before, phase)
    ok = []
    for i, x in enumerate(front.genes):
        if not _no_worse(G[i], f0):
            continue
        if regressions(sub_before, ev.report(ev.params(x)), phase, tol):
            continue
        ok.append(i)
    if not ok:
        tr.warnings.append("no front member passed the subsample guard: incumbent kept")
        return incumbent, None, None
    # order qualified members by knee distance within the qualified set
    order = []
    remaining = list(ok)
    while remaining:
        k = knee_point(G[remaining]) if len(remaining) > 2 else _closest_to_ideal(G[remaining], lo, hi)
        order.append(remaining.pop(k))
    f_full0 = objectives(full_before, phase)
    for i in order[:max_validations]:
        p = ev.params(front.genes[i])
        if p == incumbent:
            return incumbent, i, full_before
        rep = full_report(p)
        if _no_worse(objectives(rep, phase), f_full0) and not regressions(full_before, rep, phase, tol):
            return p, i, rep
    tr.warnings.append("no qualified front member validated on the full corpus: incumbent kept")
    return incumbent, None, None


def _closest_to_ideal(G, lo, hi) -> int:
    span = np.where(hi > lo, hi - lo, 1.0)
    return int(np.argmin(np.linalg.norm((G - lo) / span, axis=1)))
