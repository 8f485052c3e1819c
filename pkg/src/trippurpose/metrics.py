"""Distribution alignment and confidence metrics for a labeled corpus."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import N_ACTIVITIES, N_SLOTS, ActivityType, ReferenceStats, duration_bin, slot_of
from .errors import IncompleteInference, SchemaError

TAU_C = 0.5


def _as_hist(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    s = p.sum()
    return p / s if s > 0 else p


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits between two histograms.

    Inputs are renormalized; ``0 * log 0`` counts as 0. The result lies in
    [0, 1].
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SchemaError(f"histogram lengths differ: {p.shape} vs {q.shape}")
    p = _as_hist(p)
    q = _as_hist(q)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return float(min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0))


def weighted_temporal_jsd(inferred: np.ndarray, reference: np.ndarray, shares: np.ndarray) -> float:
    """Share-weighted JSD between per-activity histograms.

    Activities with zero reference share are skipped (weights renormalized
    over the rest); an activity with no inferred staypoints scores 1.
    """
    inferred = np.asarray(inferred, dtype=float)
    shares = np.asarray(shares, dtype=float)
    use = np.flatnonzero(shares > 0)
    if use.size == 0:
        return 0.0
    w = shares[use] / shares[use].sum()
    vals = np.array([jsd(inferred[a], reference[a]) if inferred[a].sum() > 0 else 1.0 for a in use])
    return float(np.dot(w, vals))


def hcr(confidence, tau_c: float = TAU_C):
    """Share of confidences at or above ``tau_c``; returns ``(ratio, empty)``."""
    c = np.asarray(confidence, dtype=float)
    if c.size == 0:
        return 0.0, True
    return float(np.count_nonzero(c >= tau_c) / c.size), False


@dataclass
class HistogramAccumulator:
    """Label, start-slot and duration-bin counts plus confidence tallies.

    Partial accumulators from different workers combine with :meth:`merge`,
    which is a plain element-wise sum.
    """

    tau_c: float = TAU_C
    freq: np.ndarray = field(default_factory=lambda: np.zeros(N_ACTIVITIES, dtype=np.int64))
    start: np.ndarray = field(default_factory=lambda: np.zeros((N_ACTIVITIES, N_SLOTS), dtype=np.int64))
    dur: np.ndarray = field(default_factory=lambda: np.zeros((N_ACTIVITIES, N_SLOTS), dtype=np.int64))
    high: np.ndarray = field(default_factory=lambda: np.zeros(N_ACTIVITIES, dtype=np.int64))
    flagged: int = 0

    def add(self, label, t_start, t_end, confidence, tz_offset_min: int, flagged=None) -> "HistogramAccumulator":
        label = np.asarray(label)
        if label.size and (label.min() < 1 or label.max() > N_ACTIVITIES):
            raise IncompleteInference(f"{int(np.count_nonzero(label < 1))} staypoints are unlabeled")
        a = label.astype(np.int64) - 1
        self.freq += np.bincount(a, minlength=N_ACTIVITIES)
        s = slot_of(np.asarray(t_start), tz_offset_min)
        b = duration_bin(np.asarray(t_end) - np.asarray(t_start))
        np.add.at(self.start, (a, s), 1)
        np.add.at(self.dur, (a, b), 1)
        self.high += np.bincount(a[np.asarray(confidence) >= self.tau_c], minlength=N_ACTIVITIES)
        if flagged is not None:
            self.flagged += int(np.count_nonzero(flagged))
        return self

    def merge(self, other: "HistogramAccumulator") -> "HistogramAccumulator":
        if other.tau_c != self.tau_c:
            raise ValueError("cannot merge accumulators with different thresholds")
        return HistogramAccumulator(
            self.tau_c,
            self.freq + other.freq,
            self.start + other.start,
            self.dur + other.dur,
            self.high + other.high,
            self.flagged + other.flagged,
        )

    def report(self, ref: ReferenceStats) -> "EvalReport":
        n = int(self.freq.sum())
        mand = slice(0, 3)
        nm = slice(3, N_ACTIVITIES)
        n_m, n_n = int(self.freq[mand].sum()), int(self.freq[nm].sum())
        return EvalReport(
            jsd_freq=jsd(self.freq, ref.activity_shares),
            jsd_start=weighted_temporal_jsd(self.start, ref.start_prior, ref.activity_shares),
            jsd_dur=weighted_temporal_jsd(self.dur, ref.duration_prior, ref.activity_shares),
            hcr_mandatory=float(self.high[mand].sum() / n_m) if n_m else 0.0,
            hcr_nonmandatory=float(self.high[nm].sum() / n_n) if n_n else 0.0,
            staypoint_count=n,
            flagged_query_fraction=float(self.flagged / n) if n else 0.0,
            hcr_mandatory_empty=n_m == 0,
            hcr_nonmandatory_empty=n_n == 0,
            label_histogram=self.freq.copy(),
            start_histograms=self.start.copy(),
            duration_histograms=self.dur.copy(),
        )


@dataclass
class EvalReport:
    jsd_freq: float
    jsd_start: float
    jsd_dur: float
    hcr_mandatory: float
    hcr_nonmandatory: float
    staypoint_count: int
    flagged_query_fraction: float = 0.0
    hcr_mandatory_empty: bool = False
    hcr_nonmandatory_empty: bool = False
    label_histogram: np.ndarray = None
    start_histograms: np.ndarray = None
    duration_histograms: np.ndarray = None

    HEADLINE = ("jsd_freq", "jsd_start", "jsd_dur", "hcr_mandatory", "hcr_nonmandatory")

    def headline(self) -> dict:
        return {k: getattr(self, k) for k in self.HEADLINE}

    def to_dict(self, histograms: bool = True) -> dict:
        d = asdict(self)
        for k in ("label_histogram", "start_histograms", "duration_histograms"):
            v = d.pop(k)
            if histograms and v is not None:
                d[k] = np.asarray(v).tolist()
        if histograms and self.label_histogram is not None:
            d["activity_codes"] = [int(a) for a in ActivityType]
        return d


def build_report(sp, ref: ReferenceStats, flagged=None, tau_c: float = TAU_C) -> EvalReport:
    """Evaluate a fully labeled staypoint table against the reference."""
    if sp.label is None or np.any(sp.label == 0):
        raise IncompleteInference("every staypoint must be labeled before evaluation")
    acc = HistogramAccumulator(tau_c).add(sp.label, sp.t_start, sp.t_end, sp.confidence, ref.tz_offset_min, flagged)
    return acc.report(ref)
