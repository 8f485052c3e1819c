"""Unified multiplicative scoring over the twelve non-mandatory activity types.

For each non-mandatory type k a staypoint scores

    S_k = (P_space(k) + eps) * (P_tod(slot | k) + eps) * (P_dur(bin | k) + eps) ** alpha(bin)

and the label is the top score, with the posterior maximum as confidence.
Before scoring, the duration priors of brief activities get some mass moved
from long bins to short ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NON_MANDATORY, NON_SLICE, N_SLOTS, ActivityType, ReferenceStats, duration_bin, slot_of

N_NON = len(NON_MANDATORY)
BRIEF_ACTIVITIES = (
    ActivityType.MEALS_OUT,
    ActivityType.ERRANDS,
    ActivityType.PICKUP_DROP,
    ActivityType.SHOP_GOODS,
)


def alpha_schedule(short: float = 0.3, mid: float = 0.7, long: float = 1.0) -> np.ndarray:
    """Per-duration-bin exponent: bins 0-3, 4-7 and 8+."""
    a = np.full(N_SLOTS, float(long))
    a[:4] = short
    a[4:8] = mid
    return a


@dataclass
class ScoringParams:
    epsilon: float = 1e-4
    alpha: np.ndarray = field(default_factory=alpha_schedule)
    delta: float = 0.15
    cutoff: int = 4
    brief: tuple = BRIEF_ACTIVITIES

    def __post_init__(self):
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (N_SLOTS,)).copy()
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if np.any(self.alpha < 0) or np.any(np.diff(self.alpha) < 0):
            raise ValueError("alpha must be non-negative and non-decreasing in bin index")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        self.cutoff = int(self.cutoff)


def correct_duration_prior(p_dur: np.ndarray, delta: float, cutoff: int, rows) -> np.ndarray:
    """Move up to ``delta`` mass from bins >= cutoff to bins < cutoff.

    Applied to the given rows of a (n, bins) histogram. Mass leaves the long
    bins in proportion to their content and lands on the short bins in
    proportion to theirs (evenly if they are all empty), so the order of
    bins within each side is kept.
    """
    out = np.array(p_dur, dtype=float, copy=True)
    if out.ndim == 1:
        out = out[None, :]
        squeeze = True
    else:
        squeeze = False
    cutoff = int(np.clip(cutoff, 0, out.shape[1]))
    for r in rows:
        row = out[r]
        tot = row.sum()
        if tot <= 0:
            continue
        row /= tot
        short, long_ = row[:cutoff], row[cutoff:]
        avail = long_.sum()
        shift = min(float(delta), float(avail))
        if shift <= 0 or short.size == 0:
            continue
        long_ -= shift * long_ / avail
        s = short.sum()
        if s > 0:
            short += shift * short / s
        else:
            short += shift / short.size
        np.maximum(row, 0.0, out=row)
        row /= row.sum()
    return out[0] if squeeze else out


def corrected_priors(ref: ReferenceStats, params: ScoringParams):
    """(P_tod, P_dur) for the non-mandatory types, shape (12, 96) each."""
    tod = np.asarray(ref.start_prior[NON_SLICE])
    rows = [a.index - NON_SLICE.start for a in params.brief if a in NON_MANDATORY]
    dur = correct_duration_prior(ref.duration_prior[NON_SLICE], params.delta, params.cutoff, rows)
    return tod, dur


def score_matrix(p_space: np.ndarray, slots, bins, tod: np.ndarray, dur: np.ndarray, params: ScoringParams) -> np.ndarray:
    """Scores S, shape (n, 12), for staypoints with the given non-mandatory
    spatial priors (n, 12), start slots and duration bins."""
    eps = params.epsilon
    slots = np.asarray(slots, dtype=np.int64)
    bins = np.asarray(bins, dtype=np.int64)
    a = params.alpha[bins][:, None]
    return (p_space + eps) * (tod[:, slots].T + eps) * (dur[:, bins].T + eps) ** a


def posterior_from_scores(S: np.ndarray, gamma: float = 1.0):
    """Labels (activity codes), confidences and posteriors from scores.

    ``gamma`` sharpens the posterior as ``S**gamma`` without changing the
    label. Rows with a non-positive or non-finite total fall back to the
    uniform posterior.
    """
    S = np.atleast_2d(S)
    idx = np.argmax(S, axis=1)
    smax = S[np.arange(S.shape[0]), idx]
    Z = S.sum(axis=1)
    ok = np.isfinite(Z) & (Z > 0) & np.all(np.isfinite(S), axis=1)
    post = np.full(S.shape, 1.0 / S.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        r = S[ok] / smax[ok, None]
        if gamma != 1.0:
            r = r ** gamma
        post[ok] = r / r.sum(axis=1, keepdims=True)
    idx = np.where(ok, idx, 0)
    conf = post[np.arange(S.shape[0]), idx]
    labels = np.array([a.value for a in NON_MANDATORY], dtype=np.int8)[idx]
    return labels, conf, post


def score_staypoint(s, p_space: np.ndarray, ref: ReferenceStats, params: ScoringParams | None = None):
    """Label one staypoint: returns ``(ActivityType, confidence, posterior)``.

    ``p_space`` is the full 15-vector (or the 12 non-mandatory entries).
    """
    params = params or ScoringParams()
    p = np.asarray(p_space, dtype=float)
    if p.shape[0] == len(ActivityType):
        p = p[NON_SLICE]
    tod, dur = corrected_priors(ref, params)
    slot = slot_of(s.t_start, ref.tz_offset_min)
    b = duration_bin(s.t_end - s.t_start)
    S = score_matrix(p[None, :], [slot], [b], tod, dur, params)
    labels, conf, post = posterior_from_scores(S)
    return ActivityType(int(labels[0])), float(conf[0]), post[0]


def score_batch(p_space: np.ndarray, t_start, t_end, ref: ReferenceStats, params: ScoringParams, gamma: float = 1.0):
    """Vectorized scoring; returns ``(labels, confidences, scores)``."""
    p = np.asarray(p_space, dtype=float)
    if p.shape[1] == len(ActivityType):
        p = p[:, NON_SLICE]
    tod, dur = corrected_priors(ref, params)
    slots = slot_of(np.asarray(t_start), ref.tz_offset_min)
    bins = duration_bin(np.asarray(t_end) - np.asarray(t_start))
    S = score_matrix(p, slots, bins, tod, dur, params)
    labels, conf, _ = posterior_from_scores(S, gamma)
    return labels, conf, S
