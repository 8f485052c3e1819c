"""A small, deterministic NSGA-II for box-bounded real genes (minimization)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidObjective


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(F: np.ndarray) -> np.ndarray:
    """Pareto rank of each row of the objective matrix (0 = non-dominated)."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2:
        raise ValueError("objectives must be a 2-D array")
    if np.isnan(F).any():
        raise InvalidObjective("NaN objective value")
    n = F.shape[0]
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    rank = np.full(n, -1, dtype=np.int64)
    current = np.flatnonzero(count == 0)
    r = 0
    while current.size:
        rank[current] = r
        count = count - dom[current].sum(axis=0)
        count[rank >= 0] = -1
        current = np.flatnonzero(count == 0)
        r += 1
    return rank


def fronts_from_rank(rank: np.ndarray) -> list:
    return [np.flatnonzero(rank == r) for r in range(int(rank.max()) + 1)] if rank.size else []


def crowding_distance(F: np.ndarray) -> np.ndarray:
    """Crowding distance within one front; boundary points get infinity."""
    F = np.asarray(F, dtype=float)
    n, m = F.shape
    d = np.zeros(n)
    if n <= 2:
        d[:] = np.inf
        return d
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        f = F[order, k]
        d[order[0]] = d[order[-1]] = np.inf
        span = f[-1] - f[0]
        if span > 0:
            d[order[1:-1]] += (f[2:] - f[:-2]) / span
    return d


@dataclass
class Front:
    genes: np.ndarray  # (k, n_genes)
    objectives: np.ndarray  # (k, n_obj)
    history: list = field(default_factory=list)  # best value per objective per generation
    evaluations: int = 0


def _sbx(rng, p1, p2, lo, hi, eta, prob):
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > prob:
        return c1, c2
    for i in range(p1.size):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14 or hi[i] <= lo[i]:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        u = rng.random()
        for sign, y, bound in ((-1, y1, lo[i]), (1, y2, hi[i])):
            beta = 1.0 + 2.0 * (y1 - lo[i] if sign < 0 else hi[i] - y2) / (y2 - y1)
            alpha = 2.0 - beta ** -(eta + 1.0)
            if u <= 1.0 / alpha:
                bq = (u * alpha) ** (1.0 / (eta + 1.0))
            else:
                bq = (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
            child = 0.5 * ((y1 + y2) + sign * bq * (y2 - y1))
            if sign < 0:
                v1 = child
            else:
                v2 = child
        v1, v2 = np.clip(v1, lo[i], hi[i]), np.clip(v2, lo[i], hi[i])
        if rng.random() < 0.5:
            v1, v2 = v2, v1
        c1[i], c2[i] = v1, v2
    return c1, c2


def _mutate(rng, x, lo, hi, eta, prob):
    y = x.copy()
    for i in range(x.size):
        if rng.random() >= prob or hi[i] <= lo[i]:
            continue
        span = hi[i] - lo[i]
        d1 = (y[i] - lo[i]) / span
        d2 = (hi[i] - y[i]) / span
        u = rng.random()
        p = 1.0 / (eta + 1.0)
        if u < 0.5:
            dq = (2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)) ** p - 1
        else:
            dq = 1 - (2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)) ** p
        y[i] = np.clip(y[i] + dq * span, lo[i], hi[i])
    return y


def _survivors(F: np.ndarray, mu: int) -> np.ndarray:
    rank = non_dominated_sort(F)
    keep = []
    for front in fronts_from_rank(rank):
        if len(keep) + front.size <= mu:
            keep.extend(front.tolist())
            continue
        cd = crowding_distance(F[front])
        order = np.lexsort((front, -cd))  # most crowded-distant first, index breaks ties
        keep.extend(front[order[: mu - len(keep)]].tolist())
        break
    return np.array(keep, dtype=np.int64)


def evolve(
    eval_fn: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    pop_size: int = 40,
    generations: int = 30,
    seed: int = 0,
    initial: Optional[np.ndarray] = None,
    crossover_prob: float = 0.9,
    eta_c: float = 15.0,
    eta_m: float = 20.0,
    mutation_prob: Optional[float] = None,
    map_fn: Callable = map,
    round_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Front:
    """Run NSGA-II and return the rank-0 front of the final population.

    ``eval_fn`` maps a gene vector to an objective vector (minimized) and is
    memoized by gene values. ``initial`` rows seed the first population; the
    rest is drawn uniformly within bounds. ``round_fn`` canonicalizes gene
    vectors (for integer genes) before evaluation. ``map_fn`` lets callers
    evaluate a generation in parallel.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    rng = np.random.default_rng(seed)
    pm = 1.0 / n if mutation_prob is None else mutation_prob
    canon = round_fn or (lambda x: x)
    cache = {}

    def evaluate(X):
        keys = [tuple(np.round(x, 12)) for x in X]
        todo = [k for k in dict.fromkeys(keys) if k not in cache]
        for k, f in zip(todo, map_fn(eval_fn, [np.array(k) for k in todo])):
            f = np.asarray(f, dtype=float)
            if not np.all(np.isfinite(f)):
                raise InvalidObjective(f"non-finite objectives {f} for genes {k}")
            cache[k] = f
        return np.array([cache[k] for k in keys])

    X = rng.uniform(lo, hi, size=(pop_size, n))
    if initial is not None:
        init = np.atleast_2d(np.asarray(initial, dtype=float))[:pop_size]
        X[: init.shape[0]] = init
    X = np.array([canon(np.clip(x, lo, hi)) for x in X])
    F = evaluate(X)
    history = [F.min(axis=0)]
    for _ in range(generations):
        rank = non_dominated_sort(F)
        cd = np.zeros(len(X))
        for front in fronts_from_rank(rank):
            cd[front] = crowding_distance(F[front])

        def pick():
            i, j = rng.integers(len(X), size=2)
            if rank[i] != rank[j]:
                return i if rank[i] < rank[j] else j
            if cd[i] != cd[j]:
                return i if cd[i] > cd[j] else j
            return min(i, j)

        kids = []
        while len(kids) < pop_size:
            c1, c2 = _sbx(rng, X[pick()], X[pick()], lo, hi, eta_c, crossover_prob)
            kids.append(canon(_mutate(rng, c1, lo, hi, eta_m, pm)))
            kids.append(canon(_mutate(rng, c2, lo, hi, eta_m, pm)))
        kids = np.array(kids[:pop_size])
        Xa = np.vstack([X, kids])
        Fa = np.vstack([F, evaluate(kids)])
        keep = _survivors(Fa, pop_size)
        X, F = Xa[keep], Fa[keep]
        history.append(F.min(axis=0))
    rank = non_dominated_sort(F)
    best = np.flatnonzero(rank == 0)
    # drop duplicate gene vectors, keep first occurrence
    _, first = np.unique(np.round(X[best], 12), axis=0, return_index=True)
    best = best[np.sort(first)]
    order = np.lexsort(tuple(F[best].T[::-1]))
    best = best[order]
    return Front(X[best], F[best], history, len(cache))


def knee_point(F: np.ndarray) -> int:
    """Index of the front member farthest from the chord between the extremes
    of the normalized front (two objectives; more are reduced to the first
    and last). A one- or two-point front returns its first member."""
    F = np.asarray(F, dtype=float)
    if F.shape[0] <= 2:
        return 0
    lo, hi = F.min(axis=0), F.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    G = (F - lo) / span
    a = G[int(np.argmin(G[:, 0]))]
    b = G[int(np.argmin(G[:, -1]))]
    v = b - a
    norm = np.linalg.norm(v)
    if norm == 0:
        return 0
    w = G - a
    # distance from each point to the line through a and b
    proj = (w @ v)[:, None] / (norm * norm) * v
    dist = np.linalg.norm(w - proj, axis=1)
    return int(np.argmax(dist))
