"""Query-selection strategies for the extraction rounds."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import RngStream
from .surrogate import SurrogateModel, mc_dropout_predict

STRATEGIES = ("random", "entropy", "entropy-kmedoids", "mcdropout-entropy")


@dataclass
class QuerySelection:
    indices: np.ndarray  # thief-dataset indices, in selection order
    strategy: str
    round: int = 0


def shannon_entropy(p) -> np.ndarray:
    """Binary entropy in nats, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError("scores must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log(p)) - (1.0 - p) * np.log1p(-p)
    return np.where((p == 0.0) | (p == 1.0), 0.0, h)


def _top_entropy(indices: np.ndarray, scores: np.ndarray, n: int) -> np.ndarray:
    """``n`` indices with the largest entropy; ties go to the smaller index."""
    h = shannon_entropy(scores)
    order = np.lexsort((indices, -h))
    return indices[order[:n]]


def select_random(pool, n: int, rng: RngStream, round_index: int = 0) -> QuerySelection:
    pool = np.asarray(pool, dtype=np.int64)
    if n > pool.size:
        raise ValueError(f"asked for {n} samples from a pool of {pool.size}")
    picked = pool[rng.choice(pool.size, size=n, replace=False)] if n else pool[:0]
    return QuerySelection(picked, "random", round_index)


def select_entropy(indices, scores, n: int, round_index: int = 0) -> QuerySelection:
    indices = np.asarray(indices, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if indices.shape != scores.shape:
        raise ValueError("indices and scores differ in length")
    if n > indices.size:
        raise ValueError(f"asked for {n} samples from a batch of {indices.size}")
    return QuerySelection(_top_entropy(indices, scores, n), "entropy", round_index)


# -- k-medoids ----------------------------------------------------------------

@dataclass
class KMedoidsResult:
    medoids: np.ndarray  # row indices into the input points
    labels: np.ndarray
    cost: float
    history: list = field(default_factory=list)  # cost after each assignment
    iterations: int = 0
    swaps: int = 0


def _dist_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * points @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.sqrt(np.maximum(d2, 0.0))


def _exact_dist_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sqrt(((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))


def _distances(points, centers):
    # the expanded form loses exactness on duplicates; small inputs use the direct form
    if points.shape[0] * centers.shape[0] * points.shape[1] <= 2_000_000:
        return _exact_dist_to(points, centers)
    return _dist_to(points, centers)


def _seed_medoids(points: np.ndarray, k: int, rng: RngStream) -> list[int]:
    """Greedy k-means++: each step samples a few D^2-weighted candidates and
    keeps the one that lowers the total distance the most."""
    n = points.shape[0]
    trials = 2 + int(np.log(k))
    first = int(rng.integers(0, n))
    chosen = [first]
    closest = _distances(points, points[[first]])[:, 0]
    for _ in range(1, k):
        w = closest**2
        total = w.sum()
        if total <= 0.0:
            remaining = np.setdiff1d(np.arange(n), chosen)
            cand = remaining[: min(trials, remaining.size)]
        else:
            cand = np.unique(np.searchsorted(np.cumsum(w), rng.uniform(0, total, size=trials), side="right"))
            cand = np.minimum(cand, n - 1)
        dc = _distances(points, points[cand])
        pots = np.minimum(closest[:, None], dc).sum(axis=0)
        best = int(np.argmin(pots))
        chosen.append(int(cand[best]))
        closest = np.minimum(closest, dc[:, best])
    return chosen


def _cluster_medoid(points: np.ndarray, members: np.ndarray, current: int, chunk: int = 1024) -> int:
    """Member minimizing summed distance to the rest; keeps ``current`` on ties."""
    P = points[members]
    sums = np.empty(members.size)
    for s in range(0, members.size, chunk):
        sums[s : s + chunk] = _distances(P[s : s + chunk], P).sum(axis=1)
    cur_pos = np.flatnonzero(members == current)
    best = int(np.argmin(sums))
    if cur_pos.size and sums[cur_pos[0]] <= sums[best]:
        return current
    return int(members[best])


def _swap_polish(points, medoids, max_work: float) -> tuple[list[int], int]:
    """First-improvement single swaps until none lowers the cost.

    Skipped when one full pass would exceed ``max_work`` distance lookups.
    """
    n = points.shape[0]
    k = len(medoids)
    if k * n * n > max_work or k == n:
        return medoids, 0
    D = _distances(points, points)
    medoids = list(medoids)
    swaps = 0
    improved = True
    while improved:
        improved = False
        Dm = D[:, medoids]
        order = np.argsort(Dm, axis=1, kind="stable")
        near = Dm[np.arange(n), order[:, 0]]
        second = Dm[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
        cost = near.sum()
        for slot in range(k):
            owned = order[:, 0] == slot
            base = np.where(owned, second, near)  # distance if this medoid vanished
            new_costs = np.minimum(base[:, None], D).sum(axis=0)  # per candidate column
            new_costs[medoids] = np.inf
            cand = int(np.argmin(new_costs))
            if new_costs[cand] < cost - 1e-12 * max(1.0, cost):
                medoids[slot] = cand
                swaps += 1
                improved = True
                break
    return medoids, swaps


def kmedoids(points, k: int, rng: RngStream, max_iter: int = 100, swap_work: float = 2e7) -> KMedoidsResult:
    """Alternating (Voronoi) k-medoids with greedy k-means++ seeding.

    After the alternating phase converges, single-swap polishing runs when
    its cost is affordable (``k * n^2 <= swap_work``). Neither phase ever
    increases the total distance.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    medoids = _seed_medoids(P, k, rng)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        D = _distances(P, P[medoids])
        labels = np.argmin(D, axis=1)
        history.append(float(D[np.arange(n), labels].sum()))
        new = [
            _cluster_medoid(P, np.flatnonzero(labels == j), m) if (labels == j).any() else m
            for j, m in enumerate(medoids)
        ]
        if new == medoids:
            break
        medoids = new
    medoids, swaps = _swap_polish(P, medoids, swap_work)
    D = _distances(P, P[medoids])
    labels = np.argmin(D, axis=1)
    cost = float(D[np.arange(n), labels].sum())
    if swaps:
        history.append(cost)
    return KMedoidsResult(np.asarray(medoids, dtype=np.int64), labels, cost, history, it, swaps)


def select_entropy_kmedoids(
    indices,
    scores,
    scaled_features,
    n: int,
    rng: RngStream,
    pre_cap: int = 10_000,
    round_index: int = 0,
) -> QuerySelection:
    """Entropy pre-selection followed by k-medoids with ``k = n``.

    ``scaled_features`` holds one row per entry of ``indices``.
    """
    indices = np.asarray(indices, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    F = np.asarray(scaled_features, dtype=np.float64)
    if F.shape[0] != indices.size or scores.shape != indices.shape:
        raise ValueError("indices, scores and features differ in length")
    if indices.size <= n:
        return QuerySelection(np.sort(indices)[:n], "entropy-kmedoids", round_index)
    h = shannon_entropy(scores)
    order = np.lexsort((indices, -h))[: min(pre_cap, indices.size)]
    if n > order.size:
        raise ValueError(f"asked for {n} medoids from a pre-selection of {order.size}")
    if n == 0:
        return QuerySelection(indices[:0], "entropy-kmedoids", round_index)
    res = kmedoids(F[order], n, rng)
    return QuerySelection(indices[order[res.medoids]], "entropy-kmedoids", round_index)


def select_mcdropout_entropy(
    model: SurrogateModel,
    indices,
    scaled_features,
    n: int,
    seed: int,
    passes: int = 20,
    y_true=None,
    round_index: int = 0,
) -> QuerySelection:
    indices = np.asarray(indices, dtype=np.int64)
    if n > indices.size:
        raise ValueError(f"asked for {n} samples from a pool of {indices.size}")
    scores = mc_dropout_predict(model, scaled_features, passes, seed, y_true)
    return QuerySelection(_top_entropy(indices, scores, n), "mcdropout-entropy", round_index)
