"""Seeded axis-aligned decision trees used as stand-in targets.

The tree is complete and stored in heap order: internal node ``i`` has
children ``2i+1`` (feature <= threshold) and ``2i+2``; the ``2**depth`` leaves
follow the internal nodes. A flipped leaf returns the opposite of its
ground-truth label.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..numkit import RngStream
from .base import TargetOracle


class PlantedTarget(TargetOracle):
    def __init__(self, dim, depth, features, thresholds, leaf_labels, flipped=()):
        super().__init__(dim)
        self.depth = int(depth)
        self.features = np.asarray(features, dtype=np.int64)
        self.thresholds = np.asarray(thresholds, dtype=np.float64)
        self.leaf_labels = np.asarray(leaf_labels, dtype=np.uint8)
        self.flipped = np.asarray(sorted(int(f) for f in flipped), dtype=np.int64)
        n_leaves = 2**self.depth
        if self.features.shape != (n_leaves - 1,) or self.thresholds.shape != (n_leaves - 1,):
            raise ValueError("internal node arrays must have 2**depth - 1 entries")
        if self.leaf_labels.shape != (n_leaves,):
            raise ValueError("need one label per leaf")
        self._effective = self.leaf_labels.copy()
        self._effective[self.flipped] ^= 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    def leaf_index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            go_right = X[rows, self.features[node]] > self.thresholds[node]
            node = 2 * node + 1 + go_right
        return node - (self.n_leaves - 1)

    def _label(self, X):
        return self._effective[self.leaf_index(X)]

    def ground_truth(self) -> "PlantedTarget":
        return PlantedTarget(self.dim, self.depth, self.features, self.thresholds, self.leaf_labels)

    def to_dict(self) -> dict:
        return {
            "kind": "planted",
            "dim": self.dim,
            "depth": self.depth,
            "features": self.features.tolist(),
            "thresholds": [float(t) for t in self.thresholds],
            "leaf_labels": self.leaf_labels.tolist(),
            "flipped": self.flipped.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedTarget":
        return cls(d["dim"], d["depth"], d["features"], d["thresholds"], d["leaf_labels"], d["flipped"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "PlantedTarget":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _gini_gain(y: np.ndarray, right: np.ndarray) -> float:
    def impurity(v):
        if v.size == 0:
            return 0.0
        p = v.mean()
        return v.size * 2.0 * p * (1.0 - p)

    return impurity(y) - impurity(y[~right]) - impurity(y[right])


def make_planted_target(
    dims: int,
    depth: int,
    disagreement_rate: float,
    seed: int,
    reference=None,
    reference_labels=None,
    max_features: int | None = None,
    flip_from: int | None = None,
) -> tuple[PlantedTarget, PlantedTarget]:
    """Random tree target plus its un-flipped ground truth.

    Without ``reference`` data, each node splits a uniformly drawn feature at
    a standard-normal threshold and leaf labels are random bits. With
    ``reference`` rows, splits sit at the median of the rows reaching the
    node. Adding ``reference_labels`` turns the tree into a randomized
    fit of those labels: each node draws ``max_features`` candidate features
    (default ceil(sqrt(dims))) and keeps the one with the best Gini gain, and
    leaves take the majority reference label. Exactly ``ceil(rate * leaves)``
    leaves are flipped; ``flip_from`` restricts the flips to leaves whose
    ground-truth label is that value (1 models a detector that only misses).
    """
    if depth < 1 or dims < 1:
        raise ValueError("need depth >= 1 and dims >= 1")
    if not 0.0 <= disagreement_rate < 1.0:
        raise ValueError("disagreement_rate must be in [0, 1)")
    rng = RngStream(seed, (4,))
    n_int = 2**depth - 1
    n_leaves = 2**depth
    features = rng.integers(0, dims, size=n_int)
    thresholds = np.zeros(n_int)
    R = None if reference is None else np.asarray(reference, dtype=np.float64)
    Y = None if reference_labels is None or R is None else np.asarray(reference_labels, dtype=np.float64)
    k = max_features or math.ceil(math.sqrt(dims))
    node_of = None if R is None else np.zeros(R.shape[0], dtype=np.int64)
    for node in range(n_int):
        if R is None:
            thresholds[node] = rng.normal()
            continue
        rows = np.flatnonzero(node_of == node)
        if rows.size == 0:
            # empty region: inherit the parent's split point
            thresholds[node] = thresholds[(node - 1) // 2] if node else 0.0
            continue
        if Y is None:
            thresholds[node] = float(np.median(R[rows, features[node]]))
        else:
            best = None
            for f in rng.choice(dims, size=min(k, dims), replace=False):
                thr = float(np.median(R[rows, f]))
                gain = _gini_gain(Y[rows], R[rows, f] > thr)
                if best is None or gain > best[0]:
                    best = (gain, int(f), thr)
            _, features[node], thresholds[node] = best
        right = R[rows, features[node]] > thresholds[node]
        node_of[rows] = 2 * node + 1 + right
    labels = rng.integers(0, 2, size=n_leaves).astype(np.uint8)
    if Y is not None:
        leaf = node_of - n_int
        pos = np.bincount(leaf, weights=Y, minlength=n_leaves)
        tot = np.bincount(leaf, minlength=n_leaves)
        decided = (tot > 0) & (2 * pos != tot)
        labels[decided] = (2 * pos[decided] > tot[decided]).astype(np.uint8)
    n_flip = math.ceil(disagreement_rate * n_leaves)
    eligible = np.arange(n_leaves) if flip_from is None else np.flatnonzero(labels == flip_from)
    if n_flip > eligible.size:
        raise ValueError(f"cannot flip {n_flip} leaves: only {eligible.size} are eligible")
    flipped = eligible[rng.choice(eligible.size, size=n_flip, replace=False)] if n_flip else []
    target = PlantedTarget(dims, depth, features, thresholds, labels, flipped)
    return target, target.ground_truth()
