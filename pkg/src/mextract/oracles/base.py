from __future__ import annotations

import threading

import numpy as np


class TargetOracle:
    """Hard-label black box with an exact per-sample query counter.

    Subclasses implement ``_label`` as a pure function of the rows.
    """

    def __init__(self, dim: int | None):
        self.dim = dim
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._count

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise ValueError(f"expected a 2-D batch, got shape {X.shape}")
        if X.shape[0] and self.dim is not None and X.shape[1] != self.dim:
            raise ValueError(f"oracle expects {self.dim} features, got {X.shape[1]}")
        return X

    def label(self, X) -> np.ndarray:
        X = self._check(X)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.uint8)
        labels = np.asarray(self._label(X), dtype=np.uint8)
        with self._lock:
            self._count += X.shape[0]
        return labels

    def _label(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def oracle_label(oracle: TargetOracle, X) -> np.ndarray:
    return oracle.label(X)


class ConstantTarget(TargetOracle):
    def __init__(self, dim: int | None, value: int):
        super().__init__(dim)
        if value not in (0, 1):
            raise ValueError("constant label must be 0 or 1")
        self.value = value

    def _label(self, X):
        return np.full(X.shape[0], self.value, dtype=np.uint8)
