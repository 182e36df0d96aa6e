from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numkit import sigmoid
from ..surrogate import SurrogateModel, score
from .base import TargetOracle


@dataclass
class LinearModel:
    """Logistic scorer ``sigmoid(X @ w + b)``."""

    w: np.ndarray
    b: float = 0.0

    def scores(self, X) -> np.ndarray:
        return sigmoid(np.asarray(X, dtype=np.float64) @ np.asarray(self.w, dtype=np.float64) + self.b)


class NnTarget(TargetOracle):
    """Frozen scoring model with a decision threshold (label 1 iff score >= tau).

    ``model`` is a :class:`SurrogateModel` (raw features in) or any object
    with ``scores(X)``. A dualFCNN needs a true label per row; ``assumed_label``
    supplies one for every query, e.g. 1 when scanning malware.
    """

    def __init__(self, model, threshold: float, assumed_label: int | None = None):
        if isinstance(model, SurrogateModel):
            dim = model.config.input_dim
        elif isinstance(model, LinearModel):
            dim = int(np.size(model.w))
        else:
            dim = None
        super().__init__(dim)
        self.model = model
        self.threshold = float(threshold)
        self.assumed_label = assumed_label

    def scores(self, X) -> np.ndarray:
        X = self._check(X)
        if isinstance(self.model, SurrogateModel):
            y = None
            if self.model.config.uses_true_label:
                if self.assumed_label is None:
                    raise ValueError("dualfcnn target needs assumed_label")
                y = np.full(X.shape[0], self.assumed_label)
            return score(self.model, X, y)
        return self.model.scores(X)

    def _label(self, X):
        return (self.scores(X) >= self.threshold).astype(np.uint8)
