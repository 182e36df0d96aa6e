"""Median/IQR feature scaling, fit on training rows only."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RobustScalerParams:
    center: np.ndarray
    scale: np.ndarray  # raw IQR; zero entries are treated as 1 when applied

    @property
    def effective_scale(self) -> np.ndarray:
        return np.where(self.scale == 0.0, 1.0, self.scale)


def fit_robust_scaler(X) -> RobustScalerParams:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"cannot fit scaler on matrix of shape {X.shape}")
    q25, med, q75 = np.quantile(X, [0.25, 0.5, 0.75], axis=0, method="linear")
    return RobustScalerParams(center=med, scale=np.maximum(q75 - q25, 0.0))


def apply_robust_scaler(params: RobustScalerParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (X - params.center) / params.effective_scale


def invert_robust_scaler(params: RobustScalerParams, Xs) -> np.ndarray:
    return np.asarray(Xs, dtype=np.float64) * params.effective_scale + params.center
