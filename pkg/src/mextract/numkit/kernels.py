"""Elementwise and layer kernels shared by the surrogate networks.

All kernels accept a single vector or a batch of row vectors; the last axis
is the feature axis.
"""
from __future__ import annotations

import numpy as np

from .rng import RngStream

ELU_ALPHA = 1.0
LN_EPS = 1e-5
BCE_CLAMP = 1e-7


class KernelError(ValueError):
    """Raised for shape mismatches or non-finite values inside a kernel."""


def check_finite(x: np.ndarray, what: str = "input") -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise KernelError(f"non-finite {what} at index {idx}")


def elu(x: np.ndarray) -> np.ndarray:
    # clip keeps exp() from overflowing on large positive inputs of the unused branch
    return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(kind: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    check_finite(x)
    if kind == "elu":
        return elu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise KernelError(f"unknown activation {kind!r}")


def layer_norm(x, gain, offset, eps: float = LN_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    if x.shape[-1] != gain.shape[-1] or gain.shape != offset.shape:
        raise KernelError(
            f"layer_norm length mismatch: x {x.shape}, gain {gain.shape}, offset {offset.shape}"
        )
    if eps <= 0:
        raise KernelError("layer_norm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + offset


def dense(x, W, b) -> np.ndarray:
    """Affine map ``W x + b``; ``W`` is (out, in)."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise KernelError(f"dense dimension mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.T + b


def dropout(x, rate: float, rng: RngStream | None, train_mode: bool):
    """Inverted dropout. Returns ``(output, mask)`` with ``mask`` boolean."""
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise KernelError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x.copy(), np.ones(x.shape, dtype=bool)
    if rng is None:
        raise KernelError("train-mode dropout needs an RngStream")
    mask = rng.uniform(size=x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def bce_loss(p, y) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.size == 0:
        raise KernelError("bce_loss on empty batch")
    if p.shape != y.shape:
        raise KernelError(f"bce_loss shape mismatch: {p.shape} vs {y.shape}")
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
