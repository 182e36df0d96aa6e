"""FCNN and dualFCNN surrogates, training with early stopping, MC dropout.

Both architectures share the body ``[dense -> ELU -> layer norm -> dropout] x k``
and a single sigmoid output. dualFCNN additionally takes the true label as an
extra input column and adds ``w_skip * y_true`` to the final logit.

Model file layout (little-endian)::

    b"XTRW1" | u8 kind | u32 input_dim | u32 k | u32[k] widths | f64 dropout
             | f32[...] parameters in layer order
             | u8 has_scaler | f64[input_dim] center | f64[input_dim] scale
             | f64 threshold
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numkit import (
    AdamState,
    RngStream,
    RobustScalerParams,
    adam_step,
    apply_robust_scaler,
    backprop,
    bce_loss,
    fit_robust_scaler,
    forward_trace,
    init_params,
)
from .numkit.mlp import glorot

log = logging.getLogger(__name__)

KINDS = ("fcnn", "dualfcnn")
MODEL_MAGIC = b"XTRW1"


@dataclass
class ArchitectureConfig:
    kind: str = "fcnn"
    input_dim: int = 64
    hidden_sizes: tuple[int, ...] = (512, 256, 128, 64)
    dropout_rate: float = 0.3

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}; expected one of {KINDS}")
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must not be empty")
        if any(h <= 0 for h in self.hidden_sizes) or any(
            a <= b for a, b in zip(self.hidden_sizes, self.hidden_sizes[1:])
        ):
            raise ValueError(f"hidden sizes must be positive and strictly decreasing: {self.hidden_sizes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")

    @property
    def uses_true_label(self) -> bool:
        return self.kind == "dualfcnn"

    @property
    def network_input_dim(self) -> int:
        return self.input_dim + (1 if self.uses_true_label else 0)


@dataclass
class SurrogateModel:
    config: ArchitectureConfig
    params: dict
    scaler: RobustScalerParams | None = None
    threshold: float = 0.5

    def transform(self, X) -> np.ndarray:
        if self.scaler is None:
            raise ValueError("model has no fitted scaler")
        return apply_robust_scaler(self.scaler, X)

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs <= 0 or self.patience <= 0 or self.batch_size <= 0:
            raise ValueError("max_epochs, patience and batch_size must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class LabeledSet:
    """Raw features with both the true labels and the target's labels."""

    features: np.ndarray
    y_true: np.ndarray
    y_target: np.ndarray

    def __len__(self) -> int:
        return int(np.asarray(self.y_target).shape[0])


@dataclass
class Checkpoint:
    params: dict
    epoch: int
    val_accuracy: float


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_accuracy: float


def build_model(config: ArchitectureConfig, rng: RngStream | int) -> SurrogateModel:
    """Fresh model. FCNN and dualFCNN built from the same stream share body weights."""
    if not isinstance(rng, RngStream):
        rng = RngStream(rng)
    params = init_params(config.input_dim, list(config.hidden_sizes), rng.child(0))
    if config.uses_true_label:
        h0 = config.hidden_sizes[0]
        label_col = glorot(rng.child(1), config.input_dim + 1, h0)[:, :1]
        params["dense0.W"] = np.hstack([params["dense0.W"], label_col])
        params["skip.w"] = np.ones(1)
    return SurrogateModel(config, params)


def _side(model: SurrogateModel, n: int, y_true):
    if not model.config.uses_true_label:
        return None
    if y_true is None:
        raise ValueError("dualfcnn needs y_true at inference")
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if y.shape != (n,):
        raise ValueError(f"expected {n} true labels, got {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y_true must be 0 or 1")
    return y


def _net_input(model: SurrogateModel, Xs: np.ndarray, side):
    return Xs if side is None else np.hstack([Xs, side[:, None]])


def forward(
    model: SurrogateModel,
    X_scaled,
    y_true=None,
    train_mode: bool = False,
    rng: RngStream | None = None,
    params: dict | None = None,
) -> np.ndarray:
    """Scores in (0, 1) for already-scaled rows. FCNN ignores ``y_true``."""
    Xs = np.asarray(X_scaled, dtype=np.float64)
    if Xs.ndim == 1:
        Xs = Xs[None, :]
    if Xs.shape[1] != model.config.input_dim:
        raise ValueError(f"expected {model.config.input_dim} features, got {Xs.shape[1]}")
    side = _side(model, Xs.shape[0], y_true)
    tr = forward_trace(
        params if params is not None else model.params,
        _net_input(model, Xs, side),
        side,
        model.config.dropout_rate,
        rng,
        train_mode,
    )
    return tr.scores


def score(model: SurrogateModel, X, y_true=None) -> np.ndarray:
    """Scores for raw (unscaled) rows in eval mode."""
    return forward(model, model.transform(X), y_true)


def predict_labels(model: SurrogateModel, X, y_true=None) -> np.ndarray:
    return (score(model, X, y_true) >= model.threshold).astype(np.uint8)


def _round32(params: dict) -> dict:
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def _accuracy(model, params, Xs, y_true, y_target) -> float:
    s = forward(model, Xs, y_true, params=params)
    return float(np.mean((s >= 0.5) == (np.asarray(y_target) == 1)))


def train(
    model: SurrogateModel,
    pool: LabeledSet,
    validation: LabeledSet,
    cfg: TrainConfig,
) -> tuple[SurrogateModel, Checkpoint, list[EpochLog]]:
    """Train on the target's labels, keep the best-validation-accuracy epoch
    (the latest one among equals).

    Fits the robust scaler on the pool if the model does not carry one yet.
    Checkpointed parameters are rounded to float32 so the saved model is
    exactly the one that was validated.
    """
    if len(pool) == 0:
        raise ValueError("cannot train on an empty pool")
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    y = np.asarray(pool.y_target, dtype=np.float64)
    if len(np.unique(y)) < 2:
        log.warning("training pool holds a single target class (%d samples)", len(pool))
    if model.scaler is None:
        model.scaler = fit_robust_scaler(pool.features)
    Xs = model.transform(pool.features)
    side = _side(model, Xs.shape[0], pool.y_true)
    Xin = _net_input(model, Xs, side)
    Vs = model.transform(validation.features)

    rng = RngStream(cfg.seed, (2,))
    state = AdamState(lr=cfg.lr)
    params = model.params
    n = Xin.shape[0]
    best: Checkpoint | None = None
    history: list[EpochLog] = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tr = forward_trace(
                params,
                Xin[idx],
                None if side is None else side[idx],
                model.config.dropout_rate,
                rng,
                True,
            )
            total += bce_loss(tr.scores, y[idx]) * idx.size
            params, state = adam_step(params, backprop(params, tr, y[idx]), state)
        frozen = _round32(params)
        acc = _accuracy(model, frozen, Vs, validation.y_true, validation.y_target)
        history.append(EpochLog(epoch, total / n, acc))
        if best is None or acc > best.val_accuracy:
            best = Checkpoint(frozen, epoch, acc)
            stale = 0
            continue
        if acc == best.val_accuracy:
            # a tie moves the checkpoint forward but does not buy more patience
            best = Checkpoint(frozen, epoch, acc)
        stale += 1
        if stale >= cfg.patience:
            break
    model.params = best.params
    return model, best, history


def mc_dropout_predict(model: SurrogateModel, X_scaled, passes: int = 20, seed: int = 0, y_true=None) -> np.ndarray:
    """Mean score over ``passes`` dropout-active forward passes."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    rng = RngStream(seed, (3,))
    if model.config.dropout_rate == 0.0:
        return forward(model, X_scaled, y_true)
    acc = None
    for _ in range(passes):
        s = forward(model, X_scaled, y_true, train_mode=True, rng=rng)
        acc = s if acc is None else acc + s
    return acc / passes


# -- serialization ----------------------------------------------------------

def param_shapes(config: ArchitectureConfig) -> dict:
    shapes = {}
    prev = config.network_input_dim
    for i, w in enumerate(config.hidden_sizes):
        shapes[f"dense{i}.W"] = (w, prev)
        shapes[f"dense{i}.b"] = (w,)
        shapes[f"norm{i}.gain"] = (w,)
        shapes[f"norm{i}.offset"] = (w,)
        prev = w
    shapes["out.W"] = (1, prev)
    shapes["out.b"] = (1,)
    if config.uses_true_label:
        shapes["skip.w"] = (1,)
    return shapes


def model_to_bytes(model: SurrogateModel) -> bytes:
    cfg = model.config
    parts = [
        MODEL_MAGIC,
        struct.pack("<BII", KINDS.index(cfg.kind), cfg.input_dim, len(cfg.hidden_sizes)),
        struct.pack(f"<{len(cfg.hidden_sizes)}I", *cfg.hidden_sizes),
        struct.pack("<d", cfg.dropout_rate),
    ]
    for name, shape in param_shapes(cfg).items():
        p = model.params[name]
        if p.shape != shape:
            raise ValueError(f"parameter {name} has shape {p.shape}, expected {shape}")
        parts.append(p.astype("<f4").tobytes())
    if model.scaler is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(np.asarray(model.scaler.center, dtype="<f8").tobytes())
        parts.append(np.asarray(model.scaler.scale, dtype="<f8").tobytes())
    parts.append(struct.pack("<d", model.threshold))
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> SurrogateModel:
    if buf[:5] != MODEL_MAGIC:
        raise ValueError(f"bad magic {buf[:5]!r}, expected {MODEL_MAGIC!r}")
    try:
        off = 5
        kind, input_dim, k = struct.unpack_from("<BII", buf, off)
        off += 9
        widths = struct.unpack_from(f"<{k}I", buf, off)
        off += 4 * k
        (rate,) = struct.unpack_from("<d", buf, off)
        off += 8
        cfg = ArchitectureConfig(KINDS[kind], input_dim, widths, rate)
        params = {}
        for name, shape in param_shapes(cfg).items():
            count = int(np.prod(shape))
            if off + 4 * count > len(buf):
                raise ValueError("truncated model file")
            params[name] = (
                np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float64).reshape(shape)
            )
            off += 4 * count
        scaler = None
        if buf[off] == 1:
            off += 1
            center = np.frombuffer(buf, dtype="<f8", count=input_dim, offset=off).copy()
            off += 8 * input_dim
            scale = np.frombuffer(buf, dtype="<f8", count=input_dim, offset=off).copy()
            off += 8 * input_dim
            scaler = RobustScalerParams(center, scale)
        else:
            off += 1
        (threshold,) = struct.unpack_from("<d", buf, off)
    except (struct.error, IndexError) as exc:
        raise ValueError("truncated model file") from exc
    return SurrogateModel(cfg, params, scaler, threshold)


def save_model(model: SurrogateModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> SurrogateModel:
    return model_from_bytes(Path(path).read_bytes())
