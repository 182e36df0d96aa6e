"""Dataset containers, synthetic generation, splitting and file formats.

Binary layout (little-endian)::

    b"XDSM1" | u64 n | u64 d | u8 flags | f32[n*d] features (row-major)
             | u8[n] labels | i64[n] timestamps (only if flags & 1)
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numkit import RngStream

MAGIC = b"XDSM1"
_HEADER = struct.Struct("<5sQQB")


class DataFormatError(ValueError):
    pass


@dataclass
class DatasetMatrix:
    features: np.ndarray  # (n, d) float32
    y_true: np.ndarray  # (n,) uint8 in {0, 1}
    timestamps: np.ndarray | None = None  # (n,) int64 epoch days

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.y_true = np.ascontiguousarray(self.y_true, dtype=np.uint8)
        if self.features.ndim != 2 or 0 in self.features.shape:
            raise DataFormatError(f"features must be a non-empty 2-D matrix, got {self.features.shape}")
        if self.y_true.shape != (self.features.shape[0],):
            raise DataFormatError("label count does not match row count")
        if not np.isfinite(self.features).all():
            raise DataFormatError("features contain NaN or Inf")
        if (self.y_true > 1).any():
            raise DataFormatError("labels must be 0 or 1")
        if self.timestamps is not None:
            self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.int64)
            if self.timestamps.shape != self.y_true.shape:
                raise DataFormatError("timestamp count does not match row count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "DatasetMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        ts = None if self.timestamps is None else self.timestamps[idx]
        return DatasetMatrix(self.features[idx], self.y_true[idx], ts)


@dataclass
class SyntheticGenConfig:
    n: int = 10_000
    d: int = 64
    balance: float = 0.5  # fraction of positives
    clusters_per_class: int = 4
    spread: float = 1.0
    center_scale: float = 1.0
    monotone: tuple[int, ...] = ()  # features kept non-negative
    timestamps: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.n <= 0 or self.d < 2:
            raise ValueError("need n > 0 and d >= 2")
        if not 0.0 < self.balance < 1.0:
            raise ValueError("balance must be in (0, 1)")
        if self.clusters_per_class < 1 or self.spread < 0:
            raise ValueError("need clusters_per_class >= 1 and spread >= 0")
        if any(not 0 <= i < self.d for i in self.monotone):
            raise ValueError("monotone index out of range")


@dataclass
class NearestCenterLabeler:
    """Label of the nearest cluster center (Euclidean)."""

    centers: np.ndarray  # (k, d)
    center_labels: np.ndarray  # (k,)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        d2 = ((X[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return self.center_labels[np.argmin(d2, axis=1)].astype(np.uint8)


def gen_synthetic(cfg: SyntheticGenConfig) -> tuple[DatasetMatrix, NearestCenterLabeler]:
    """Gaussian cluster mixture with exactly stratified classes.

    Candidates are drawn from a class's clusters and kept only if the
    nearest-center labeler agrees, so the returned labels always equal the
    labeler applied to the returned features.
    """
    cfg.validate()
    rng = RngStream(cfg.seed, (0,))
    k = cfg.clusters_per_class
    centers = rng.normal(0.0, cfg.center_scale, size=(2 * k, cfg.d))
    mono = list(cfg.monotone)
    centers[:, mono] = np.abs(centers[:, mono])
    center_labels = np.repeat([0, 1], k)
    labeler = NearestCenterLabeler(centers, center_labels)

    n_pos = int(round(cfg.balance * cfg.n))
    want = {0: cfg.n - n_pos, 1: n_pos}
    rows = []
    for cls in (0, 1):
        got, kept = 0, []
        while got < want[cls]:
            m = max(64, 2 * (want[cls] - got))
            which = rng.integers(0, k, size=m) + cls * k
            X = centers[which] + cfg.spread * rng.normal(size=(m, cfg.d))
            X[:, mono] = np.abs(X[:, mono])
            X = X.astype(np.float32)
            ok = labeler(X) == cls
            kept.append(X[ok][: want[cls] - got])
            got += kept[-1].shape[0]
        rows.append(np.concatenate(kept) if kept else np.zeros((0, cfg.d), np.float32))
    X = np.concatenate(rows)
    y = np.repeat([0, 1], [want[0], want[1]]).astype(np.uint8)
    order = rng.permutation(cfg.n)
    ts = None
    if cfg.timestamps:
        ts = np.sort(rng.integers(17_000, 17_730, size=cfg.n))
    return DatasetMatrix(X[order], y[order], ts), labeler


def split_dataset(
    data: DatasetMatrix,
    fraction: float | None = None,
    seed: int = 0,
    cutoff: int | None = None,
) -> tuple[DatasetMatrix, DatasetMatrix]:
    """Split into (thief, test) by seeded fraction or by timestamp cutoff."""
    if (fraction is None) == (cutoff is None):
        raise ValueError("give exactly one of fraction or cutoff")
    if cutoff is not None:
        if data.timestamps is None:
            raise ValueError("timestamp split requested but dataset has no timestamps")
        mask = data.timestamps <= cutoff
        thief_idx, test_idx = np.flatnonzero(mask), np.flatnonzero(~mask)
    else:
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"fraction must be in (0, 1), got {fraction}")
        perm = RngStream(seed, (1,)).permutation(data.n)
        cut = int(round(fraction * data.n))
        thief_idx, test_idx = np.sort(perm[:cut]), np.sort(perm[cut:])
    if thief_idx.size == 0 or test_idx.size == 0:
        raise ValueError(
            f"split leaves an empty partition (thief={thief_idx.size}, test={test_idx.size})"
        )
    return data.subset(thief_idx), data.subset(test_idx)


# -- binary format -----------------------------------------------------------

def to_bytes(data: DatasetMatrix) -> bytes:
    flags = 1 if data.timestamps is not None else 0
    parts = [
        _HEADER.pack(MAGIC, data.n, data.d, flags),
        data.features.astype("<f4").tobytes(),
        data.y_true.tobytes(),
    ]
    if flags & 1:
        parts.append(data.timestamps.astype("<i8").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> DatasetMatrix:
    if len(buf) < _HEADER.size:
        raise DataFormatError("truncated file: header incomplete")
    magic, n, d, flags = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    need = _HEADER.size + 4 * n * d + n + (8 * n if flags & 1 else 0)
    if len(buf) < need:
        raise DataFormatError(f"truncated file: expected {need} bytes, got {len(buf)}")
    off = _HEADER.size
    X = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    y = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off)
    off += n
    ts = np.frombuffer(buf, dtype="<i8", count=n, offset=off) if flags & 1 else None
    if (y > 1).any():
        raise DataFormatError("labels must be 0 or 1")
    return DatasetMatrix(X.astype(np.float32), y.copy(), None if ts is None else ts.astype(np.int64))


def save_binary(data: DatasetMatrix, path) -> None:
    Path(path).write_bytes(to_bytes(data))


def load_binary(path) -> DatasetMatrix:
    return from_bytes(Path(path).read_bytes())


# -- CSV ---------------------------------------------------------------------

def save_csv(data: DatasetMatrix, path) -> None:
    header = [f"f{j}" for j in range(data.d)] + ["label"]
    if data.timestamps is not None:
        header.append("ts")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for i in range(data.n):
        cells = [repr(float(v)) for v in data.features[i]]
        cells.append(str(int(data.y_true[i])))
        if data.timestamps is not None:
            cells.append(str(int(data.timestamps[i])))
        buf.write(",".join(cells) + "\n")
    Path(path).write_text(buf.getvalue())


def load_csv(path) -> DatasetMatrix:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DataFormatError("empty CSV")
    header = lines[0].strip().split(",")
    has_ts = header[-1] == "ts"
    feat_cols = header[:-2] if has_ts else header[:-1]
    label_col = header[-2] if has_ts else header[-1]
    if label_col != "label" or feat_cols != [f"f{j}" for j in range(len(feat_cols))] or not feat_cols:
        raise DataFormatError("CSV header must be f0,...,f{d-1},label[,ts]")
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        raise DataFormatError("CSV has no rows")
    table = np.array([ln.split(",") for ln in body])
    if table.shape[1] != len(header):
        raise DataFormatError("ragged CSV rows")
    d = len(feat_cols)
    X = table[:, :d].astype(np.float64).astype(np.float32)
    y = table[:, d].astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise DataFormatError("labels must be 0 or 1")
    ts = table[:, d + 1].astype(np.int64) if has_ts else None
    return DatasetMatrix(X, y.astype(np.uint8), ts)


def load_dataset(path) -> DatasetMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return load_binary(path)


def save_dataset(data: DatasetMatrix, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        save_csv(data, path)
    else:
        save_binary(data, path)
