"""Agreement, confusion rates, ROC/AUC and fixed-FPR threshold calibration.

Prediction rule everywhere: positive iff ``score >= threshold``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# one representable step above 1.0: a threshold no score in [0, 1] reaches
ABOVE_ONE = float(np.nextafter(1.0, 2.0))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float
    fpr: float
    accuracy: float
    tpr_defined: bool = True
    fpr_defined: bool = True


def _as_labels(y) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int8)


def confusion_from_labels(pred, truth) -> Confusion:
    pred = _as_labels(pred)
    truth = _as_labels(truth)
    if pred.size == 0:
        raise ValueError("confusion on empty set")
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    P, N = tp + fn, fp + tn
    return Confusion(
        tp, fp, tn, fn,
        tpr=tp / P if P else 0.0,
        fpr=fp / N if N else 0.0,
        accuracy=(tp + tn) / pred.size,
        tpr_defined=P > 0,
        fpr_defined=N > 0,
    )


def confusion_at_threshold(scores, true_labels, tau: float) -> Confusion:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    return confusion_from_labels((scores >= tau).astype(np.int8), true_labels)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_curve(scores, true_labels) -> RocCurve:
    """Sweep thresholds over the distinct scores, highest first.

    The first point uses a threshold above every score, giving (0, 0); the
    last uses the minimum score, giving (1, 1).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _as_labels(true_labels)
    if s.shape != y.shape:
        raise ValueError("length mismatch")
    P = int(y.sum())
    N = y.size - P
    if P == 0 or N == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tpr = np.r_[0.0, tps[ends] / P]
    fpr = np.r_[0.0, fps[ends] / N]
    thr = np.r_[max(ABOVE_ONE, float(np.nextafter(s[0], np.inf))), s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


def threshold_for_fpr(scores, true_labels, target_fpr: float) -> float:
    """Smallest candidate threshold whose FPR does not exceed ``target_fpr``.

    Candidates are the distinct scores plus one value above 1, so the result
    also maximizes TPR under the cap.
    """
    if target_fpr < 0:
        raise ValueError("target FPR must be non-negative")
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _as_labels(true_labels)
    neg = np.sort(s[y == 0])
    if neg.size == 0:
        raise ValueError("threshold calibration needs negatives")
    cand = np.unique(np.r_[s, ABOVE_ONE])
    n_fp = neg.size - np.searchsorted(neg, cand, side="left")
    ok = np.flatnonzero(n_fp / neg.size <= target_fpr)
    return float(cand[ok[0]])


def agreement(f_labels, fhat_labels) -> float:
    a = _as_labels(f_labels)
    b = _as_labels(fhat_labels)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("agreement on empty set")
    return float(np.mean(a == b))


def detection_rate(labeler, malware) -> float:
    """Fraction of a positives-only set labeled 1.

    ``labeler`` is anything with ``label(X)`` (an oracle) or a label array.
    """
    if hasattr(labeler, "label"):
        X = np.asarray(malware)
        if X.shape[0] == 0:
            raise ValueError("detection rate on empty set")
        labels = labeler.label(X)
    else:
        labels = _as_labels(labeler)
        if labels.size == 0:
            raise ValueError("detection rate on empty set")
    return float(np.mean(np.asarray(labels) == 1))


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            w.writerow([f"{f:.6f}", f"{t:.6f}", f"{th:.9g}"])
