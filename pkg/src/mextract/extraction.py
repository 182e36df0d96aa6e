"""Active-learning extraction loop under a hard query budget.

Budget split: 20% validation, 10% seed, the rest spread evenly over the
query rounds (any remainder goes to the last round). The surrogate is
retrained from scratch every round on the whole labeled pool.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DatasetMatrix
from .errors import BudgetError, ConfigError
from .metrics import (
    agreement,
    confusion_from_labels,
    roc_curve,
    threshold_for_fpr,
)
from .numkit import RngStream, fit_robust_scaler
from .oracles.base import TargetOracle
from .sampling import (
    STRATEGIES,
    QuerySelection,
    select_entropy,
    select_entropy_kmedoids,
    select_mcdropout_entropy,
    select_random,
)
from .surrogate import (
    ArchitectureConfig,
    LabeledSet,
    SurrogateModel,
    TrainConfig,
    build_model,
    forward,
    score,
    train,
)

log = logging.getLogger(__name__)

ROUNDS_HEADER = ["round", "queries", "threshold", "agreement", "accuracy", "tpr", "fpr", "auc", "seconds"]


@dataclass(frozen=True)
class BudgetPlan:
    validation_n: int
    seed_n: int
    per_round_n: int
    final_round_bonus: int

    def as_tuple(self):
        return (self.validation_n, self.seed_n, self.per_round_n, self.final_round_bonus)


def plan_budget(Q: int, R: int) -> BudgetPlan:
    if R <= 0:
        raise ConfigError("need at least one query round")
    if Q < R + 3:
        raise ConfigError(f"budget {Q} too small for {R} rounds (need >= {R + 3})")
    val = Q // 5
    seed = Q // 10
    # guarantee one sample per role on tiny budgets
    val, seed = max(val, 1), max(seed, 1)
    rest = Q - val - seed
    per = rest // R
    return BudgetPlan(val, seed, per, rest - per * R)


@dataclass
class BudgetLedger:
    total: int
    spent: int = 0
    labeled: set = field(default_factory=set)

    @property
    def remaining(self) -> int:
        return self.total - self.spent


def label_batch(oracle: TargetOracle, features: np.ndarray, indices, ledger: BudgetLedger) -> np.ndarray:
    """Query the oracle for thief rows ``indices`` and charge the ledger.

    Fails before issuing anything if the batch would overrun the budget or
    repeats an index.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if len(set(idx.tolist())) != idx.size:
        raise ValueError("duplicate index within the batch")
    again = ledger.labeled.intersection(idx.tolist())
    if again:
        raise ValueError(f"indices already labeled: {sorted(again)[:5]}")
    if ledger.spent + idx.size > ledger.total:
        raise BudgetError(f"batch of {idx.size} exceeds remaining budget {ledger.remaining}")
    before = oracle.query_count
    ledger.spent += idx.size
    try:
        labels = oracle.label(features[idx])
    except Exception:
        ledger.spent += (oracle.query_count - before) - idx.size
        raise
    ledger.labeled.update(idx.tolist())
    return labels


@dataclass
class RoundReport:
    round: int
    queries: int
    threshold: float
    agreement: float
    accuracy: float
    tpr: float
    fpr: float
    auc: float
    seconds: float = 0.0
    pool_size: int = 0
    epochs: int = 0
    val_accuracy: float = 0.0

    def row(self, wallclock: bool = False) -> list[str]:
        return [
            str(self.round),
            str(self.queries),
            f"{self.threshold:.9g}",
            f"{self.agreement:.6f}",
            f"{self.accuracy:.6f}",
            f"{self.tpr:.6f}",
            f"{self.fpr:.6f}",
            f"{self.auc:.6f}",
            f"{self.seconds:.3f}" if wallclock else "0.000",
        ]


def write_rounds_csv(reports: list[RoundReport], path, wallclock: bool = False) -> None:
    """``seconds`` is written as 0.000 unless ``wallclock`` is set, keeping reruns byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUNDS_HEADER)
        for r in reports:
            w.writerow(r.row(wallclock))


def read_rounds_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


@dataclass
class Evaluation:
    threshold: float
    agreement: float
    accuracy: float
    tpr: float
    fpr: float
    auc: float
    scores: np.ndarray


def evaluate_surrogate(
    model: SurrogateModel,
    test: DatasetMatrix,
    test_target_labels,
    target_fpr: float = 0.01,
    calibrate_on: str = "true",
) -> Evaluation:
    """Calibrate the surrogate's threshold at ``target_fpr`` on the test set,
    then score agreement with the target and accuracy against the true labels.

    ``calibrate_on`` picks the negatives used for calibration: the true
    labels ("true") or the target's labels ("target").
    """
    s = score(model, test.features, test.y_true)
    ref = test.y_true if calibrate_on == "true" else np.asarray(test_target_labels)
    if calibrate_on not in ("true", "target"):
        raise ConfigError("calibrate_on must be 'true' or 'target'")
    tau = threshold_for_fpr(s, ref, target_fpr)
    pred = (s >= tau).astype(np.uint8)
    conf = confusion_from_labels(pred, test.y_true)
    both = len(np.unique(test.y_true)) == 2
    return Evaluation(
        threshold=tau,
        agreement=agreement(test_target_labels, pred),
        accuracy=conf.accuracy,
        tpr=conf.tpr,
        fpr=conf.fpr,
        auc=roc_curve(s, test.y_true).auc if both else float("nan"),
        scores=s,
    )


@dataclass
class ExtractionResult:
    model: SurrogateModel
    reports: list[RoundReport]
    ledger: BudgetLedger
    plan: BudgetPlan
    shortfall: int
    validation_idx: np.ndarray
    seed_idx: np.ndarray
    rounds_idx: list  # indices queried in each round
    test_scores: np.ndarray


def _derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=keys).generate_state(1, np.uint64)[0])


def select_queries(
    strategy: str,
    model: SurrogateModel,
    thief: DatasetMatrix,
    unlabeled: np.ndarray,
    n: int,
    seed: int,
    round_index: int,
    pre_cap: int = 10_000,
    mc_passes: int = 20,
) -> QuerySelection:
    rng = RngStream(seed, (20, round_index))
    if strategy == "random":
        return select_random(unlabeled, n, rng, round_index)
    X = thief.features[unlabeled]
    y = thief.y_true[unlabeled]
    Xs = model.transform(X)
    if strategy == "mcdropout-entropy":
        return select_mcdropout_entropy(
            model, unlabeled, Xs, n, _derived_seed(seed, 21, round_index), mc_passes, y, round_index
        )
    scores = forward(model, Xs, y)
    if strategy == "entropy":
        return select_entropy(unlabeled, scores, n, round_index)
    if strategy == "entropy-kmedoids":
        return select_entropy_kmedoids(unlabeled, scores, Xs, n, rng, pre_cap, round_index)
    raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def run_extraction(
    thief: DatasetMatrix,
    test: DatasetMatrix,
    oracle: TargetOracle,
    strategy: str,
    arch: ArchitectureConfig,
    train_cfg: TrainConfig,
    Q: int,
    R: int,
    seed: int,
    test_target_labels,
    target_fpr: float = 0.01,
    calibrate_on: str = "true",
    pre_cap: int = 10_000,
    mc_passes: int = 20,
) -> ExtractionResult:
    """Run the full extraction. ``test_target_labels`` are the target's labels
    on the test set; they are evaluation data and do not touch the budget."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if thief.d != test.d:
        raise ConfigError(f"thief has {thief.d} features but test has {test.d}")
    if arch.input_dim != thief.d:
        raise ConfigError(f"architecture expects {arch.input_dim} features, data has {thief.d}")
    if Q > thief.n:
        raise ConfigError(f"budget {Q} exceeds thief dataset size {thief.n}")
    test_target_labels = np.asarray(test_target_labels, dtype=np.uint8)
    plan = plan_budget(Q, R)
    ledger = BudgetLedger(Q)
    log.info("budget plan: validation=%d seed=%d per_round=%d bonus=%d", *plan.as_tuple())

    rng = RngStream(seed, (5,))
    order = rng.permutation(thief.n)
    val_idx = np.sort(order[: plan.validation_n])
    seed_idx = np.sort(order[plan.validation_n : plan.validation_n + plan.seed_n])
    val_y = label_batch(oracle, thief.features, val_idx, ledger)
    validation = LabeledSet(thief.features[val_idx], thief.y_true[val_idx], val_y)
    pool_idx = list(seed_idx.tolist())
    pool_y = list(label_batch(oracle, thief.features, seed_idx, ledger).tolist())

    reports: list[RoundReport] = []
    rounds_idx = []
    shortfall = 0
    model = None
    ev = None
    for r in range(R + 1):
        t0 = time.perf_counter()
        pidx = np.asarray(pool_idx, dtype=np.int64)
        pool = LabeledSet(thief.features[pidx], thief.y_true[pidx], np.asarray(pool_y, dtype=np.uint8))
        model = build_model(arch, RngStream(seed, (10, r)))
        model.scaler = fit_robust_scaler(pool.features)
        cfg = replace(train_cfg, seed=_derived_seed(seed, 11, r))
        model, ckpt, _ = train(model, pool, validation, cfg)
        ev = evaluate_surrogate(model, test, test_target_labels, target_fpr, calibrate_on)
        model.threshold = ev.threshold
        reports.append(
            RoundReport(
                round=r,
                queries=ledger.spent,
                threshold=ev.threshold,
                agreement=ev.agreement,
                accuracy=ev.accuracy,
                tpr=ev.tpr,
                fpr=ev.fpr,
                auc=ev.auc,
                seconds=time.perf_counter() - t0,
                pool_size=len(pool_idx),
                epochs=ckpt.epoch,
                val_accuracy=ckpt.val_accuracy,
            )
        )
        log.info(
            "round %d: pool=%d queries=%d agreement=%.4f accuracy=%.4f threshold=%.4f",
            r, len(pool_idx), ledger.spent, ev.agreement, ev.accuracy, ev.threshold,
        )
        if r == R:
            break
        want = plan.per_round_n + (plan.final_round_bonus if r == R - 1 else 0)
        labeled_mask = np.zeros(thief.n, dtype=bool)
        labeled_mask[list(ledger.labeled)] = True
        unlabeled = np.flatnonzero(~labeled_mask)
        n = min(want, unlabeled.size)
        if n < want:
            shortfall += want - n
            log.warning("round %d: only %d unlabeled samples left, wanted %d", r, n, want)
        if n == 0:
            rounds_idx.append(np.zeros(0, dtype=np.int64))
            continue
        sel = select_queries(strategy, model, thief, unlabeled, n, seed, r, pre_cap, mc_passes)
        chosen = np.asarray(sel.indices, dtype=np.int64)
        if chosen.size != n or len(set(chosen.tolist())) != n or labeled_mask[chosen].any():
            raise RuntimeError(f"strategy {strategy!r} returned an invalid selection in round {r}")
        labels = label_batch(oracle, thief.features, chosen, ledger)
        pool_idx.extend(chosen.tolist())
        pool_y.extend(labels.tolist())
        rounds_idx.append(chosen)
    return ExtractionResult(model, reports, ledger, plan, shortfall, val_idx, seed_idx, rounds_idx, ev.scores)


METRICS = ("agreement", "accuracy", "tpr", "fpr", "auc", "threshold")


def aggregate_final(results: list[list[RoundReport]]) -> dict:
    """Mean and (population) std of each final-round metric across runs."""
    out = {}
    for m in METRICS:
        vals = np.array([getattr(reps[-1], m) for reps in results], dtype=np.float64)
        out[m] = (float(vals.mean()), float(vals.std()))
    return out
