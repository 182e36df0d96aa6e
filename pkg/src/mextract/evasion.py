"""Two-stage feature-space evasion and transferability.

Stage 1 pulls bandit-chosen additive actions until the generating model
stops detecting the sample. Stage 2 strips actions that turn out to be
unnecessary. ``transfer_matrix`` then scans every adversarial set with every
target.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import detection_rate
from .numkit import RngStream


class FeasibilityError(ValueError):
    pass


class EvasionError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    """Sparse additive perturbation: ``x[indices] += values``."""

    name: str
    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError(f"action {self.name}: {len(self.indices)} indices, {len(self.values)} values")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError(f"action {self.name}: repeated index")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"action {self.name}: non-finite delta")

    def dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[list(self.indices)] = self.values
        return out


@dataclass
class ActionCatalog:
    """Actions over a ``dim``-wide feature space.

    Monotone dimensions may only grow (the appended-content analog), so every
    action in a catalog must have non-negative deltas there.
    """

    dim: int
    actions: list[Action]
    monotone: frozenset[int] = frozenset()

    def __post_init__(self):
        self.monotone = frozenset(int(i) for i in self.monotone)
        if any(not 0 <= i < self.dim for i in self.monotone):
            raise ValueError("monotone index out of range")
        for a in self.actions:
            if any(not 0 <= i < self.dim for i in a.indices):
                raise ValueError(f"action {a.name}: index out of range for dim {self.dim}")
            bad = self.violations(a)
            if bad:
                raise FeasibilityError(f"action {a.name} decreases monotone features {bad}")

    def __len__(self) -> int:
        return len(self.actions)

    def violations(self, action: Action) -> list[int]:
        return [i for i, v in zip(action.indices, action.values) if i in self.monotone and v < 0]


def random_catalog(dim, n_actions, rng: RngStream, monotone=(), mutable=None, nnz=4, scale=1.0):
    """Random sparse actions: positive steps on monotone dims, signed elsewhere."""
    monotone = frozenset(int(i) for i in monotone)
    pool = np.arange(dim) if mutable is None else np.asarray(sorted(set(mutable)), dtype=int)
    if pool.size == 0:
        raise ValueError("no mutable features")
    nnz = min(nnz, pool.size)
    actions = []
    for k in range(n_actions):
        idx = np.sort(pool[rng.choice(pool.size, nnz)])
        mag = scale * np.abs(rng.normal(size=nnz))
        sign = np.where(rng.uniform(size=nnz) < 0.5, -1.0, 1.0)
        vals = [float(m if int(i) in monotone else s * m) for i, m, s in zip(idx, mag, sign)]
        actions.append(Action(f"a{k}", tuple(int(i) for i in idx), tuple(vals)))
    return ActionCatalog(dim, actions, monotone)


@dataclass
class AdversarialSample:
    base: np.ndarray
    actions: list[int] = field(default_factory=list)
    current: np.ndarray | None = None
    evasive: bool = False
    queries: int = 0

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        if self.current is None:
            self.current = self.base.copy()


def _compose(base: np.ndarray, actions: list[int], catalog: ActionCatalog) -> np.ndarray:
    # exact per-coordinate sums, so the result ignores action order
    parts: dict[int, list[float]] = {}
    for k in actions:
        a = catalog.actions[k]
        for i, v in zip(a.indices, a.values):
            parts.setdefault(i, [float(base[i])]).append(v)
    out = base.copy()
    for i, terms in parts.items():
        out[i] = math.fsum(terms)
    return out


def _check_feasible(sample: AdversarialSample, catalog: ActionCatalog):
    m = sorted(catalog.monotone)
    if m and np.any(sample.current[m] < sample.base[m]):
        raise FeasibilityError("monotone feature below its base value")


def apply_action(sample: AdversarialSample, action: int | Action, catalog: ActionCatalog) -> AdversarialSample:
    """Return a copy of ``sample`` with one more action applied."""
    if isinstance(action, Action):
        if action not in catalog.actions:
            raise ValueError(f"action {action.name} is not in the catalog")
        action = catalog.actions.index(action)
    if not 0 <= action < len(catalog):
        raise ValueError(f"action index {action} outside catalog of {len(catalog)}")
    bad = catalog.violations(catalog.actions[action])
    if bad:
        raise FeasibilityError(f"action {catalog.actions[action].name} decreases monotone features {bad}")
    acts = sample.actions + [action]
    out = AdversarialSample(sample.base, acts, _compose(sample.base, acts, catalog), sample.evasive, sample.queries)
    _check_feasible(out, catalog)
    return out


@dataclass
class BanditState:
    """Beta(alpha, beta) posterior per action; Thompson draws pick the arm."""

    alpha: np.ndarray
    beta: np.ndarray
    pulls: np.ndarray

    @classmethod
    def fresh(cls, n_actions: int) -> "BanditState":
        if n_actions <= 0:
            raise ValueError("bandit needs at least one action")
        return cls(np.ones(n_actions), np.ones(n_actions), np.zeros(n_actions, dtype=np.int64))

    def draw(self, rng: RngStream) -> int:
        theta = rng.beta(self.alpha, self.beta)
        return int(np.argmax(theta))

    def update(self, arm: int, reward: int) -> None:
        if reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {reward}")
        self.alpha[arm] += reward
        self.beta[arm] += 1 - reward
        self.pulls[arm] += 1

    @property
    def mean(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)


def _detected(model, x: np.ndarray) -> bool:
    return bool(model.label(x[None, :])[0] == 1)


def stage1_evade(
    sample,
    model,
    catalog: ActionCatalog,
    bandit: BanditState,
    rng: RngStream,
    max_pulls: int = 60,
) -> AdversarialSample:
    """Pull actions until ``model`` labels the sample 0 or pulls run out.

    ``model`` is anything with a counting ``label(X)``: an oracle, or a
    surrogate wrapped in ``NnTarget``. Failures come back with
    ``evasive=False`` and every action that was tried still applied.
    """
    adv = sample if isinstance(sample, AdversarialSample) else AdversarialSample(sample)
    adv = AdversarialSample(adv.base, list(adv.actions), adv.current.copy(), False, adv.queries)
    if len(bandit.alpha) != len(catalog):
        raise ValueError("bandit and catalog sizes differ")
    adv.queries += 1
    if not _detected(model, adv.current):
        adv.evasive = True
        return adv
    for _ in range(max_pulls):
        arm = bandit.draw(rng)
        adv = apply_action(adv, arm, catalog)
        adv.queries += 1
        flipped = not _detected(model, adv.current)
        bandit.update(arm, int(flipped))
        if flipped:
            adv.evasive = True
            break
    return adv


def stage2_minimize(adv: AdversarialSample, model, catalog: ActionCatalog) -> AdversarialSample:
    """Drop actions most-recent-first while the sample stays evasive; repeat to a fixpoint."""
    if not adv.evasive:
        raise EvasionError("stage 2 needs an evasive sample")
    acts = list(adv.actions)
    queries = adv.queries
    changed = True
    while changed:
        changed = False
        i = len(acts) - 1
        while i >= 0:
            trial = acts[:i] + acts[i + 1:]
            x = _compose(adv.base, trial, catalog)
            queries += 1
            if not _detected(model, x):
                acts = trial
                changed = True
            i -= 1
    out = AdversarialSample(adv.base, acts, _compose(adv.base, acts, catalog), True, queries)
    _check_feasible(out, catalog)
    return out


@dataclass
class CampaignResult:
    stage1: list[AdversarialSample]
    minimized: list[AdversarialSample]
    bandit: BanditState

    @property
    def success_rate(self) -> float:
        return float(np.mean([a.evasive for a in self.stage1])) if self.stage1 else 0.0

    @property
    def queries(self) -> int:
        return sum(a.queries for a in self.minimized)

    def vectors(self, stage: int = 2) -> np.ndarray:
        src = self.minimized if stage == 2 else self.stage1
        return np.stack([a.current for a in src])


def run_campaign(
    bases,
    model,
    catalog: ActionCatalog,
    seed: int,
    max_pulls: int = 60,
    minimize: bool = True,
    bandit: BanditState | None = None,
) -> CampaignResult:
    """Sequential campaign sharing one bandit across all base samples.

    Failed samples are kept as-is in both stages so every output row lines up
    with its base row.
    """
    bases = np.asarray(bases, dtype=np.float64)
    if bases.ndim != 2 or bases.shape[1] != catalog.dim:
        raise ValueError(f"bases must be n x {catalog.dim}")
    bandit = bandit or BanditState.fresh(len(catalog))
    rng = RngStream(seed, (21,))
    s1, s2 = [], []
    for x in bases:
        adv = stage1_evade(x, model, catalog, bandit, rng, max_pulls)
        s1.append(adv)
        s2.append(stage2_minimize(adv, model, catalog) if minimize and adv.evasive else adv)
    return CampaignResult(s1, s2, bandit)


@dataclass
class TransferMatrix:
    generators: list[str]
    targets: list[str]
    rates: np.ndarray

    def rate(self, generator: str, target: str) -> float:
        return float(self.rates[self.generators.index(generator), self.targets.index(target)])


def transfer_matrix(adv_sets: dict, targets: dict, baseline=None) -> TransferMatrix:
    """Detection rate of each target on each generator's adversarial set.

    All sets must come from the same base rows. ``baseline`` (those base rows)
    adds a first row named "baseline".
    """
    if not targets:
        raise ValueError("no targets")
    sets = {}
    if baseline is not None:
        sets["baseline"] = np.asarray(baseline, dtype=np.float64)
    for name, v in adv_sets.items():
        if name == "baseline" and baseline is not None:
            raise ValueError("generator name 'baseline' is reserved")
        sets[name] = np.asarray(v, dtype=np.float64)
    shapes = {v.shape for v in sets.values()}
    if len(shapes) != 1:
        raise ValueError(f"adversarial sets differ in shape: {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 2:
        raise ValueError("adversarial sets must be 2-D")
    rates = np.array([[detection_rate(t, X) for t in targets.values()] for X in sets.values()])
    return TransferMatrix(list(sets), list(targets), rates)


def write_transfer_csv(tm: TransferMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generator", *tm.targets])
        for g, row in zip(tm.generators, tm.rates):
            w.writerow([g, *(f"{r:.4f}" for r in row)])


def read_transfer_csv(path) -> TransferMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "generator":
        raise ValueError(f"{path}: not a transfer matrix")
    return TransferMatrix([r[0] for r in rows[1:]], rows[0][1:], np.array([[float(c) for c in r[1:]] for r in rows[1:]]))


def linear_crossing_suite(dim, n, seed, n_decoys=9, margin=1.0):
    """Linear target, detected bases, and a catalog with one crossing action.

    The crossing action grows a monotone feature with a negative weight just
    enough to push every base below the boundary; the decoys grow monotone
    features that carry zero weight, so they never help.
    Returns ``(LinearModel, bases, catalog, crossing_index)``.
    """
    from .oracles import LinearModel

    if dim < n_decoys + 2:
        raise ValueError("dim too small for the suite")
    rng = RngStream(seed, (22,))
    w = rng.normal(size=dim)
    benign = 0
    decoy_dims = list(range(1, 1 + n_decoys))
    w[benign] = -1.0
    w[decoy_dims] = 0.0
    X = rng.normal(size=(8 * n, dim))
    X[:, benign] = np.abs(X[:, benign])
    logit = X @ w
    bases = X[logit > 0][:n]
    if bases.shape[0] < n:
        raise ValueError("could not draw enough detected bases")
    step = float(np.max(bases @ w) + margin)
    cross = Action("cross", (benign,), (step,))
    decoys = [Action(f"decoy{k}", (d,), (1.0,)) for k, d in enumerate(decoy_dims)]
    order = rng.permutation(n_decoys + 1)
    acts = [([cross] + decoys)[i] for i in order]
    catalog = ActionCatalog(dim, acts, frozenset([benign, *decoy_dims]))
    return LinearModel(w, 0.0), bases, catalog, acts.index(cross)
