"""Acceptance checks, one per criterion.

Under pytest each check is a test and the PASS/FAIL lines are printed in the
terminal summary. ``python3 tests/test_acceptance.py [numbers]`` runs the
checks directly.
"""
from __future__ import annotations

import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import (  # noqa: E402
    concordance_auc,
    confusion_counts,
    fd_gradients,
    kmedoids_cost,
    scan_threshold,
    swap_local_optima,
)

from mextract.benchmark import BenchmarkConfig, run_grid  # noqa: E402
from mextract.data import SyntheticGenConfig, gen_synthetic, split_dataset  # noqa: E402
from mextract.evasion import (  # noqa: E402
    BanditState,
    linear_crossing_suite,
    run_campaign,
    transfer_matrix,
)
from mextract.extraction import plan_budget, run_extraction  # noqa: E402
from mextract.metrics import (  # noqa: E402
    agreement,
    confusion_at_threshold,
    roc_curve,
    threshold_for_fpr,
)
from mextract.numkit import RngStream, backprop, forward_trace, init_params  # noqa: E402
from mextract.oracles import (  # noqa: E402
    LinearModel,
    NnTarget,
    OracleServer,
    OracleServerConfig,
    RemoteOracle,
    make_planted_target,
    oracle_label,
    remote_scan,
)
from mextract.errors import BudgetError  # noqa: E402
from mextract.sampling import STRATEGIES, kmedoids  # noqa: E402
from mextract.surrogate import ArchitectureConfig, TrainConfig  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def _record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}", flush=True)


# ---- 1: gradients ----------------------------------------------------------------

def check_gradients(n_nets=50):
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0
    for seed in range(n_nets):
        rng = RngStream(seed, (900,))
        g = rng.generator
        layers = int(g.integers(1, 4))  # hidden layers; plus the output layer, <= 4
        dims = [int(g.integers(1, 33)) for _ in range(layers + 1)]
        skip = bool(seed % 2)
        params = init_params(dims[0], dims[1:], rng, skip=skip)
        for k in params:
            params[k] = params[k] + g.normal(0, 0.3, params[k].shape)
        X = g.normal(size=(4, dims[0]))
        y = g.integers(0, 2, 4).astype(float)
        side = g.integers(0, 2, 4).astype(float)
        rate = 0.2 if seed % 3 else 0.0
        tr = forward_trace(params, X, side, rate, rng, rate > 0)
        grads = backprop(params, tr, y)
        fd = fd_gradients(params, X, side, tr.masks, y, rate)
        for k in params:
            a, f = grads[k], fd[k]
            big = np.abs(a) > 1e-6
            if big.any():
                rel = np.abs(a - f)[big] / np.maximum(np.abs(a), np.abs(f))[big]
                worst = max(worst, float(rel.max()))
                checked += int(big.sum())
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 60
    return ok, f"{n_nets} nets, {checked} gradients, max rel err {worst:.2e}, {secs:.1f}s"


# ---- 2: budget exactness -----------------------------------------------------------

def check_budget():
    cases = [(25000, 10), (4000, 4), (10, 1), (1000, 7)]
    data, _ = gen_synthetic(SyntheticGenConfig(n=34000, d=8, clusters_per_class=2, center_scale=2.0, seed=0))
    thief, test = split_dataset(data, fraction=26000 / 34000, seed=0)
    arch = ArchitectureConfig("fcnn", 8, (8, 4), 0.0)
    cfg = TrainConfig(max_epochs=1, patience=1, batch_size=1024)
    notes, ok = [], True
    for Q, R in cases:
        plan = plan_budget(Q, R)
        v, s, per, bonus = plan.as_tuple()
        total = v + s + per * R + bonus
        oracle, _ = make_planted_target(8, 4, 0.1, Q, reference=thief.features, reference_labels=thief.y_true)
        labels = oracle._label(test.features.astype(np.float64))
        res = run_extraction(thief, test, oracle, "random", arch, cfg, Q, R, 0, labels)
        good = total == Q and oracle.query_count == Q and res.ledger.spent == Q
        ok &= good
        notes.append(f"({Q},{R})->{plan.as_tuple()} counter={oracle.query_count}")
    ok &= plan_budget(25000, 10).per_round_n == 1750 and plan_budget(4000, 4).per_round_n == 700
    return ok, "; ".join(notes)


# ---- 3: metrics vs brute force ----------------------------------------------------------

def check_metrics():
    g = np.random.default_rng(3)
    worst = 0.0
    for case in range(100):
        n = int(g.integers(2, 201))
        grid = int(g.integers(2, 50))
        s = g.integers(0, grid, n) / (grid - 1)  # coarse grid forces ties
        y = g.integers(0, 2, n)
        y[0], y[1] = 0, 1
        fhat = g.integers(0, 2, n)
        tau = float(g.choice(s))
        tp, fp, tn, fn = confusion_counts(s.tolist(), y.tolist(), tau)
        c = confusion_at_threshold(s, y, tau)
        if (c.tp, c.fp, c.tn, c.fn) != (tp, fp, tn, fn):
            return False, f"confusion mismatch on case {case}"
        agree = sum(int(a == b) for a, b in zip(fhat, y)) / n
        worst = max(worst, abs(agreement(y, fhat) - agree))
        worst = max(worst, abs(roc_curve(s, y).auc - concordance_auc(s.tolist(), y.tolist())))
        target = float(g.choice([0.0, 0.01, 0.05, 0.1, 0.3, g.uniform()]))
        if threshold_for_fpr(s, y, target) != scan_threshold(s.tolist(), y.tolist(), target):
            return False, f"threshold mismatch on case {case}"
    violations = 0
    for case in range(1000):
        n = int(g.integers(1, 300))
        s = g.uniform(size=n) if case % 2 else g.integers(0, 10, n) / 9
        y = g.integers(0, 2, n)
        y[0] = 0
        target = float(g.uniform(0, 0.2))
        tau = threshold_for_fpr(s, y, target)
        violations += int(confusion_at_threshold(s, y, tau).fpr > target)
    ok = worst <= 1e-9 and violations == 0
    return ok, f"100 instances, max abs err {worst:.1e}; 1000 calibrations, {violations} FPR violations"


# ---- 4: k-medoids --------------------------------------------------------------------

def check_kmedoids():
    g = np.random.default_rng(4)
    bad_opt = bad_mono = 0
    for case in range(1000):
        n = int(g.integers(1, 9))
        k = int(g.integers(1, min(3, n) + 1))
        d = int(g.integers(1, 4))
        pts = g.integers(-5, 6, size=(n, d)).astype(float) if case % 3 == 0 else g.normal(size=(n, d))
        res = kmedoids(pts, k, RngStream(case, (4,)))
        costs = [c for _, c in swap_local_optima(pts, k)]
        got = kmedoids_cost(pts, res.medoids.tolist())
        if not any(abs(got - c) <= 1e-9 for c in costs):
            bad_opt += 1
        if any(b > a + 1e-12 for a, b in zip(res.history, res.history[1:])):
            bad_mono += 1
    for case in range(200):
        pts = g.normal(size=(int(g.integers(20, 120)), 3))
        res = kmedoids(pts, int(g.integers(2, 8)), RngStream(case, (5,)))
        if any(b > a + 1e-12 for a, b in zip(res.history, res.history[1:])):
            bad_mono += 1
    ok = bad_opt == 0 and bad_mono == 0
    return ok, f"1000 tiny cases: {bad_opt} outside swap-local optima; {bad_mono} cost increases over 1200 runs"


# ---- 5 and 6: trend replication ----------------------------------------------------------

SEEDS = (0, 1, 2, 3, 4)


def check_strategy_ordering():
    t0 = time.perf_counter()
    runs = run_grid(STRATEGIES, ["dualfcnn"], SEEDS, BenchmarkConfig(disagreement_rate=0.05), Q=2000, R=4)
    secs = time.perf_counter() - t0
    mean = {s: 100 * np.mean([r.agreement for r in runs if r.strategy == s]) for s in STRATEGIES}
    base = mean["random"]
    others = [s for s in STRATEGIES if s != "random"]
    exact = all(r.queries == 2000 for r in runs)
    ok = (
        all(mean[s] >= base - 0.5 for s in others)
        and any(mean[s] >= base + 1.0 for s in others)
        and secs < 600
        and exact
    )
    detail = ", ".join(f"{s} {mean[s]:.2f}" for s in STRATEGIES)
    return ok, f"dualfcnn mean agreement at 1% FPR: {detail}; {secs:.0f}s"


def check_dual_advantage():
    runs = run_grid(STRATEGIES, ["fcnn", "dualfcnn"], SEEDS, BenchmarkConfig(disagreement_rate=0.10), Q=2000, R=4)
    wins, parts = 0, []
    for s in SEEDS:
        f = 100 * np.mean([r.agreement for r in runs if r.seed == s and r.arch == "fcnn"])
        d = 100 * np.mean([r.agreement for r in runs if r.seed == s and r.arch == "dualfcnn"])
        wins += d >= f
        parts.append(f"s{s} {f:.1f}/{d:.1f}")
    return wins >= 4, f"dualfcnn >= fcnn in {wins}/5 seeds (fcnn/dual: {', '.join(parts)})"


# ---- 7: oracle service -------------------------------------------------------------

def check_oracle_service():
    d = 16
    target, _ = make_planted_target(d, 6, 0.1, 7)
    X = np.random.default_rng(7).normal(size=(10_000, d))
    local = oracle_label(target, X)
    with OracleServer(target) as srv:
        remote = remote_scan(srv.url, X)
        same = np.array_equal(local, remote)
    with OracleServer(target, OracleServerConfig(delay_ms=100)) as srv:
        client = RemoteOracle(srv.url, d)
        t0 = time.perf_counter()
        for i in range(50):
            client.label(X[i])
        slow = time.perf_counter() - t0
        client.close()
    cap = 120
    with OracleServer(target, OracleServerConfig(max_queries=cap)) as srv:
        client = RemoteOracle(srv.url, d, chunk_size=50)
        client.label(X[:100])
        refused = False
        try:
            client.label(X[100:160])
        except BudgetError:
            refused = True
        served = srv.queries
        consistent = refused and served == client.query_count and served <= cap
        client.close()
    ok = same and slow >= 5.0 and consistent
    return ok, f"labels identical={same} on 10^4 rows; 50 delayed scans {slow:.2f}s; cap refusal={refused}, server {served} == client {client.query_count}"


# ---- 8: evasion --------------------------------------------------------------------

def check_evasion():
    dim = 32
    lm, bases, catalog, cross = linear_crossing_suite(dim, 230, seed=8)
    warm, attack = bases[:30], bases[30:]
    target = NnTarget(LinearModel(lm.w, lm.b), 0.5)
    bandit = BanditState.fresh(len(catalog))
    run_campaign(warm, target, catalog, seed=80, bandit=bandit)
    res = run_campaign(attack, target, catalog, seed=81, bandit=bandit)
    rate = res.success_rate
    pulls_ok = all(len(a.actions) <= 60 for a in res.stage1)
    minimal = evasive = True
    for adv in res.minimized:
        if not adv.evasive:
            continue
        evasive &= bool(target._label(adv.current[None, :])[0] == 0)
        for i in range(len(adv.actions)):
            rest = adv.actions[:i] + adv.actions[i + 1:]
            x = adv.base + sum((catalog.actions[k].dense(dim) for k in rest), np.zeros(dim))
            minimal &= bool(target._label(x[None, :])[0] == 1)
    g = np.random.default_rng(8)
    gens = {"target": lm.w}
    for k in range(4):
        w = lm.w + 0.5 * g.normal(size=dim)
        w[sorted(catalog.monotone)] = lm.w[sorted(catalog.monotone)] * g.uniform(0.3, 1.2)
        gens[f"surrogate{k}"] = w
    sets = {name: run_campaign(attack, NnTarget(LinearModel(w, 0.0), 0.5), catalog, seed=82).vectors() for name, w in gens.items()}
    tm = transfer_matrix(sets, {"target": NnTarget(LinearModel(lm.w, 0.0), 0.5)}, baseline=attack)
    own = tm.rate("target", "target")
    dominance = all(own <= tm.rate(f"surrogate{k}", "target") for k in range(4))
    ok = rate >= 0.95 and pulls_ok and minimal and evasive and dominance
    others = ", ".join(f"{tm.rate(f'surrogate{k}', 'target'):.3f}" for k in range(4))
    return ok, (
        f"stage 1 evaded {rate:.3f} of {len(attack)}; stage 2 minimal={minimal} evasive={evasive}; "
        f"self-attack detection {own:.3f} vs surrogate-made {others}"
    )


# ---- 9: determinism ------------------------------------------------------------------

def _cli(*args):
    return subprocess.run([sys.executable, "-m", "mextract.cli", *args], capture_output=True, text=True)


def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        t = Path(tmp)
        r = _cli("gen-data", "--n", "1200", "--monotone", "0,1,2,3,4,5", "--seed", "3", "--out", str(t / "b"))
        if r.returncode:
            return False, f"gen-data failed: {r.stderr[-300:]}"
        common = [
            "--thief", str(t / "b/thief.xdsm"), "--test", str(t / "b/test.xdsm"),
            "--target", f"planted:{t / 'b/target.json'}", "--budget", "300", "--rounds", "3",
            "--strategy", "entropy-kmedoids,mcdropout-entropy", "--arch", "dualfcnn", "--hidden", "16,8",
            "--max-epochs", "15", "--patience", "5", "--seeds", "0,1",
        ]
        for run in ("x1", "x2"):
            if _cli("extract", *common, "--out", str(t / run)).returncode:
                return False, "extract failed"
        rounds = sorted(p.relative_to(t / "x1") for p in (t / "x1").rglob("rounds.csv"))
        same_rounds = bool(rounds) and all(
            (t / "x1" / p).read_bytes() == (t / "x2" / p).read_bytes() for p in rounds
        )
        model = t / "x1/entropy-kmedoids_dualfcnn/seed0/model.xtrw"
        ev = [
            "--test", str(t / "b/test.xdsm"), "--target", f"planted:{t / 'b/target.json'}",
            "--surrogates", str(model), "--monotone", "0,1,2,3,4,5", "--n-bases", "60", "--seeds", "0",
        ]
        for run in ("e1", "e2"):
            if _cli("evade", *ev, "--out", str(t / run)).returncode:
                return False, "evade failed"
        a = (t / "e1/seed0/transfer.csv").read_bytes()
        same_transfer = a == (t / "e2/seed0/transfer.csv").read_bytes()
    ok = same_rounds and same_transfer
    return ok, f"{len(rounds)} rounds.csv pairs identical={same_rounds}; transfer.csv identical={same_transfer}"


CHECKS = {
    1: check_gradients,
    2: check_budget,
    3: check_metrics,
    4: check_kmedoids,
    5: check_strategy_ordering,
    6: check_dual_advantage,
    7: check_oracle_service,
    8: check_evasion,
    9: check_determinism,
}


@pytest.mark.parametrize("n", sorted(CHECKS))
def test_criterion(n):
    ok, detail = CHECKS[n]()
    _record(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    picked = [int(a) for a in sys.argv[1:]] or sorted(CHECKS)
    for n in picked:
        _record(n, *CHECKS[n]())
    sys.exit(0 if all(RESULTS[n][0] for n in picked) else 1)
