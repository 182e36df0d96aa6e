"""Command-line entry point.

Exit codes: 0 ok, 2 configuration or input error, 3 query budget refused,
4 oracle transport failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import shlex
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkConfig, make_benchmark
from .config import FIELDS, ExperimentConfig, load_config, parse_value, write_config
from .data import DataFormatError, SyntheticGenConfig, gen_synthetic, load_dataset, save_dataset, split_dataset
from .errors import BudgetError, ConfigError, TransportError
from .evasion import random_catalog, run_campaign, transfer_matrix, write_transfer_csv
from .extraction import (
    METRICS,
    aggregate_final,
    evaluate_surrogate,
    plan_budget,
    read_rounds_csv,
    run_extraction,
    write_rounds_csv,
)
from .metrics import confusion_from_labels, threshold_for_fpr
from .numkit import RngStream, fit_robust_scaler
from .oracles import (
    NnTarget,
    OracleServerConfig,
    PlantedTarget,
    RemoteOracle,
    load_target,
    make_planted_target,
    serve_oracle,
)
from .surrogate import (
    ArchitectureConfig,
    LabeledSet,
    TrainConfig,
    build_model,
    load_model,
    save_model,
    score,
    train,
)

log = logging.getLogger("mextract")

COMMANDS = ("gen-data", "train-target", "serve-oracle", "extract", "evaluate", "evade", "report")
EXIT_CONFIG, EXIT_BUDGET, EXIT_TRANSPORT = 2, 3, 4


# ---- shared helpers ----------------------------------------------------------

def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _log_to(directory: Path) -> logging.Handler:
    h = logging.FileHandler(directory / "log.txt", mode="w")
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(h)
    return h


def _load_split(cfg: ExperimentConfig):
    if cfg.thief or cfg.test:
        if not (cfg.thief and cfg.test):
            raise ConfigError("give both thief and test, or data")
        return load_dataset(cfg.thief), load_dataset(cfg.test)
    if not cfg.data:
        raise ConfigError("no dataset: set data, or thief and test")
    data = load_dataset(cfg.data)
    if cfg.cutoff is not None:
        return split_dataset(data, cutoff=cfg.cutoff)
    return split_dataset(data, fraction=cfg.thief_fraction, seed=cfg.split_seed)


def _load_test(cfg: ExperimentConfig):
    if cfg.test:
        return load_dataset(cfg.test)
    return _load_split(cfg)[1]


def open_target(spec: str, dim: int | None, timeout: float = 30.0):
    """``planted:PATH``, ``nn:PATH``, ``remote:URL`` or a bare file path."""
    if not spec:
        raise ConfigError("no target given")
    kind, _, rest = spec.partition(":")
    if kind == "remote":
        return RemoteOracle(rest, dim, timeout)
    if kind == "planted":
        t = PlantedTarget.load(rest)
    elif kind == "nn":
        m = load_model(rest)
        t = NnTarget(m, m.threshold, 1 if m.config.uses_true_label else None)
    elif kind in ("http", "https"):
        return RemoteOracle(spec, dim, timeout)
    else:
        t = load_target(spec)
    if dim is not None and t.dim is not None and t.dim != dim:
        raise ConfigError(f"target expects {t.dim} features, data has {dim}")
    return t


def _eval_labels(cfg: ExperimentConfig, oracle, X) -> np.ndarray:
    """Target labels on evaluation rows, kept off the attack's query count."""
    if cfg.eval_target:
        return open_target(cfg.eval_target, X.shape[1], cfg.timeout).label(X)
    if isinstance(oracle, RemoteOracle):
        log.warning("remote target without eval_target: labeling %d evaluation rows with a separate client", len(X))
        side = RemoteOracle(oracle.endpoint, X.shape[1], cfg.timeout)
        try:
            return side.label(X)
        finally:
            side.close()
    return oracle._label(np.asarray(X, dtype=np.float64)).astype(np.uint8)


def _arch(cfg: ExperimentConfig, kind: str, dim: int) -> ArchitectureConfig:
    return ArchitectureConfig(kind, dim, tuple(cfg.hidden), cfg.dropout)


def _train_cfg(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(cfg.max_epochs, cfg.patience, cfg.batch_size, cfg.lr)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---- commands ------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    seed = cfg.seeds[0]
    suffix = ".csv" if cfg.data_format == "csv" else ".xdsm"
    if cfg.gen_kind == "benchmark":
        b = make_benchmark(
            BenchmarkConfig(
                n=cfg.n,
                d=cfg.d,
                thief_fraction=cfg.thief_fraction,
                depth=cfg.depth,
                disagreement_rate=cfg.disagreement_rate,
                clusters_per_class=cfg.clusters_per_class,
                spread=cfg.spread,
                center_scale=cfg.center_scale,
                flip_from=cfg.flip_from,
                monotone=tuple(cfg.monotone),
                seed=seed,
            )
        )
        save_dataset(b.thief, out / f"thief{suffix}")
        save_dataset(b.test, out / f"test{suffix}")
        b.target.save(out / "target.json")
        b.ground_truth.save(out / "truth.json")
        dis = np.mean(b.test_target_labels() != b.test.y_true)
        log.info("benchmark: thief=%d test=%d target/truth disagreement on test=%.4f", b.thief.n, b.test.n, dis)
    else:
        data, _ = gen_synthetic(
            SyntheticGenConfig(
                n=cfg.n,
                d=cfg.d,
                balance=cfg.balance,
                clusters_per_class=cfg.clusters_per_class,
                spread=cfg.spread,
                center_scale=cfg.center_scale,
                monotone=tuple(cfg.monotone),
                timestamps=cfg.timestamps,
                seed=seed,
            )
        )
        save_dataset(data, out / f"data{suffix}")
        log.info("synthetic data: n=%d d=%d positives=%d", data.n, data.d, int(data.y_true.sum()))
    return 0


def cmd_train_target(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    seed = cfg.seeds[0]
    if cfg.target_kind == "planted":
        src = load_dataset(cfg.data or cfg.thief)
        target, truth = make_planted_target(
            src.d,
            cfg.depth,
            cfg.disagreement_rate,
            seed,
            reference=src.features,
            reference_labels=src.y_true,
            flip_from=cfg.flip_from,
        )
        target.save(out / "target.json")
        truth.save(out / "truth.json")
        dis = np.mean(target._label(src.features.astype(np.float64)) != src.y_true)
        log.info("planted target depth=%d flipped=%d disagreement on data=%.4f", cfg.depth, target.flipped.size, dis)
        return 0
    if cfg.arch != ["fcnn"]:
        raise ConfigError("nn targets are trained as plain fcnn; set arch = fcnn")
    train_set, hold = _load_split(cfg)
    model = build_model(_arch(cfg, "fcnn", train_set.d), RngStream(seed, (40,)))
    model.scaler = fit_robust_scaler(train_set.features)
    pool = LabeledSet(train_set.features, train_set.y_true, train_set.y_true)
    val = LabeledSet(hold.features, hold.y_true, hold.y_true)
    model, ckpt, _ = train(model, pool, val, replace(_train_cfg(cfg), seed=seed))
    s = score(model, hold.features)
    model.threshold = threshold_for_fpr(s, hold.y_true, cfg.fpr)
    conf = confusion_from_labels((s >= model.threshold).astype(np.uint8), hold.y_true)
    save_model(model, out / "target.xtrw")
    log.info(
        "nn target: best epoch %d, threshold %.6f, holdout tpr=%.4f fpr=%.4f",
        ckpt.epoch, model.threshold, conf.tpr, conf.fpr,
    )
    return 0


def cmd_serve_oracle(cfg: ExperimentConfig, args) -> int:
    oracle = open_target(cfg.target, None)
    if isinstance(oracle, RemoteOracle):
        raise ConfigError("serve-oracle needs a local target")
    server = serve_oracle(oracle, OracleServerConfig(cfg.host, cfg.port, cfg.delay_ms, cfg.max_queries))
    log.info("serving %s at %s (delay %.1f ms, cap %s)", cfg.target, server.url, cfg.delay_ms, cfg.max_queries)
    if args.port_file:
        Path(args.port_file).write_text(f"{server.url}\n")
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        log.info("stopped after %d queries", oracle.query_count)
    return 0


def cmd_extract(cfg: ExperimentConfig, args) -> int:
    plan = plan_budget(cfg.budget, cfg.rounds)
    log.info(
        "budget plan (%d, %d, %d) for Q=%d R=%d: validation, seed, per round; last round +%d",
        plan.validation_n, plan.seed_n, plan.per_round_n, cfg.budget, cfg.rounds, plan.final_round_bonus,
    )
    out = _out(cfg)
    thief, test = _load_split(cfg)
    probe = open_target(cfg.target, thief.d, cfg.timeout)
    test_labels = _eval_labels(cfg, probe, test.features)
    if isinstance(probe, RemoteOracle):
        probe.close()
    summary = []
    for strategy in cfg.strategy:
        for kind in cfg.arch:
            run_dir = out / f"{strategy}_{kind}"
            write_config(replace(cfg, strategy=[strategy], arch=[kind], out=str(run_dir)), run_dir, args.command_line)
            finals = []
            for seed in cfg.seeds:
                oracle = open_target(cfg.target, thief.d, cfg.timeout)
                before = oracle.query_count
                try:
                    res = run_extraction(
                        thief, test, oracle, strategy, _arch(cfg, kind, thief.d), _train_cfg(cfg),
                        cfg.budget, cfg.rounds, seed, test_labels, cfg.fpr, cfg.calibrate_on,
                        cfg.pre_cap, cfg.mc_passes,
                    )
                finally:
                    if isinstance(oracle, RemoteOracle):
                        oracle.close()
                seed_dir = run_dir / f"seed{seed}"
                seed_dir.mkdir(parents=True, exist_ok=True)
                write_rounds_csv(res.reports, seed_dir / "rounds.csv", cfg.wallclock)
                save_model(res.model, seed_dir / "model.xtrw")
                used = oracle.query_count - before
                final = res.reports[-1]
                log.info(
                    "%s/%s seed %d: agreement %.4f at fpr %.4f, %d queries (shortfall %d)",
                    strategy, kind, seed, final.agreement, final.fpr, used, res.shortfall,
                )
                finals.append(res.reports)
            agg = aggregate_final(finals)
            summary.append([strategy, kind, len(finals)] + [f"{agg[m][i]:.6f}" for m in METRICS for i in (0, 1)])
    _write_rows(out / "summary.csv", _summary_header(), summary)
    return 0


def _summary_header():
    return ["strategy", "arch", "seeds"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    if not cfg.surrogates:
        raise ConfigError("evaluate needs surrogates = model paths")
    out = _out(cfg)
    test = _load_test(cfg)
    oracle = open_target(cfg.target, test.d, cfg.timeout)
    labels = _eval_labels(cfg, oracle, test.features)
    rows = []
    for path in cfg.surrogates:
        m = load_model(path)
        ev = evaluate_surrogate(m, test, labels, cfg.fpr, cfg.calibrate_on)
        rows.append([path] + [f"{getattr(ev, k):.6f}" for k in ("threshold", "agreement", "accuracy", "tpr", "fpr", "auc")])
        log.info("%s: agreement %.4f accuracy %.4f at fpr %.4f", path, ev.agreement, ev.accuracy, ev.fpr)
    _write_rows(out / "eval.csv", ["model", "threshold", "agreement", "accuracy", "tpr", "fpr", "auc"], rows)
    return 0


def cmd_evade(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    test = _load_test(cfg)
    pos = np.flatnonzero(test.y_true == 1)[: cfg.n_bases]
    if pos.size == 0:
        raise ConfigError("no positive samples to attack")
    bases = test.features[pos].astype(np.float64)

    def generators():
        gens = {"target": open_target(cfg.target, test.d, cfg.timeout)}
        for path in cfg.surrogates:
            m = load_model(path)
            gens[str(Path(path).with_suffix(""))] = NnTarget(m, m.threshold, 1)
        return gens

    for seed in cfg.seeds:
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        catalog = random_catalog(
            test.d, cfg.n_actions, RngStream(seed, (30,)), monotone=cfg.monotone,
            nnz=cfg.action_nnz, scale=cfg.action_scale,
        )
        sets1, sets2, rows = {}, {}, []
        for name, gen in generators().items():
            res = run_campaign(bases, gen, catalog, seed, cfg.max_pulls)
            sets1[name], sets2[name] = res.vectors(1), res.vectors(2)
            n1 = np.mean([len(a.actions) for a in res.stage1])
            n2 = np.mean([len(a.actions) for a in res.minimized])
            rows.append([name, f"{res.success_rate:.4f}", res.queries, f"{n1:.4f}", f"{n2:.4f}"])
            log.info("generator %s: evaded %.4f of %d, %d queries", name, res.success_rate, len(bases), res.queries)
        scanners = generators()
        write_transfer_csv(transfer_matrix(sets2, scanners, baseline=bases), seed_dir / "transfer.csv")
        write_transfer_csv(transfer_matrix(sets1, scanners, baseline=bases), seed_dir / "transfer_stage1.csv")
        _write_rows(seed_dir / "evasion.csv", ["generator", "success_rate", "queries", "actions_stage1", "actions_stage2"], rows)
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    roots = [Path(r) for r in (args.runs or [cfg.out])]
    groups: dict[tuple[str, str], list] = {}
    for root in roots:
        for conf in sorted(root.rglob("config.txt")):
            run = load_config(conf)
            if len(run.strategy) != 1 or len(run.arch) != 1:
                continue
            finals = []
            for rounds in sorted(conf.parent.glob("seed*/rounds.csv")):
                rows = read_rounds_csv(rounds)
                if rows:
                    finals.append(rows[-1])
            if finals:
                groups.setdefault((run.strategy[0], run.arch[0]), []).extend(finals)
    if not groups:
        raise ConfigError(f"no extraction runs under {', '.join(map(str, roots))}")
    rows = []
    for (strategy, kind), finals in sorted(groups.items()):
        row = [strategy, kind, len(finals)]
        for m in METRICS:
            v = np.array([f[m] for f in finals])
            row += [f"{v.mean():.6f}", f"{v.std():.6f}"]
        rows.append(row)
        a = np.array([f["agreement"] for f in finals])
        print(f"{strategy:18s} {kind:9s} n={len(finals)} agreement {100 * a.mean():.2f} +- {100 * a.std():.2f}")
    _write_rows(_out(cfg) / "report.csv", _summary_header(), rows)
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-target": cmd_train_target,
    "serve-oracle": cmd_serve_oracle,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "evade": cmd_evade,
    "report": cmd_report,
}


# ---- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int, help="single seed (same as --seeds N)")
    common.add_argument("-v", "--verbose", action="store_true")
    for f in fields(ExperimentConfig):
        common.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.name.upper())
    p = argparse.ArgumentParser(prog="mextract", description="Active-learning model extraction experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "serve-oracle":
            sp.add_argument("--duration", type=float, help="stop after this many seconds")
            sp.add_argument("--port-file", help="write the server URL here once listening")
        if name == "report":
            sp.add_argument("runs", nargs="*", help="directories holding extract outputs")
    return p


def _resolve(args) -> ExperimentConfig:
    overrides = {}
    for key in FIELDS:
        raw = getattr(args, "cfg_" + key)
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    args.command_line = "mextract " + " ".join(shlex.quote(a) for a in argv)
    handler = None
    try:
        cfg = _resolve(args)
        if args.command != "report":
            out = _out(cfg)
            write_config(cfg, out, args.command_line)
            handler = _log_to(out)
        return HANDLERS[args.command](cfg, args)
    except BudgetError as e:
        log.error("query budget refused: %s", e)
        return EXIT_BUDGET
    except TransportError as e:
        log.error("oracle unreachable: %s", e)
        return EXIT_TRANSPORT
    except (ConfigError, DataFormatError, FileNotFoundError, ValueError) as e:
        # bad flags, files or parameter values all count as configuration errors
        log.error("%s", e)
        return EXIT_CONFIG
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
