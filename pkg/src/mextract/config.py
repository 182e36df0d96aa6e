"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, unknown keys are errors. Lists
are comma separated. The same keys double as command-line flags
(``max_pulls`` <-> ``--max-pulls``); flags win over file values.
"""
from __future__ import annotations

import dataclasses
import platform
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError


@dataclass
class ExperimentConfig:
    # data generation (gen-data) and planted targets (train-target)
    gen_kind: str = "benchmark"  # benchmark | synthetic
    n: int = 8000
    d: int = 64
    balance: float = 0.5
    clusters_per_class: int = 4
    spread: float = 1.0
    center_scale: float = 2.0
    timestamps: bool = False
    data_format: str = "xdsm"  # xdsm | csv
    target_kind: str = "planted"  # planted | nn
    depth: int = 6
    disagreement_rate: float = 0.05
    flip_from: int | None = 1

    # data
    data: str = ""  # dataset file split into thief/test by thief_fraction
    thief: str = ""  # explicit thief/test files override `data`
    test: str = ""
    thief_fraction: float = 0.75
    split_seed: int = 0
    cutoff: int | None = None  # timestamp split instead of fraction

    # target / oracle
    target: str = ""  # planted:PATH | nn:PATH | remote:URL
    eval_target: str = ""  # local copy for evaluation labels of a remote target
    timeout: float = 30.0
    delay_ms: float = 0.0
    max_queries: int | None = None
    host: str = "127.0.0.1"
    port: int = 8765

    # extraction
    budget: int = 2000
    rounds: int = 4
    strategy: list[str] = field(default_factory=lambda: ["random"])
    arch: list[str] = field(default_factory=lambda: ["dualfcnn"])
    hidden: list[int] = field(default_factory=lambda: [512, 256, 128, 64])
    dropout: float = 0.3
    max_epochs: int = 100
    patience: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    fpr: float = 0.01
    calibrate_on: str = "true"
    pre_cap: int = 10_000
    mc_passes: int = 20
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    wallclock: bool = False

    # evasion
    surrogates: list[str] = field(default_factory=list)
    n_bases: int = 200
    n_actions: int = 10
    action_nnz: int = 4
    action_scale: float = 1.0
    monotone: list[int] = field(default_factory=list)
    max_pulls: int = 60

    out: str = "runs/out"

    def validate(self) -> None:
        if self.budget <= 0 or self.rounds <= 0:
            raise ConfigError("budget and rounds must be positive")
        if not 0.0 < self.fpr < 1.0:
            raise ConfigError(f"fpr must be in (0, 1), got {self.fpr}")
        if self.calibrate_on not in ("true", "target"):
            raise ConfigError("calibrate_on must be 'true' or 'target'")
        if not 0 < self.patience <= self.max_epochs:
            raise ConfigError("need 0 < patience <= max_epochs")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.max_pulls < 0 or self.n_bases <= 0 or self.n_actions <= 0:
            raise ConfigError("max_pulls >= 0, n_bases > 0 and n_actions > 0 required")
        if self.gen_kind not in ("benchmark", "synthetic"):
            raise ConfigError("gen_kind must be 'benchmark' or 'synthetic'")
        if self.target_kind not in ("planted", "nn"):
            raise ConfigError("target_kind must be 'planted' or 'nn'")
        if self.data_format not in ("xdsm", "csv"):
            raise ConfigError("data_format must be 'xdsm' or 'csv'")
        if not 0.0 < self.thief_fraction < 1.0:
            raise ConfigError("thief_fraction must be in (0, 1)")


def _kind(f: dataclasses.Field) -> str:
    t = str(f.type)
    if t.startswith("list[int]"):
        return "ints"
    if t.startswith("list[str]"):
        return "strs"
    return t.split(" ")[0]


def parse_value(key: str, raw: str):
    f = FIELDS.get(key)
    if f is None:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _kind(f)
    raw = raw.strip()
    try:
        if "None" in str(f.type) and raw in ("", "none", "None"):
            return None
        if kind == "ints":
            return [int(v) for v in raw.split(",") if v.strip()]
        if kind == "strs":
            return [v.strip() for v in raw.split(",") if v.strip()]
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = parse_value(key, raw)
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig, command: str = "") -> str:
    head = [
        f"# command: {command}" if command else "# resolved configuration",
        f"# mextract {__version__}, numpy {np.__version__}, python {platform.python_version()}",
    ]
    body = [f"{f.name} = {format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(head + body) + "\n"


def write_config(cfg: ExperimentConfig, directory, command: str = "") -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = d / "config.txt"
    p.write_text(dump_config(cfg, command))
    return p
