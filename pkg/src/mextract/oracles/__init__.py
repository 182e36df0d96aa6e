from .base import ConstantTarget, TargetOracle, oracle_label
from .client import RemoteOracle, remote_scan
from .nn import LinearModel, NnTarget
from .planted import PlantedTarget, make_planted_target
from .server import OracleServer, OracleServerConfig, serve_oracle


def load_target(path):
    """Load a saved target: planted tree (JSON) or network (XTRW1 model)."""
    import json
    from pathlib import Path

    from ..surrogate import load_model

    raw = Path(path).read_bytes()
    if raw[:5] == b"XTRW1":
        model = load_model(path)
        return NnTarget(model, model.threshold, 1 if model.config.uses_true_label else None)
    d = json.loads(raw)
    if d.get("kind") == "planted":
        return PlantedTarget.from_dict(d)
    raise ValueError(f"unrecognized target file {path}")
