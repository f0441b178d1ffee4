"""Run configuration: defaults, JSON schema validation, overrides.

Precedence, lowest to highest: built-in defaults, the config file,
command-line flags.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ValidationError

BUILTIN = {"reference-protocol": "reference_protocol.json"}

DEFAULTS = {
    "encoding": {"schema": None, "spec": None},
    "elm": {
        "n_sigmoid": 200,
        "n_rbf": 200,
        "lambda": 1.0,
        "seed": 0,
        "passthrough": True,
        "activation": "tanh",
    },
    "classifier": {
        "alpha_grid": [1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
        "l1_ratio": 0.15,
        "k_folds": 5,
        "epochs": 20,
        "eta0": 0.01,
        "tolerance": 0.01,
        "balanced": True,
        "seed": 0,
    },
    "detector": {
        "n_models": 10,
        "feature_subset_size": 100,
        "artificial_fraction": 0.03,
        "flips_per_iteration": 2,
        "focus_class": None,
        "focus_mode": "current",
        "n_other": None,
        "stratified_other": False,
        "target_artificial_score": 100.0,
        "max_iterations": 1_000_000,
        "quantiles": [0.99, 0.999],
        "lam": 1.0,
        "n_sigmoid": 200,
        "n_rbf": 200,
        "passthrough": True,
        "activation": "tanh",
        "fit_includes_artificial": False,
        "master_seed": 0,
        "batch_size": 4096,
    },
    "io": {"n_classes": None},
}


def config_schema() -> dict:
    text = resources.files("mdelm").joinpath("data/config.schema.json").read_text()
    return json.loads(text)


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config error at {where}: {exc.message}") from None


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def read_config_file(path) -> dict:
    if path in BUILTIN:
        text = resources.files("mdelm").joinpath("data", BUILTIN[path]).read_text()
        return json.loads(text)
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from None


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolve defaults + file + overrides and validate the result.

    The file is validated on its own first so unknown keys are reported
    against the user's document.
    """
    user = read_config_file(path) if path is not None else {}
    validate(user)
    resolved = merge(DEFAULTS, user)
    if overrides:
        resolved = merge(resolved, overrides)
    validate(resolved)
    return resolved


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
