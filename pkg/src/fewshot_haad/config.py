"""Run configuration: defaults < JSON config file < command-line flags.

Keys are dotted (``diffusion.steps``); config files may use either dotted keys
or nested objects. Full-scale values that differ from the desk defaults are
noted next to the key.
"""
from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "data.center_root": True,
    "synth.categories": 4,
    "synth.per_category": 40,
    "synth.joints": 24,
    "synth.frames": 60,
    "synth.unseen": 1,
    "synth.test_fraction": 0.5,
    "synth.amplitude_jitter": 0.2,
    "synth.phase_jitter": 3.14,
    "synth.speed_jitter": 0.2,
    "synth.joint_jitter": 0.3,
    "synth.drift": 0.0,
    "synth.noise": 0.01,
    "encoder.hidden_dim": 128,
    "encoder.blocks": 4,
    "encoder.dct_components": 10,
    "encoder.activation": "tanh",
    "train.epochs": 100,
    "train.lr_start": 1e-3,
    "train.lr_end": 1e-5,
    "train.temperature": 1.0,
    "train.n_g": 3,
    "train.steps_per_epoch": 1,
    "train.cache_generations": False,
    "augment.kind": "diffusion",
    "augment.observed_len": 30,
    "augment.sigma": 0.05,
    "diffusion.steps": 100,
    "diffusion.dct_components": 20,
    "diffusion.epochs": 50,  # full scale: 1000
    "diffusion.hidden": 256,
    "diffusion.blocks": 2,
    "diffusion.batch_size": 32,
    "diffusion.lr": 1e-3,
    "diffusion.corpus": "all",
    "diffusion.prior_components": 256,  # one per spectrum on desk corpora
    "diffusion.prior_rank": 10,
    "diffusion.prior_floor": 0.01,
    "eval.n_s": 3,
    "eval.n_g": 10,
    "eval.trials": 10,
    "eval.metric": "euclidean",
    "sweep.n_s": [1, 3, 5],
    "sweep.n_g": [0, 10],
    "sweep.observed": [30],
}

SNAPSHOT_KEYS = ("command", "inputs")

CHOICES = {
    "augment.kind": ("diffusion", "perturb", "none"),
    "diffusion.corpus": ("train", "all"),
    "eval.metric": ("euclidean", "cosine"),
    "encoder.activation": ("tanh", "relu", "identity"),
}


def flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    # snapshot bookkeeping is not configuration
    return flatten({k: v for k, v in doc.items() if k not in SNAPSHOT_KEYS})


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [int(v) for v in value]
    return value


def resolve(file_values: dict | None = None, flags: dict | None = None) -> dict:
    """Merge layers; ``None`` flag values mean "not given" and are skipped."""
    cfg = dict(DEFAULTS)
    for layer in (file_values or {}), {k: v for k, v in (flags or {}).items() if v is not None}:
        for k, v in layer.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            cfg[k] = _coerce(k, v)
    for k, allowed in CHOICES.items():
        if cfg[k] not in allowed:
            raise ConfigError(f"{k} must be one of {allowed}, got {cfg[k]!r}")
    return cfg


def section(cfg: dict, name: str) -> dict:
    p = name + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def write_snapshot(cfg: dict, out_dir, command: str, inputs: dict | None = None) -> Path:
    """Resolved config plus the command's path arguments; loadable again with ``--config``."""
    path = Path(out_dir) / f"{command}.config.json"
    doc = {"command": command, "inputs": inputs or {}, **cfg}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path
