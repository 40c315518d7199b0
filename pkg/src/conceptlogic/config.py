"""Resolved run configuration: one JSON document with world, data and model sections."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .model import ConceptLogicClassifier

FIXTURES = ("ntu74", "desk67")

WORLD_DEFAULTS = {
    "T": 16, "V": 20, "D": 32, "num_actions": 10, "n_concepts": 20,
    "noise_std": 0.1, "flip_prob": 0.05, "text_dim": 32, "density": 0.3,
}
DATA_DEFAULTS = {"n_train": 2000, "n_test": 500}
# everything except bank objects and seeding, which the run supplies
_MODEL_EXCLUDE = {"vocabulary", "matrix", "part_map", "random_state", "verbose"}
MODEL_DEFAULTS = {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in ConceptLogicClassifier().get_params().items() if k not in _MODEL_EXCLUDE}
SECTIONS = {"world": WORLD_DEFAULTS, "data": DATA_DEFAULTS, "model": MODEL_DEFAULTS}
TOP_LEVEL = {"seed": 0, "fixture": None}


def default_config() -> dict:
    cfg = copy.deepcopy(TOP_LEVEL)
    cfg.update({k: copy.deepcopy(v) for k, v in SECTIONS.items()})
    return cfg


def resolve(raw: dict | None = None, **overrides) -> dict:
    """Merge ``raw`` over the defaults, rejecting unknown keys.

    ``overrides`` are top-level keys (``seed``, ``fixture``) or dotted
    ``section.key`` names; ``None`` values are ignored.
    """
    cfg = default_config()
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    for key, value in raw.items():
        if key in TOP_LEVEL:
            cfg[key] = value
        elif key in SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"config section {key!r} must be an object")
            unknown = set(value) - set(SECTIONS[key])
            if unknown:
                raise ValueError(f"unknown keys in config section {key!r}: {sorted(unknown)}")
            cfg[key].update(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS or name not in SECTIONS[section]:
                raise ValueError(f"unknown config key {key!r}")
            cfg[section][name] = value
        elif key in TOP_LEVEL:
            cfg[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ValueError("seed must be a nonnegative integer")
    if cfg["fixture"] is not None and cfg["fixture"] not in FIXTURES:
        raise ValueError(f"fixture must be one of {FIXTURES}")
    for k in ("n_train", "n_test"):
        if not isinstance(cfg["data"][k], int) or cfg["data"][k] < 1:
            raise ValueError(f"data.{k} must be a positive integer")
    m = cfg["model"]
    if m["base_lr"] <= 0 or m["logic_lr"] <= 0:
        raise ValueError("learning rates must be positive")
    if m["epochs"] < 1 or m["batch_size"] < 1:
        raise ValueError("model.epochs and model.batch_size must be >= 1")


def load(path, **overrides) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from None
    return resolve(raw, **overrides)


def model_kwargs(cfg: dict) -> dict:
    kw = dict(cfg["model"])
    if isinstance(kw["nodes"], list):
        kw["nodes"] = tuple(kw["nodes"])
    kw["random_state"] = cfg["seed"]
    return kw
