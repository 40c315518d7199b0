"""End-to-end runs shared by the command line and the test-suite."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import config as cfgmod
from .checkpoint import SCHEMA_VERSION, atomic_write, config_hash, load_model, save_model
from .concept_bank import dumps
from .dataset import read_split, read_world, sample_splits, world_from_config
from .model import ConceptLogicClassifier
from .trainer import TrainingDivergedError, seed_streams

log = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoint"
METRICS_FILE = "metrics.ndjson"


def stamp(cfg: dict) -> dict:
    """Provenance fields embedded in every artifact."""
    return {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(cfg), "seed": cfg["seed"]}


def load_data(cfg: dict, data_dir=None):
    """(world, {split: FeatureBatch}) from a dataset directory or regenerated from ``cfg``."""
    if data_dir is not None:
        world, _ = read_world(data_dir)
        return world, {s: read_split(data_dir, s, world) for s in ("train", "test")}
    rngs = seed_streams(cfg["seed"])
    world = world_from_config(cfg, rngs)
    return world, sample_splits(world, cfg, rngs)


def build_model(cfg: dict, world) -> ConceptLogicClassifier:
    return ConceptLogicClassifier(world.vocabulary, world.matrix, world.config.part_map,
                                  **cfgmod.model_kwargs(cfg))


def train_run(cfg: dict, out_dir, data_dir=None) -> ConceptLogicClassifier:
    """Train per ``cfg``; writes metrics.ndjson, checkpoint/ and run.json under ``out_dir``.

    On divergence the last good parameters are checkpointed and the error
    re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world, splits = load_data(cfg, data_dir)
    model = build_model(cfg, world)
    tmp = out / f".{METRICS_FILE}.partial"
    with open(tmp, "w", encoding="utf-8") as fh:
        def on_epoch(record, _params):
            fh.write(json.dumps(record) + "\n")
            fh.flush()
        status = "ok"
        try:
            model.fit(splits["train"].features, splits["train"].labels,
                      text_embeddings=world.text_embeddings,
                      eval_set=(splits["test"].features, splits["test"].labels), callback=on_epoch)
        except TrainingDivergedError:
            status = "diverged"
            raise
        finally:
            fh.close()
            tmp.replace(out / METRICS_FILE)
            if hasattr(model, "params_"):
                save_model(model, out / CHECKPOINT_DIR, cfg, model.rng_streams_)
                history = model.state_.history
                atomic_write(out / "run.json", dumps({
                    **stamp(cfg), "config": cfg, "status": status, "epochs_completed": model.state_.epoch,
                    "final": history[-1] if history else None}))
    return model


def open_model(model_dir):
    """Load a trained model and the config echoed into its checkpoint."""
    path = Path(model_dir)
    if (path / CHECKPOINT_DIR).is_dir():
        path = path / CHECKPOINT_DIR
    model = load_model(path)
    return model, model.manifest_["config"]
