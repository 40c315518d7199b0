"""Worlds from run configs and the on-disk dataset layout.

A dataset directory holds ``world.json`` and, per split, ``<split>.bin``
(little-endian float32 features in row-major (n, T, V, D) order) next to a
``<split>.json`` header with the shape, labels and true concept vectors.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import SCHEMA_VERSION, atomic_write, config_hash
from .concept_bank import dumps
from .fixtures import fixture_vocabulary, ntu_matrix
from .world import (
    FeatureBatch,
    World,
    WorldConfig,
    generate_world,
    planted_matrix,
    planted_vocabulary,
    train_test_split_world,
)

SPLITS = ("train", "test")
_DTYPE = np.dtype("<f4")


def world_from_config(cfg: dict, rngs: dict) -> World:
    """Build the world described by a resolved run config."""
    w = cfg["world"]
    fixture = cfg["fixture"]
    if fixture is None:
        vocab = planted_vocabulary(w["n_concepts"])
        matrix = planted_matrix(vocab, w["num_actions"], rngs["world"].integers(2 ** 32), w["density"])
    elif fixture == "ntu74":
        vocab, matrix = fixture_vocabulary("ntu74"), ntu_matrix()
    else:
        vocab = fixture_vocabulary(fixture)
        matrix = planted_matrix(vocab, w["num_actions"], rngs["world"].integers(2 ** 32), w["density"])
    config = WorldConfig(T=w["T"], V=w["V"], D=w["D"], num_actions=matrix.shape[0], vocabulary=vocab,
                         matrix=matrix, noise_std=w["noise_std"], flip_prob=w["flip_prob"],
                         text_dim=w["text_dim"])
    return generate_world(config, rngs["world"].integers(2 ** 32))


def sample_splits(world: World, cfg: dict, rngs: dict) -> dict[str, FeatureBatch]:
    train, test = train_test_split_world(world, cfg["data"]["n_train"], cfg["data"]["n_test"],
                                         rngs["data"].integers(2 ** 32))
    # the stored precision, so in-memory and on-disk runs see the same numbers
    return {name: replace(b, features=b.features.astype(_DTYPE).astype(np.float64))
            for name, b in (("train", train), ("test", test))}


def write_dataset(directory, world: World, splits: dict[str, FeatureBatch], cfg: dict) -> None:
    directory = Path(directory)
    stamp = {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(cfg), "seed": cfg["seed"]}
    atomic_write(directory / "world.json", dumps({**stamp, "config": cfg, "world": world.to_dict()}))
    for name, batch in splits.items():
        atomic_write(directory / f"{name}.bin", np.ascontiguousarray(batch.features, dtype=_DTYPE).tobytes())
        header = {**stamp, "split": name, "file": f"{name}.bin", "dtype": "float32", "byteorder": "little",
                  "shape": list(batch.features.shape), "labels": batch.labels.tolist(),
                  "true_concepts": batch.true_concepts.astype(int).tolist()}
        atomic_write(directory / f"{name}.json", dumps(header))


def read_world(directory) -> tuple[World, dict]:
    data = json.loads((Path(directory) / "world.json").read_text(encoding="utf-8"))
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("unsupported dataset schema")
    return World.from_dict(data["world"]), data["config"]


def read_split(directory, split: str, world: World | None = None) -> FeatureBatch:
    directory = Path(directory)
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    header = json.loads((directory / f"{split}.json").read_text(encoding="utf-8"))
    if world is None:
        world, _ = read_world(directory)
    shape = tuple(header["shape"])
    raw = np.frombuffer((directory / header["file"]).read_bytes(), dtype=_DTYPE)
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{header['file']} holds {raw.size} values, header promises {shape}")
    return FeatureBatch(raw.reshape(shape).astype(np.float64), np.asarray(header["labels"], dtype=np.int64),
                        np.asarray(header["true_concepts"], dtype=np.int8), world.text_embeddings)
