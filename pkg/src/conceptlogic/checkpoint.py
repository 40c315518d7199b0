"""Checkpoints: a JSON manifest plus one little-endian float32 tensor blob."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .concept_bank import AssociationMatrix, ConceptVocabulary, dumps
from .network import Architecture
from .optim import AdamWState
from .trainer import TrainState

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "tensors.bin"
_DTYPE = np.dtype("<f4")


def config_hash(config: dict) -> str:
    """sha256 of the canonical (sorted, compact) JSON form of ``config``."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(tensors: dict) -> tuple[bytes, list]:
    table, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name]), dtype=_DTYPE)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    return b"".join(chunks), table


def _rng_state(rngs: dict | None) -> dict | None:
    if rngs is None:
        return None
    return {k: g.bit_generator.state for k, g in sorted(rngs.items())}


def save_checkpoint(directory, *, arch: Architecture, params: dict, state: TrainState,
                    config: dict, seed: int, vocabulary: ConceptVocabulary,
                    matrix: AssociationMatrix, text_embeddings: np.ndarray,
                    input_shape, rngs: dict | None = None) -> Path:
    """Write ``manifest.json`` and ``tensors.bin`` under ``directory``."""
    directory = Path(directory)
    tensors = dict(params)
    tensors.update(state.optimizer.to_arrays())
    tensors["text_embeddings"] = text_embeddings
    blob, table = _pack(tensors)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "epoch": state.epoch,
        "step": state.step,
        "adam_steps": dict(sorted(state.optimizer.steps.items())),
        "rng_state": _rng_state(rngs),
        "architecture": arch.to_dict(),
        "input_shape": list(input_shape),
        "vocabulary": vocabulary.to_dict(),
        "matrix": matrix.to_dict(),
        "blob": {"file": BLOB, "dtype": "float32", "byteorder": "little",
                 "sha256": hashlib.sha256(blob).hexdigest()},
        "tensors": table,
    }
    atomic_write(directory / BLOB, blob)
    atomic_write(directory / MANIFEST, dumps(manifest))
    return directory / MANIFEST


class CheckpointError(ValueError):
    pass


def load_checkpoint(directory) -> dict:
    """Read a checkpoint back; tensors come back as float64 arrays."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"no {MANIFEST} in {directory}") from None
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {manifest.get('schema_version')!r}")
    blob = (directory / manifest["blob"]["file"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob"]["sha256"]:
        raise CheckpointError("tensor blob does not match its manifest checksum")
    flat = np.frombuffer(blob, dtype=_DTYPE)
    tensors = {}
    for t in manifest["tensors"]:
        arr = flat[t["offset"]:t["offset"] + t["count"]].astype(np.float64)
        tensors[t["name"]] = arr.reshape(t["shape"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.") and k != "text_embeddings"}
    opt = AdamWState()
    for k in params:
        if f"adam.m.{k}" in tensors:
            opt.m[k] = tensors[f"adam.m.{k}"]
            opt.v[k] = tensors[f"adam.v.{k}"]
            opt.steps[k] = manifest["adam_steps"][k]
    vocab = ConceptVocabulary.from_dict(manifest["vocabulary"])
    return {
        "manifest": manifest,
        "arch": Architecture.from_dict(manifest["architecture"]),
        "params": params,
        "state": TrainState(opt, manifest["step"], manifest["epoch"], []),
        "vocabulary": vocab,
        "matrix": AssociationMatrix.from_dict(manifest["matrix"]),
        "text_embeddings": tensors["text_embeddings"],
        "input_shape": tuple(manifest["input_shape"]),
    }


def save_model(model, directory, config: dict, rngs: dict | None = None) -> Path:
    """Checkpoint a fitted :class:`~conceptlogic.model.ConceptLogicClassifier`."""
    matrix = AssociationMatrix(model.matrix_, model.action_names_, model.vocabulary_.names)
    return save_checkpoint(directory, arch=model.arch_, params=model.params_, state=model.state_,
                           config=config, seed=model._seed(), vocabulary=model.vocabulary_,
                           matrix=matrix, text_embeddings=model.text_embeddings_,
                           input_shape=model.input_shape_, rngs=rngs)


def load_model(directory):
    """Rebuild a fitted estimator from a checkpoint directory."""
    from .model import ConceptLogicClassifier

    ck = load_checkpoint(directory)
    arch: Architecture = ck["arch"]
    model = ConceptLogicClassifier(ck["vocabulary"], ck["matrix"], nodes=arch.nodes,
                                   skip=arch.skip, negation=arch.negation, adapter=arch.adapter,
                                   hidden=arch.layout.hidden, n_heads=arch.layout.n_heads,
                                   groups_spatial=arch.layout.groups_spatial,
                                   groups_sequence=arch.layout.groups_sequence,
                                   align_dim=arch.align_dim, random_state=ck["manifest"]["seed"])
    model.vocabulary_ = ck["vocabulary"]
    model.matrix_ = ck["matrix"].entries.astype(np.int8)
    model.action_names_ = list(ck["matrix"].action_names)
    model.classes_ = np.arange(len(model.matrix_))
    model.arch_ = arch
    model.params_ = ck["params"]
    model.text_embeddings_ = ck["text_embeddings"]
    model.input_shape_ = ck["input_shape"]
    model.state_ = ck["state"]
    model.history_ = []
    model.manifest_ = ck["manifest"]
    return model
