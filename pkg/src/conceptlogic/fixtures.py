"""Bundled concept-bank fixtures."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .clustering import EmbeddingSet
from .concept_bank import (
    AssociationMatrix,
    ConceptVocabulary,
    SchemaError,
    build_association_matrix,
)

VOCABULARIES = {"ntu74": "ntu74_vocabulary.json", "desk67": "desk67_vocabulary.json"}


def _read(name: str) -> dict:
    return json.loads(resources.files("conceptlogic.data").joinpath(name).read_text(encoding="utf-8"))


def fixture_vocabulary(name: str) -> ConceptVocabulary:
    if name not in VOCABULARIES:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(VOCABULARIES)}")
    return ConceptVocabulary.from_dict(_read(VOCABULARIES[name]))


def ntu_records() -> list[dict]:
    data = _read("ntu_associations.json")
    if data.get("schema_version") != 1:
        raise SchemaError("schema_version", "unsupported association fixture")
    return data["records"]


def ntu_matrix() -> AssociationMatrix:
    """Association matrix of the small NTU-style action fixture over the 74-concept bank."""
    return build_association_matrix(ntu_records(), fixture_vocabulary("ntu74"))


def motion_patterns() -> dict[str, EmbeddingSet]:
    """Per-part embeddings of motion-pattern descriptions, keyed by part."""
    data = _read("motion_patterns.json")
    return {part: EmbeddingSet(np.asarray(d["vectors"], dtype=np.float64), tuple(d["labels"]))
            for part, d in data["parts"].items()}
