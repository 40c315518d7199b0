"""Concept vocabulary and action-concept association matrix.

Both objects are immutable after construction and validate their invariants
eagerly.  The JSON layouts are::

    vocabulary: {"schema_version": 1, "concepts": [{"id", "name", "category", "part"}]}
    matrix:     {"schema_version": 1, "actions": [...], "concepts": [...], "rows": [[0|1, ...]]}
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
CATEGORIES = ("spatial", "temporal", "interaction")
PARTS = ("head", "hand", "arm", "hip", "leg", "foot")
PART_NONE = "none"


class SchemaError(ValueError):
    """A file or record does not match the expected layout.

    ``path`` is a dotted/indexed location such as ``concepts[3].part``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Concept:
    id: int
    name: str
    category: str
    part: str


class ConceptVocabulary:
    """Ordered concept list partitioned into spatial/temporal/interaction."""

    def __init__(self, concepts: Sequence[Concept]):
        concepts = tuple(concepts)
        seen: dict[str, int] = {}
        for i, c in enumerate(concepts):
            where = f"concepts[{i}]"
            if c.id != i:
                raise SchemaError(f"{where}.id", f"expected contiguous id {i}, got {c.id}")
            if c.name in seen:
                raise SchemaError(f"{where}.name", f"duplicate concept name {c.name!r} (first at id {seen[c.name]})")
            seen[c.name] = i
            if c.category not in CATEGORIES:
                raise SchemaError(f"{where}.category", f"unknown category {c.category!r}")
            if c.category == "spatial":
                if c.part not in PARTS:
                    raise SchemaError(f"{where}.part", f"spatial concept needs a body part, got {c.part!r}")
            elif c.part != PART_NONE:
                raise SchemaError(f"{where}.part", f"{c.category} concept must have part 'none', got {c.part!r}")
        self.concepts = concepts
        self._index = seen

    def __len__(self) -> int:
        return len(self.concepts)

    def __iter__(self):
        return iter(self.concepts)

    def __getitem__(self, i: int) -> Concept:
        return self.concepts[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, ConceptVocabulary) and self.concepts == other.concepts

    def __repr__(self) -> str:
        c = self.counts
        return (f"ConceptVocabulary({len(self)} concepts: {c['spatial']} spatial, "
                f"{c['temporal']} temporal, {c['interaction']} interaction)")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.concepts]

    @property
    def counts(self) -> dict[str, int]:
        n = Counter(c.category for c in self.concepts)
        return {cat: n.get(cat, 0) for cat in CATEGORIES}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown concept {name!r}") from None

    def ids(self, category: str) -> np.ndarray:
        return np.array([c.id for c in self.concepts if c.category == category], dtype=np.int64)

    @property
    def spatial_ids(self) -> np.ndarray:
        return self.ids("spatial")

    @property
    def sequence_ids(self) -> np.ndarray:
        """Temporal followed by interaction ids; both are decoded from the frame axis."""
        return np.concatenate([self.ids("temporal"), self.ids("interaction")])

    def part_of(self, i: int) -> str:
        return self.concepts[i].part

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "concepts": [
                {"id": c.id, "name": c.name, "category": c.category, "part": c.part}
                for c in self.concepts
            ],
        }

    @classmethod
    def from_dict(cls, data) -> "ConceptVocabulary":
        if not isinstance(data, dict):
            raise SchemaError("$", "expected a JSON object")
        _check_version(data)
        items = data.get("concepts")
        if not isinstance(items, list):
            raise SchemaError("concepts", "expected a list")
        concepts = []
        for i, item in enumerate(items):
            where = f"concepts[{i}]"
            if not isinstance(item, dict):
                raise SchemaError(where, "expected an object")
            for key, typ in (("id", int), ("name", str), ("category", str), ("part", str)):
                if key not in item:
                    raise SchemaError(f"{where}.{key}", "missing field")
                if not isinstance(item[key], typ) or isinstance(item[key], bool):
                    raise SchemaError(f"{where}.{key}", f"expected {typ.__name__}")
            extra = set(item) - {"id", "name", "category", "part"}
            if extra:
                raise SchemaError(f"{where}", f"unexpected fields {sorted(extra)}")
            concepts.append(Concept(item["id"], item["name"], item["category"], item["part"]))
        return cls(concepts)

    @classmethod
    def build(cls, entries: Iterable[tuple[str, str, str]]) -> "ConceptVocabulary":
        """Build from ``(name, category, part)`` triples, assigning ids in order."""
        return cls([Concept(i, n, cat, part) for i, (n, cat, part) in enumerate(entries)])


class AssociationMatrix:
    """Binary action x concept matrix supervising concept prediction."""

    def __init__(self, entries, action_names: Sequence[str], concept_names: Sequence[str]):
        entries = np.asarray(entries)
        action_names = list(action_names)
        concept_names = list(concept_names)
        if entries.ndim != 2:
            raise SchemaError("rows", "expected a 2-D matrix")
        if entries.shape != (len(action_names), len(concept_names)):
            raise SchemaError("rows", f"shape {entries.shape} does not match "
                                      f"{len(action_names)} actions x {len(concept_names)} concepts")
        if not np.isin(entries, (0, 1)).all():
            bad = np.argwhere(~np.isin(entries, (0, 1)))[0]
            raise SchemaError(f"rows[{bad[0]}][{bad[1]}]", "entries must be 0 or 1")
        if len(set(action_names)) != len(action_names):
            dup = [a for a, n in Counter(action_names).items() if n > 1][0]
            raise SchemaError("actions", f"duplicate action name {dup!r}")
        empty = np.flatnonzero(entries.sum(axis=1) == 0)
        if empty.size:
            raise SchemaError(f"rows[{empty[0]}]", f"action {action_names[empty[0]]!r} has no active concept")
        self.entries = entries.astype(np.int8)
        self.entries.setflags(write=False)
        self.action_names = action_names
        self.concept_names = concept_names

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __eq__(self, other) -> bool:
        return (isinstance(other, AssociationMatrix)
                and self.action_names == other.action_names
                and self.concept_names == other.concept_names
                and np.array_equal(self.entries, other.entries))

    def __repr__(self) -> str:
        return f"AssociationMatrix({self.shape[0]} actions x {self.shape[1]} concepts)"

    def row(self, action) -> np.ndarray:
        if isinstance(action, str):
            action = self.action_names.index(action)
        return self.entries[action]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "actions": list(self.action_names),
            "concepts": list(self.concept_names),
            "rows": self.entries.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "AssociationMatrix":
        if not isinstance(data, dict):
            raise SchemaError("$", "expected a JSON object")
        _check_version(data)
        for key in ("actions", "concepts", "rows"):
            if not isinstance(data.get(key), list):
                raise SchemaError(key, "expected a list")
        for i, row in enumerate(data["rows"]):
            if not isinstance(row, list):
                raise SchemaError(f"rows[{i}]", "expected a list")
            if len(row) != len(data["concepts"]):
                raise SchemaError(f"rows[{i}]", f"expected {len(data['concepts'])} entries, got {len(row)}")
            for j, v in enumerate(row):
                if v not in (0, 1) or isinstance(v, bool):
                    raise SchemaError(f"rows[{i}][{j}]", "entries must be 0 or 1")
        rows = np.array(data["rows"], dtype=np.int8).reshape(len(data["rows"]), len(data["concepts"]))
        return cls(rows, data["actions"], data["concepts"])


def _check_version(data: dict) -> None:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"expected {SCHEMA_VERSION}, got {data.get('schema_version')!r}")


def build_association_matrix(records, vocabulary: ConceptVocabulary,
                             actions: Sequence[str] | None = None) -> AssociationMatrix:
    """Populate M from ``(action, concept_name)`` records.

    ``records`` may also be a list of ``{"action": ..., "concepts": [...]}``
    dicts.  When ``actions`` is given, it fixes the row order and records for
    any other action are rejected.  Duplicate records are idempotent.
    """
    pairs = []
    for rec in records:
        if isinstance(rec, dict):
            pairs.extend((rec["action"], name) for name in rec["concepts"])
        else:
            action, name = rec
            pairs.append((action, name))

    if actions is None:
        actions = list(dict.fromkeys(a for a, _ in pairs))
    row_of = {a: i for i, a in enumerate(actions)}
    entries = np.zeros((len(actions), len(vocabulary)), dtype=np.int8)
    for action, name in pairs:
        if action not in row_of:
            raise KeyError(f"unknown action {action!r}")
        entries[row_of[action], vocabulary.index(name)] = 1
    return AssociationMatrix(entries, actions, vocabulary.names)


def check_signature_uniqueness(matrix: AssociationMatrix) -> list[tuple[str, str]]:
    """Every unordered pair of actions whose concept rows are identical."""
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(matrix.entries):
        groups.setdefault(row.tobytes(), []).append(i)
    names = matrix.action_names
    pairs = []
    for idx in groups.values():
        pairs.extend((names[a], names[b]) for a, b in combinations(idx, 2))
    return sorted(pairs, key=lambda p: (names.index(p[0]), names.index(p[1])))


def dumps(obj: dict) -> str:
    """Canonical JSON text; floats use the shortest round-trip repr."""
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc}") from None


def load_vocabulary(path) -> ConceptVocabulary:
    return ConceptVocabulary.from_dict(_read_json(path))


def save_vocabulary(vocabulary: ConceptVocabulary, path) -> None:
    Path(path).write_text(dumps(vocabulary.to_dict()), encoding="utf-8")


def load_matrix(path, vocabulary: ConceptVocabulary | None = None) -> AssociationMatrix:
    matrix = AssociationMatrix.from_dict(_read_json(path))
    if vocabulary is not None and matrix.concept_names != vocabulary.names:
        raise SchemaError("concepts", "matrix concept list does not match the vocabulary order")
    return matrix


def save_matrix(matrix: AssociationMatrix, path) -> None:
    Path(path).write_text(dumps(matrix.to_dict()), encoding="utf-8")
