"""Synthetic planted-rule worlds.

A world fixes one unit vector per spatial concept and one zero-mean
sinusoidal trace per temporal/interaction concept.  A spatial concept writes
its vector into every frame of the joints of its body part; a sequence-level
concept writes ``w_c * sin(2*pi*f_c*t/T + phi_c)`` into every joint.  Averaging
over frames therefore keeps exactly the spatial evidence, and averaging over
joints keeps the temporal evidence (plus a constant spatial offset).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .concept_bank import (
    PARTS,
    AssociationMatrix,
    ConceptVocabulary,
    check_signature_uniqueness,
)

MIN_CHANNELS = 8


def default_part_map(n_joints: int) -> tuple[str, ...]:
    """Contiguous, near-equal joint blocks in head/hand/arm/hip/leg/foot order."""
    if n_joints < len(PARTS):
        raise ValueError(f"need at least {len(PARTS)} joints to cover every body part")
    blocks = np.array_split(np.arange(n_joints), len(PARTS))
    part_map = [""] * n_joints
    for part, block in zip(PARTS, blocks):
        for j in block:
            part_map[j] = part
    return tuple(part_map)


def planted_vocabulary(n_concepts: int = 20, n_temporal: int | None = None,
                       n_interaction: int = 1) -> ConceptVocabulary:
    """Anonymous vocabulary: spatial concepts spread round-robin over parts."""
    if n_temporal is None:
        n_temporal = max(1, round(0.35 * n_concepts))
    n_spatial = n_concepts - n_temporal - n_interaction
    if n_spatial < 1:
        raise ValueError("vocabulary leaves no room for spatial concepts")
    entries = []
    counts = dict.fromkeys(PARTS, 0)
    for i in range(n_spatial):
        part = PARTS[i % len(PARTS)]
        entries.append((f"{part}_{counts[part]}", "spatial", part))
        counts[part] += 1
    entries.sort(key=lambda e: PARTS.index(e[2]))
    entries += [(f"temporal_{i}", "temporal", "none") for i in range(n_temporal)]
    entries += [(f"interaction_{i}", "interaction", "none") for i in range(n_interaction)]
    return ConceptVocabulary.build(entries)


def planted_matrix(vocabulary: ConceptVocabulary, num_actions: int, seed=0,
                   density: float = 0.3) -> AssociationMatrix:
    """Random association matrix with pairwise distinct, non-empty rows.

    Draws are repeated (up to a fixed budget) until every concept is active
    in at least one action, so each concept has positive training examples.
    """
    C = len(vocabulary)
    if num_actions > 2 ** C - 1:
        raise ValueError("too many actions for distinct signatures")
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        rows: list[np.ndarray] = []
        seen: set[bytes] = set()
        while len(rows) < num_actions:
            row = (rng.random(C) < density).astype(np.int8)
            if row.sum() == 0 or row.tobytes() in seen:
                continue
            seen.add(row.tobytes())
            rows.append(row)
        if np.stack(rows).any(axis=0).all():
            break
    names = [f"action_{i}" for i in range(num_actions)]
    return AssociationMatrix(np.stack(rows), names, vocabulary.names)


@dataclass
class WorldConfig:
    T: int = 16
    V: int = 20
    D: int = 32
    num_actions: int = 10
    vocabulary: ConceptVocabulary | None = None
    matrix: AssociationMatrix | None = None
    part_map: tuple[str, ...] | None = None
    noise_std: float = 0.1
    flip_prob: float = 0.05
    text_dim: int = 32

    def __post_init__(self):
        for name in ("T", "V", "D", "num_actions", "text_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5)")
        if self.part_map is None:
            self.part_map = default_part_map(self.V)
        self.part_map = tuple(self.part_map)
        if len(self.part_map) != self.V:
            raise ValueError(f"part_map covers {len(self.part_map)} joints, expected {self.V}")
        bad = set(self.part_map) - set(PARTS)
        if bad:
            raise ValueError(f"part_map uses unknown parts {sorted(bad)}")
        if self.matrix is not None:
            if self.vocabulary is None:
                raise ValueError("a matrix needs its vocabulary")
            if self.matrix.concept_names != self.vocabulary.names:
                raise ValueError("matrix columns do not follow the vocabulary order")
            if self.matrix.shape[0] != self.num_actions:
                raise ValueError(f"matrix has {self.matrix.shape[0]} actions, config says {self.num_actions}")

    def to_dict(self) -> dict:
        return {
            "T": self.T, "V": self.V, "D": self.D, "num_actions": self.num_actions,
            "noise_std": self.noise_std, "flip_prob": self.flip_prob, "text_dim": self.text_dim,
            "part_map": list(self.part_map),
            "vocabulary": None if self.vocabulary is None else self.vocabulary.to_dict(),
            "matrix": None if self.matrix is None else self.matrix.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        data = dict(data)
        if data.get("vocabulary") is not None:
            data["vocabulary"] = ConceptVocabulary.from_dict(data["vocabulary"])
        if data.get("matrix") is not None:
            data["matrix"] = AssociationMatrix.from_dict(data["matrix"])
        return cls(**data)


@dataclass
class World:
    config: WorldConfig
    vocabulary: ConceptVocabulary
    matrix: AssociationMatrix
    spatial_basis: np.ndarray      # (|C_s|, D), rows follow vocabulary.spatial_ids
    sequence_basis: np.ndarray     # (|C_t|+|C_int|, D), rows follow vocabulary.sequence_ids
    frequencies: np.ndarray
    phases: np.ndarray
    text_embeddings: np.ndarray    # (|A|, text_dim)
    seed: int = 0
    _joint_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parts = np.array(self.config.part_map)
        concept_parts = np.array([self.vocabulary.part_of(i) for i in self.vocabulary.spatial_ids])
        self._joint_mask = (concept_parts[:, None] == parts[None, :]).astype(np.float64)

    @property
    def part_index(self) -> np.ndarray:
        """Joint -> index into PARTS."""
        return np.array([PARTS.index(p) for p in self.config.part_map])

    def temporal_traces(self) -> np.ndarray:
        """Scalar profile per sequence concept, shape (|C_t|+|C_int|, T)."""
        t = np.arange(self.config.T)
        T = self.config.T
        return np.sqrt(2.0) * np.sin(2 * np.pi * self.frequencies[:, None] * t[None, :] / T
                                     + self.phases[:, None])

    def render(self, concepts: np.ndarray) -> np.ndarray:
        """Noiseless features (n, T, V, D) for binary concept vectors (n, |C|)."""
        concepts = np.atleast_2d(np.asarray(concepts, dtype=np.float64))
        sp = concepts[:, self.vocabulary.spatial_ids]
        sq = concepts[:, self.vocabulary.sequence_ids]
        joint = np.einsum("bc,cv,cd->bvd", sp, self._joint_mask, self.spatial_basis)
        frame = np.einsum("bc,ct,cd->btd", sq, self.temporal_traces(), self.sequence_basis)
        return joint[:, None, :, :] + frame[:, :, None, :]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "vocabulary": self.vocabulary.to_dict(),
            "matrix": self.matrix.to_dict(),
            "spatial_basis": self.spatial_basis.tolist(),
            "sequence_basis": self.sequence_basis.tolist(),
            "frequencies": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
            "text_embeddings": self.text_embeddings.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "World":
        config = WorldConfig.from_dict(data["config"])
        return cls(
            config=config,
            vocabulary=ConceptVocabulary.from_dict(data["vocabulary"]),
            matrix=AssociationMatrix.from_dict(data["matrix"]),
            spatial_basis=np.array(data["spatial_basis"], dtype=np.float64).reshape(-1, config.D),
            sequence_basis=np.array(data["sequence_basis"], dtype=np.float64).reshape(-1, config.D),
            frequencies=np.array(data["frequencies"], dtype=np.float64),
            phases=np.array(data["phases"], dtype=np.float64),
            text_embeddings=np.array(data["text_embeddings"], dtype=np.float64),
            seed=data.get("seed", 0),
        )


@dataclass
class FeatureBatch:
    features: np.ndarray        # (n, T, V, D)
    labels: np.ndarray          # (n,)
    true_concepts: np.ndarray   # (n, |C|) concepts actually rendered, after flips
    text_embeddings: np.ndarray  # (|A|, text_dim)

    def __post_init__(self):
        n = len(self.features)
        if self.features.ndim != 4:
            raise ValueError("features must have shape (n, T, V, D)")
        if self.labels.shape != (n,) or len(self.true_concepts) != n:
            raise ValueError("labels/true_concepts do not match the feature batch size")
        if len(self.labels) and self.labels.max() >= len(self.text_embeddings):
            raise ValueError("label exceeds the number of actions")

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx) -> "FeatureBatch":
        return FeatureBatch(self.features[idx], self.labels[idx], self.true_concepts[idx],
                            self.text_embeddings)


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_world(config: WorldConfig, seed=0) -> World:
    """Draw concept bases, temporal traces and text embeddings for ``config``."""
    if config.D < MIN_CHANNELS:
        raise ValueError(f"D={config.D} is too small to embed concepts distinguishably (need >= {MIN_CHANNELS})")
    rng = np.random.default_rng(seed)
    vocab = config.vocabulary
    if vocab is None:
        vocab = planted_vocabulary()
    matrix = config.matrix
    if matrix is None:
        matrix = planted_matrix(vocab, config.num_actions, rng.integers(2 ** 32))
        config = replace(config, vocabulary=vocab, matrix=matrix)
    if len(vocab) > config.D * 8:
        raise ValueError("too many concepts for the channel count")
    if check_signature_uniqueness(matrix):
        raise ValueError("association matrix has duplicate action signatures")
    missing = {vocab.part_of(i) for i in vocab.spatial_ids} - set(config.part_map)
    if missing:
        raise ValueError(f"no joints carry parts {sorted(missing)}")

    n_seq = len(vocab.sequence_ids)
    T = config.T
    # integer frequencies away from 0 and T/2 keep every trace exactly zero-mean
    hi = max(2, (T + 1) // 2)
    return World(
        config=config,
        vocabulary=vocab,
        matrix=matrix,
        spatial_basis=_unit_rows(rng, len(vocab.spatial_ids), config.D),
        sequence_basis=_unit_rows(rng, n_seq, config.D),
        frequencies=rng.integers(1, hi, size=n_seq).astype(np.float64),
        phases=rng.uniform(0, 2 * np.pi, size=n_seq),
        text_embeddings=_unit_rows(rng, config.num_actions, config.text_dim),
        seed=int(seed) if np.isscalar(seed) else 0,
    )


def sample_batch(world: World, n: int, seed=0) -> FeatureBatch:
    """Draw ``n`` labelled samples with concept flips and Gaussian noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = world.config
    rng = np.random.default_rng(seed)
    labels = rng.integers(cfg.num_actions, size=n)
    planted = world.matrix.entries[labels].astype(np.int8)
    flips = rng.random(planted.shape) < cfg.flip_prob
    true = np.where(flips, 1 - planted, planted).astype(np.int8)
    features = world.render(true)
    if cfg.noise_std > 0:
        features = features + rng.normal(0.0, cfg.noise_std, size=features.shape)
    return FeatureBatch(features, labels, true, world.text_embeddings)


def train_test_split_world(world: World, n_train: int, n_test: int, seed=0) -> tuple[FeatureBatch, FeatureBatch]:
    """Two independent draws from ``world`` using spawned child seeds."""
    train_seed, test_seed = np.random.SeedSequence(seed).spawn(2)
    return sample_batch(world, n_train, train_seed), sample_batch(world, n_test, test_seed)
