"""Skeleton action recognition through binary concepts and learned logic rules."""

from .clustering import ElbowKMeans, EmbeddingSet, elbow_select_k, kmeans_cluster
from .concept_bank import (
    AssociationMatrix,
    ConceptVocabulary,
    SchemaError,
    build_association_matrix,
    check_signature_uniqueness,
)
from .gradcheck import finite_diff_check, run_gradcheck
from .logic import LogicNetwork, forward_discrete, forward_soft
from .model import ConceptLogicClassifier
from .rules import RuleSet, extract_rules
from .trainer import TrainConfig, TrainingDivergedError, train
from .world import WorldConfig, generate_world, planted_matrix, planted_vocabulary, sample_batch

__all__ = [
    "AssociationMatrix", "ConceptLogicClassifier", "ConceptVocabulary", "ElbowKMeans", "EmbeddingSet",
    "LogicNetwork", "RuleSet", "SchemaError", "TrainConfig", "TrainingDivergedError", "WorldConfig",
    "build_association_matrix", "check_signature_uniqueness", "elbow_select_k", "extract_rules",
    "finite_diff_check", "forward_discrete", "forward_soft", "generate_world", "kmeans_cluster",
    "planted_matrix", "planted_vocabulary", "run_gradcheck", "sample_batch", "train",
]
__version__ = "0.1.0"
