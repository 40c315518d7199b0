"""scikit-learn style estimator around the concept -> logic -> classifier network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import decoder as dec
from . import network as nw
from .analysis import concept_stats, intervention_curve
from .concept_bank import PARTS, AssociationMatrix, ConceptVocabulary
from .logic import LogicNetwork
from .objective import LossWeights
from .rules import RuleSet, explain_instance, extract_rules, softmax
from .trainer import TrainConfig, TrainState, evaluate, seed_streams, train
from .world import default_part_map

# desk-scale rates; the ratio logic/base stays 10
DESK_BASE_LR = 1e-3
DESK_LOGIC_LR = 1e-2


def _as_features(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected features of shape (n, T, V, D), got {X.shape}")
    return X


class ConceptLogicClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Skeleton-feature classifier that reasons through binary concepts and logic rules.

    Inputs are per-sample feature tensors of shape (T, V, D).  The decoder
    predicts concept activations, which are binarized and combined by a
    differentiable AND/OR network whose outputs feed a linear classifier.
    ``transform`` returns the soft concept activations.

    Parameters
    ----------
    vocabulary : ConceptVocabulary
    matrix : AssociationMatrix or array (n_actions, n_concepts)
        Binary action/concept associations supervising the decoder.
    part_map : sequence of body-part names per joint, optional
        Defaults to contiguous blocks over the six parts.
    """

    def __init__(self, vocabulary=None, matrix=None, part_map=None, *,
                 groups_spatial=8, groups_sequence=4, hidden=64, n_heads=1, align_dim=64,
                 nodes=(128, 128), skip=True, negation=True, adapter=True,
                 epochs=200, batch_size=32, base_lr=DESK_BASE_LR, logic_lr=DESK_LOGIC_LR,
                 encoder_warmup_epochs=5, logic_frozen_epochs=15, weight_decay=1e-4,
                 clip_norm=1.0, dropout=0.0, alpha=1.0, beta=0.1, gamma=1.0, lam=1e-6,
                 tau_init=0.07, random_state=0, verbose=0):
        self.vocabulary = vocabulary
        self.matrix = matrix
        self.part_map = part_map
        self.groups_spatial = groups_spatial
        self.groups_sequence = groups_sequence
        self.hidden = hidden
        self.n_heads = n_heads
        self.align_dim = align_dim
        self.nodes = nodes
        self.skip = skip
        self.negation = negation
        self.adapter = adapter
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.logic_lr = logic_lr
        self.encoder_warmup_epochs = encoder_warmup_epochs
        self.logic_frozen_epochs = logic_frozen_epochs
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.dropout = dropout
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lam = lam
        self.tau_init = tau_init
        self.random_state = random_state
        self.verbose = verbose

    # ----------------------------------------------------------- config

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, base_lr=self.base_lr,
                           logic_lr=self.logic_lr, encoder_warmup_epochs=self.encoder_warmup_epochs,
                           logic_frozen_epochs=self.logic_frozen_epochs, weight_decay=self.weight_decay,
                           clip_norm=self.clip_norm, dropout=self.dropout, seed=self._seed())

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.lam)

    def _seed(self) -> int:
        if self.random_state is None:
            return 0
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        raise ValueError("random_state must be an int (named streams are derived from it)")

    def _resolve_bank(self):
        if self.vocabulary is None or self.matrix is None:
            raise ValueError("vocabulary and matrix are required")
        vocab = self.vocabulary
        if not isinstance(vocab, ConceptVocabulary):
            raise TypeError("vocabulary must be a ConceptVocabulary")
        if isinstance(self.matrix, AssociationMatrix):
            if self.matrix.concept_names != vocab.names:
                raise ValueError("matrix columns do not follow the vocabulary order")
            return vocab, self.matrix.entries.astype(np.int8), list(self.matrix.action_names)
        M = check_array(self.matrix, dtype=np.int8)
        if M.shape[1] != len(vocab):
            raise ValueError(f"matrix has {M.shape[1]} columns for {len(vocab)} concepts")
        if not np.isin(M, (0, 1)).all():
            raise ValueError("matrix entries must be 0 or 1")
        return vocab, M, [f"action_{a}" for a in range(len(M))]

    def _encode_labels(self, y, action_names):
        y = np.asarray(y)
        if y.dtype.kind in "iu":
            if y.min() < 0 or y.max() >= len(action_names):
                raise ValueError(f"labels must lie in [0, {len(action_names)})")
            return y.astype(np.int64)
        lookup = {n: i for i, n in enumerate(action_names)}
        try:
            return np.array([lookup[str(v)] for v in y], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unknown action label {exc.args[0]!r}") from None

    def _architecture(self, vocab, n_actions, V, D, text_dim) -> nw.Architecture:
        part_map = default_part_map(V) if self.part_map is None else tuple(self.part_map)
        if len(part_map) != V:
            raise ValueError(f"part_map covers {len(part_map)} joints, features have {V}")
        layout = dec.DecoderLayout(D, self.hidden, self.groups_spatial, self.groups_sequence,
                                   tuple(int(i) for i in vocab.spatial_ids),
                                   tuple(int(i) for i in vocab.sequence_ids), self.n_heads)
        nodes = (self.nodes,) * 2 if np.isscalar(self.nodes) else tuple(int(n) for n in self.nodes)
        return nw.Architecture(layout, n_actions, len(PARTS), tuple(PARTS.index(p) for p in part_map),
                               text_dim, self.align_dim, nodes, bool(self.skip), bool(self.negation),
                               bool(self.adapter))

    # ------------------------------------------------------------- fit

    def fit(self, X, y, text_embeddings=None, eval_set=None, callback=None):
        """Train on features ``X`` (n, T, V, D) and action labels ``y``.

        ``text_embeddings`` (n_actions, d) are the per-action alignment targets;
        random unit vectors are drawn when omitted.  ``eval_set=(X, y)``
        controls where per-epoch metrics are measured.
        """
        X = _as_features(X)
        vocab, M, action_names = self._resolve_bank()
        labels = self._encode_labels(y, action_names)
        if len(labels) != len(X):
            raise ValueError(f"{len(X)} samples but {len(labels)} labels")
        config = self.train_config()
        rngs = seed_streams(config.seed)
        if text_embeddings is None:
            e = rngs["init"].standard_normal((len(M), 32))
            text_embeddings = e / np.linalg.norm(e, axis=1, keepdims=True)
        text_embeddings = check_array(text_embeddings, dtype=np.float64)
        if len(text_embeddings) != len(M):
            raise ValueError("need one text embedding per action")
        _, T, V, D = X.shape
        arch = self._architecture(vocab, len(M), V, D, text_embeddings.shape[1])
        params = nw.init_params(arch, rngs["init"], self.tau_init)
        if eval_set is not None:
            ev_X = _as_features(eval_set[0])
            eval_set = (ev_X, self._encode_labels(eval_set[1], action_names))

        self.vocabulary_ = vocab
        self.matrix_ = M
        self.action_names_ = action_names
        self.classes_ = np.arange(len(M))
        self.arch_ = arch
        self.params_ = params
        self.text_embeddings_ = text_embeddings
        self.input_shape_ = (T, V, D)
        self.state_ = TrainState()
        self.rng_streams_ = rngs
        self.history_ = self.state_.history
        train(arch, params, X, labels, M, text_embeddings, config, self.loss_weights(),
              eval_set=eval_set, state=self.state_, rngs=rngs, callback=callback)
        return self

    # ------------------------------------------------------- inference

    def _forward(self, X) -> nw.Forward:
        check_is_fitted(self, "params_")
        X = _as_features(X)
        if X.shape[1:] != self.input_shape_:
            raise ValueError(f"features of shape {X.shape[1:]} do not match the fitted {self.input_shape_}")
        return nw.forward(X, self.arch_, self.params_)

    def decision_function(self, X) -> np.ndarray:
        return self._forward(X).scores

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X) -> np.ndarray:
        """Soft concept activations (n, |C|)."""
        return self._forward(X).c_hat

    def predict_concepts(self, X) -> np.ndarray:
        """Binarized concepts (n, |C|)."""
        return self._forward(X).c_bar

    def rule_activations(self, X) -> np.ndarray:
        return self._forward(X).r

    def evaluate(self, X, y) -> dict:
        """Accuracy and concept macro-F1 against the target rows of the matrix."""
        check_is_fitted(self, "params_")
        labels = self._encode_labels(y, self.action_names_)
        return evaluate(self.arch_, self.params_, _as_features(X), labels, self.matrix_[labels])

    # ----------------------------------------------------- reasoning

    @property
    def logic_network_(self) -> LogicNetwork:
        check_is_fitted(self, "params_")
        return nw.logic_view(self.arch_, self.params_)

    def extract_rules(self) -> RuleSet:
        return extract_rules(self.logic_network_, self.vocabulary_, self.params_["cls.w"],
                             self.params_["cls.b"], self.action_names_)

    def predict_from_concepts(self, c_bar) -> np.ndarray:
        _, scores = nw.rules_from_concepts(c_bar, self.arch_, self.params_)
        return np.argmax(scores, axis=1)

    def explain(self, X, index: int = 0, y=None, top_concepts: int | None = None) -> dict:
        fw = self._forward(X)
        if not 0 <= index < len(fw.scores):
            raise IndexError(f"sample {index} out of range for {len(fw.scores)} samples")
        true = None if y is None else self._encode_labels(y, self.action_names_)[index]
        return explain_instance(fw.c_hat[index], fw.r[index], fw.scores[index], self.extract_rules(),
                                self.params_["cls.w"], self.params_["cls.b"], true, top_concepts)

    def intervention_curve(self, X, y, max_level: int = 3, mode: str = "all"):
        labels = self._encode_labels(y, self.action_names_)
        c_hat = self.transform(X)
        return intervention_curve(c_hat, labels, self.matrix_[labels], self.predict_from_concepts,
                                  max_level, mode)

    def concept_stats(self, X, y=None, groups=None):
        labels = None if y is None else self._encode_labels(y, self.action_names_)
        return concept_stats(self.transform(X), self.vocabulary_.names, labels, self.action_names_, groups)
