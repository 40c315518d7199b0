"""Training loop with staggered warmup, AdamW and grafted gradients."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from sklearn.metrics import f1_score

from . import network as nw
from .objective import COMPONENTS, LossWeights, total_loss
from .optim import AdamWHyper, AdamWState, clip_by_global_norm, adamw_step, warmup_schedule

log = logging.getLogger(__name__)

STREAMS = ("world", "init", "batch", "dropout", "data")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """One independent generator per named purpose, all derived from ``seed``."""
    return {name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
            for i, name in enumerate(STREAMS)}


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    base_lr: float = 1e-5
    logic_lr: float = 1e-4
    encoder_warmup_epochs: int = 5
    logic_frozen_epochs: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0 or self.logic_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def hyper(self) -> AdamWHyper:
        return AdamWHyper(self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass
class TrainState:
    optimizer: AdamWState = field(default_factory=AdamWState)
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


class TrainingDivergedError(FloatingPointError):
    """Raised when a loss or gradient turns non-finite; carries the last good parameters."""

    def __init__(self, epoch: int, step: int, last_good: dict, state: TrainState, reason: str):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {reason}")
        self.epoch = epoch
        self.step = step
        self.last_good = last_good
        self.state = state


def concept_f1(c_bar, truth) -> float:
    """Macro F1 over concepts; a concept never present nor predicted scores 1."""
    return float(f1_score(np.asarray(truth, dtype=int), np.asarray(c_bar, dtype=int),
                          average="macro", zero_division=1.0))


def evaluate(arch: nw.Architecture, params: dict, features, labels, reference=None,
             views: nw.Views | None = None, chunk: int = 256) -> dict:
    """Accuracy and, when ``reference`` concepts are given, concept macro-F1.

    ``reference`` is usually ``matrix[labels]``, the per-action target vector.
    """
    labels = np.asarray(labels)
    preds, bars = [], []
    n = len(labels)
    for s in range(0, n, chunk):
        v = None if views is None else _slice_views(views, slice(s, s + chunk))
        fw = nw.forward(None if v is not None else features[s:s + chunk], arch, params, views=v)
        preds.append(fw.predictions)
        bars.append(fw.c_bar)
    pred = np.concatenate(preds)
    out = {"acc": float((pred == labels).mean())}
    if reference is not None:
        out["concept_f1"] = concept_f1(np.concatenate(bars), reference)
    return out


def _slice_views(views: nw.Views, idx) -> nw.Views:
    return nw.Views(views.spatial[idx], views.temporal[idx], views.pooled[idx], views.parts[idx])


def _dropout_masks(rng, arch, B, rate):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    masks = {}
    for br in ("s", "t"):
        G, _, _ = arch.layout.branch(br)
        masks[br] = (rng.random((B, G, arch.layout.hidden)) < keep) / keep
    return masks


def train(arch: nw.Architecture, params: dict, features, labels, matrix, text_embeddings,
          config: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
          eval_set: tuple | None = None, state: TrainState | None = None,
          rngs: dict | None = None, callback: Callable[[dict, dict], None] | None = None) -> TrainState:
    """Run ``config.epochs`` epochs, updating ``params`` in place.

    ``eval_set`` is ``(features, labels)``; per-epoch accuracy and concept F1
    (against ``matrix[labels]``) are measured on it, otherwise on the
    training data.
    ``callback(record, params)`` runs after every epoch.
    """
    labels = np.asarray(labels)
    matrix = np.asarray(matrix)
    state = TrainState() if state is None else state
    rngs = seed_streams(config.seed) if rngs is None else rngs
    views = nw.make_views(features, arch)
    if eval_set is not None:
        ev_feats, ev_labels = eval_set[:2]
        ev_labels = np.asarray(ev_labels)
        ev_views = nw.make_views(ev_feats, arch)
    else:
        ev_labels, ev_views = labels, views
    ev_ref = matrix[ev_labels]
    n = len(labels)

    for epoch in range(state.epoch + 1, config.epochs + 1):
        phase = warmup_schedule(epoch, config.epochs, config.base_lr, config.logic_lr,
                                config.encoder_warmup_epochs, config.logic_frozen_epochs)
        names = [k for k in params if nw.param_group(k) in phase.trainable]
        lrs = {k: phase.lr[nw.param_group(k)] for k in names}
        last_good = {k: v.copy() for k, v in params.items()}
        sums = dict.fromkeys(COMPONENTS, 0.0)
        order = rngs["batch"].permutation(n)
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            masks = _dropout_masks(rngs["dropout"], arch, len(idx), config.dropout)
            parts, grads, _ = nw.loss_and_grads(
                None, labels[idx], arch, params, matrix, text_embeddings, weights,
                task_to_decoder=phase.task_to_decoder, dropout_masks=masks,
                views=_slice_views(views, idx))
            try:
                total_loss(parts, weights)
                grads, _ = clip_by_global_norm({k: grads[k] for k in names}, config.clip_norm)
                adamw_step(params, grads, state.optimizer, lrs, config.hyper, clamp=("logic.",))
            except FloatingPointError as exc:
                params.update(last_good)
                raise TrainingDivergedError(epoch, state.step, last_good, state, str(exc)) from exc
            state.step += 1
            for k in COMPONENTS:
                sums[k] += parts[k] * len(idx)

        record = {"epoch": epoch}
        record.update({k: sums[k] / n for k in COMPONENTS})
        record["loss"] = total_loss(record, weights)
        metrics = evaluate(arch, params, None, ev_labels, ev_ref, views=ev_views)
        record["acc"] = metrics["acc"]
        record["concept_f1"] = metrics["concept_f1"]
        record["active_weights"] = nw.logic_view(arch, params).active_weights()
        state.history.append(record)
        state.epoch = epoch
        log.info("epoch %d loss %.4f acc %.4f f1 %s active %d", epoch, record["loss"], record["acc"],
                 record["concept_f1"], record["active_weights"])
        if callback is not None:
            callback(record, params)
    return state


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
