"""Concept interventions and activation statistics over an evaluation set."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .logic import binarize

COV_EPS = 1e-6
MODES = ("all", "misclassified")


def correction_order(c_hat, c_star) -> np.ndarray:
    """Concept ids per sample sorted by |c_hat - c*| descending, ties by id."""
    c_hat = np.atleast_2d(np.asarray(c_hat, dtype=np.float64))
    c_star = np.atleast_2d(np.asarray(c_star, dtype=np.float64))
    gap = np.abs(c_hat - c_star)
    # stable sort keeps the lower id first among equal gaps
    return np.argsort(-gap, axis=1, kind="stable")


def intervene(c_hat, c_star, m: int, order: np.ndarray | None = None) -> np.ndarray:
    """Replace the ``m`` most wrong activations by their targets and re-binarize.

    Returns the corrected binary concepts, one row per sample.
    """
    c_hat = np.atleast_2d(np.asarray(c_hat, dtype=np.float64))
    c_star = np.atleast_2d(np.asarray(c_star, dtype=np.float64))
    if c_hat.shape != c_star.shape:
        raise ValueError("predicted and target concepts differ in shape")
    C = c_hat.shape[1]
    if not 0 <= m <= C:
        raise ValueError(f"m must lie in [0, {C}]")
    if order is None:
        order = correction_order(c_hat, c_star)
    out = c_hat.copy()
    if m:
        rows = np.arange(len(out))[:, None]
        sel = order[:, :m]
        out[rows, sel] = c_star[rows, sel]
    return binarize(out)


@dataclass
class InterventionResult:
    levels: list[int]
    accuracy: list[float]
    mode: str
    logs: list[dict] = field(default_factory=list)

    @property
    def deltas(self) -> list[float]:
        return [a - self.accuracy[0] for a in self.accuracy]

    def to_dict(self) -> dict:
        return {"levels": self.levels, "accuracy": self.accuracy, "delta": self.deltas,
                "mode": self.mode, "samples": self.logs}


def intervention_curve(c_hat, labels, c_star, predict_fn: Callable[[np.ndarray], np.ndarray],
                       max_level: int = 3, mode: str = "all") -> InterventionResult:
    """Global accuracy after correcting m = 0..max_level concepts per sample.

    ``predict_fn`` maps binary concepts (n, |C|) to action predictions.  In
    ``"misclassified"`` mode only samples wrong at level 0 are corrected;
    accuracy is always measured over every sample.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    c_hat = np.atleast_2d(np.asarray(c_hat, dtype=np.float64))
    c_star = np.atleast_2d(np.asarray(c_star, dtype=np.float64))
    labels = np.asarray(labels)
    if len(c_hat) == 0:
        raise ValueError("intervention needs at least one sample")
    if max_level > c_hat.shape[1]:
        raise ValueError("max_level exceeds the number of concepts")
    order = correction_order(c_hat, c_star)
    base = predict_fn(binarize(c_hat))
    target = np.ones(len(labels), dtype=bool) if mode == "all" else base != labels
    preds, acc = [], []
    for m in range(max_level + 1):
        p = predict_fn(intervene(c_hat, c_star, m, order)) if m else base
        p = np.where(target, p, base)
        preds.append(p)
        acc.append(float((p == labels).mean()))
    logs = [{
        "sample": int(i),
        "label": int(labels[i]),
        "corrected": bool(target[i]),
        "replaced": [int(c) for c in order[i, :max_level]] if target[i] else [],
        "predictions": [int(p[i]) for p in preds],
    } for i in range(len(labels))]
    return InterventionResult(list(range(max_level + 1)), acc, mode, logs)


@dataclass
class ConceptStats:
    names: list[str]
    mean_activation: np.ndarray       # mean of binarized concepts
    cov: list                         # std / mean of soft activations; None when mean <= eps
    mean_active_count: float
    per_action: dict = field(default_factory=dict)
    per_group: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "concepts": [{"name": n, "mean": float(m), "cov": c}
                         for n, m, c in zip(self.names, self.mean_activation, self.cov)],
            "mean_active_count": self.mean_active_count,
            "per_action": self.per_action,
            "per_group": self.per_group,
        }


def coefficient_of_variation(x, eps: float = COV_EPS) -> list:
    """Column-wise population std / mean; ``None`` where the mean is <= eps."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return [float(s / m) if m > eps else None for s, m in zip(std, mean)]


def concept_stats(c_hat, names=None, labels=None, action_names=None,
                  groups: dict[str, list[str]] | None = None) -> ConceptStats:
    """Activation frequency, variability and per-action profiles of concepts."""
    c_hat = np.atleast_2d(np.asarray(c_hat, dtype=np.float64))
    if c_hat.size == 0 or len(c_hat) == 0:
        raise ValueError("concept statistics need a nonempty evaluation set")
    C = c_hat.shape[1]
    names = [f"c{i}" for i in range(C)] if names is None else list(names)
    c_bar = binarize(c_hat)
    per_action, per_group = {}, {}
    if labels is not None:
        labels = np.asarray(labels)
        n_actions = int(labels.max()) + 1 if action_names is None else len(action_names)
        action_names = [str(a) for a in range(n_actions)] if action_names is None else list(action_names)
        for a, name in enumerate(action_names):
            sel = labels == a
            if sel.any():
                per_action[name] = {"n": int(sel.sum()), "mean": c_bar[sel].mean(axis=0).tolist(),
                                    "active_count": float(c_bar[sel].sum(axis=1).mean())}
        for g, members in (groups or {}).items():
            unknown = set(members) - set(action_names)
            if unknown:
                raise KeyError(f"group {g!r} names unknown actions {sorted(unknown)}")
            ids = [action_names.index(a) for a in members]
            sel = np.isin(labels, ids)
            if sel.any():
                per_group[g] = {"n": int(sel.sum()), "mean": c_bar[sel].mean(axis=0).tolist(),
                                "cov": coefficient_of_variation(c_hat[sel])}
    return ConceptStats(names, c_bar.mean(axis=0), coefficient_of_variation(c_hat),
                        float(c_bar.sum(axis=1).mean()), per_action, per_group)
