"""Skeleton-text alignment loss and the weighted training objective."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0    # concept supervision
    beta: float = 0.1     # skeleton-text alignment
    gamma: float = 1.0    # part divergence
    lam: float = 1e-6     # L1 on the soft switchboards

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")


COMPONENTS = ("l_task", "l_concept", "l_align", "l_div", "l_sparsity")


def total_loss(parts: dict, weights: LossWeights = LossWeights()) -> float:
    """task + alpha*concept + beta*align + gamma*div + lam*||W~||_1."""
    vals = [parts[k] for k in COMPONENTS]
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError(f"non-finite loss component in {parts}")
    return (parts["l_task"] + weights.alpha * parts["l_concept"] + weights.beta * parts["l_align"]
            + weights.gamma * parts["l_div"] + weights.lam * parts["l_sparsity"])


def _align_logits(z, t, tau):
    return (z @ t.T) / tau


def align_loss(z, t, tau: float) -> float:
    """InfoNCE over the batch: row i's positive is column i.

    z, t: (B, P) skeleton and text projections; tau > 0.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    if len(z) == 0:
        raise ValueError("alignment loss needs a nonempty batch")
    if len(z) != len(t):
        raise ValueError("skeleton and text batches differ in size")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    s = _align_logits(z, t, tau)
    s = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s).sum(axis=1))
    return float((logz - np.diag(s)).mean())


def align_loss_grad(z, t, log_tau: float):
    """Gradients (dz, dt, dlog_tau) of ``align_loss(z, t, exp(log_tau))``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    B = len(z)
    tau = np.exp(log_tau)
    s = _align_logits(z, t, tau)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    ds = e / e.sum(axis=1, keepdims=True)
    ds[np.arange(B), np.arange(B)] -= 1.0
    ds /= B
    dz = ds @ t / tau
    dt = ds.T @ z / tau
    dlog_tau = float(-(ds * s).sum())
    return dz, dt, dlog_tau
