"""AdamW with global-norm clipping, cosine decay and the staggered warmup plan."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, names):
        super().__init__(f"non-finite gradient in {sorted(names)}")
        self.names = sorted(names)


@dataclass(frozen=True)
class AdamWHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def to_arrays(self) -> dict:
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_by_global_norm(grads: dict, max_norm: float = 1.0) -> tuple[dict, float]:
    """Rescale all gradients together so their joint L2 norm is <= max_norm."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adamw_step(params: dict, grads: dict, state: AdamWState, lr, hyper: AdamWHyper = AdamWHyper(),
               clamp: tuple[str, ...] = ()) -> None:
    """In-place AdamW update of the entries of ``params`` named in ``grads``.

    ``lr`` is a float or a mapping name -> rate.  Decay is applied
    multiplicatively before the moment step; names starting with any prefix in
    ``clamp`` are clipped to [0, 1] afterwards.
    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    b1, b2 = hyper.beta1, hyper.beta2
    for name, g in grads.items():
        p = params[name]
        rate = lr[name] if isinstance(lr, dict) else lr
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.steps[name] = 0
        state.steps[name] += 1
        t = state.steps[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if hyper.weight_decay:
            p *= 1.0 - rate * hyper.weight_decay
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= rate * m_hat / (np.sqrt(v_hat) + hyper.eps)
        if clamp and name.startswith(clamp):
            np.clip(p, 0.0, 1.0, out=p)


def cosine_multiplier(epoch: int, total_epochs: int) -> float:
    """0.5 * (1 + cos(pi * (epoch - 1) / total)); 1 at epoch 1, ~0 at the end."""
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    return 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / total_epochs))


@dataclass(frozen=True)
class Phase:
    epoch: int
    trainable: frozenset
    lr: dict
    task_to_decoder: bool

    @property
    def logic_frozen(self) -> bool:
        return "logic" not in self.trainable


def warmup_schedule(epoch: int, total_epochs: int, base_lr: float, logic_lr: float,
                    encoder_warmup_epochs: int = 5, logic_frozen_epochs: int = 15) -> Phase:
    """Which parameter groups train in ``epoch`` and at what rates.

    Groups: ``encoder`` (feature adapter, decoder, alignment heads),
    ``logic`` (switchboards) and ``classifier``.  During the encoder warmup
    the task gradient does not reach the decoder; logic and classifier stay
    frozen until ``logic_frozen_epochs`` have passed.
    """
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    mult = cosine_multiplier(epoch, total_epochs)
    trainable = {"encoder"}
    if epoch > logic_frozen_epochs:
        trainable |= {"logic", "classifier"}
    return Phase(
        epoch=epoch,
        trainable=frozenset(trainable),
        lr={"encoder": base_lr * mult, "logic": logic_lr * mult, "classifier": logic_lr * mult},
        task_to_decoder=epoch > encoder_warmup_epochs,
    )
