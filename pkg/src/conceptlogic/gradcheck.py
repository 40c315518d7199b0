"""Analytic-vs-finite-difference checks for every hand-written backward pass.

Each component builds a small random problem, reduces it to a scalar
(``sum(upstream * output)`` or a loss), and compares the analytic gradient
with central differences over every input coordinate.  The error reported
per point is ``|a - n| / max(|a|, |n|)`` over the concatenated gradient.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import decoder as dec
from .logic import LogicNetwork, backward_grafted, forward_soft
from .objective import align_loss, align_loss_grad
from .rules import classify, classify_backward, task_loss, task_loss_grad

DEFAULT_POINTS = 10
DEFAULT_STEP = 1e-5
TOLERANCE = 1e-5


@dataclass(frozen=True)
class PointResult:
    component: str
    point: int
    rel_error: float


@dataclass(frozen=True)
class ComponentReport:
    component: str
    points: tuple[PointResult, ...]
    seconds: float

    @property
    def max_error(self) -> float:
        return max(p.rel_error for p in self.points)

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbed in place."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: dict, numeric: dict) -> float:
    a = np.concatenate([np.ravel(analytic[k]) for k in sorted(numeric)])
    n = np.concatenate([np.ravel(numeric[k]) for k in sorted(numeric)])
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _compare(f, inputs: dict, analytic: dict, h: float) -> float:
    numeric = {k: numeric_grad(f, v, h) for k, v in inputs.items()}
    return relative_error(analytic, numeric)


# ---------------------------------------------------------------- components

def _attention(rng, h):
    n_heads = int(rng.choice([1, 2]))
    Q = rng.normal(size=(3, 4))
    X = rng.normal(size=(2, 5, 4))
    up = rng.normal(size=(2, 3, 4))
    f = lambda: float((dec.attention(Q, X, n_heads)[0] * up).sum())
    _, cache = dec.attention(Q, X, n_heads)
    dQ, dX = dec.attention_backward(up, cache)
    return _compare(f, {"Q": Q, "X": X}, {"Q": dQ, "X": dX}, h)


def _layer_norm(rng, h):
    x = rng.normal(size=(3, 4, 6))
    g = rng.normal(size=6)
    b = rng.normal(size=6)
    up = rng.normal(size=x.shape)
    f = lambda: float((dec.layer_norm(x, g, b)[0] * up).sum())
    _, cache = dec.layer_norm(x, g, b)
    dx, dg, db = dec.layer_norm_backward(up, cache)
    return _compare(f, {"x": x, "g": g, "b": b}, {"x": dx, "g": dg, "b": db}, h)


def _branch(rng, D=4, hidden=6, G=3):
    return {
        "q": rng.normal(size=(G, D)),
        "ln1_g": 1 + 0.1 * rng.normal(size=D), "ln1_b": 0.1 * rng.normal(size=D),
        "w1": rng.normal(size=(D, hidden)) / math.sqrt(D), "b1": 0.1 * rng.normal(size=hidden),
        "w2": rng.normal(size=(hidden, D)) / math.sqrt(hidden), "b2": 0.1 * rng.normal(size=D),
        "ln2_g": 1 + 0.1 * rng.normal(size=D), "ln2_b": 0.1 * rng.normal(size=D),
    }


def _ffn(rng, h):
    # the full refinement block: attention, residual + LN, GELU FFN, residual + LN
    bp = _branch(rng)
    X = rng.normal(size=(2, 5, 4))
    up = rng.normal(size=(2, 3, 4))
    f = lambda: float((dec.cross_attend(bp["q"], X, bp)[0] * up).sum())
    _, cache = dec.cross_attend(bp["q"], X, bp)
    grads, dX = dec.cross_attend_backward(up, cache, bp)
    inputs = dict(bp, X=X)
    return _compare(f, inputs, dict(grads, X=dX), h)


def _group_fc(rng, h):
    G, D, g = 3, 4, 3
    count = 7  # two padded slots
    Qr = rng.normal(size=(2, G, D))
    W = rng.normal(size=(G, D, g))
    up = rng.normal(size=(2, count))
    f = lambda: float((dec.group_fc(Qr, W, count) * up).sum())
    dQr, dW = dec.group_fc_backward(up, Qr, W)
    return _compare(f, {"Qr": Qr, "W": W}, {"Qr": dQr, "W": dW}, h)


def _sigmoid_bce(rng, h):
    z = rng.normal(size=(4, 6))
    t = rng.integers(0, 2, size=z.shape).astype(np.float64)
    f = lambda: dec.concept_loss(dec.sigmoid(z), t)
    c = dec.sigmoid(z)
    dz = dec.concept_loss_grad(c, t) * c * (1 - c)
    return _compare(f, {"z": z}, {"z": dz}, h)


def _divergence(rng, h):
    part_index = np.array([0, 0, 1, 1, 2, 3, 3])
    F = rng.normal(size=(2, 3, len(part_index), 4))
    f = lambda: dec.part_divergence_loss(F, part_index, 4)
    pooled = dec.part_pool(F, part_index, 4)
    dF = dec.part_pool_backward(dec.divergence_grad(pooled), part_index, F.shape)
    return _compare(f, {"F": F}, {"F": dF}, h)


def _decoder(rng, h):
    n_heads = int(rng.choice([1, 2]))
    layout = dec.DecoderLayout(4, 6, 2, 2, (0, 2, 3, 5, 6), (1, 4, 7), n_heads=n_heads)
    params = dec.init_decoder_params(layout, rng)
    for v in params.values():
        v += 0.1 * rng.normal(size=v.shape)
    F = rng.normal(size=(2, 3, 5, 4))
    Fs, Ft = dec.decouple(F)
    t = rng.integers(0, 2, size=(2, layout.n_concepts)).astype(np.float64)

    def f():
        lg, _ = dec.decode_views(Fs, Ft, params, layout)
        return dec.concept_loss(dec.sigmoid(lg), t)

    lg, caches = dec.decode_views(Fs, Ft, params, layout)
    c = dec.sigmoid(lg)
    grads, dFs, dFt = dec.decode_views_backward(dec.concept_loss_grad(c, t) * c * (1 - c), caches,
                                                params, layout)
    return _compare(f, dict(params, Fs=Fs, Ft=Ft), dict(grads, Fs=dFs, Ft=dFt), h)


def _soft_logic(rng, h):
    skip = bool(rng.integers(2))
    net = LogicNetwork.init(3, (4, 3), skip, True, rng, 0.05, 0.95)
    x = rng.uniform(0.05, 0.95, size=(2, net.predicate_width))
    up = rng.normal(size=(2, net.output_width))
    f = lambda: float((forward_soft(x, net)[0] * up).sum())
    _, tape = forward_soft(x, net)
    grads, dx = backward_grafted(up, tape, net)
    inputs, analytic = {"x": x}, {"x": dx}
    for l, (dwa, dwo) in enumerate(grads):
        inputs[f"and{l}"], analytic[f"and{l}"] = net.and_weights[l], dwa
        inputs[f"or{l}"], analytic[f"or{l}"] = net.or_weights[l], dwo
    return _compare(f, inputs, analytic, h)


def _align(rng, h):
    z = rng.normal(size=(4, 5))
    t = rng.normal(size=(4, 5))
    log_tau = np.array(math.log(rng.uniform(0.3, 1.0)))
    f = lambda: align_loss(z, t, math.exp(float(log_tau)))
    dz, dt, dlt = align_loss_grad(z, t, float(log_tau))
    return _compare(f, {"z": z, "t": t, "log_tau": log_tau}, {"z": dz, "t": dt, "log_tau": dlt}, h)


def _classifier(rng, h):
    r = rng.integers(0, 2, size=(4, 7)).astype(np.float64)
    V = rng.normal(size=(3, 7))
    b = rng.normal(size=3)
    y = rng.integers(0, 3, size=4)
    f = lambda: task_loss(classify(r, V, b), y)
    dr, dV, db = classify_backward(task_loss_grad(classify(r, V, b), y), r, V)
    return _compare(f, {"r": r, "V": V, "b": b}, {"r": dr, "V": dV, "b": db}, h)


COMPONENTS: dict[str, Callable] = {
    "attention": _attention,
    "layer_norm": _layer_norm,
    "ffn": _ffn,
    "group_fc": _group_fc,
    "sigmoid_bce": _sigmoid_bce,
    "divergence": _divergence,
    "decoder": _decoder,
    "soft_logic": _soft_logic,
    "align": _align,
    "classifier": _classifier,
}


def check_component(name: str, points: int = DEFAULT_POINTS, seed: int = 0,
                    h: float = DEFAULT_STEP) -> ComponentReport:
    if name not in COMPONENTS:
        raise KeyError(f"unknown gradient component {name!r}; choose from {sorted(COMPONENTS)}")
    start = time.perf_counter()
    ss = np.random.SeedSequence([seed, sorted(COMPONENTS).index(name)])
    results = []
    for i, child in enumerate(ss.spawn(points)):
        err = COMPONENTS[name](np.random.default_rng(child), h)
        results.append(PointResult(name, i, err))
    return ComponentReport(name, tuple(results), time.perf_counter() - start)


def run_gradcheck(components=None, points: int = DEFAULT_POINTS, seed: int = 0,
                  h: float = DEFAULT_STEP) -> list[ComponentReport]:
    """Check the named components (all by default) at ``points`` seeded points each."""
    names = list(COMPONENTS) if components is None else list(components)
    return [check_component(n, points, seed, h) for n in names]


def finite_diff_check(component: str, seed: int = 0, points: int = DEFAULT_POINTS,
                      h: float = DEFAULT_STEP) -> float:
    """Worst relative error of one component over its seeded points."""
    return check_component(component, points, seed, h).max_error
