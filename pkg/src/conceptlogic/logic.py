"""Conjunction/disjunction switchboard layers over concept predicates.

Two evaluations share one set of continuous weights ``W~`` in [0, 1]:

* discrete: weights thresholded at 0.5, exact Boolean AND/OR on binary inputs;
* soft: product relaxations
  ``and_i = prod_j (1 - W~_ij (1 - x_j))`` and ``or_i = 1 - prod_j (1 - W~_ij x_j)``.

Training uses the discrete output for the loss and routes gradients through
the soft stream evaluated at the same (binary) inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

WEIGHT_THRESHOLD = 0.5
CONCEPT_THRESHOLD = 0.5


# ------------------------------------------------------------ predicates

def binarize(c_hat, threshold: float = CONCEPT_THRESHOLD) -> np.ndarray:
    """1 where the soft activation strictly exceeds ``threshold``.

    Backward is the identity (straight-through); see :func:`binarize_backward`.
    """
    return (np.asarray(c_hat) > threshold).astype(np.float64)


def binarize_backward(grad_binary):
    return np.array(grad_binary, dtype=np.float64, copy=True)


def augment_predicates(c_bar, negation: bool = True) -> np.ndarray:
    """[c; 1 - c] (or just c when negation is disabled)."""
    c_bar = np.asarray(c_bar, dtype=np.float64)
    if not negation:
        return c_bar.copy()
    return np.concatenate([c_bar, 1.0 - c_bar], axis=-1)


def augment_predicates_backward(grad_p, n_concepts: int, negation: bool = True):
    if not negation:
        return grad_p.copy()
    return grad_p[..., :n_concepts] - grad_p[..., n_concepts:]


def binarize_weights(w_soft) -> np.ndarray:
    return (np.asarray(w_soft) > WEIGHT_THRESHOLD).astype(np.float64)


def l1_penalty(w_soft) -> tuple[float, np.ndarray]:
    """Sum of |W~| on the nonnegative domain and its (all-ones) gradient."""
    w = np.asarray(w_soft, dtype=np.float64)
    return float(w.sum()), np.ones_like(w)


# ----------------------------------------------------------- soft kernels

@numba.njit(cache=True)
def _product_forward_t(u, WT):
    # out[b, i] = prod_j (1 - WT[j, i] * u[b, j]); node index innermost
    B, m = u.shape
    n = WT.shape[1]
    out = np.ones((B, n))
    for b in range(B):
        row = out[b]
        for j in range(m):
            uj = u[b, j]
            if uj == 0.0:
                continue
            w = WT[j]
            for i in range(n):
                row[i] *= 1.0 - w[i] * uj
    return out


@numba.njit(cache=True, fastmath={"reassoc", "contract", "arcp"})
def _product_backward_t(u, WT, g):
    # gradients of sum_bi g[b, i] * prod_j (1 - WT[j, i] u[b, j])
    B, m = u.shape
    n = WT.shape[1]
    du = np.zeros((B, m))
    dWT = np.zeros((m, n))
    nonzero = np.empty(n)
    zeros = np.empty(n, dtype=np.int64)
    zero_at = np.empty(n, dtype=np.int64)
    full = np.empty(n)
    for b in range(B):
        gb = g[b]
        nonzero[:] = 1.0
        zeros[:] = 0
        zero_at[:] = -1
        for j in range(m):
            uj = u[b, j]
            if uj == 0.0:
                continue
            w = WT[j]
            for i in range(n):
                f = 1.0 - w[i] * uj
                if f == 0.0:
                    zeros[i] += 1
                    zero_at[i] = j
                else:
                    nonzero[i] *= f
        # full[i] is the product over all factors when none is zero; nodes
        # with exactly one zero factor are fixed up below
        for i in range(n):
            full[i] = gb[i] * nonzero[i] if zeros[i] == 0 else 0.0
        for j in range(m):
            uj = u[b, j]
            w = WT[j]
            dw = dWT[j]
            acc = 0.0
            for i in range(n):
                f = 1.0 - w[i] * uj
                ge = full[i] / (f if f != 0.0 else 1.0)
                dw[i] -= uj * ge
                acc += w[i] * ge
            du[b, j] -= acc
        for i in range(n):
            if zeros[i] == 1:
                j = zero_at[i]
                ge = gb[i] * nonzero[i]
                dWT[j, i] -= u[b, j] * ge
                du[b, j] -= WT[j, i] * ge
    return du, dWT


def _product_forward(u, W):
    """out[b, i] = prod_j (1 - W[i, j] * u[b, j])."""
    return _product_forward_t(u, np.ascontiguousarray(W.T))


def _product_backward(u, W, g):
    du, dWT = _product_backward_t(u, np.ascontiguousarray(W.T), g)
    return du, np.ascontiguousarray(dWT.T)


def soft_and(x, W):
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    return _product_forward(1.0 - x, np.ascontiguousarray(W, dtype=np.float64))


def soft_or(x, W):
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    return 1.0 - _product_forward(x, np.ascontiguousarray(W, dtype=np.float64))


def soft_and_backward(x, W, g):
    """(dx, dW) for ``sum(g * soft_and(x, W))``."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    du, dW = _product_backward(1.0 - x, np.ascontiguousarray(W, dtype=np.float64),
                               np.ascontiguousarray(g, dtype=np.float64))
    return -du, dW


def soft_or_backward(x, W, g):
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    du, dW = _product_backward(x, np.ascontiguousarray(W, dtype=np.float64),
                               -np.ascontiguousarray(g, dtype=np.float64))
    return du, dW


def discrete_and(x, W_bin):
    x = np.atleast_2d(x)
    misses = (1.0 - x) @ W_bin.T
    return (misses == 0).astype(np.float64)


def discrete_or(x, W_bin):
    x = np.atleast_2d(x)
    hits = x @ W_bin.T
    return (hits > 0).astype(np.float64)


# --------------------------------------------------------------- network

@dataclass
class LogicNetwork:
    """Stacked AND/OR switchboards.

    ``and_weights[l]`` and ``or_weights[l]`` have shape (n_l, m_l).  Layer 1
    reads the predicate vector; with ``skip`` every later layer reads
    ``[n^(l-1); p]`` and the rule vector is ``[p; n^(1); ...; n^(L)]``.
    """

    n_concepts: int
    and_weights: list[np.ndarray]
    or_weights: list[np.ndarray]
    skip: bool = True
    negation: bool = True
    weight_threshold: float = field(default=WEIGHT_THRESHOLD, repr=False)

    def __post_init__(self):
        if len(self.and_weights) != len(self.or_weights) or not self.and_weights:
            raise ValueError("need the same, nonzero number of AND and OR layers")
        widths = self.input_widths(self.n_concepts, [w.shape[0] for w in self.and_weights],
                                   self.skip, self.negation)
        for l, (wa, wo, m) in enumerate(zip(self.and_weights, self.or_weights, widths)):
            if wa.shape != (wa.shape[0], m) or wo.shape != (wa.shape[0], m):
                raise ValueError(f"layer {l}: expected weights of shape (n, {m}), got {wa.shape} and {wo.shape}")

    @staticmethod
    def input_widths(n_concepts: int, nodes: list[int], skip: bool, negation: bool) -> list[int]:
        pred = 2 * n_concepts if negation else n_concepts
        widths = [pred]
        for n in nodes[:-1]:
            widths.append(2 * n + pred if skip else 2 * n)
        return widths

    @classmethod
    def init(cls, n_concepts: int, nodes=(128, 128), skip: bool = True, negation: bool = True,
             rng: np.random.Generator | None = None, low: float = 0.4, high: float = 0.6) -> "LogicNetwork":
        rng = np.random.default_rng() if rng is None else rng
        nodes = list(nodes)
        widths = cls.input_widths(n_concepts, nodes, skip, negation)
        wa, wo = [], []
        for n, m in zip(nodes, widths):
            wa.append(rng.uniform(low, high, (n, m)))
            wo.append(rng.uniform(low, high, (n, m)))
        return cls(n_concepts, wa, wo, skip, negation)

    @property
    def n_layers(self) -> int:
        return len(self.and_weights)

    @property
    def predicate_width(self) -> int:
        return 2 * self.n_concepts if self.negation else self.n_concepts

    @property
    def nodes(self) -> list[int]:
        return [w.shape[0] for w in self.and_weights]

    @property
    def output_width(self) -> int:
        """Width R of the rule vector fed to the classifier."""
        if self.skip:
            return self.predicate_width + sum(2 * n for n in self.nodes)
        return 2 * self.nodes[-1]

    def weights(self) -> list[np.ndarray]:
        return [w for pair in zip(self.and_weights, self.or_weights) for w in pair]

    def binary_weights(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return ([binarize_weights(w) for w in self.and_weights],
                [binarize_weights(w) for w in self.or_weights])

    def active_weights(self) -> int:
        return int(sum((w > self.weight_threshold).sum() for w in self.weights()))

    def clamp_(self) -> None:
        for w in self.weights():
            np.clip(w, 0.0, 1.0, out=w)

    def l1(self) -> float:
        return float(sum(w.sum() for w in self.weights()))

    def slot_sources(self) -> list[tuple[int, int, str]]:
        """(layer, node, kind) of every rule-vector slot; layer 0 = predicates."""
        out = []
        if self.skip:
            out += [(0, j, "predicate") for j in range(self.predicate_width)]
        layers = range(1, self.n_layers + 1) if self.skip else [self.n_layers]
        for l in layers:
            n = self.nodes[l - 1]
            out += [(l, i, "and") for i in range(n)] + [(l, i, "or") for i in range(n)]
        return out


def _check_width(x, m):
    if x.shape[-1] != m:
        raise ValueError(f"input width {x.shape[-1]} does not match the switchboard width {m}")


def forward_discrete(p, network: LogicNetwork):
    """Binary rule vector and the per-layer outputs ``[a; b]``."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    _check_width(p, network.predicate_width)
    wa, wo = network.binary_weights()
    x = p
    layers = []
    for l in range(network.n_layers):
        _check_width(x, wa[l].shape[1])
        out = np.concatenate([discrete_and(x, wa[l]), discrete_or(x, wo[l])], axis=1)
        layers.append(out)
        x = np.concatenate([out, p], axis=1) if network.skip else out
    r = np.concatenate([p] + layers, axis=1) if network.skip else layers[-1]
    return r, layers


@dataclass
class GraftTape:
    """Inputs and soft activations of every layer of the continuous stream."""

    predicates: np.ndarray
    inputs: list[np.ndarray]
    soft: list[np.ndarray]
    discrete: list[np.ndarray] | None = None


def forward_soft(x, network: LogicNetwork, discrete: list[np.ndarray] | None = None):
    """Soft rule vector and the tape needed by :func:`backward_grafted`."""
    x0 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_width(x0, network.predicate_width)
    inputs, soft = [], []
    h = x0
    for l in range(network.n_layers):
        wa, wo = network.and_weights[l], network.or_weights[l]
        _check_width(h, wa.shape[1])
        inputs.append(h)
        out = np.concatenate([soft_and(h, wa), soft_or(h, wo)], axis=1)
        soft.append(out)
        h = np.concatenate([out, x0], axis=1) if network.skip else out
    r = np.concatenate([x0] + soft, axis=1) if network.skip else soft[-1]
    return r, GraftTape(x0, inputs, soft, discrete)


def backward_grafted(upstream, tape: GraftTape, network: LogicNetwork):
    """Push dL/dr through the soft stream.

    Returns ``(grads, dp)`` where ``grads`` lists (dW_and, dW_or) per layer and
    ``dp`` is the gradient w.r.t. the predicate vector.
    """
    if tape is None:
        raise ValueError("backward_grafted needs the tape of a forward pass")
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    P = network.predicate_width
    L = network.n_layers
    if network.skip:
        dp = upstream[:, :P].copy()
        offsets = np.cumsum([P] + [2 * n for n in network.nodes])
        d_layer = [upstream[:, offsets[l]:offsets[l + 1]].copy() for l in range(L)]
    else:
        dp = np.zeros((len(upstream), P))
        d_layer = [np.zeros((len(upstream), 2 * n)) for n in network.nodes]
        d_layer[-1] = upstream.copy()

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * L
    for l in reversed(range(L)):
        n = network.nodes[l]
        x = tape.inputs[l]
        g = d_layer[l]
        dxa, dwa = soft_and_backward(x, network.and_weights[l], g[:, :n])
        dxo, dwo = soft_or_backward(x, network.or_weights[l], g[:, n:])
        grads[l] = (dwa, dwo)
        dx = dxa + dxo
        if l == 0:
            dp += dx
        elif network.skip:
            n_prev = 2 * network.nodes[l - 1]
            d_layer[l - 1] += dx[:, :n_prev]
            dp += dx[:, n_prev:]
        else:
            d_layer[l - 1] += dx
    return grads, dp


def concept_grad(dp, n_concepts: int, negation: bool = True):
    """Fold a predicate gradient back onto the binarized concepts."""
    return augment_predicates_backward(dp, n_concepts, negation)
