"""Spatio-temporal concept decoder with explicit forward/backward passes.

Features ``F`` of shape (B, T, V, D) are split into a per-joint view (mean over
frames) and a per-frame view (mean over joints).  Each view is read by a small
set of learned group queries through cross-attention, a residual LayerNorm,
a two-layer FFN and a second residual LayerNorm.  Every refined group query is
then expanded into a contiguous block of concept logits (Group-FC).

Spatial concepts come from the joint view; temporal and interaction concepts
come from the frame view.

All functions work on float64 arrays and return a cache that the matching
``*_backward`` consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5
BCE_EPS = 1e-7
_GELU_K = math.sqrt(2.0 / math.pi)

BRANCH_KEYS = ("q", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b", "wg")


@dataclass(frozen=True)
class DecoderLayout:
    """Static shape information of one decoder."""

    dim: int
    hidden: int
    groups_spatial: int
    groups_sequence: int
    spatial_ids: tuple[int, ...]
    sequence_ids: tuple[int, ...]
    n_heads: int = 1

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise ValueError(f"dim={self.dim} is not divisible by n_heads={self.n_heads}")
        if self.groups_spatial < 1 or self.groups_sequence < 1:
            raise ValueError("group counts must be >= 1")

    @property
    def n_concepts(self) -> int:
        return len(self.spatial_ids) + len(self.sequence_ids)

    @property
    def group_size_spatial(self) -> int:
        return max(1, math.ceil(len(self.spatial_ids) / self.groups_spatial))

    @property
    def group_size_sequence(self) -> int:
        return max(1, math.ceil(len(self.sequence_ids) / self.groups_sequence))

    def branch(self, name: str) -> tuple[int, int, int]:
        """(groups, group size, concept count) for branch ``"s"`` or ``"t"``."""
        if name == "s":
            return self.groups_spatial, self.group_size_spatial, len(self.spatial_ids)
        return self.groups_sequence, self.group_size_sequence, len(self.sequence_ids)


def init_decoder_params(layout: DecoderLayout, rng: np.random.Generator, prefix: str = "dec.") -> dict:
    """Gaussian init scaled by 1/sqrt(fan_in); LayerNorm at identity."""
    D, H = layout.dim, layout.hidden
    params = {}
    for br in ("s", "t"):
        G, g, _ = layout.branch(br)
        p = f"{prefix}{br}."
        params[p + "q"] = rng.normal(0, 1 / math.sqrt(D), (G, D))
        params[p + "ln1_g"] = np.ones(D)
        params[p + "ln1_b"] = np.zeros(D)
        params[p + "w1"] = rng.normal(0, 1 / math.sqrt(D), (D, H))
        params[p + "b1"] = np.zeros(H)
        params[p + "w2"] = rng.normal(0, 1 / math.sqrt(H), (H, D))
        params[p + "b2"] = np.zeros(D)
        params[p + "ln2_g"] = np.ones(D)
        params[p + "ln2_b"] = np.zeros(D)
        params[p + "wg"] = rng.normal(0, 1 / math.sqrt(D), (G, D, g))
    return params


# ---------------------------------------------------------------- primitives

def decouple(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean over frames (per-joint view) and mean over joints (per-frame view)."""
    F = np.asarray(F, dtype=np.float64)
    return F.mean(axis=-3), F.mean(axis=-2)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv, gamma = cache
    red = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=red)
    dbeta = dy.sum(axis=red)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def gelu(x):
    u = _GELU_K * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x):
    u = _GELU_K * (x + 0.044715 * x * x * x)
    th = np.tanh(u)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def attention(Q, X, n_heads: int = 1):
    """softmax(Q X^T / sqrt(d_head)) X with heads formed by channel split.

    Q: (G, D) shared queries; X: (B, N, D).  Returns context (B, G, D).
    """
    G, D = Q.shape
    B, N, _ = X.shape
    h = n_heads
    dh = D // h
    scale = math.sqrt(dh)
    Qh = Q.reshape(G, h, dh).transpose(1, 0, 2)
    Xh = X.reshape(B, N, h, dh).transpose(0, 2, 1, 3)
    P = _softmax((Qh[None] @ Xh.transpose(0, 1, 3, 2)) / scale)
    ctx = (P @ Xh).transpose(0, 2, 1, 3).reshape(B, G, D)
    return ctx, (Qh, Xh, P, scale)


def attention_backward(dctx, cache):
    Qh, Xh, P, scale = cache
    h, G, dh = Qh.shape
    B = Xh.shape[0]
    dctx_h = dctx.reshape(B, G, h, dh).transpose(0, 2, 1, 3)
    dP = dctx_h @ Xh.transpose(0, 1, 3, 2)
    dXh = P.transpose(0, 1, 3, 2) @ dctx_h
    dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) / scale
    dQh = (dS @ Xh).sum(axis=0)
    dXh += dS.transpose(0, 1, 3, 2) @ Qh[None]
    dQ = dQh.transpose(1, 0, 2).reshape(G, h * dh)
    dX = dXh.transpose(0, 2, 1, 3).reshape(B, -1, h * dh)
    return dQ, dX


def cross_attend(Q, X, bp: dict, n_heads: int = 1, dropout_mask=None):
    """Refine group queries against a feature view.

    ``bp`` holds the branch parameters without prefix (see ``BRANCH_KEYS``).
    ``dropout_mask`` (B, G, hidden), already scaled, is applied to the FFN
    hidden activation.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        out, cache = cross_attend(Q, X[None], bp, n_heads, dropout_mask)
        return out[0], cache
    ctx, c_att = attention(Q, X, n_heads)
    s1 = Q[None] + ctx
    h1, c_ln1 = layer_norm(s1, bp["ln1_g"], bp["ln1_b"])
    z = h1 @ bp["w1"] + bp["b1"]
    a = gelu(z)
    if dropout_mask is not None:
        a = a * dropout_mask
    f = a @ bp["w2"] + bp["b2"]
    h2, c_ln2 = layer_norm(h1 + f, bp["ln2_g"], bp["ln2_b"])
    return h2, (c_att, c_ln1, h1, z, a, dropout_mask, c_ln2)


def cross_attend_backward(dh2, cache, bp: dict):
    """Gradients w.r.t. the branch parameters (and 'q') plus the feature view."""
    c_att, c_ln1, h1, z, a, mask, c_ln2 = cache
    grads = {}
    ds2, grads["ln2_g"], grads["ln2_b"] = layer_norm_backward(dh2, c_ln2)
    dh1 = ds2.copy()
    df = ds2
    grads["w2"] = a.reshape(-1, a.shape[-1]).T @ df.reshape(-1, df.shape[-1])
    grads["b2"] = df.sum(axis=(0, 1))
    da = df @ bp["w2"].T
    if mask is not None:
        da = da * mask
    dz = da * gelu_grad(z)
    grads["w1"] = h1.reshape(-1, h1.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
    grads["b1"] = dz.sum(axis=(0, 1))
    dh1 += dz @ bp["w1"].T
    ds1, grads["ln1_g"], grads["ln1_b"] = layer_norm_backward(dh1, c_ln1)
    dq_att, dX = attention_backward(ds1, c_att)
    grads["q"] = ds1.sum(axis=0) + dq_att
    return grads, dX


def group_fc(Qr, W, count: int):
    """Logit i = Qr[i // g] . W[i // g][:, i % g]; padded slots are dropped.

    Qr: (B, G, D); W: (G, D, g).  Returns (B, count).
    """
    Qr = np.asarray(Qr, dtype=np.float64)
    G, D, g = W.shape
    if G * g < count:
        raise ValueError(f"{G} groups of {g} cannot hold {count} concepts")
    squeeze = Qr.ndim == 2
    if squeeze:
        Qr = Qr[None]
    full = (Qr.transpose(1, 0, 2) @ W).transpose(1, 0, 2).reshape(len(Qr), G * g)
    out = full[:, :count]
    return out[0] if squeeze else out


def group_fc_backward(dlogits, Qr, W):
    G, D, g = W.shape
    B = len(Qr)
    dfull = np.zeros((B, G * g))
    dfull[:, : dlogits.shape[1]] = dlogits
    dfull = dfull.reshape(B, G, g)
    dW = Qr.transpose(1, 2, 0) @ dfull.transpose(1, 0, 2)
    dQr = (dfull.transpose(1, 0, 2) @ W.transpose(0, 2, 1)).transpose(1, 0, 2)
    return dQr, dW


def group_slot(i: int, group_size: int) -> tuple[int, int]:
    """(group index, position inside the group) of concept ``i``."""
    return i // group_size, i % group_size


# ------------------------------------------------------------ full decoder

def _branch_params(params: dict, prefix: str) -> dict:
    return {k: params[prefix + k] for k in BRANCH_KEYS}


def decode_views(Fs, Ft, params: dict, layout: DecoderLayout, prefix: str = "dec.",
                 dropout_masks: dict | None = None):
    """Concept logits (B, |C|) in vocabulary order from the two feature views."""
    B = len(Fs)
    logits = np.empty((B, layout.n_concepts))
    caches = {}
    for br, view, ids in (("s", Fs, layout.spatial_ids), ("t", Ft, layout.sequence_ids)):
        bp = _branch_params(params, f"{prefix}{br}.")
        _, _, count = layout.branch(br)
        mask = None if dropout_masks is None else dropout_masks.get(br)
        qr, cache = cross_attend(bp["q"], view, bp, layout.n_heads, mask)
        logits[:, list(ids)] = group_fc(qr, bp["wg"], count)
        caches[br] = (qr, cache)
    return logits, caches


def decode_views_backward(dlogits, caches, params: dict, layout: DecoderLayout, prefix: str = "dec."):
    """Parameter gradients (prefixed names) and gradients of the two views."""
    grads = {}
    dviews = {}
    for br, ids in (("s", layout.spatial_ids), ("t", layout.sequence_ids)):
        bp = _branch_params(params, f"{prefix}{br}.")
        qr, cache = caches[br]
        dqr, dW = group_fc_backward(dlogits[:, list(ids)], qr, bp["wg"])
        g, dX = cross_attend_backward(dqr, cache, bp)
        g["wg"] = dW
        for k, v in g.items():
            grads[f"{prefix}{br}.{k}"] = v
        dviews[br] = dX
    return grads, dviews["s"], dviews["t"]


def predict_concepts(F, params: dict, layout: DecoderLayout, prefix: str = "dec."):
    """Soft concept activations and logits for features (B, T, V, D) or (T, V, D)."""
    F = np.asarray(F, dtype=np.float64)
    single = F.ndim == 3
    if single:
        F = F[None]
    Fs, Ft = decouple(F)
    logits, _ = decode_views(Fs, Ft, params, layout, prefix)
    soft = sigmoid(logits)
    if single:
        return soft[0], logits[0]
    return soft, logits


# ------------------------------------------------------------------ losses

def concept_loss(c_hat, target) -> float:
    """Binary cross-entropy averaged over concepts (and over the batch)."""
    p = np.clip(np.asarray(c_hat, dtype=np.float64), BCE_EPS, 1 - BCE_EPS)
    t = np.asarray(target, dtype=np.float64)
    return float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).mean())


def concept_loss_grad(c_hat, target) -> np.ndarray:
    """d concept_loss / d c_hat; zero where the clamp is active."""
    c_hat = np.asarray(c_hat, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    inside = (c_hat > BCE_EPS) & (c_hat < 1 - BCE_EPS)
    p = np.clip(c_hat, BCE_EPS, 1 - BCE_EPS)
    g = (-t / p + (1 - t) / (1 - p)) / c_hat.size
    return np.where(inside, g, 0.0)


def part_pool(F, part_index, n_parts: int) -> np.ndarray:
    """Mean over frames and over the joints of each part: (B, P, D)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 3:
        F = F[None]
    part_index = np.asarray(part_index)
    joint_mean = F.mean(axis=1)  # (B, V, D)
    out = np.zeros((len(F), n_parts, F.shape[-1]))
    for p in range(n_parts):
        sel = part_index == p
        if not sel.any():
            raise ValueError(f"body part {p} has no joints")
        out[:, p] = joint_mean[:, sel].mean(axis=1)
    return out


def part_pool_backward(dpooled, part_index, shape) -> np.ndarray:
    """Gradient of ``part_pool`` w.r.t. F of the given (B, T, V, D) shape."""
    B, T, V, D = shape
    part_index = np.asarray(part_index)
    counts = np.bincount(part_index, minlength=dpooled.shape[1])
    per_joint = dpooled[:, part_index] / counts[part_index][None, :, None]
    return np.broadcast_to(per_joint[:, None] / T, shape).copy()


def _divergence_terms(pooled):
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim == 2:
        pooled = pooled[None]
    norms = np.linalg.norm(pooled, axis=-1)
    valid = norms > 1e-12
    unit = np.where(valid[..., None], pooled / np.where(valid, norms, 1.0)[..., None], 0.0)
    cos = np.einsum("bpd,bqd->bpq", unit, unit)
    P = pooled.shape[1]
    offdiag = ~np.eye(P, dtype=bool)
    return pooled, norms, valid, unit, cos, offdiag


def divergence_from_pooled(pooled) -> float:
    """Mean over ordered part pairs of ReLU(cosine); batch-averaged."""
    pooled, _, _, _, cos, offdiag = _divergence_terms(pooled)
    P = pooled.shape[1]
    if P < 2:
        return 0.0
    per_sample = (np.maximum(cos, 0.0) * offdiag).sum(axis=(1, 2)) / (P * (P - 1))
    return float(per_sample.mean())


def divergence_grad(pooled) -> np.ndarray:
    pooled, norms, valid, unit, cos, offdiag = _divergence_terms(pooled)
    B, P, _ = pooled.shape
    if P < 2:
        return np.zeros_like(pooled)
    active = ((cos > 0) & offdiag).astype(np.float64)
    # each unordered pair appears twice among ordered pairs
    coef = 2.0 / (P * (P - 1) * B)
    term = np.einsum("bpq,bqd->bpd", active, unit) - (active * cos).sum(axis=2)[..., None] * unit
    safe = np.where(valid, norms, 1.0)[..., None]
    return np.where(valid[..., None], coef * term / safe, 0.0)


def part_divergence_loss(F, part_index, n_parts: int | None = None) -> float:
    part_index = np.asarray(part_index)
    if n_parts is None:
        n_parts = int(part_index.max()) + 1
    return divergence_from_pooled(part_pool(F, part_index, n_parts))
