"""The end-to-end concept -> logic -> classifier network and its backward pass.

Parameters live in one flat ``name -> float64 array`` dict so the optimizer,
checkpointing and gradient checks all treat them uniformly:

``adapter.*``   affine feature adapter standing in for the trainable backbone
``dec.*``       concept decoder (see :mod:`conceptlogic.decoder`)
``align.*``     skeleton/text projections and the log-temperature
``logic.*``     soft switchboards, ``logic.and.<l>`` / ``logic.or.<l>``
``cls.*``       linear rule classifier
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import decoder as dec
from .logic import (
    LogicNetwork,
    augment_predicates,
    backward_grafted,
    binarize,
    concept_grad,
    forward_discrete,
    forward_soft,
)
from .objective import LossWeights, align_loss, align_loss_grad
from .rules import classify, classify_backward, task_loss, task_loss_grad

GROUPS = ("encoder", "logic", "classifier")


def param_group(name: str) -> str:
    if name.startswith("logic."):
        return "logic"
    if name.startswith("cls."):
        return "classifier"
    return "encoder"


@dataclass(frozen=True)
class Architecture:
    layout: dec.DecoderLayout
    n_actions: int
    n_parts: int
    part_index: tuple[int, ...]
    text_dim: int
    align_dim: int = 64
    nodes: tuple[int, ...] = (128, 128)
    skip: bool = True
    negation: bool = True
    adapter: bool = True

    @property
    def n_concepts(self) -> int:
        return self.layout.n_concepts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layout"] = asdict(self.layout)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        lay = dict(d.pop("layout"))
        lay["spatial_ids"] = tuple(lay["spatial_ids"])
        lay["sequence_ids"] = tuple(lay["sequence_ids"])
        d["part_index"] = tuple(d["part_index"])
        d["nodes"] = tuple(d["nodes"])
        return cls(dec.DecoderLayout(**lay), **d)


def init_params(arch: Architecture, rng: np.random.Generator, tau_init: float = 0.07,
                logic_init: tuple[float, float] = (0.4, 0.6)) -> dict:
    D = arch.layout.dim
    params = {}
    if arch.adapter:
        params["adapter.w"] = np.eye(D)
        params["adapter.b"] = np.zeros(D)
    params.update(dec.init_decoder_params(arch.layout, rng))
    params["align.skel_w"] = rng.normal(0, 1 / math.sqrt(D), (D, arch.align_dim))
    params["align.skel_b"] = np.zeros(arch.align_dim)
    params["align.text_w"] = rng.normal(0, 1 / math.sqrt(arch.text_dim), (arch.text_dim, arch.align_dim))
    params["align.text_b"] = np.zeros(arch.align_dim)
    params["align.log_tau"] = np.array(math.log(tau_init))
    net = LogicNetwork.init(arch.n_concepts, arch.nodes, arch.skip, arch.negation, rng, *logic_init)
    for l, (wa, wo) in enumerate(zip(net.and_weights, net.or_weights)):
        params[f"logic.and.{l}"] = wa
        params[f"logic.or.{l}"] = wo
    # zero classifier: no task signal reaches the concepts before it trains
    params["cls.w"] = np.zeros((arch.n_actions, net.output_width))
    params["cls.b"] = np.zeros(arch.n_actions)
    return params


def logic_view(arch: Architecture, params: dict) -> LogicNetwork:
    """A LogicNetwork sharing (not copying) the switchboard arrays."""
    L = len(arch.nodes)
    return LogicNetwork(arch.n_concepts,
                        [params[f"logic.and.{l}"] for l in range(L)],
                        [params[f"logic.or.{l}"] for l in range(L)],
                        arch.skip, arch.negation)


@dataclass
class Views:
    """Pooled feature views before the adapter (all linear in F)."""

    spatial: np.ndarray    # (B, V, D) mean over frames
    temporal: np.ndarray   # (B, T, D) mean over joints
    pooled: np.ndarray     # (B, D) mean over frames and joints
    parts: np.ndarray      # (B, P, D) mean over frames and the joints of each part


def make_views(F, arch: Architecture) -> Views:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 3:
        F = F[None]
    if F.shape[-1] != arch.layout.dim:
        raise ValueError(f"feature channels {F.shape[-1]} != decoder dim {arch.layout.dim}")
    Fs, Ft = dec.decouple(F)
    return Views(Fs, Ft, Fs.mean(axis=1), dec.part_pool(F, arch.part_index, arch.n_parts))


def _adapt(x, params, arch):
    if not arch.adapter:
        return x
    return x @ params["adapter.w"] + params["adapter.b"]


@dataclass
class Forward:
    views: Views
    adapted: dict
    logits: np.ndarray
    c_hat: np.ndarray
    c_bar: np.ndarray
    p: np.ndarray
    r: np.ndarray
    scores: np.ndarray
    dec_caches: dict = field(repr=False, default=None)

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.scores, axis=1)


def forward(F, arch: Architecture, params: dict, dropout_masks=None, views: Views | None = None) -> Forward:
    """Discrete inference path: features -> c_hat -> c_bar -> rules -> scores."""
    views = make_views(F, arch) if views is None else views
    adapted = {k: _adapt(getattr(views, k), params, arch) for k in ("spatial", "temporal", "pooled", "parts")}
    logits, caches = dec.decode_views(adapted["spatial"], adapted["temporal"], params, arch.layout,
                                      dropout_masks=dropout_masks)
    c_hat = dec.sigmoid(logits)
    c_bar = binarize(c_hat)
    p = augment_predicates(c_bar, arch.negation)
    r, _ = forward_discrete(p, logic_view(arch, params))
    scores = classify(r, params["cls.w"], params["cls.b"])
    return Forward(views, adapted, logits, c_hat, c_bar, p, r, scores, caches)


def rules_from_concepts(c_bar, arch: Architecture, params: dict):
    """Rule vector and scores for given binary concepts (used by interventions)."""
    p = augment_predicates(np.atleast_2d(c_bar), arch.negation)
    r, _ = forward_discrete(p, logic_view(arch, params))
    return r, classify(r, params["cls.w"], params["cls.b"])


def loss_and_grads(F, labels, arch: Architecture, params: dict, matrix: np.ndarray,
                   text_embeddings: np.ndarray, weights: LossWeights = LossWeights(),
                   task_to_decoder: bool = True, dropout_masks=None, views: Views | None = None):
    """All loss components for one batch and the gradient of their weighted sum.

    The task loss is computed on the discrete path.  Its gradient reaches the
    switchboards through the soft relaxation evaluated at the binarized
    concepts, and reaches the decoder through the straight-through binarizer
    (only when ``task_to_decoder``).
    """
    labels = np.asarray(labels)
    fw = forward(F, arch, params, dropout_masks, views)
    B = len(labels)
    net = logic_view(arch, params)
    grads: dict[str, np.ndarray] = {}

    # task
    l_task = task_loss(fw.scores, labels)
    dscores = task_loss_grad(fw.scores, labels)
    dr, grads["cls.w"], grads["cls.b"] = classify_backward(dscores, fw.r, params["cls.w"])

    # grafted logic backward
    L = len(arch.nodes)
    dc_bar = np.zeros_like(fw.c_bar)
    if np.any(dr):
        _, tape = forward_soft(fw.p, net)
        lgrads, dp = backward_grafted(dr, tape, net)
        dc_bar = concept_grad(dp, arch.n_concepts, arch.negation)
    else:
        lgrads = [(np.zeros_like(wa), np.zeros_like(wo)) for wa, wo in zip(net.and_weights, net.or_weights)]
    l_sparsity = net.l1()
    for l in range(L):
        grads[f"logic.and.{l}"] = lgrads[l][0] + weights.lam
        grads[f"logic.or.{l}"] = lgrads[l][1] + weights.lam

    # concepts
    target = matrix[labels].astype(np.float64)
    l_concept = dec.concept_loss(fw.c_hat, target)
    dc_hat = weights.alpha * dec.concept_loss_grad(fw.c_hat, target)
    if task_to_decoder:
        dc_hat = dc_hat + dc_bar  # straight-through
    dlogits = dc_hat * fw.c_hat * (1.0 - fw.c_hat)
    dgrads, dFs, dFt = dec.decode_views_backward(dlogits, fw.dec_caches, params, arch.layout)
    grads.update(dgrads)

    # alignment
    log_tau = float(params["align.log_tau"])
    z = fw.adapted["pooled"] @ params["align.skel_w"] + params["align.skel_b"]
    e = text_embeddings[labels]
    t = e @ params["align.text_w"] + params["align.text_b"]
    l_align = align_loss(z, t, math.exp(log_tau))
    dz, dt, dlt = align_loss_grad(z, t, log_tau)
    dz *= weights.beta
    dt *= weights.beta
    grads["align.skel_w"] = fw.adapted["pooled"].T @ dz
    grads["align.skel_b"] = dz.sum(axis=0)
    grads["align.text_w"] = e.T @ dt
    grads["align.text_b"] = dt.sum(axis=0)
    grads["align.log_tau"] = np.array(weights.beta * dlt)
    dpooled = dz @ params["align.skel_w"].T

    # part divergence
    l_div = dec.divergence_from_pooled(fw.adapted["parts"])
    dparts = weights.gamma * dec.divergence_grad(fw.adapted["parts"])

    if arch.adapter:
        v = fw.views
        gw = (np.einsum("bvd,bve->de", v.spatial, dFs) + np.einsum("btd,bte->de", v.temporal, dFt)
              + v.pooled.T @ dpooled + np.einsum("bpd,bpe->de", v.parts, dparts))
        gb = dFs.sum(axis=(0, 1)) + dFt.sum(axis=(0, 1)) + dpooled.sum(axis=0) + dparts.sum(axis=(0, 1))
        grads["adapter.w"] = gw
        grads["adapter.b"] = gb

    parts = {"l_task": l_task, "l_concept": l_concept, "l_align": l_align, "l_div": l_div,
             "l_sparsity": l_sparsity}
    return parts, grads, fw
