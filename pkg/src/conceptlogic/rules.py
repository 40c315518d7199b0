"""Linear rule classifier, rule extraction and explanations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .concept_bank import ConceptVocabulary
from .logic import LogicNetwork

AND, OR = "and", "or"
_SYMBOL = {AND: " ∧ ", OR: " ∨ "}


# ------------------------------------------------------------- classifier

def classify(r, V, b) -> np.ndarray:
    """Action scores V r + b for one rule vector or a batch of them."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != V.shape[1]:
        raise ValueError(f"rule vector width {r.shape[-1]} does not match classifier width {V.shape[1]}")
    return r @ V.T + b


def softmax(scores):
    s = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def task_loss(scores, labels) -> float:
    """Mean cross-entropy of softmax(scores) at the given labels."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise ValueError(f"label out of range for {scores.shape[1]} actions")
    s = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s).sum(axis=1))
    return float((logz - s[np.arange(len(s)), labels]).mean())


def task_loss_grad(scores, labels) -> np.ndarray:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    g = softmax(scores)
    g[np.arange(len(g)), labels] -= 1.0
    return g / len(g)


def classify_backward(dscores, r, V):
    """(dr, dV, db) for scores = r V^T + b."""
    dscores = np.atleast_2d(dscores)
    r = np.atleast_2d(r)
    return dscores @ V, dscores.T @ r, dscores.sum(axis=0)


# ------------------------------------------------------------ expressions

@dataclass(frozen=True)
class Literal:
    concept: int
    negated: bool = False


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Op:
    op: str
    children: tuple


Expr = Union[Literal, Const, Op]


def _sort_key(e: Expr):
    if isinstance(e, Literal):
        return (0, e.concept, e.negated, "")
    if isinstance(e, Const):
        return (1, int(e.value), False, "")
    return (2, 0, False, to_prefix(e))


def make_op(op: str, children: Sequence[Expr]) -> Expr:
    """Canonical AND/OR node: same-operator children flattened, sorted.

    An empty AND is constant true, an empty OR constant false, and a single
    child stands for itself.
    """
    flat: list[Expr] = []
    for c in children:
        if isinstance(c, Op) and c.op == op:
            flat.extend(c.children)
        else:
            flat.append(c)
    if not flat:
        return Const(op == AND)
    if len(flat) == 1:
        return flat[0]
    return Op(op, tuple(sorted(flat, key=_sort_key)))


def evaluate(expr: Expr, concepts) -> np.ndarray:
    """Evaluate on binary concept vectors (n, |C|) or (|C|,)."""
    c = np.asarray(concepts)
    if isinstance(expr, Literal):
        v = c[..., expr.concept].astype(bool)
        return ~v if expr.negated else v
    if isinstance(expr, Const):
        return np.full(c.shape[:-1], expr.value, dtype=bool)
    vals = [evaluate(ch, c) for ch in expr.children]
    if expr.op == AND:
        return np.logical_and.reduce(vals)
    return np.logical_or.reduce(vals)


def literals(expr: Expr) -> set[Literal]:
    if isinstance(expr, Literal):
        return {expr}
    if isinstance(expr, Const):
        return set()
    out: set[Literal] = set()
    for ch in expr.children:
        out |= literals(ch)
    return out


def render(expr: Expr, names: Sequence[str] | None = None) -> str:
    """Infix text such as ``leg_jump ∧ ¬arm_swing``."""
    if isinstance(expr, Literal):
        name = names[expr.concept] if names is not None else f"c{expr.concept}"
        return f"¬{name}" if expr.negated else name
    if isinstance(expr, Const):
        return "TRUE" if expr.value else "FALSE"
    parts = []
    for ch in expr.children:
        txt = render(ch, names)
        parts.append(f"({txt})" if isinstance(ch, Op) else txt)
    return _SYMBOL[expr.op].join(parts)


def to_prefix(expr: Expr, names: Sequence[str] | None = None) -> str:
    if isinstance(expr, Literal):
        name = names[expr.concept] if names is not None else f"c{expr.concept}"
        return f"(not {name})" if expr.negated else name
    if isinstance(expr, Const):
        return "true" if expr.value else "false"
    return "(" + expr.op + " " + " ".join(to_prefix(ch, names) for ch in expr.children) + ")"


def parse_prefix(text: str, names: Sequence[str]) -> Expr:
    """Inverse of :func:`to_prefix` for names without spaces or parentheses."""
    index = {n: i for i, n in enumerate(names)}
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0

    def parse() -> Expr:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            head = tokens[pos]
            pos += 1
            args = []
            while tokens[pos] != ")":
                args.append(parse())
            pos += 1
            if head == "not":
                (lit,) = args
                return Literal(lit.concept, True)
            return Op(head, tuple(args))
        if tok in ("true", "false"):
            return Const(tok == "true")
        return Literal(index[tok], False)

    expr = parse()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens in rule {text!r}")
    return expr


# ------------------------------------------------------------- extraction

@dataclass
class Rule:
    rule_id: int
    expression: Expr
    source: tuple[int, int, str]

    @property
    def constant(self) -> bool | None:
        return self.expression.value if isinstance(self.expression, Const) else None


@dataclass
class RuleSet:
    rules: list[Rule]
    names: list[str]
    action_names: list[str] = field(default_factory=list)
    action_weights: list[list[tuple[int, float]]] = field(default_factory=list)
    bias: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rules)

    def text(self, rule_id: int) -> str:
        return render(self.rules[rule_id].expression, self.names)

    def evaluate(self, concepts) -> np.ndarray:
        """Rule activations (n, R) for binary concept vectors (n, |C|)."""
        c = np.atleast_2d(concepts)
        return np.stack([evaluate(r.expression, c) for r in self.rules], axis=1).astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "rules": [
                {
                    "id": r.rule_id,
                    "expr": to_prefix(r.expression, self.names),
                    "text": render(r.expression, self.names),
                    "constant": r.constant,
                    "source": {"layer": r.source[0], "node": r.source[1], "kind": r.source[2]},
                }
                for r in self.rules
            ],
            "actions": [
                {"name": name, "bias": None if self.bias is None else float(self.bias[a]),
                 "terms": [{"rule_id": j, "weight": w} for j, w in self.action_weights[a]]}
                for a, name in enumerate(self.action_names)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, names: Sequence[str]) -> "RuleSet":
        rules = [
            Rule(item["id"], parse_prefix(item["expr"], names),
                 (item["source"]["layer"], item["source"]["node"], item["source"]["kind"]))
            for item in data["rules"]
        ]
        actions = data.get("actions", [])
        bias = None
        if actions and all(a.get("bias") is not None for a in actions):
            bias = np.array([a["bias"] for a in actions])
        return cls(rules, list(names), [a["name"] for a in actions],
                   [[(t["rule_id"], t["weight"]) for t in a["terms"]] for a in actions], bias)


def extract_rules(network: LogicNetwork, vocabulary: ConceptVocabulary | Sequence[str],
                  V=None, b=None, action_names: Sequence[str] | None = None) -> RuleSet:
    """Trace binarized switchboards back to expressions over concept literals.

    With classifier weights ``V`` (|A| x R), every action also gets its
    nonzero rule weights sorted by magnitude.
    """
    names = vocabulary.names if isinstance(vocabulary, ConceptVocabulary) else list(vocabulary)
    C = network.n_concepts
    if len(names) != C:
        raise ValueError(f"{len(names)} concept names for a network over {C} concepts")

    if network.negation:
        preds: list[Expr] = [Literal(i) for i in range(C)] + [Literal(i, True) for i in range(C)]
    else:
        preds = [Literal(i) for i in range(C)]

    wa, wo = network.binary_weights()
    inputs = preds
    layer_exprs: list[list[Expr]] = []
    for l in range(network.n_layers):
        ands = [make_op(AND, [inputs[j] for j in np.flatnonzero(row)]) for row in wa[l]]
        ors = [make_op(OR, [inputs[j] for j in np.flatnonzero(row)]) for row in wo[l]]
        out = ands + ors
        layer_exprs.append(out)
        inputs = out + preds if network.skip else out

    slots = (preds + [e for layer in layer_exprs for e in layer]) if network.skip else layer_exprs[-1]
    rules = [Rule(j, e, src) for j, (e, src) in enumerate(zip(slots, network.slot_sources()))]

    weights: list[list[tuple[int, float]]] = []
    if V is not None:
        V = np.asarray(V, dtype=np.float64)
        if V.shape[1] != len(rules):
            raise ValueError(f"classifier width {V.shape[1]} does not match {len(rules)} rules")
        for row in V:
            nz = np.flatnonzero(row)
            order = nz[np.lexsort((nz, -np.abs(row[nz])))]
            weights.append([(int(j), float(row[j])) for j in order])
        if action_names is None:
            action_names = [f"action_{a}" for a in range(len(V))]
    return RuleSet(rules, names, list(action_names or []), weights,
                   None if b is None else np.asarray(b, dtype=np.float64))


# ----------------------------------------------------------- explanations

@dataclass
class ActionExplanation:
    action: str
    terms: list[tuple[str, float, int]]   # (expression text, weight, rule id)

    def render(self) -> str:
        if not self.terms:
            return f"{self.action} ← 0"
        pieces = []
        for i, (_, w, j) in enumerate(self.terms):
            sign = "−" if w < 0 else "+"
            mag = f"{abs(w):.2f}·r{j}"
            pieces.append(("−" + mag if w < 0 else mag) if i == 0 else f"{sign} {mag}")
        return f"{self.action} ← " + " ".join(pieces)


def explain_action(ruleset: RuleSet, action, top_k: int = 5) -> ActionExplanation:
    """Top-k rules of an action by |weight|, as a weighted sum."""
    a = ruleset.action_names.index(action) if isinstance(action, str) else int(action)
    if not 0 <= a < len(ruleset.action_weights):
        raise ValueError(f"unknown action {action!r}")
    top_k = max(0, min(int(top_k), len(ruleset.rules)))
    terms = [(ruleset.text(j), w, j) for j, w in ruleset.action_weights[a][:top_k]]
    return ActionExplanation(ruleset.action_names[a], terms)


def explain_instance(c_hat, r, scores, ruleset: RuleSet, V, b, true_label=None,
                     top_concepts: int | None = None) -> dict:
    """Per-sample report: concepts by activation and the fired rules' weights."""
    c_hat = np.asarray(c_hat, dtype=np.float64)
    r = np.asarray(r)
    scores = np.asarray(scores, dtype=np.float64)
    pred = int(np.argmax(scores))
    order = np.lexsort((np.arange(len(c_hat)), -c_hat))
    if top_concepts is not None:
        order = order[:top_concepts]
    fired = np.flatnonzero(r > 0.5)
    names = ruleset.action_names
    return {
        "predicted": pred,
        "predicted_name": names[pred] if names else None,
        "true": None if true_label is None else int(true_label),
        "true_name": None if true_label is None or not names else names[int(true_label)],
        "scores": [float(s) for s in scores],
        "concepts": [{"id": int(i), "name": ruleset.names[i], "activation": float(c_hat[i])} for i in order],
        "fired_rules": [
            {"rule_id": int(j), "weight": float(V[pred, j]), "expr": ruleset.text(int(j))} for j in fired
        ],
        "bias": float(b[pred]),
    }
