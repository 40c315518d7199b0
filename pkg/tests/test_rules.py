import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conceptlogic import rules as rl
from conceptlogic.logic import LogicNetwork, augment_predicates, forward_discrete

from fd import central_diff, rel_err
from nets import all_binary, random_binary_network


def test_identity_classifier():
    V = np.eye(3)
    assert rl.classify(np.array([0, 1.0, 0]), V, np.zeros(3)).tolist() == [0, 1, 0]
    with pytest.raises(ValueError):
        rl.classify(np.ones(4), V, np.zeros(3))


def test_equal_logits_loss():
    assert rl.task_loss(np.array([[2.0, 2.0]]), [1]) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        rl.task_loss(np.zeros((1, 2)), [2])


def test_classifier_gradients():
    rng = np.random.default_rng(0)
    r, V, b = rng.random((4, 6)), rng.normal(size=(3, 6)), rng.normal(size=3)
    y = np.array([0, 2, 1, 2])
    f = lambda: rl.task_loss(rl.classify(r, V, b), y)
    ds = rl.task_loss_grad(rl.classify(r, V, b), y)
    dr, dV, db = rl.classify_backward(ds, r, V)
    assert rel_err(dV, central_diff(f, V)) < 1e-6
    assert rel_err(db, central_diff(f, b)) < 1e-6
    assert rel_err(dr, central_diff(f, r)) < 1e-6
    onehot = np.eye(3)[y]
    np.testing.assert_allclose(dV, (rl.softmax(rl.classify(r, V, b)) - onehot).T @ r / 4)


@given(st.integers(0, 10 ** 6))
def test_classify_affine_and_bias_shift(seed):
    rng = np.random.default_rng(seed)
    V, b = rng.normal(size=(3, 5)), rng.normal(size=3)
    r1, r2 = rng.random(5), rng.random(5)
    lhs = rl.classify(r1 + r2, V, b) - rl.classify(r1, V, b) - rl.classify(r2, V, b) + rl.classify(np.zeros(5), V, b)
    np.testing.assert_allclose(lhs, 0, atol=1e-12)
    assert np.argmax(rl.classify(r1, V, b)) == np.argmax(rl.classify(r1, V, b + 7.5))


def one_node_network(C, and_row):
    wa = np.array([and_row], dtype=np.float64)
    return LogicNetwork(C, [wa], [np.zeros_like(wa)], skip=False)


def test_and_row_renders_with_negation():
    C = 4
    row = np.zeros(2 * C)
    row[1] = row[C + 3] = 1
    rs = rl.extract_rules(one_node_network(C, row), [f"c{i}" for i in range(C)])
    assert rs.text(0) == "c1 ∧ ¬c3"
    assert rl.to_prefix(rs.rules[0].expression, rs.names) == "(and c1 (not c3))"
    assert rs.rules[1].constant is False


def test_vacuous_and_is_flagged_true():
    rs = rl.extract_rules(one_node_network(2, np.zeros(4)), ["a", "b"])
    assert rs.rules[0].constant is True and rs.text(0) == "TRUE"


def test_canonical_flattening():
    a, b, c = rl.Literal(2), rl.Literal(0), rl.Literal(1, True)
    e = rl.make_op(rl.AND, [a, rl.make_op(rl.AND, [c, b])])
    assert rl.render(e) == "c0 ∧ ¬c1 ∧ c2"


def check_fidelity(net):
    C = net.n_concepts
    concepts = all_binary(C)
    r, _ = forward_discrete(augment_predicates(concepts, net.negation), net)
    rs = rl.extract_rules(net, [f"k{i}" for i in range(C)])
    return np.array_equal(rs.evaluate(concepts), r)


@pytest.mark.parametrize("seed", range(8))
def test_extraction_fidelity(seed):
    rng = np.random.default_rng(seed)
    net = random_binary_network(rng, int(rng.integers(1, 9)), [int(rng.integers(1, 17)), int(rng.integers(1, 17))],
                                skip=seed % 3 != 0, negation=seed % 4 != 1, density=0.15)
    assert check_fidelity(net)


def test_prefix_round_trip():
    rng = np.random.default_rng(5)
    net = random_binary_network(rng, 5, [6, 4], density=0.2)
    names = ["leg_jump", "arm_swing", "hand_wave", "head_nod", "motion_up"]
    rs = rl.extract_rules(net, names, rng.normal(size=(3, net.output_width)), np.zeros(3), ["A", "B", "C"])
    data = json.loads(json.dumps(rs.to_dict()))
    back = rl.RuleSet.from_dict(data, names)
    assert all(x.expression == y.expression for x, y in zip(rs.rules, back.rules))
    assert back.action_weights == rs.action_weights
    with pytest.raises(ValueError):
        rl.parse_prefix("leg_jump arm_swing", names)


def test_action_weights_sorted_by_magnitude():
    net = random_binary_network(np.random.default_rng(0), 2, [2, 2])
    V = np.zeros((2, net.output_width))
    V[0, [1, 3, 5]] = [0.2, -0.9, 0.5]
    rs = rl.extract_rules(net, ["a", "b"], V)
    assert rs.action_weights[0] == [(3, -0.9), (5, 0.5), (1, 0.2)]
    assert rs.action_weights[1] == []


def test_explain_action_single_and_clamped():
    net = random_binary_network(np.random.default_rng(0), 2, [2, 2])
    V = np.zeros((1, net.output_width))
    V[0, 2] = 0.82
    rs = rl.extract_rules(net, ["a", "b"], V, action_names=["Jump"])
    ex = rl.explain_action(rs, "Jump", top_k=1000)
    assert len(ex.terms) == 1 and ex.render() == "Jump ← 0.82·r2"


def test_explain_render_signs():
    ex = rl.ActionExplanation("Jump", [("x", 0.82, 1), ("y", 0.45, 3), ("z", -0.31, 7)])
    assert ex.render() == "Jump ← 0.82·r1 + 0.45·r3 − 0.31·r7"


def test_explain_permutation_equivariance():
    rng = np.random.default_rng(1)
    net = random_binary_network(rng, 3, [3, 3])
    V = rng.normal(size=(1, net.output_width))
    rs = rl.extract_rules(net, ["a", "b", "c"], V)
    full = {(t, w) for t, w, _ in rl.explain_action(rs, 0, net.output_width).terms}
    perm = rng.permutation(net.output_width)
    shuffled = rl.RuleSet([rl.Rule(i, rs.rules[j].expression, rs.rules[j].source) for i, j in enumerate(perm)],
                          rs.names)
    Vp = V[:, perm]
    for row in Vp:
        nz = np.flatnonzero(row)
        shuffled.action_weights.append([(int(j), float(row[j])) for j in nz[np.argsort(-np.abs(row[nz]))]])
    shuffled.action_names = ["action_0"]
    again = {(t, w) for t, w, _ in rl.explain_action(shuffled, 0, net.output_width).terms}
    assert full == again


def test_explain_instance_fired_rules_and_bias_only():
    rng = np.random.default_rng(2)
    net = random_binary_network(rng, 3, [2, 2])
    V, b = rng.normal(size=(2, net.output_width)), np.array([0.3, -0.1])
    rs = rl.extract_rules(net, ["a", "b", "c"], V, b)
    r = np.zeros(net.output_width)
    report = rl.explain_instance(np.array([0.2, 0.9, 0.5]), r, b, rs, V, b)
    assert report["fired_rules"] == [] and report["bias"] == 0.3
    r[[1, 4]] = 1
    report = rl.explain_instance(np.array([0.2, 0.9, 0.5]), r, rl.classify(r, V, b), rs, V, b, true_label=1)
    assert {f["rule_id"] for f in report["fired_rules"]} == {1, 4}
    assert [c["id"] for c in report["concepts"]] == [1, 2, 0]
    assert json.loads(json.dumps(report)) == report
