import json

import numpy as np
import pytest
from sklearn.base import clone

from conceptlogic import network as nw
from conceptlogic.checkpoint import CheckpointError, config_hash, load_checkpoint, load_model, save_model
from conceptlogic.model import ConceptLogicClassifier

from tiny import tiny_model, tiny_world


@pytest.fixture(scope="module")
def trained():
    world, train, test = tiny_world()
    model = tiny_model(world, epochs=8).fit(train.features, train.labels, world.text_embeddings,
                                            eval_set=(test.features, test.labels))
    return world, train, test, model


def test_params_and_clone():
    world, *_ = tiny_world()
    m = tiny_model(world)
    c = clone(m)
    assert c.get_params()["nodes"] == (6, 6) and c.get_params()["lam"] == 1e-6
    assert not hasattr(c, "params_")


def test_predict_api_shapes(trained):
    world, _, test, m = trained
    X = test.features[:5]
    assert m.predict(X).shape == (5,)
    proba = m.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert m.transform(X).shape == (5, 8)
    assert set(np.unique(m.predict_concepts(X))) <= {0.0, 1.0}
    assert m.rule_activations(X).shape == (5, m.logic_network_.output_width)
    assert 0 <= m.score(test.features, test.labels) <= 1
    assert m.predict(test.features[0]).shape == (1,)


def test_evaluate_matches_history(trained):
    _, _, test, m = trained
    ev = m.evaluate(test.features, test.labels)
    assert ev["acc"] == m.history_[-1]["acc"] and ev["concept_f1"] == m.history_[-1]["concept_f1"]


def test_rules_agree_with_network(trained):
    _, _, test, m = trained
    rs = m.extract_rules()
    c_bar = m.predict_concepts(test.features)
    np.testing.assert_array_equal(rs.evaluate(c_bar), m.rule_activations(test.features))
    np.testing.assert_array_equal(m.predict_from_concepts(c_bar), m.predict(test.features))


def test_explain_report(trained):
    _, _, test, m = trained
    rep = m.explain(test.features, 2, test.labels, top_concepts=3)
    assert rep["true"] == int(test.labels[2]) and len(rep["concepts"]) == 3
    fired = set(np.flatnonzero(m.rule_activations(test.features[2:3])[0]))
    assert {f["rule_id"] for f in rep["fired_rules"]} == fired
    with pytest.raises(IndexError):
        m.explain(test.features, 10 ** 4)


def test_intervention_level_zero_matches_predict(trained):
    _, _, test, m = trained
    res = m.intervention_curve(test.features, test.labels, 3)
    assert res.accuracy[0] == pytest.approx(float((m.predict(test.features) == test.labels).mean()))


def test_untrained_model_near_chance():
    world, train, test = tiny_world(3, n_train=32, n_test=400)
    m = tiny_model(world, epochs=1).fit(train.features, train.labels)
    res = m.intervention_curve(test.features, test.labels, 2)
    # zero classifier: every sample gets action 0
    assert res.accuracy[0] == pytest.approx((test.labels == 0).mean())


def test_validation_errors():
    world, train, _ = tiny_world()
    with pytest.raises(ValueError):
        ConceptLogicClassifier().fit(train.features, train.labels)
    with pytest.raises(ValueError):
        tiny_model(world).fit(train.features, train.labels[:-1])
    with pytest.raises(ValueError):
        tiny_model(world).fit(train.features, np.full(len(train.labels), 9))
    with pytest.raises(ValueError):
        tiny_model(world).fit(train.features[:, :, :, 0], train.labels)
    with pytest.raises(ValueError):
        tiny_model(world, random_state=np.random.default_rng(0)).fit(train.features, train.labels)


def test_string_labels():
    world, train, _ = tiny_world()
    names = np.array(world.matrix.action_names)[train.labels]
    m = tiny_model(world, epochs=1).fit(train.features, names)
    with pytest.raises(ValueError):
        tiny_model(world, epochs=1).fit(train.features, np.array(["nope"] * len(names)))
    assert m.predict(train.features[:3]).dtype.kind == "i"


def test_checkpoint_round_trip(trained, tmp_path):
    world, _, test, m = trained
    cfg = {"seed": 0, "note": "x"}
    save_model(m, tmp_path / "ck", cfg, m.rng_streams_)
    back = load_model(tmp_path / "ck")
    assert back.manifest_["config_hash"] == config_hash(cfg)
    for k, v in m.params_.items():
        np.testing.assert_array_equal(back.params_[k], v.astype(np.float32).astype(np.float64))
    agree = (back.predict(test.features) == m.predict(test.features)).mean()
    assert agree >= 0.95
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert {"schema_version", "config", "config_hash", "seed", "epoch", "rng_state", "tensors"} <= set(manifest)
    assert manifest["epoch"] == 8


def test_checkpoint_corruption_detected(trained, tmp_path):
    *_, m = trained
    save_model(m, tmp_path, {"seed": 0})
    blob = tmp_path / "tensors.bin"
    data = bytearray(blob.read_bytes())
    data[0] ^= 0xFF
    blob.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")


def test_config_hash_is_order_free():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
