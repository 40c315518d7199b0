import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conceptlogic import decoder as dec
from conceptlogic.fixtures import fixture_vocabulary

from fd import central_diff, rel_err

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_decouple_example():
    F = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
    Fs, Ft = dec.decouple(F)
    np.testing.assert_allclose(Fs.ravel(), [2, 3])
    np.testing.assert_allclose(Ft.ravel(), [1.5, 3.5])


def test_decouple_constant():
    Fs, Ft = dec.decouple(np.full((4, 5, 3), 2.5))
    assert np.all(Fs == 2.5) and np.all(Ft == 2.5)


@given(arrays(np.float64, (3, 4, 2), elements=finite), arrays(np.float64, (3, 4, 2), elements=finite),
       finite, finite)
def test_decouple_linear_and_means_agree(F, G, a, b):
    Fs, Ft = dec.decouple(F)
    assert math.isclose(Fs.mean(), Ft.mean(), abs_tol=1e-12)
    Hs, Ht = dec.decouple(a * F + b * G)
    Gs, Gt = dec.decouple(G)
    np.testing.assert_allclose(Hs, a * Fs + b * Gs, atol=1e-10)
    np.testing.assert_allclose(Ht, a * Ft + b * Gt, atol=1e-10)


def test_zero_query_gives_column_mean():
    X = np.random.default_rng(0).normal(size=(1, 7, 4))
    ctx, _ = dec.attention(np.zeros((2, 4)), X)
    np.testing.assert_allclose(ctx[0], np.tile(X[0].mean(axis=0), (2, 1)))


def test_identical_rows_give_that_row():
    rng = np.random.default_rng(1)
    row = rng.normal(size=4)
    ctx, _ = dec.attention(rng.normal(size=(3, 4)) * 5, np.tile(row, (1, 6, 1)))
    np.testing.assert_allclose(ctx[0], np.tile(row, (3, 1)))


def branch(rng, D=4, H=6, G=3, g=2):
    return {"q": rng.normal(size=(G, D)), "ln1_g": 1 + 0.1 * rng.normal(size=D), "ln1_b": rng.normal(size=D),
            "w1": rng.normal(size=(D, H)), "b1": rng.normal(size=H), "w2": rng.normal(size=(H, D)),
            "b2": rng.normal(size=D), "ln2_g": 1 + 0.1 * rng.normal(size=D), "ln2_b": rng.normal(size=D),
            "wg": rng.normal(size=(G, D, g))}


@pytest.mark.parametrize("seed", range(3))
def test_cross_attend_gradients(seed):
    rng = np.random.default_rng(seed)
    bp = branch(rng)
    X = rng.normal(size=(2, 5, 4))
    probe = rng.normal(size=(2, 3, 4))

    def f():
        return float((dec.cross_attend(bp["q"], X, bp)[0] * probe).sum())

    _, cache = dec.cross_attend(bp["q"], X, bp)
    grads, dX = dec.cross_attend_backward(probe, cache, bp)
    assert rel_err(dX, central_diff(f, X)) < 1e-6
    for k in ("q", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b"):
        assert rel_err(grads[k], central_diff(f, bp[k])) < 1e-6, k


def test_multi_head_attention_gradients():
    rng = np.random.default_rng(5)
    Q, X = rng.normal(size=(3, 8)), rng.normal(size=(2, 5, 8))
    probe = rng.normal(size=(2, 3, 8))
    f = lambda: float((dec.attention(Q, X, 4)[0] * probe).sum())
    dQ, dX = dec.attention_backward(probe, dec.attention(Q, X, 4)[1])
    assert rel_err(dQ, central_diff(f, Q)) < 1e-6
    assert rel_err(dX, central_diff(f, X)) < 1e-6


def test_group_slot_example():
    g = math.ceil(51 / 8)
    assert g == 7
    assert dec.group_slot(10, g) == (1, 3)


def test_group_fc_formula_and_zero_weights():
    rng = np.random.default_rng(2)
    Qr, W = rng.normal(size=(3, 4)), rng.normal(size=(3, 4, 2))
    out = dec.group_fc(Qr, W, 5)
    for i in range(5):
        k, j = dec.group_slot(i, 2)
        assert out[i] == pytest.approx(Qr[k] @ W[k][:, j])
    assert np.all(dec.group_fc(Qr, np.zeros_like(W), 5) == 0)
    with pytest.raises(ValueError):
        dec.group_fc(Qr, W, 7)


def test_group_locality():
    rng = np.random.default_rng(3)
    G, D, g, count = 3, 4, 3, 8
    Qr, W = rng.normal(size=(1, G, D)), rng.normal(size=(G, D, g))
    for i in range(count):
        dl = np.zeros((1, count))
        dl[0, i] = 1.0
        dQr, dW = dec.group_fc_backward(dl, Qr, W)
        k = i // g
        for other in range(G):
            if other != k:
                assert np.all(dW[other] == 0) and np.all(dQr[0, other] == 0)
    # perturbing one group's query only moves that group's logits
    base = dec.group_fc(Qr, W, count)
    Qp = Qr.copy()
    Qp[0, 1] += 1.0
    changed = np.flatnonzero(dec.group_fc(Qp, W, count) != base)
    assert set(changed) <= {3, 4, 5}


def layout_for(vocab, D=8, H=12, Gs=4, Gt=2):
    return dec.DecoderLayout(D, H, Gs, Gt, tuple(vocab.spatial_ids), tuple(vocab.sequence_ids))


@pytest.mark.parametrize("fixture, size", [("desk67", 67), ("ntu74", 74)])
def test_output_length_and_zero_params(fixture, size):
    lay = layout_for(fixture_vocabulary(fixture))
    params = dec.init_decoder_params(lay, np.random.default_rng(0))
    F = np.random.default_rng(1).normal(size=(2, 5, 6, 8))
    soft, logits = dec.predict_concepts(F, params, lay)
    assert soft.shape == (2, size)
    np.testing.assert_allclose(soft, dec.sigmoid(logits))
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    soft0, _ = dec.predict_concepts(F, zero, lay)
    assert np.all(soft0 == 0.5)


def test_layout_group_sizes():
    lay = layout_for(fixture_vocabulary("desk67"), Gs=8, Gt=4)
    assert lay.group_size_spatial == 7 and lay.group_size_sequence == 4
    assert lay.group_size_spatial * 8 >= 51 and lay.group_size_sequence * 4 >= 16


def test_batch_permutation_equivariance():
    vocab = fixture_vocabulary("desk67")
    lay = layout_for(vocab)
    params = dec.init_decoder_params(lay, np.random.default_rng(0))
    F = np.random.default_rng(1).normal(size=(5, 4, 6, 8))
    perm = np.array([3, 0, 4, 1, 2])
    a, _ = dec.predict_concepts(F, params, lay)
    b, _ = dec.predict_concepts(F[perm], params, lay)
    np.testing.assert_allclose(b, a[perm], atol=1e-14)


def test_full_decoder_gradient():
    from conceptlogic.world import planted_vocabulary
    vocab = planted_vocabulary(7, n_temporal=2)
    lay = dec.DecoderLayout(4, 5, 2, 2, tuple(vocab.spatial_ids), tuple(vocab.sequence_ids))
    rng = np.random.default_rng(4)
    params = dec.init_decoder_params(lay, rng)
    F = rng.normal(size=(2, 3, 6, 4))
    target = rng.integers(0, 2, size=(2, 7))

    def f():
        return dec.concept_loss(dec.predict_concepts(F, params, lay)[0], target)

    Fs, Ft = dec.decouple(F)
    logits, caches = dec.decode_views(Fs, Ft, params, lay)
    c = dec.sigmoid(logits)
    dlog = dec.concept_loss_grad(c, target) * c * (1 - c)
    grads, dFs, dFt = dec.decode_views_backward(dlog, caches, params, lay)
    for k in sorted(params):
        assert rel_err(grads[k], central_diff(f, params[k])) < 1e-6, k
    dF = dFs[:, None] / F.shape[1] + dFt[:, :, None] / F.shape[2]
    assert rel_err(dF, central_diff(f, F)) < 1e-6


def test_bce_examples():
    assert dec.concept_loss(np.full(6, 0.5), np.array([0, 1, 0, 1, 1, 0])) == pytest.approx(math.log(2))
    t = np.array([0, 1, 1, 0])
    assert dec.concept_loss(t.astype(float), t) <= -math.log(1 - dec.BCE_EPS) + 1e-15


@settings(max_examples=30)
@given(arrays(np.float64, 6, elements=st.floats(0.001, 0.999)), arrays(np.int64, 6, elements=st.integers(0, 1)))
def test_bce_matches_scalar_formula(c, t):
    expected = sum(-(ti * math.log(ci) + (1 - ti) * math.log(1 - ci)) for ci, ti in zip(c, t)) / 6
    assert dec.concept_loss(c, t) == pytest.approx(expected, rel=1e-12)
    g = central_diff(lambda: dec.concept_loss(c, t), c, 1e-7)
    assert rel_err(dec.concept_loss_grad(c, t), g) < 1e-5


def test_divergence_examples():
    part_index = np.array([0, 0, 1, 1, 2])
    same = np.tile(np.array([1.0, 2.0, 0.5]), (3, 5, 1))
    assert dec.part_divergence_loss(same, part_index) == pytest.approx(1.0)
    pooled_orth = np.eye(3)[None]
    assert dec.divergence_from_pooled(pooled_orth) == 0.0
    anti = np.array([[[1.0, 0.0], [-1.0, 0.0]]])
    assert dec.divergence_from_pooled(anti) == 0.0
    zero = np.array([[[0.0, 0.0], [1.0, 1.0]]])
    assert dec.divergence_from_pooled(zero) == 0.0


def test_divergence_requires_every_part():
    with pytest.raises(ValueError):
        dec.part_pool(np.zeros((1, 2, 3, 2)), np.array([0, 0, 2]), 3)


@pytest.mark.parametrize("seed", range(3))
def test_divergence_gradient(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(2, 3, 6, 4))
    part_index = np.array([0, 0, 1, 1, 2, 2])
    f = lambda: dec.part_divergence_loss(F, part_index, 3)
    pooled = dec.part_pool(F, part_index, 3)
    dF = dec.part_pool_backward(dec.divergence_grad(pooled), part_index, F.shape)
    assert rel_err(dF, central_diff(f, F)) < 1e-6


def test_layernorm_gradient():
    rng = np.random.default_rng(0)
    x, g, b = rng.normal(size=(2, 3, 5)), rng.normal(size=5), rng.normal(size=5)
    probe = rng.normal(size=(2, 3, 5))
    f = lambda: float((dec.layer_norm(x, g, b)[0] * probe).sum())
    dx, dg, db = dec.layer_norm_backward(probe, dec.layer_norm(x, g, b)[1])
    assert rel_err(dx, central_diff(f, x)) < 1e-6
    assert rel_err(dg, central_diff(f, g)) < 1e-6
    assert rel_err(db, central_diff(f, b)) < 1e-6


def test_layout_rejects_bad_heads():
    with pytest.raises(ValueError):
        dec.DecoderLayout(6, 4, 2, 2, (0,), (1,), n_heads=4)
