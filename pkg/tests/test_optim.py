import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conceptlogic.optim import (
    AdamWHyper,
    AdamWState,
    NonFiniteGradientError,
    adamw_step,
    clip_by_global_norm,
    cosine_multiplier,
    global_norm,
    warmup_schedule,
)


def test_zero_gradient_no_decay_is_noop():
    p = {"w": np.array([1.5, -2.0])}
    adamw_step(p, {"w": np.zeros(2)}, AdamWState(), 0.1, AdamWHyper(weight_decay=0.0))
    assert p["w"].tolist() == [1.5, -2.0]


def test_first_step_hand_recurrence():
    p = {"w": np.array([0.0])}
    hyper = AdamWHyper(weight_decay=0.0)
    adamw_step(p, {"w": np.array([1.0])}, AdamWState(), 0.1, hyper)
    m_hat = (1 - 0.9) * 1.0 / (1 - 0.9)
    v_hat = (1 - 0.999) * 1.0 / (1 - 0.999)
    assert p["w"][0] == pytest.approx(-0.1 * m_hat / (math.sqrt(v_hat) + 1e-8), rel=1e-12)
    assert p["w"][0] == pytest.approx(-0.1, rel=1e-6)


def test_decay_is_decoupled_and_applied_first():
    p = {"w": np.array([2.0])}
    adamw_step(p, {"w": np.array([0.0])}, AdamWState(), 0.1, AdamWHyper(weight_decay=0.5))
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.05))


def test_clamp_contract():
    p = {"logic.and.0": np.array([0.99]), "dec.q": np.array([0.99])}
    g = {"logic.and.0": np.array([-1.0]), "dec.q": np.array([-1.0])}
    adamw_step(p, g, AdamWState(), 0.03, AdamWHyper(weight_decay=0.0), clamp=("logic.",))
    assert p["logic.and.0"][0] == 1.0
    assert p["dec.q"][0] == pytest.approx(1.02)


def test_non_finite_gradient_aborts():
    p = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError, match="w"):
        adamw_step(p, {"w": np.array([np.nan, 0.0])}, AdamWState(), 0.1)
    with pytest.raises(FloatingPointError):
        clip_by_global_norm({"w": np.array([np.inf])})


@given(st.dictionaries(st.sampled_from("abc"), arrays(np.float64, 3, elements=st.floats(-1e4, 1e4)), min_size=1),
       st.floats(0.1, 10))
def test_clip_bound(grads, max_norm):
    clipped, norm = clip_by_global_norm(grads, max_norm)
    assert global_norm(clipped) <= max_norm * (1 + 1e-12) + 1e-12
    assert norm == pytest.approx(global_norm(grads))
    if norm <= max_norm:
        assert all(clipped[k] is grads[k] for k in grads)


def test_cosine_endpoints():
    assert cosine_multiplier(1, 200) == 1.0
    assert cosine_multiplier(200, 200) < 1e-3
    with pytest.raises(ValueError):
        cosine_multiplier(0, 10)


def test_warmup_plan():
    assert warmup_schedule(3, 200, 1e-5, 1e-4).logic_frozen
    assert not warmup_schedule(3, 200, 1e-5, 1e-4).task_to_decoder
    assert warmup_schedule(6, 200, 1e-5, 1e-4).task_to_decoder
    assert warmup_schedule(15, 200, 1e-5, 1e-4).logic_frozen
    late = warmup_schedule(16, 200, 1e-5, 1e-4)
    assert not late.logic_frozen and late.trainable == {"encoder", "logic", "classifier"}
    assert late.lr["logic"] / late.lr["encoder"] == pytest.approx(10)
    assert warmup_schedule(200, 200, 1e-5, 1e-4).lr["encoder"] < 1e-8


def test_state_arrays():
    s = AdamWState()
    adamw_step({"w": np.zeros(2)}, {"w": np.ones(2)}, s, 0.1)
    assert set(s.to_arrays()) == {"adam.m.w", "adam.v.w"} and s.steps == {"w": 1}
