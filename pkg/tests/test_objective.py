import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conceptlogic.objective import COMPONENTS, LossWeights, align_loss, align_loss_grad, total_loss

from fd import central_diff, rel_err


def test_defaults():
    assert LossWeights() == LossWeights(1.0, 0.1, 1.0, 1e-6)
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)


def test_task_only():
    parts = {"l_task": 0.7, "l_concept": 3.0, "l_align": 2.0, "l_div": 1.0, "l_sparsity": 500.0}
    assert total_loss(parts, LossWeights(0, 0, 0, 0)) == 0.7


@given(st.lists(st.floats(0, 100), min_size=5, max_size=5), st.lists(st.floats(0, 2), min_size=4, max_size=4))
def test_weighted_sum_exact(vals, w):
    parts = dict(zip(COMPONENTS, vals))
    weights = LossWeights(*w)
    expected = vals[0] + w[0] * vals[1] + w[1] * vals[2] + w[2] * vals[3] + w[3] * vals[4]
    assert total_loss(parts, weights) == expected
    doubled = {k: 2 * v for k, v in parts.items()}
    assert total_loss(doubled, weights) == pytest.approx(2 * expected)


def test_non_finite_component():
    parts = dict.fromkeys(COMPONENTS, 0.0)
    parts["l_div"] = float("nan")
    with pytest.raises(FloatingPointError):
        total_loss(parts)


def test_align_examples():
    rng = np.random.default_rng(0)
    assert align_loss(rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), 0.07) == pytest.approx(0.0, abs=1e-15)
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert align_loss(z, z, 0.5) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        align_loss(np.zeros((0, 2)), np.zeros((0, 2)), 1.0)
    with pytest.raises(ValueError):
        align_loss(z, z, 0.0)


def test_align_matches_scalar_formula():
    rng = np.random.default_rng(1)
    z, t, tau = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), 0.3
    total = 0.0
    for i in range(4):
        s = [float(z[i] @ t[j]) / tau for j in range(4)]
        total -= s[i] - math.log(sum(math.exp(x) for x in s))
    assert align_loss(z, t, tau) == pytest.approx(total / 4, rel=1e-12)


def test_align_gradients():
    rng = np.random.default_rng(2)
    z, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    lt = np.array(math.log(0.5))
    f = lambda: align_loss(z, t, math.exp(float(lt)))
    dz, dt, dl = align_loss_grad(z, t, float(lt))
    assert rel_err(dz, central_diff(f, z)) < 1e-6
    assert rel_err(dt, central_diff(f, t)) < 1e-6
    lt_arr = lt.reshape(1)
    g = central_diff(lambda: align_loss(z, t, math.exp(lt_arr[0])), lt_arr)
    assert rel_err(dl, g) < 1e-6
