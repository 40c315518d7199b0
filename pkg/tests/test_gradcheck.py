import pytest

from conceptlogic.gradcheck import (
    COMPONENTS,
    TOLERANCE,
    check_component,
    finite_diff_check,
    numeric_grad,
    relative_error,
)

import numpy as np


@pytest.mark.parametrize("name", sorted(COMPONENTS))
def test_component_below_tolerance(name):
    report = check_component(name, points=3, seed=1)
    assert len(report.points) == 3
    assert report.passed(), report.max_error


def test_classifier_tighter_bound():
    assert finite_diff_check("classifier", seed=2) < 1e-6


def test_unknown_component():
    with pytest.raises(KeyError):
        finite_diff_check("warp_drive")


def test_seeded_points_are_reproducible():
    assert check_component("align", 2, 5).points == check_component("align", 2, 5).points


def test_numeric_grad_on_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    g = numeric_grad(lambda: float((x ** 2).sum()), x)
    np.testing.assert_allclose(g, 2 * x, rtol=1e-9)
    assert relative_error({"x": 2 * x}, {"x": g}) < 1e-9
    assert TOLERANCE == 1e-5
