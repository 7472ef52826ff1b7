import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cropmesh.maxmin import is_max_min_fair, max_min_fair, per_device_fair


def test_symmetric_bottleneck():
    # two identical flows through one unit-capacity node carrying T = 40 Mbps
    x = max_min_fair([[1 / 40], [1 / 40]], 1.0, [100, 100])
    assert x == pytest.approx([20, 20])


def test_caps_release_capacity():
    x = max_min_fair([[1.0], [1.0], [1.0]], 9.0, [1.0, 10.0, 10.0])
    assert x == pytest.approx([1.0, 4.0, 4.0])


def test_classic_parking_lot():
    # flow 0 crosses both links, flows 1 and 2 one each; link 1 is tighter
    coef = [[1, 1], [1, 0], [0, 1]]
    x = max_min_fair(coef, [10, 4], [np.inf] * 3)
    assert x == pytest.approx([2, 8, 2])
    assert is_max_min_fair(coef, [10, 4], np.inf, x)
    assert not is_max_min_fair(coef, [10, 4], np.inf, [1, 9, 3])


def test_unbounded_and_empty():
    assert max_min_fair(np.zeros((0, 2)), 1.0, []).shape == (0,)
    with pytest.raises(ValueError, match="unbounded"):
        max_min_fair([[0.0]], 1.0, [np.inf])


coefs = arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)),
               elements=st.sampled_from([0.0, 0.0, 0.01, 0.05, 0.1, 0.3, 1.0]))


@settings(max_examples=300, deadline=None)
@given(coefs, st.lists(st.floats(0.5, 50), min_size=6, max_size=6))
def test_progressive_filling_is_max_min(coef, caps):
    caps = np.array(caps[: coef.shape[0]])
    x = max_min_fair(coef, 1.0, caps)
    assert np.all(coef.T @ x <= 1.0 + 1e-9)
    assert np.all(x <= caps + 1e-9) and np.all(x >= 0)
    assert is_max_min_fair(coef, 1.0, caps, x)


@settings(max_examples=300, deadline=None)
@given(coefs, st.lists(st.floats(0.5, 50), min_size=6, max_size=6))
def test_per_device_feasible_and_dominated(coef, caps):
    caps = np.array(caps[: coef.shape[0]])
    x = per_device_fair(coef, 1.0, caps)
    assert np.all(coef.T @ x <= 1.0 + 1e-9)
    assert np.all(x <= caps + 1e-12) and np.all(x >= 0)


def test_per_device_wastes_upstream_share():
    # flow 0 is stuck behind link 1; link 0 still reserves it half
    coef = [[1, 1], [1, 0]]
    x = per_device_fair(coef, [10, 1], [np.inf, np.inf])
    assert x == pytest.approx([1, 5])
    assert max_min_fair(coef, [10, 1], [np.inf, np.inf]) == pytest.approx([1, 9])


def test_per_device_single_constraint_equals_max_min():
    coef = [[0.1], [0.2], [0.05]]
    caps = [1.0, 20.0, 20.0]
    assert per_device_fair(coef, 1.0, caps) == pytest.approx(max_min_fair(coef, 1.0, caps))
