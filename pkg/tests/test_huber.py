import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvic.huber import huber_grad, huber_tv, huber_value, smooth_huber, total_variation


def test_values():
    assert huber_value(np.array(0.0), 1e5) == 0
    assert huber_value(np.array(2e-5), 1e5) == pytest.approx(1.5e-5, rel=1e-12)
    g = 1e3
    # both branches at the knee
    assert 0.5 * g * (1 / g) ** 2 == pytest.approx(1 / (2 * g))
    assert huber_value(np.array(1 / g), g) == pytest.approx(1 / (2 * g))


def test_vector_magnitude():
    z = np.array([[[3.0]], [[4.0]]])
    assert huber_value(z, 10.0, vector=True)[0, 0] == pytest.approx(5 - 0.05)


def test_grad_limits():
    assert huber_grad(np.array(0.0), 1e5) == 0
    z = np.array([[[3.0]], [[-4.0]]])
    np.testing.assert_allclose(huber_grad(z, 1e5, vector=True)[:, 0, 0], [0.6, -0.8])


@pytest.mark.parametrize("z", [-3.0, -0.2, 0.0004, 0.05, 2.0])
def test_grad_central_difference(z):
    g, eps = 10.0, 1e-6
    fd = (huber_value(np.array(z + eps), g) - huber_value(np.array(z - eps), g)) / (2 * eps)
    assert fd == pytest.approx(float(huber_grad(np.array(z), g)), abs=1e-8)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.0, 1.0), st.floats(0.1, 1e4))
def test_convex(a, b, t, g):
    x = t * a + (1 - t) * b
    lhs = huber_value(np.array(x), g)
    rhs = t * huber_value(np.array(a), g) + (1 - t) * huber_value(np.array(b), g)
    assert lhs <= rhs + 1e-9 * (1 + abs(rhs))


@given(st.floats(-1e3, 1e3), st.floats(0.1, 1e6))
def test_grad_bounded(z, g):
    assert abs(float(huber_grad(np.array(z), g))) <= 1.0


def test_tv_bounds(rng):
    u = rng.random((12, 10))
    for g in (1.0, 30.0, 1e3):
        h = huber_tv(u, g)
        tv = total_variation(u)
        assert h <= tv <= h + u.size / (2 * g) + 1e-12
    assert huber_tv(np.full((4, 4), 0.7), 1e5) == 0


def test_tv_monotone_in_gamma(rng):
    u = rng.random((16, 16))
    vals = [huber_tv(u, g) for g in (1e2, 1e3, 1e4, 1e5)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= total_variation(u)
    assert total_variation(u) - vals[-1] <= u.size / 2e5


def test_smooth_huber_limits():
    assert smooth_huber(np.array(0.0), 10.0) == 0
    assert smooth_huber(np.array(5.0), 10.0) == pytest.approx(1.0)
    assert smooth_huber(np.array(-5.0), 10.0) == pytest.approx(-1.0)
    assert smooth_huber(np.array(0.01), 10.0) == pytest.approx(0.1)


@pytest.mark.parametrize("g", [2.0, 10.0, 1e3])
def test_smooth_huber_continuity_at_band_edges(g):
    d = 1e-9
    for edge in (1 / (2 * g), -1 / (2 * g)):
        r = (1 + edge) / g  # gamma*|z| - 1 = edge
        lo = float(smooth_huber(np.array(r - d / g), g))
        hi = float(smooth_huber(np.array(r + d / g), g))
        assert abs(hi - lo) <= 1e-7
        # one-sided slopes agree
        e = 1e-3 / g**2  # well inside the band of half-width 1/(2 g^2)
        s_lo = (float(smooth_huber(np.array(r), g)) - float(smooth_huber(np.array(r - e), g))) / e
        s_hi = (float(smooth_huber(np.array(r + e), g)) - float(smooth_huber(np.array(r), g))) / e
        assert s_hi == pytest.approx(s_lo, rel=1e-3, abs=1e-3 * g)


@given(st.floats(-5, 5), st.floats(1.0, 1e3))
def test_smooth_huber_bounded_and_odd(z, g):
    s = float(smooth_huber(np.array(z), g))
    assert abs(s) <= 1.0 + 1e-12
    assert float(smooth_huber(np.array(-z), g)) == pytest.approx(-s)


def test_gamma_must_be_positive():
    with pytest.raises(ValueError):
        huber_value(np.array(1.0), 0.0)
