import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvic.fidelity import (FidelityWeights, energy_l1l2, energy_l2kl, ic_l1l2_envelope,
                           ic_l1l2_inner_min, ic_l2kl_inner_min, kl_divergence, kl_l1_estimate_check,
                           soft_threshold)
from tvic.huber import huber_tv
from tvic.phantom import phantom


def grid_min_l1l2(r, l1, l2, step=1e-4):
    # brute-force 1-D oracle over a window containing the minimiser
    lo, hi = min(-2.0, r - 1), max(2.0, r + 1)
    v = np.arange(lo, hi + step, step)
    phi = l1 * np.abs(v) + 0.5 * l2 * (r - v) ** 2
    k = int(np.argmin(phi))
    return v[k], phi[k]


def bisect_l2kl(f, u, l1, l2):
    # g(v) = l1 v - l2 log((f - v)/u) is increasing on v < f
    lo, hi = -1.0, f - 1e-15
    while l1 * lo - l2 * math.log((f - lo) / u) > 0:
        lo = 2 * lo - 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if l1 * mid - l2 * math.log((f - mid) / u) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_kl_values():
    assert kl_divergence(np.array([1.0]), np.array([2.0])) == pytest.approx(1 - math.log(2), rel=1e-14)
    assert kl_divergence(np.array([0.0]), np.array([3.0])) == 3.0
    assert kl_divergence(np.array([1.0]), np.array([0.0])) == math.inf
    phi = np.random.default_rng(1).random((5, 5))
    assert kl_divergence(phi, phi) == 0
    with pytest.raises(ValueError):
        kl_divergence(np.array([-1.0]), np.array([1.0]))


def test_kl_estimate_examples():
    assert kl_l1_estimate_check(np.array([1.0]), np.array([2.0]))
    lhs, rhs = 1.0, (2 / 3 + 8 / 3) * (1 - math.log(2))
    assert lhs <= rhs and rhs == pytest.approx(1.0229, abs=1e-4)
    assert kl_l1_estimate_check(np.ones(3), np.ones(3))


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_kl_estimate_random(seed, n):
    r = np.random.default_rng(seed)
    phi = r.random(n) * r.choice([0.0, 1.0, 10.0], n)
    psi = r.random(n) * 5 + 1e-3
    assert kl_l1_estimate_check(phi, psi)


def test_l1l2_examples():
    v, val = ic_l1l2_inner_min(np.array([1.0]), 1.0, 2.0)
    assert v[0] == pytest.approx(0.5) and val == pytest.approx(0.75)
    v, val = ic_l1l2_inner_min(np.array([0.3]), 1.0, 2.0)
    assert v[0] == 0 and val == pytest.approx(0.09)
    v, val = ic_l1l2_inner_min(np.zeros((3, 3)), 1.0, 2.0)
    assert np.all(v == 0) and val == 0
    with pytest.raises(ValueError):
        ic_l1l2_inner_min(np.zeros(2), 0.0, 1.0)


@pytest.mark.parametrize("r,l1,l2", [(1.0, 1.0, 2.0), (-0.7, 0.3, 1.5), (0.2, 2.0, 1.0), (1.7, 0.5, 4.0)])
def test_l1l2_matches_grid_oracle(r, l1, l2):
    v, val = ic_l1l2_inner_min(np.array([r]), l1, l2)
    vg, pg = grid_min_l1l2(r, l1, l2)
    assert abs(v[0] - vg) <= 1e-4
    assert val <= pg + 1e-12 and pg - val <= 0.5 * l2 * 1e-8 + l1 * 1e-4


@given(st.floats(-5, 5), st.floats(0.01, 10), st.floats(0.01, 10))
def test_moreau_identity(r, l1, l2):
    _, val = ic_l1l2_inner_min(np.array([r]), l1, l2)
    assert val == pytest.approx(ic_l1l2_envelope(np.array([r]), l1, l2), rel=1e-10, abs=1e-12)


@given(st.floats(-5, 5), st.floats(0.0, 3))
def test_soft_threshold_is_prox(r, t):
    v = float(soft_threshold(np.array(r), t))
    # prox optimality: r - v in t * subdifferential |v|
    if v != 0:
        assert r - v == pytest.approx(t * math.copysign(1, v), abs=1e-12)
    else:
        assert abs(r) <= t + 1e-12


def test_l2kl_examples():
    v, val, deg = ic_l2kl_inner_min(np.array([2.0]), np.array([1.0]), 1.0, 1.0)
    assert v[0] == pytest.approx(bisect_l2kl(2.0, 1.0, 1.0, 1.0), abs=1e-12)
    assert v[0] == pytest.approx(0.4429, abs=1e-4)
    assert v[0] == pytest.approx(math.log(2 - v[0]), abs=1e-12)
    assert not deg.any()
    f = np.random.default_rng(0).random((4, 4)) + 0.1
    v, val, _ = ic_l2kl_inner_min(f, f, 2.0, 3.0)
    np.testing.assert_allclose(v, 0, atol=1e-14)
    assert val == pytest.approx(0, abs=1e-20)


def test_l2kl_lambda1_to_infinity():
    vs = [abs(ic_l2kl_inner_min(np.array([2.0]), np.array([1.0]), l1, 1.0)[0][0])
          for l1 in (1, 10, 100, 1000)]
    assert all(a > b for a, b in zip(vs, vs[1:]))


@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0.1, 100), st.floats(0.1, 100))
def test_l2kl_matches_bisection(f, u, l1, l2):
    v, _, _ = ic_l2kl_inner_min(np.array([f]), np.array([u]), l1, l2)
    assert v[0] == pytest.approx(bisect_l2kl(f, u, l1, l2), abs=1e-8)


def test_l2kl_degenerate_flag():
    f = np.array([0.0, -0.3, 0.5])
    v, val, deg = ic_l2kl_inner_min(f, np.full(3, 0.4), 1.0, 1.0)
    np.testing.assert_array_equal(deg, [True, True, False])
    assert np.all(v < f) and math.isfinite(val)


def test_energies():
    f = np.full((8, 8), 0.4)
    assert energy_l1l2(f, np.zeros_like(f), f, 1.0, 1.0, 1e5) == 0
    u = phantom(16)
    g = u + 0.1 * np.random.default_rng(2).standard_normal(u.shape)
    v = np.zeros_like(u)
    assert energy_l1l2(u, v, g, 3.0, 5.0, 100.0) >= huber_tv(u, 100.0)
    assert energy_l2kl(u, v, u, 3.0, 5.0, 100.0) == pytest.approx(huber_tv(u, 100.0))
    with pytest.raises(ValueError):
        energy_l1l2(u, v[:3], g, 1.0, 1.0, 10.0)


def test_weights_validation():
    with pytest.raises(ValueError):
        FidelityWeights(-1.0, 1.0)
