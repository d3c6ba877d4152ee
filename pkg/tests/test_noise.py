import numpy as np
import pytest

from tvic.noise import RNG_ALGORITHM, NoiseSpec, add_gaussian, add_poisson, add_salt_pepper, corrupt
from tvic.phantom import phantom


def test_salt_pepper_trivial_cases(rng):
    u = rng.random((20, 20))
    np.testing.assert_array_equal(add_salt_pepper(u, 0.0, seed=1), u)
    f = add_salt_pepper(u, 1.0, seed=1)
    assert set(np.unique(f)) <= {0.0, 1.0}


def test_salt_pepper_density():
    u = np.full((312, 312), 0.5)
    f, mask = add_salt_pepper(u, 0.05, seed=7, return_mask=True)
    assert abs(mask.mean() - 0.05) <= 0.01
    assert np.all(np.isin(f[mask], (0.0, 1.0)))
    np.testing.assert_array_equal(f[~mask], 0.5)
    # salt and pepper about equally likely
    assert abs((f[mask] == 1.0).mean() - 0.5) < 0.05


def test_salt_pepper_rejects_bad_density():
    with pytest.raises(ValueError):
        add_salt_pepper(np.zeros((4, 4)), 1.5)


def test_gaussian_moments():
    u = np.zeros((256, 256))
    s2 = 0.01
    e = add_gaussian(u, s2, seed=3) - u
    assert abs(e.mean()) <= 3 * np.sqrt(s2) / 256
    assert abs(e.var() / s2 - 1) <= 0.1
    np.testing.assert_array_equal(add_gaussian(u, 0.0, seed=3), u)
    with pytest.raises(ValueError):
        add_gaussian(u, -1.0)


def test_gaussian_not_clipped():
    f = add_gaussian(np.full((64, 64), 0.99), 0.01, seed=0)
    assert f.max() > 1.0


def test_poisson_moments():
    u = np.full((100, 100), 0.5)
    P = 100.0
    f = add_poisson(u, P, seed=11)
    assert abs(f.mean() - 0.5) <= 3 * np.sqrt(0.5 / P / 1e4)
    assert abs(f.var() / (0.5 / P) - 1) <= 0.1
    np.testing.assert_array_equal(add_poisson(np.zeros((5, 5)), P), 0)
    with pytest.raises(ValueError):
        add_poisson(u, 0.0)


def test_poisson_clamps_negative_with_warning():
    with pytest.warns(RuntimeWarning):
        f = add_poisson(np.full((4, 4), -0.2), 10.0, seed=0)
    np.testing.assert_array_equal(f, 0)


def test_determinism_and_seed_sensitivity():
    u = phantom(32)
    spec = NoiseSpec(sp_density=0.05, gauss_var=0.005, seed=5)
    a, ma = corrupt(u, spec)
    b, mb = corrupt(u, spec)
    assert a.tobytes() == b.tobytes() and np.array_equal(ma, mb)
    c, _ = corrupt(u, NoiseSpec(sp_density=0.05, gauss_var=0.005, seed=6))
    assert not np.array_equal(a, c)


def test_corrupt_order_poisson_then_gaussian():
    u = phantom(32)
    spec = NoiseSpec(gauss_var=0.001, poisson=True, poisson_peak=50.0, seed=2)
    f, mask = corrupt(u, spec)
    _, s_g, s_p = spec.component_seeds()
    expected = add_gaussian(add_poisson(u, 50.0, s_p), 0.001, s_g)
    np.testing.assert_array_equal(f, expected)
    assert not mask.any()


def test_corrupt_order_salt_pepper_then_gaussian():
    u = phantom(32)
    spec = NoiseSpec(sp_density=0.1, gauss_var=0.001, seed=2)
    f, mask = corrupt(u, spec)
    s_sp, s_g, _ = spec.component_seeds()
    expected = add_gaussian(add_salt_pepper(u, 0.1, s_sp), 0.001, s_g)
    np.testing.assert_array_equal(f, expected)


def test_spec_validation_and_record():
    with pytest.raises(ValueError):
        NoiseSpec(sp_density=-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(gauss_var=-1)
    with pytest.raises(ValueError):
        NoiseSpec(poisson_peak=0)
    d = NoiseSpec(0.05, 0.005, seed=3).to_dict()
    assert d["rng"] == RNG_ALGORITHM and d["seed"] == 3


def test_phantom_range():
    p = phantom(64)
    assert p.shape == (64, 64)
    assert p.min() >= 0.1 and p.max() <= 0.9
    assert len(np.unique(p)) >= 5
