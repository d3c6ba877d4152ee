"""Synthetic corruption: salt & pepper, additive Gaussian and Poisson noise."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .grid import as_image

RNG_ALGORITHM = "numpy.random.PCG64 (SeedSequence spawn)"


def _rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


@dataclass
class NoiseSpec:
    """Noise recipe.  ``seed`` drives all three components via spawned streams."""

    sp_density: float = 0.0
    gauss_var: float = 0.0
    poisson: bool = False
    poisson_peak: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sp_density <= 1.0:
            raise ValueError(f"sp_density must lie in [0, 1], got {self.sp_density}")
        if self.gauss_var < 0:
            raise ValueError(f"gauss_var must be >= 0, got {self.gauss_var}")
        if not self.poisson_peak > 0:
            raise ValueError(f"poisson_peak must be > 0, got {self.poisson_peak}")

    def to_dict(self):
        d = asdict(self)
        d["rng"] = RNG_ALGORITHM
        return d

    def component_seeds(self):
        """Independent child seeds for (salt&pepper, Gaussian, Poisson)."""
        children = np.random.SeedSequence(self.seed).spawn(3)
        return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def add_salt_pepper(u, d, seed=0, return_mask=False):
    """Replace each pixel with probability ``d`` by 0 or 1 (equally likely)."""
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {d}")
    u = as_image(u)
    rng = _rng(seed)
    hit = rng.random(u.shape) < d
    salt = rng.random(u.shape) < 0.5
    f = np.where(hit, salt.astype(float), u)
    if return_mask:
        return f, hit
    return f


def add_gaussian(u, variance, seed=0):
    """Add i.i.d. zero-mean Gaussian noise.  No clipping."""
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    u = as_image(u)
    if variance == 0:
        return u.copy()
    return u + _rng(seed).normal(0.0, np.sqrt(variance), size=u.shape)


def add_poisson(u, peak=100.0, seed=0):
    """Return ``Pois(peak * u) / peak``; negative intensities are clamped to 0."""
    if not peak > 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    u = as_image(u)
    if np.any(u < 0):
        warnings.warn("negative intensities clamped to 0 before Poisson sampling",
                      RuntimeWarning, stacklevel=2)
        u = np.maximum(u, 0.0)
    return _rng(seed).poisson(peak * u).astype(float) / peak


def corrupt(u, spec: NoiseSpec):
    """Apply ``spec`` to ``u``.

    Salt & pepper (if any) or Poisson (if enabled) first, Gaussian last.
    Returns ``(f, mask)`` where ``mask`` marks salt & pepper pixels.
    """
    u = as_image(u)
    s_sp, s_g, s_p = spec.component_seeds()
    f, mask = add_salt_pepper(u, spec.sp_density, s_sp, return_mask=True)
    if spec.poisson:
        f = add_poisson(f, spec.poisson_peak, s_p)
    f = add_gaussian(f, spec.gauss_var, s_g)
    return f, mask
