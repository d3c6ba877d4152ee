"""Image quality and noise-decomposition reporting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import as_image

PEAK = 1.0
RECONSTRUCTION_TOL = 1e-12


def psnr(u, ref, peak=PEAK):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    u = as_image(u)
    ref = as_image(ref)
    if u.shape != ref.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {ref.shape}")
    mse = float(np.mean((u - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class Decomposition:
    """``f = u + v + residual_final``; ``residual_mid = f - v`` is the second-channel data."""

    u: np.ndarray
    v: np.ndarray
    residual_mid: np.ndarray
    residual_final: np.ndarray

    def reconstruction_error(self, f):
        return float(np.max(np.abs(self.u + self.v + self.residual_final - f), initial=0.0))


def decompose(f, result):
    """Split ``f`` into the image and both noise channels of a solve.

    Single-variable models have no ``v``; it is taken as zero.
    """
    f = as_image(f)
    u = np.asarray(result.u, dtype=float)
    v = np.zeros_like(u) if result.v is None else np.asarray(result.v, dtype=float)
    if not (f.shape == u.shape == v.shape):
        raise ValueError("shape mismatch between data and solution")
    mid = f - v
    final = mid - u
    d = Decomposition(u=u, v=v, residual_mid=mid, residual_final=final)
    err = d.reconstruction_error(f)
    scale = max(1.0, float(np.max(np.abs(f), initial=0.0)))
    assert err <= RECONSTRUCTION_TOL * scale, f"reconstruction error {err:.3e}"
    return d
