"""Huber smoothing of absolute values and of the total variation.

Vector arguments carry their components along axis 0, so a gradient field of
shape ``(2, rows, cols)`` is treated as one 2-vector per pixel.  Scalars and
plain images are treated as 1-vectors per entry.
"""
from __future__ import annotations

import numpy as np

from .grid import grad_forward

DEFAULT_GAMMA = 1e5


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")


def _magnitude(z, vector):
    z = np.asarray(z, dtype=float)
    if vector:
        return np.sqrt(np.sum(z * z, axis=0))
    return np.abs(z)


def huber_value(z, gamma=DEFAULT_GAMMA, vector=False):
    """Elementwise ``|z|_gamma``.

    ``|z| - 1/(2 gamma)`` where ``|z| >= 1/gamma``, else ``gamma/2 |z|^2``.
    With ``vector=True`` axis 0 holds vector components and the result has one
    value per remaining index.
    """
    _check_gamma(gamma)
    a = _magnitude(z, vector)
    return np.where(a >= 1.0 / gamma, a - 0.5 / gamma, 0.5 * gamma * a * a)


def huber_grad(z, gamma=DEFAULT_GAMMA, vector=False):
    """Gradient of :func:`huber_value`: ``gamma z / max(gamma |z|, 1)``."""
    _check_gamma(gamma)
    z = np.asarray(z, dtype=float)
    a = _magnitude(z, vector)
    return gamma * z / np.maximum(gamma * a, 1.0)


def huber_tv(u, gamma=DEFAULT_GAMMA, h=1.0):
    """Huberised total variation: sum over pixels of ``|grad u|_gamma``."""
    return float(huber_value(grad_forward(u, h), gamma, vector=True).sum())


def total_variation(u, h=1.0):
    """Exact isotropic discrete TV with the same stencil as :func:`huber_tv`."""
    g = grad_forward(u, h)
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def smooth_huber(z, gamma=DEFAULT_GAMMA, vector=False):
    """C^2 Huber-type gradient map used by the parameter-learning cost.

    Saturates to ``z/|z|`` for ``gamma|z| - 1 >= 1/(2 gamma)``, equals ``gamma z``
    for ``gamma|z| - 1 <= -1/(2 gamma)`` and blends quadratically in between.
    """
    _check_gamma(gamma)
    z = np.asarray(z, dtype=float)
    a = _magnitude(z, vector)
    s = gamma * a - 1.0
    band = 0.5 / gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        unit_scale = np.where(a > 0, 1.0 / a, 0.0)
        blend = 1.0 - 0.5 * gamma * (1.0 - gamma * a + band) ** 2
    scale = np.where(s >= band, unit_scale,
                     np.where(s <= -band, gamma, unit_scale * blend))
    return z * scale
