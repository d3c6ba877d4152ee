"""Piecewise-constant test images for ground-truth experiments."""
from __future__ import annotations

import numpy as np


def phantom(n=64, m=None):
    """Rectangles, a disc and a bar on a dark background, intensities in [0.1, 0.9]."""
    m = n if m is None else m
    y, x = np.mgrid[0:n, 0:m]
    y = (y + 0.5) / n
    x = (x + 0.5) / m
    img = np.full((n, m), 0.1)
    img[(y > 0.12) & (y < 0.45) & (x > 0.1) & (x < 0.5)] = 0.75
    img[(y > 0.25) & (y < 0.35) & (x > 0.2) & (x < 0.4)] = 0.35
    img[(y - 0.68) ** 2 + (x - 0.68) ** 2 < 0.2 ** 2] = 0.9
    img[(y > 0.6) & (y < 0.85) & (x > 0.12) & (x < 0.3)] = 0.5
    img[(y > 0.1) & (y < 0.2) & (x > 0.6) & (x < 0.9)] = 0.6
    return img
