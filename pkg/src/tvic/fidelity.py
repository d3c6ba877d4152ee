"""Data-fidelity energies and the pointwise inner minimisers of both IC fidelities.

The L1-L2 fidelity ``min_v lam1 |v|_1 + lam2/2 |r - v|^2`` is a soft threshold
of ``r = f - u`` at ``lam1/lam2``; the L2-KL fidelity
``min_{v<f} lam1/2 |v|^2 + lam2 KL(f - v, u)`` is solved per pixel by a
safeguarded scalar Newton iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import norm_l1, norm_l2_sq
from .huber import huber_tv, huber_value

EPS_FLOOR = 1e-8
INF = math.inf


@dataclass(frozen=True)
class FidelityWeights:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("fidelity weights must be non-negative")


def _xlogy_ratio(phi, psi):
    # phi*log(phi/psi) with 0 log 0 = 0; psi > 0 where phi > 0 is assumed
    out = np.zeros_like(phi)
    pos = phi > 0
    out[pos] = phi[pos] * np.log(phi[pos] / psi[pos])
    return out


def kl_divergence(phi, psi):
    """``sum(phi log(phi/psi) - phi + psi)``; ``inf`` if ``phi > 0`` where ``psi == 0``."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != psi.shape:
        raise ValueError(f"shape mismatch: {phi.shape} vs {psi.shape}")
    if np.any(phi < 0) or np.any(psi < 0):
        raise ValueError("KL divergence needs non-negative arguments")
    if np.any((phi > 0) & (psi == 0)):
        return INF
    return float(np.sum(_xlogy_ratio(phi, psi) - phi + psi))


def kl_l1_estimate_check(phi, psi, slack=1e-10):
    """Check ``|phi - psi|_1^2 <= (2/3 |phi|_1 + 4/3 |psi|_1) KL(phi, psi)``."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    lhs = norm_l1(phi - psi) ** 2
    kl = kl_divergence(phi, psi)
    if kl == INF:
        return True
    rhs = (2.0 / 3.0 * norm_l1(phi) + 4.0 / 3.0 * norm_l1(psi)) * kl
    return bool(lhs <= rhs + slack)


def soft_threshold(r, t):
    r = np.asarray(r, dtype=float)
    return np.sign(r) * np.maximum(np.abs(r) - t, 0.0)


def ic_l1l2_inner_min(r, lambda1, lambda2):
    """Minimise ``lambda1 |v|_1 + lambda2/2 |r - v|^2`` pixelwise.

    Returns ``(v, value)``.
    """
    if not (lambda1 > 0 and lambda2 > 0):
        raise ValueError("lambda1 and lambda2 must be positive")
    r = np.asarray(r, dtype=float)
    v = soft_threshold(r, lambda1 / lambda2)
    value = lambda1 * norm_l1(v) + 0.5 * lambda2 * norm_l2_sq(r - v)
    return v, value


def ic_l1l2_envelope(r, lambda1, lambda2):
    """Closed-form value of the L1-L2 fidelity: ``lambda1 * sum |r|_{lambda2/lambda1}``."""
    return lambda1 * float(huber_value(r, lambda2 / lambda1).sum())


def _l2kl_stationarity(v, f, u, lambda1, lambda2):
    return lambda1 * v - lambda2 * np.log((f - v) / u)


def ic_l2kl_inner_min(f, u, lambda1, lambda2, eps=EPS_FLOOR, tol=1e-12, max_iter=200):
    """Minimise ``lambda1/2 |v|^2 + lambda2 KL(f - v, u)`` over ``v < f`` pixelwise.

    ``u`` is floored at ``eps``.  Returns ``(v, value, degenerate)`` where
    ``degenerate`` flags pixels with ``f <= 0``.
    """
    if not (lambda1 > 0 and lambda2 > 0):
        raise ValueError("lambda1 and lambda2 must be positive")
    f = np.asarray(f, dtype=float)
    u = np.maximum(np.asarray(u, dtype=float), eps)
    if f.shape != u.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {u.shape}")
    degenerate = f <= 0

    # g(v) = lam1 v - lam2 log((f-v)/u) is increasing on (-inf, f)
    hi = f - eps * np.maximum(1.0, np.abs(f))
    bound = max(10.0, 10.0 * float(np.max(np.abs(f), initial=0.0)))
    lo = np.minimum(np.full_like(f, -bound), hi - 1.0)
    for _ in range(200):
        g_lo = _l2kl_stationarity(lo, f, u, lambda1, lambda2)
        bad = g_lo > 0
        if not bad.any():
            break
        lo = np.where(bad, 2.0 * lo - 1.0, lo)

    v = np.clip(np.zeros_like(f), lo, hi)
    scale = (lambda1 + lambda2) * np.maximum(1.0, np.abs(v) + np.abs(f))
    for _ in range(max_iter):
        g = _l2kl_stationarity(v, f, u, lambda1, lambda2)
        lo = np.where(g < 0, v, lo)
        hi = np.where(g > 0, v, hi)
        done = (np.abs(g) <= tol * scale) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(v)))
        if done.all():
            break
        dg = lambda1 + lambda2 / (f - v)
        step = v - g / dg
        inside = (step > lo) & (step < hi)
        v = np.where(done, v, np.where(inside, step, 0.5 * (lo + hi)))

    value = 0.5 * lambda1 * norm_l2_sq(v) + lambda2 * kl_divergence(f - v, u)
    return v, value, degenerate


def energy_l1l2(u, v, f, lambda1, lambda2, gamma, h=1.0):
    """Huberised TV + ``lambda1 |v|_{1,gamma} + lambda2/2 |f - u - v|^2``."""
    u, v, f = (np.asarray(a, dtype=float) for a in (u, v, f))
    if not (u.shape == v.shape == f.shape):
        raise ValueError("shape mismatch")
    return (huber_tv(u, gamma, h)
            + lambda1 * float(huber_value(v, gamma).sum())
            + 0.5 * lambda2 * norm_l2_sq(f - u - v))


def energy_l2kl(u, v, f, lambda1, lambda2, gamma, h=1.0, eps=EPS_FLOOR):
    """Huberised TV + ``lambda1/2 |v|^2 + lambda2 KL(f - v, u)`` (no penalty terms).

    Returns ``inf`` outside the admissible set ``u >= 0``, ``v <= f``.
    """
    u, v, f = (np.asarray(a, dtype=float) for a in (u, v, f))
    if not (u.shape == v.shape == f.shape):
        raise ValueError("shape mismatch")
    w = f - v
    if np.any(u < 0) or np.any(w < 0):
        return INF
    return (huber_tv(u, gamma, h) + 0.5 * lambda1 * norm_l2_sq(v)
            + lambda2 * kl_divergence(w, np.maximum(u, 0.0)))

