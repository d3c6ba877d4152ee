"""Image lattice helpers and discrete gradient / divergence.

Images are plain 2-D float arrays indexed ``u[k, l]`` (row ``k``, column
``l``), stored row-major.  The TV dual ``q`` is a ``(2, rows, cols)`` array and
the L1 dual ``p`` is a ``(rows, cols)`` array.

Forward differences with Neumann boundary are used for the gradient and the
divergence is defined as its negative adjoint, so that
``inner(grad_forward(u), q) == -inner(u, div_backward(q))`` holds exactly up to
rounding.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def as_image(u, name="image"):
    """Validate and return ``u`` as a float64 2-D array with at least 2x2 pixels."""
    a = np.asarray(u, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError(f"{name} needs at least 2x2 pixels, got {a.shape}")
    return a


def as_field(q, channels=2, name="field"):
    a = np.asarray(q, dtype=float)
    if channels == 1:
        if a.ndim == 3 and a.shape[0] == 1:
            a = a[0]
        if a.ndim != 2:
            raise ValueError(f"{name} must be a 1-channel field, got shape {a.shape}")
        return a
    if a.ndim != 3 or a.shape[0] != channels:
        raise ValueError(f"{name} must have {channels} channels, got shape {a.shape}")
    return a


def grad_forward(u, h=1.0):
    """Forward-difference gradient with Neumann boundary, divided by spacing ``h``.

    Channel 0 differences along rows (``u[k+1, l] - u[k, l]``), channel 1 along
    columns (``u[k, l+1] - u[k, l]``).  Differences across the last row/column
    are zero.
    """
    u = as_image(u)
    g = np.zeros((2,) + u.shape)
    g[0, :-1, :] = u[1:, :] - u[:-1, :]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    if h != 1.0:
        g /= h
    return g


def div_backward(q, h=1.0):
    """Backward-difference divergence, the negative adjoint of :func:`grad_forward`."""
    q = as_field(q, 2, "q")
    q0, q1 = q[0], q[1]
    d = np.zeros(q.shape[1:])
    d[:-1, :] += q0[:-1, :]
    d[1:, :] -= q0[:-1, :]
    d[:, :-1] += q1[:, :-1]
    d[:, 1:] -= q1[:, :-1]
    if h != 1.0:
        d /= h
    return d


def gradient_matrix(shape, h=1.0):
    """Sparse matrix ``K`` with ``K @ u.ravel() == grad_forward(u, h).ravel()``.

    The divergence is ``-K.T``.
    """
    rows, cols = shape

    def diff1d(n):
        main = -np.ones(n)
        main[-1] = 0.0
        return sp.diags([main, np.ones(n - 1)], [0, 1], shape=(n, n), format="csr")

    kx = sp.kron(diff1d(rows), sp.eye(cols), format="csr")
    ky = sp.kron(sp.eye(rows), diff1d(cols), format="csr")
    k = sp.vstack([kx, ky], format="csr")
    if h != 1.0:
        k = k / h
    return k.tocsr()


def _check_same(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def inner(a, b):
    """Plain sum-of-products inner product."""
    a, b = _check_same(a, b)
    return float(np.dot(a.ravel(), b.ravel()))


def norm_l1(a):
    return float(np.abs(np.asarray(a, dtype=float)).sum())


def norm_l2_sq(a):
    a = np.asarray(a, dtype=float).ravel()
    return float(np.dot(a, a))


def pointwise_norm(q):
    """Euclidean norm of a 2-channel field at each pixel."""
    q = as_field(q, 2, "q")
    return np.hypot(q[0], q[1])


def paper_spacing(shape):
    """Grid spacing ``1/N`` for an image with ``N`` pixels along its longer side."""
    return 1.0 / max(shape)
