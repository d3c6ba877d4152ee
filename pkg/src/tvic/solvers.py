"""Semismooth Newton solvers for the TV-IC models and the baseline TV models.

Every model minimises ``|D u|_gamma + sum_i phi(u_i, v_i)`` where ``phi`` is a
pointwise fidelity (the ``v`` channel is absent for single-variable
baselines).  One Newton step linearises the primal-dual optimality system

    K^T q + d_u phi = 0,   d_v phi = 0,   q = gamma K u / max(gamma |K u|, 1)

and replaces ``q`` by ``q / max(1, |q|)`` in the curvature term on the active
set ``{gamma |K u| > 1}`` (likewise for the dual of a Huberised L1 term).  The
dual increment and ``delta v`` are eliminated pixelwise, leaving one sparse
system in ``delta u``.  The modified curvature is not symmetric, so the system
is solved by sparse LU (or BiCGSTAB for large images) rather than CG.

Models with a Kullback-Leibler term keep ``u > 0`` and ``f - v > 0`` by
starting strictly inside the domain and truncating steps at a fixed fraction
of the distance to its boundary.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gammaln, logsumexp

from .fidelity import EPS_FLOOR, FidelityWeights, kl_divergence
from .grid import as_image, gradient_matrix, norm_l2_sq, paper_spacing
from .huber import DEFAULT_GAMMA, huber_grad, huber_tv, huber_value

log = logging.getLogger(__name__)

TOLERANCE = "tolerance"
MAX_ITER = "max_iter"
LINSOLVE_FAILURE = "linsolve_failure"
NON_FINITE = "non_finite"
STALLED = "stalled"

DIRECT_SIZE_LIMIT = 128 * 128
BOUNDARY_FRACTION = 0.995
DIRECT_RTOL_FLOOR = 1e-6
LEVENBERG_SHIFTS = (1e-10, 1e-7, 1e-4, 1e-2, 1.0)


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``spacing`` is the grid step ``h`` entering the gradient; ``"paper"`` means
    ``1/N`` for an ``N``-pixel side so that weights are on the scale used in
    published TV-IC experiments.  ``res_tol`` is relative to ``1 + |f|_2``.
    """

    weights: FidelityWeights = FidelityWeights(1.0, 1.0)
    gamma: float = DEFAULT_GAMMA
    tol: float = 1e-6
    res_tol: float = 1e-6
    max_iter: int = 35
    penalty_init: tuple = (10.0, 100.0)
    penalty_growth: float = 10.0
    penalty_every: int = 5
    penalty_cap: float = 1e8
    linsolve: str = "auto"
    linsolve_rtol: float = 1e-10
    damping: bool = True
    spacing: object = "paper"
    eps: float = EPS_FLOOR
    continuation: str = "auto"
    continuation_start: float = 10.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if min(self.penalty_init) <= 0:
            raise ValueError("initial penalties must be positive")
        if self.penalty_growth < 1:
            raise ValueError("penalty_growth must be >= 1")
        if self.continuation not in ("auto", "on", "off"):
            raise ValueError(f"unknown continuation mode {self.continuation!r}")
        if self.linsolve not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown linsolve method {self.linsolve!r}")

    def with_weights(self, lambda1=None, lambda2=None):
        w = self.weights
        return replace(self, weights=FidelityWeights(
            w.lambda1 if lambda1 is None else lambda1,
            w.lambda2 if lambda2 is None else lambda2))

    def grid_spacing(self, shape):
        if self.spacing == "paper":
            return paper_spacing(shape)
        return float(self.spacing)


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    energy: float
    step_norm: float
    residual: float
    active_u: int
    active_v: int
    alpha: float = 1.0


@dataclass(frozen=True)
class SolveResult:
    model: str
    u: np.ndarray
    v: np.ndarray | None
    q: np.ndarray
    p: np.ndarray | None
    iterations: int
    history: tuple
    converged: bool
    termination_reason: str
    residual: float
    flags: dict = field(default_factory=dict)

    @property
    def energies(self):
        return [r.energy for r in self.history]

    @property
    def step_norms(self):
        return [r.step_norm for r in self.history]


class LinearSolveError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# building blocks


def _huber_l1_parts(z, p, gamma):
    """Value of ``h(z)`` and the modified derivative for a scalar Huber term with dual ``p``."""
    m = np.maximum(1.0, gamma * np.abs(z))
    active = gamma * np.abs(z) > 1.0
    p_t = p / np.maximum(1.0, np.abs(p))
    a = gamma / m - np.where(active, gamma ** 2 * z * p_t / m ** 2, 0.0)
    return gamma * z / m, a


def _tv_parts(g, q, gamma):
    """``h(grad u)`` plus the entries of the modified 2x2 curvature block per pixel."""
    norm = np.hypot(g[0], g[1])
    m = np.maximum(1.0, gamma * norm)
    active = gamma * norm > 1.0
    s = np.maximum(1.0, np.hypot(q[0], q[1]))
    qt0, qt1 = q[0] / s, q[1] / s
    c = np.where(active, gamma ** 2 / m ** 2, 0.0)
    base = gamma / m
    a00 = base - c * qt0 * g[0]
    a11 = base - c * qt1 * g[1]
    a01 = -c * qt0 * g[1]
    a10 = -c * qt1 * g[0]
    return gamma * g / m, (a00, a01, a10, a11), active


def _tv_matrix(K, blocks, n):
    a00, a01, a10, a11 = (b.ravel() for b in blocks)
    B = sp.bmat([[sp.diags(a00), sp.diags(a01)],
                 [sp.diags(a10), sp.diags(a11)]], format="csr")
    return (K.T @ B @ K).tocsr()


def _dual_update(g, dg, q, blocks):
    # paper's linearised dual: q + dq = h(g) + A dg with the (unsymmetrised) modified A
    a00, a01, a10, a11 = blocks
    return np.stack([a00 * dg[0] + a01 * dg[1], a10 * dg[0] + a11 * dg[1]])


def _solve(M, b, method, rtol):
    n = b.size
    if method == "auto":
        method = "direct" if n <= DIRECT_SIZE_LIMIT else "iterative"
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    if method == "direct":
        try:
            lu = spla.splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse LU failed: {exc}") from None
        x = lu.solve(b)
    else:
        # the modified curvature makes M nonsymmetric, so CG does not apply
        ilu = spla.spilu(M.tocsc(), drop_tol=1e-5, fill_factor=20)
        pre = spla.LinearOperator(M.shape, ilu.solve)
        x, info = spla.bicgstab(M, b, rtol=rtol, maxiter=2000, M=pre)
        if info != 0:
            raise LinearSolveError(f"BiCGSTAB did not converge (info={info})")
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("linear solve produced non-finite values")
    rel = np.linalg.norm(M @ x - b) / bnorm
    if method == "direct":
        # a few steps of iterative refinement; the achievable backward error is
        # limited by the gamma/h^2 conditioning of the curvature term
        for _ in range(3):
            if rel <= rtol:
                break
            x = x + lu.solve(b - M @ x)
            rel = np.linalg.norm(M @ x - b) / bnorm
        target = max(rtol, DIRECT_RTOL_FLOOR)
    else:
        target = rtol
    if not rel <= target:
        raise LinearSolveError(f"linear solve residual {rel:.2e} above target {target:.0e}")
    return x


def _keep_positive(x, dx, floor, tau=BOUNDARY_FRACTION):
    # pixelwise truncation so that x + dx >= max((1 - tau) x, floor)
    return np.maximum(dx, np.minimum(np.maximum((1.0 - tau) * x, floor) - x, 0.0))


def _binding(x, grad, floor):
    # variables resting on their lower bound with the gradient pushing outward
    return (x <= floor * (1.0 + 1e-12)) & (grad > 0)


# ---------------------------------------------------------------------------
# problems


class _Problem:
    """Pointwise fidelity of one model.  Subclasses fill in the derivatives."""

    name = "problem"
    two_var = False
    uses_penalty = False
    penalised_v = False

    def __init__(self, f, cfg: SolverConfig):
        self.f = f
        self.cfg = cfg
        self.gamma = cfg.gamma
        self.eps = cfg.eps
        self.pen = list(cfg.penalty_init)
        self.p = None

    def initial(self):
        return self.f.copy(), (np.zeros_like(self.f) if self.two_var else None)

    def init_duals(self, u, v):
        pass

    def safeguard(self, u, v, du, dv):
        """Restrict a Newton step to the domain of the energy."""
        return du, dv

    def reset_duals(self, u, v):
        """Replace linearised duals by their exact values (plain Newton curvature)."""

    def update_schedule(self, k):
        if not self.uses_penalty or k == 0 or k % self.cfg.penalty_every:
            return
        cap = self.cfg.penalty_cap
        self.pen = [min(g * self.cfg.penalty_growth, cap) for g in self.pen]

    def binding(self, u, v, r_u, g_v):
        """Masks of variables held fixed on their bound during the next step."""
        return None, None

    def internal_v(self, v):
        return v

    def external_v(self, x):
        return x

    def kkt(self, u, v, r_u, g_v):
        """Stationarity residual; bound-constrained models project it."""
        return r_u, g_v

    def penalty_settled(self, u, v):
        """True once the penalties are at their cap or no pixel violates the bounds."""
        if not self.uses_penalty or min(self.pen) >= self.cfg.penalty_cap:
            return True
        return self.violations(u, v) == 0

    def violations(self, u, v):
        n = int(np.count_nonzero(u < 0))
        if v is not None:
            n += int(np.count_nonzero(v > self.f))
        return n

    def terms(self, u, v):
        """Return ``(g_u, g_v, H_uu, H_uv, H_vv)``; absent entries are ``None``."""
        raise NotImplementedError

    def fidelity_energy(self, u, v):
        raise NotImplementedError

    def update_duals(self, u, v, du, dv):
        pass

    def active_v(self, u, v):
        return 0

    def final_duals(self, u, v):
        return None

    def flags(self, u, v):
        return {}

    def _interior_floor(self):
        return 1e-3 * max(1.0, float(np.max(self.f, initial=0.0)))

    # shared penalty helpers
    def _u_penalty(self, u):
        neg = u < 0
        return self.pen[0] * np.where(neg, u, 0.0), self.pen[0] * neg

    def _penalty_energy(self, u, w=None):
        e = 0.5 * self.pen[0] * norm_l2_sq(np.minimum(u, 0.0))
        if w is not None:
            e += 0.5 * self.pen[1] * norm_l2_sq(np.minimum(w, 0.0))
        return e


class _L1L2IC(_Problem):
    name = "tvic-l1l2"
    two_var = True

    def init_duals(self, u, v):
        self.p = huber_grad(v, self.gamma)

    reset_duals = init_duals

    def terms(self, u, v):
        l1, l2 = self.cfg.weights.lambda1, self.cfg.weights.lambda2
        r = self.f - u - v
        hv, a = _huber_l1_parts(v, self.p, self.gamma)
        self._a = a
        g_u = -l2 * r
        g_v = l1 * hv - l2 * r
        return g_u, g_v, np.full_like(u, l2), np.full_like(u, l2), l2 + l1 * a

    def update_duals(self, u, v, du, dv):
        self.p = huber_grad(v, self.gamma) + self._a * dv

    def fidelity_energy(self, u, v):
        l1, l2 = self.cfg.weights.lambda1, self.cfg.weights.lambda2
        return (l1 * float(huber_value(v, self.gamma).sum())
                + 0.5 * l2 * norm_l2_sq(self.f - u - v))

    def active_v(self, u, v):
        return int(np.count_nonzero(self.gamma * np.abs(v) > 1.0))

    def final_duals(self, u, v):
        return huber_grad(v, self.gamma)


class _L2KLIC(_Problem):
    """L2-KL infimal convolution in the variables ``(u, w)`` with ``w = f - v``.

    Working with ``w`` keeps the distance to the bound ``v <= f`` exact when it
    is much smaller than ``|f|``.
    """

    name = "tvic-l2kl"
    two_var = True
    uses_penalty = True

    def initial(self):
        t = self._interior_floor()
        return np.maximum(self.f, t), np.maximum(self.f, t)

    def internal_v(self, v):
        return self.f - v

    def external_v(self, w):
        return self.f - w

    def safeguard(self, u, w, du, dw):
        return _keep_positive(u, du, self.eps), _keep_positive(w, dw, self.eps)

    def binding(self, u, w, r_u, g_w):
        return _binding(u, r_u, self.eps), _binding(w, g_w, self.eps)

    def kkt(self, u, w, r_u, g_w):
        # natural residual x - P(x - grad) for u >= 0 and w >= 0
        return u - np.maximum(0.0, u - r_u), w - np.maximum(0.0, w - g_w)

    def terms(self, u, w):
        l1, l2 = self.cfg.weights.lambda1, self.cfg.weights.lambda2
        # iterates stay >= eps, the floor only guards user-supplied starts
        uf = np.maximum(u, self.eps)
        wf = np.maximum(w, self.eps)
        pu, hu = self._u_penalty(u)
        in_v = w < 0
        g_u = l2 * (1.0 - wf / uf) + pu
        g_w = -l1 * (self.f - w) + l2 * np.log(wf / uf) + self.pen[1] * np.where(in_v, w, 0.0)
        H_uu = l2 * wf / uf ** 2 + hu
        H_uw = -l2 / uf
        H_ww = l1 + l2 / wf + self.pen[1] * in_v
        return g_u, g_w, H_uu, H_uw, H_ww

    def fidelity_energy(self, u, w):
        l1, l2 = self.cfg.weights.lambda1, self.cfg.weights.lambda2
        if np.any(u <= 0) or np.any(w < 0):
            return math.inf
        return (0.5 * l1 * norm_l2_sq(self.f - w) + l2 * kl_divergence(w, u)
                + self._penalty_energy(u, w))

    def violations(self, u, w):
        return int(np.count_nonzero(u < 0)) + int(np.count_nonzero(w < 0))

    def active_v(self, u, w):
        return int(np.count_nonzero(w < 0))

    def flags(self, u, w):
        return {"degenerate_pixels": int(np.count_nonzero(self.f <= 0)),
                "corner_pixels": int(np.count_nonzero((u <= 2 * self.eps) & (w <= 2 * self.eps)))}


class _Single(_Problem):
    """TV plus any combination of Huber-L1, L2, reduced-KL and Gaussian-Poisson terms."""

    def __init__(self, f, cfg, l1=0.0, l2=0.0, kl=0.0, name="tv"):
        super().__init__(f, cfg)
        self.l1, self.l2, self.kl = l1, l2, kl
        self.name = name
        self.uses_penalty = kl > 0
        # where f = 0 the reduced KL term is linear in u and only the penalty
        # keeps u non-negative; elsewhere -f log u acts as a barrier
        self.logmask = f > 0

    def initial(self):
        u = self.f.copy()
        if self.kl > 0:
            u = np.maximum(u, self._interior_floor())
        return u, None

    def safeguard(self, u, v, du, dv):
        if self.kl > 0:
            du = np.where(self.logmask, _keep_positive(u, du, self.eps), du)
        return du, dv

    def binding(self, u, v, r_u, g_v):
        if self.kl > 0:
            return self.logmask & _binding(u, r_u, self.eps), None
        return None, None

    def kkt(self, u, v, r_u, g_v):
        if self.kl > 0:
            r_u = np.where(self.logmask, u - np.maximum(0.0, u - r_u), r_u)
        return r_u, g_v

    def reset_duals(self, u, v):
        self.init_duals(u, v)

    def init_duals(self, u, v):
        if self.l1 > 0:
            self.p = huber_grad(self.f - u, self.gamma)

    def terms(self, u, v):
        g = np.zeros_like(u)
        H = np.zeros_like(u)
        if self.l1 > 0:
            z = self.f - u
            hz, a = _huber_l1_parts(z, self.p, self.gamma)
            self._a = a
            g -= self.l1 * hz
            H += self.l1 * a
        if self.l2 > 0:
            g -= self.l2 * (self.f - u)
            H += self.l2
        if self.kl > 0:
            uf = np.where(self.logmask, np.maximum(u, self.eps), 1.0)
            pu, hu = self._u_penalty(u)
            g += self.kl * (1.0 - self.f / uf) + pu
            H += self.kl * self.f / uf ** 2 + hu
        return g, None, H, None, None

    def update_duals(self, u, v, du, dv):
        if self.l1 > 0:
            self.p = huber_grad(self.f - u, self.gamma) - self._a * du

    def fidelity_energy(self, u, v):
        e = 0.0
        if self.l1 > 0:
            e += self.l1 * float(huber_value(self.f - u, self.gamma).sum())
        if self.l2 > 0:
            e += 0.5 * self.l2 * norm_l2_sq(self.f - u)
        if self.kl > 0:
            m = self.logmask
            if np.any(u[m] <= 0):
                return math.inf
            e += self.kl * float(np.sum(u) - np.sum(self.f[m] * np.log(u[m])))
            e += self._penalty_energy(u)
        return e

    def active_v(self, u, v):
        if self.l1 > 0:
            return int(np.count_nonzero(self.gamma * np.abs(self.f - u) > 1.0))
        if self.kl > 0:
            return int(np.count_nonzero(u < 0))
        return 0

    def final_duals(self, u, v):
        if self.l1 > 0:
            return huber_grad(self.f - u, self.gamma)
        return None


# ---------------------------------------------------------------------------
# Gaussian-Poisson exact likelihood


def gp_log_terms(u, f, sigma2, n_max, peak=1.0):
    """Log of each series term ``Pois(n; P u) N(P f - n; P^2 sigma2)``, shape ``(n_max+1,) + u.shape``."""
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=float)
    n = np.arange(n_max + 1, dtype=float).reshape((-1,) + (1,) * u.ndim)
    lam = peak * u
    var = peak ** 2 * sigma2
    with np.errstate(divide="ignore"):
        log_pois = n * np.log(lam) - lam - gammaln(n + 1)
    log_pois = np.where((n == 0) & (lam == 0), 0.0, log_pois)
    log_gauss = -0.5 * (peak * f - n) ** 2 / var - 0.5 * np.log(2 * np.pi * var)
    return log_pois + log_gauss


def gp_negloglik(u, f, sigma2, n_max, peak=1.0):
    """Per-pixel negative log-likelihood of the Gaussian-Poisson mixture (truncated series)."""
    return -logsumexp(gp_log_terms(u, f, sigma2, n_max, peak), axis=0)


def gp_default_nmax(u_max, peak=1.0):
    c = peak * max(u_max, 0.0)
    return int(math.ceil(c + 10.0 * math.sqrt(c) + 20.0))


class _GP(_Single):
    def __init__(self, f, cfg, sigma2, n_max, peak, weight):
        super().__init__(f, cfg, name="tv-gp")
        self.sigma2, self.n_max, self.peak, self.weight = sigma2, n_max, peak, weight
        self.uses_penalty = True

    def initial(self):
        return np.maximum(self.f, self._interior_floor()), None

    def safeguard(self, u, v, du, dv):
        return _keep_positive(u, du, self.eps), dv

    def binding(self, u, v, r_u, g_v):
        return _binding(u, r_u, self.eps), None

    def kkt(self, u, v, r_u, g_v):
        return u - np.maximum(0.0, u - r_u), g_v

    def _dloss(self, u):
        # d/du of -log sum_n Pois(n; P u) N(.) = P - E_w[n] / u
        uf = np.maximum(u, self.eps)
        lt = gp_log_terms(uf, self.f, self.sigma2, self.n_max, self.peak)
        w = np.exp(lt - logsumexp(lt, axis=0))
        n = np.arange(self.n_max + 1, dtype=float).reshape((-1,) + (1,) * uf.ndim)
        return self.peak - np.sum(w * n, axis=0) / uf

    def terms(self, u, v):
        step = 1e-6
        uf = np.maximum(u, self.eps)
        d = self._dloss(uf)
        d2 = (self._dloss(uf + step) - self._dloss(np.maximum(uf - step, 0.5 * uf))) / (
            uf + step - np.maximum(uf - step, 0.5 * uf))
        pu, hu = self._u_penalty(u)
        g = self.weight * d + pu
        # the log-sum term is not convex everywhere; keep the Newton matrix PSD
        H = self.weight * np.maximum(d2, 0.0) + hu
        return g, None, H, None, None

    def fidelity_energy(self, u, v):
        if np.any(u <= 0):
            return math.inf
        uf = u
        return (self.weight * float(gp_negloglik(uf, self.f, self.sigma2, self.n_max, self.peak).sum())
                + self._penalty_energy(u))

    def flags(self, u, v):
        uf = np.maximum(u, self.eps)
        lt = gp_log_terms(uf, self.f, self.sigma2, self.n_max, self.peak)
        tail = np.max(lt[-1] - logsumexp(lt, axis=0))
        return {"truncation_insufficient": bool(tail > math.log(1e-15)), "n_max": self.n_max}


# ---------------------------------------------------------------------------
# Newton loop


def _run(problem: _Problem, f, cfg: SolverConfig, x0=None):
    h = cfg.grid_spacing(f.shape)
    gamma = cfg.gamma
    K = gradient_matrix(f.shape, h)
    npx = f.size
    fnorm = math.sqrt(norm_l2_sq(f))
    res_target = cfg.res_tol * (1.0 + fnorm)

    if x0 is None:
        u, v = problem.initial()
    else:
        u = x0[0].copy()
        v = None if x0[1] is None else problem.internal_v(x0[1])
    q = np.zeros((2,) + f.shape)
    problem.init_duals(u, v)

    def energy(u_, v_):
        return huber_tv(u_, gamma, h) + problem.fidelity_energy(u_, v_)

    def residual(u_, v_):
        g_ = (K @ u_.ravel()).reshape((2,) + f.shape)
        hq = huber_grad(g_, gamma, vector=True).reshape(2, -1)
        gu, gv, *_ = problem.terms(u_, v_)
        r_u = (K.T @ hq.ravel()).reshape(f.shape) + gu
        r_u, gv = problem.kkt(u_, v_, r_u, gv)
        r2 = norm_l2_sq(r_u)
        if gv is not None:
            r2 += norm_l2_sq(gv)
        return math.sqrt(r2)

    def direction(u_, v_, q_, shift=0.0):
        g = (K @ u_.ravel()).reshape((2,) + f.shape)
        hq, blocks, active = _tv_parts(g, q_, gamma)
        g_u, g_v, H_uu, H_uv, H_vv = problem.terms(u_, v_)
        r_u = K.T @ hq.reshape(-1) + g_u.ravel()
        bind_u, bind_v = problem.binding(u_, v_, r_u.reshape(f.shape), g_v)
        if problem.two_var:
            if bind_v is not None:
                # a frozen second variable drops out of the elimination
                H_uv = np.where(bind_v, 0.0, H_uv)
                g_v = np.where(bind_v, 0.0, g_v)
            diag = (H_uu - H_uv ** 2 / H_vv).ravel()
            b = -r_u + (H_uv * g_v / H_vv).ravel()
        else:
            diag = H_uu.ravel()
            b = -r_u
        M = _tv_matrix(K, blocks, npx) + sp.diags(diag)
        if bind_u is not None and bind_u.any():
            free = sp.diags((~bind_u).ravel().astype(float))
            M = (free @ M @ free + sp.diags(bind_u.ravel().astype(float))).tocsr()
            b = np.where(bind_u.ravel(), 0.0, b)
        if shift:
            M = M + shift * abs(M.diagonal()).max() * sp.identity(npx)
        try:
            du = _solve(M, b, cfg.linsolve, cfg.linsolve_rtol)
        except LinearSolveError:
            if shift:
                raise
            # singular curvature (e.g. every pixel active in TV-L1): small shift
            M = M + 1e-10 * abs(M.diagonal()).max() * sp.identity(npx)
            du = _solve(M, b, cfg.linsolve, cfg.linsolve_rtol)
        du = du.reshape(f.shape)
        dv = -(g_v + H_uv * du) / H_vv if problem.two_var else None
        if bind_u is not None:
            du = np.where(bind_u, 0.0, du)
        du, dv = problem.safeguard(u_, v_, du, dv)
        slope = float(r_u @ du.ravel())
        if dv is not None:
            slope += float(np.sum(g_v * dv))
        return du, dv, g, hq, blocks, active, slope

    def armijo(u_, v_, du, dv, slope, e_old):
        alpha = 1.0
        for _ in range(20):
            e_new = energy(u_ + alpha * du, None if dv is None else v_ + alpha * dv)
            if e_new <= e_old + 1e-4 * alpha * min(slope, 0.0) + 1e-13 * abs(e_old):
                return alpha
            alpha *= 0.5
        return 0.0

    history = []
    reason = MAX_ITER
    converged = False
    res = residual(u, v)
    for k in range(cfg.max_iter):
        problem.update_schedule(k)
        try:
            du, dv, g, hq, blocks, active, slope = direction(u, v, q)
            alpha = 1.0
            if cfg.damping:
                e_old = energy(u, v)
                alpha = armijo(u, v, du, dv, slope, e_old)
                if alpha == 0.0:
                    # the modified curvature gave no descent: fall back to the exact
                    # Hessian with a growing Levenberg shift
                    q_exact = huber_grad(g, gamma, vector=True)
                    for shift in LEVENBERG_SHIFTS:
                        problem.reset_duals(u, v)
                        du, dv, g, hq, blocks, active, slope = direction(u, v, q_exact, shift)
                        alpha = armijo(u, v, du, dv, slope, e_old)
                        if alpha > 0.0:
                            break
        except LinearSolveError as exc:
            log.warning("%s: %s", problem.name, exc)
            reason = LINSOLVE_FAILURE
            break
        dg = (K @ du.ravel()).reshape((2,) + f.shape)
        q = hq + alpha * _dual_update(g, dg, q, blocks)
        problem.update_duals(u, v, alpha * du, None if dv is None else alpha * dv)
        u = u + alpha * du
        if dv is not None:
            v = v + alpha * dv

        if not (np.all(np.isfinite(u)) and (v is None or np.all(np.isfinite(v)))):
            reason = NON_FINITE
            log.warning("%s: non-finite iterate at iteration %d", problem.name, k + 1)
            break
        step2 = norm_l2_sq(du) + (norm_l2_sq(dv) if dv is not None else 0.0)
        size2 = norm_l2_sq(u) + (norm_l2_sq(v) if v is not None else 0.0)
        step = alpha * math.sqrt(step2)
        rel_step = step / max(math.sqrt(size2), 1e-300)
        res = residual(u, v)
        history.append(IterRecord(k + 1, energy(u, v), step, res,
                                  int(np.count_nonzero(active)), problem.active_v(u, v), alpha))
        if alpha == 0.0:
            reason = STALLED
            break
        if rel_step < cfg.tol and res <= res_target and problem.penalty_settled(u, v):
            converged = True
            reason = TOLERANCE
            break

    g = (K @ u.ravel()).reshape((2,) + f.shape)
    flags = problem.flags(u, v)
    flags["spacing"] = h
    return SolveResult(
        model=problem.name, u=u, v=None if v is None else problem.external_v(v),
        q=huber_grad(g, gamma, vector=True),
        p=problem.final_duals(u, v),
        iterations=len(history), history=tuple(history),
        converged=converged, termination_reason=reason,
        residual=res, flags=flags)


def _gamma_path(start, gamma):
    path = []
    g = start
    while g < gamma / 1.5:
        path.append(g)
        g *= 10.0
    return path + [gamma]


def _drive(make, f, cfg: SolverConfig, x0=None):
    """Solve at ``cfg.gamma``; on failure (or when requested) continue in gamma.

    Continuation solves a sequence of decades of gamma, warm-starting each stage
    from the previous solution.  Iteration counts and histories accumulate.
    """
    spent = []
    if cfg.continuation != "on":
        res = _run(make(cfg), f, cfg, x0=x0)
        if res.converged or cfg.continuation == "off":
            return res
        spent.append(res)
        log.info("%s: no convergence at gamma=%g, retrying with continuation", res.model, cfg.gamma)
    x0 = None
    path = _gamma_path(cfg.continuation_start, cfg.gamma)
    for g in path:
        stage = replace(cfg, gamma=g)
        res = _run(make(stage), f, stage, x0=x0)
        spent.append(res)
        x0 = (res.u, res.v)
    history = tuple(r for s in spent for r in s.history)
    flags = dict(res.flags, continuation=path)
    return replace(res, iterations=len(history), history=history, flags=flags)


def _prep(f):
    f = as_image(f)
    if not np.all(np.isfinite(f)):
        raise ValueError("input image contains non-finite values")
    return f


def _nonneg(f, name):
    if np.any(f < 0):
        warnings.warn(f"{name}: negative data clamped to 0", RuntimeWarning, stacklevel=3)
        return np.maximum(f, 0.0), True
    return f, False


# ---------------------------------------------------------------------------
# public solvers


def _start(x0, f, two_var):
    if x0 is None:
        return None
    u0, v0 = x0
    u0 = as_image(u0)
    if u0.shape != f.shape:
        raise ValueError("warm start has the wrong shape")
    if two_var:
        v0 = np.zeros_like(f) if v0 is None else as_image(v0)
    else:
        v0 = None
    return u0, v0


def ssn_l1l2(f, cfg: SolverConfig, x0=None):
    """TV-IC for salt & pepper + Gaussian noise: returns ``u`` and the impulse channel ``v``.

    ``x0 = (u0, v0)`` replaces the default start ``(f, 0)``.
    """
    w = cfg.weights
    if not (w.lambda1 > 0 and w.lambda2 > 0):
        raise ValueError("lambda1 and lambda2 must be positive")
    f = _prep(f)
    return _drive(lambda c: _L1L2IC(f, c), f, cfg, _start(x0, f, True))


def ssn_l2kl(f, cfg: SolverConfig, x0=None):
    """TV-IC for Gaussian + Poisson noise: ``v`` holds the Gaussian channel.

    A warm start must satisfy ``u0 > 0`` and ``v0 < f``.
    """
    w = cfg.weights
    if not (w.lambda1 > 0 and w.lambda2 > 0):
        raise ValueError("lambda1 and lambda2 must be positive")
    f = _prep(f)
    if x0 is not None:
        u0, v0 = _start(x0, f, True)
        if np.any(u0 <= 0) or np.any(v0 >= f):
            raise ValueError("warm start must satisfy u0 > 0 and v0 < f")
        x0 = (u0, v0)
    return _drive(lambda c: _L2KLIC(f, c), f, cfg, x0)


def tv_l1l2(f, lambda1, lambda2, gamma=None, cfg: SolverConfig | None = None, name="tv-l1l2",
            x0=None):
    """Additive TV-L1-L2 baseline; a zero weight disables its term."""
    cfg = cfg or SolverConfig()
    if gamma is not None:
        cfg = replace(cfg, gamma=gamma)
    if lambda1 < 0 or lambda2 < 0 or lambda1 == lambda2 == 0:
        raise ValueError("need non-negative weights, at least one positive")
    f = _prep(f)
    return _drive(lambda c: _Single(f, c, l1=lambda1, l2=lambda2, name=name), f, cfg,
                  _start(x0, f, False))


def tv_l1(f, lambda1, gamma=None, cfg=None, x0=None):
    return tv_l1l2(f, lambda1, 0.0, gamma, cfg, name="tv-l1", x0=x0)


def tv_l2(f, lambda2, gamma=None, cfg=None, x0=None):
    return tv_l1l2(f, 0.0, lambda2, gamma, cfg, name="tv-l2", x0=x0)


def tv_l2kl(f, lambda1, lambda2, gamma=None, cfg: SolverConfig | None = None, name="tv-l2kl",
            x0=None):
    """TV with additive L2 (weight ``lambda1``) and reduced KL (weight ``lambda2``) fidelities."""
    cfg = cfg or SolverConfig()
    if gamma is not None:
        cfg = replace(cfg, gamma=gamma)
    if lambda1 < 0 or lambda2 <= 0:
        raise ValueError("lambda2 must be positive and lambda1 non-negative")
    f, clamped = _nonneg(_prep(f), name)
    x0 = _start(x0, f, False)
    if x0 is not None and np.any(x0[0][f > 0] <= 0):
        raise ValueError("warm start must be positive where f > 0")
    res = _drive(lambda c: _Single(f, c, l2=lambda1, kl=lambda2, name=name), f, cfg, x0)
    res.flags["clamped_input"] = clamped
    return res


def tv_kl(f, lambda2, gamma=None, cfg=None, x0=None):
    return tv_l2kl(f, 0.0, lambda2, gamma, cfg, name="tv-kl", x0=x0)


def tv_gp(f, sigma2, gamma=None, cfg: SolverConfig | None = None, n_max=None, peak=1.0, weight=1.0,
          x0=None):
    """TV with the exact (truncated) Gaussian-Poisson negative log-likelihood.

    ``peak`` rescales intensities to photon counts as in :func:`tvic.noise.add_poisson`.
    Energy damping is always enabled because the likelihood is not convex.
    """
    cfg = cfg or SolverConfig()
    if gamma is not None:
        cfg = replace(cfg, gamma=gamma)
    cfg = replace(cfg, damping=True)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    f = _prep(f)
    if n_max is None:
        n_max = gp_default_nmax(max(1.0, float(f.max())), peak)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    x0 = _start(x0, f, False)
    if x0 is not None and np.any(x0[0] <= 0):
        raise ValueError("warm start must be positive")
    return _drive(lambda c: _GP(f, c, sigma2, n_max, peak, weight), f, cfg, x0)


MODELS = ("tvic-l1l2", "tvic-l2kl", "tv-l1", "tv-l2", "tv-l1l2", "tv-kl", "tv-l2kl", "tv-gp")


def solve(model, f, cfg: SolverConfig, sigma2=None, peak=1.0, n_max=None, weight=1.0, x0=None):
    """Dispatch by model name using ``cfg.weights`` for the fidelity weights.

    Single-noise models read the weight of their own term: ``lambda1`` for
    TV-L1, ``lambda2`` for TV-L2 and TV-KL.
    """
    l1, l2 = cfg.weights.lambda1, cfg.weights.lambda2
    if model == "tvic-l1l2":
        return ssn_l1l2(f, cfg, x0=x0)
    if model == "tvic-l2kl":
        return ssn_l2kl(f, cfg, x0=x0)
    if model == "tv-l1":
        return tv_l1(f, l1, cfg=cfg, x0=x0)
    if model == "tv-l2":
        return tv_l2(f, l2, cfg=cfg, x0=x0)
    if model == "tv-l1l2":
        return tv_l1l2(f, l1, l2, cfg=cfg, x0=x0)
    if model == "tv-kl":
        return tv_kl(f, l2, cfg=cfg, x0=x0)
    if model == "tv-l2kl":
        return tv_l2kl(f, l1, l2, cfg=cfg, x0=x0)
    if model == "tv-gp":
        if sigma2 is None:
            raise ValueError("tv-gp needs sigma2")
        return tv_gp(f, sigma2, cfg=cfg, n_max=n_max, peak=peak, weight=weight, x0=x0)
    raise ValueError(f"unknown model {model!r}")
