"""Parameter sweeps, grid-search learning and model comparison.

These drive the solvers on one image and return plain rows (lists of dicts)
that the command-line front end writes as CSV.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import norm_l1, norm_l2_sq
from .huber import huber_tv
from .metrics import psnr
from .solvers import MAX_ITER, TOLERANCE, SolverConfig, solve

OK_STATUS = (TOLERANCE, MAX_ITER)
DEFAULT_GRID = tuple(np.logspace(1, 5, 15))

# single-noise limit of each IC model when one weight is swept to infinity
SINGLE_NOISE_LIMIT = {
    ("tvic-l1l2", "lambda1"): "tv-l2",
    ("tvic-l1l2", "lambda2"): "tv-l1",
    ("tvic-l2kl", "lambda1"): "tv-kl",
    ("tvic-l2kl", "lambda2"): "tv-l2",
}


def thread_count():
    """Worker threads for independent cells, from ``TVIC_THREADS`` (default: all cores)."""
    raw = os.environ.get("TVIC_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"TVIC_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError("TVIC_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def ordered_map(fn, items, threads=None):
    """``[fn(x) for x in items]`` on a thread pool, results in input order."""
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def baseline_weights(ic_model, swept, fixed_value):
    """``(model, lambda1, lambda2)`` of the single-noise baseline for a sweep.

    The baseline carries the fixed weight on its only term; TV-L1 reads
    ``lambda1`` and TV-L2 / TV-KL read ``lambda2``.  For the L2-KL model with
    ``lambda2 -> inf`` the limit is TV-L2 with weight ``lambda1``.
    """
    model = SINGLE_NOISE_LIMIT[(ic_model, swept)]
    if model == "tv-l1":
        return model, fixed_value, 0.0
    return model, 0.0, fixed_value


def run_status(res):
    return res.termination_reason


def asymptotics(f, model, swept, values, fixed, cfg: SolverConfig | None = None, threads=None):
    """Sweep one IC weight with the other fixed.

    Each row has the swept value, ``|v|_1``, ``|f-u-v|_2^2``, distances of
    ``u`` to the single-noise baseline and the solver status.
    """
    if (model, swept) not in SINGLE_NOISE_LIMIT:
        raise ValueError(f"no sweep for model {model!r} over {swept!r}")
    values = [float(x) for x in values]
    if not values or min(values) <= 0 or not fixed > 0:
        raise ValueError("sweep values and the fixed weight must be positive")
    cfg = cfg or SolverConfig()
    base_model, b1, b2 = baseline_weights(model, swept, fixed)
    base = solve(base_model, f, cfg.with_weights(b1, b2))

    def cell(lam):
        w = {"lambda1": lam, "lambda2": fixed} if swept == "lambda1" else {"lambda1": fixed, "lambda2": lam}
        try:
            res = solve(model, f, cfg.with_weights(**w))
        except Exception as exc:  # recorded per row, the sweep continues
            return {"lambda": lam, "status": f"error: {exc}", "iterations": 0}
        d = res.u - base.u
        return {
            "lambda": lam,
            "v_l1": norm_l1(res.v),
            "resid_l2sq": norm_l2_sq(f - res.u - res.v),
            "dist_single_linf": float(np.max(np.abs(d))),
            "dist_single_l2sq": norm_l2_sq(d),
            "dist_single_l1": norm_l1(d),
            "iterations": res.iterations,
            "status": run_status(res),
            "converged": res.converged,
        }

    rows = ordered_map(cell, values, threads)
    return rows, base


ASYMPTOTICS_COLUMNS = ("lambda", "v_l1", "resid_l2sq", "dist_single_linf", "dist_single_l2sq",
                       "dist_single_l1", "iterations", "status", "converged")


def learning_cost(u, truth, kind, gamma, h):
    """``l2``: ``1/2 |u - truth|^2``; ``huber-tv``: Huberised TV of ``u - truth``."""
    if kind == "l2":
        return 0.5 * norm_l2_sq(u - truth)
    if kind == "huber-tv":
        return huber_tv(u - truth, gamma, h)
    raise ValueError(f"unknown cost {kind!r}")


@dataclass(frozen=True)
class GridResult:
    rows: list
    best: dict | None


def learn_grid(f, truth, model, cost="huber-tv", lambda1s=DEFAULT_GRID, lambda2s=DEFAULT_GRID,
               cfg: SolverConfig | None = None, threads=None, warm_start=True):
    """Evaluate ``cost`` over a (lambda1, lambda2) grid; argmin over successful cells.

    Rows are in (lambda1, lambda2) index order.  With ``warm_start`` each
    lambda1 row is solved in increasing lambda2, starting from the previous
    cell; rows run in parallel.
    """
    lambda1s = [float(x) for x in lambda1s]
    lambda2s = [float(x) for x in lambda2s]
    if not lambda1s or not lambda2s:
        raise ValueError("grids must be non-empty")
    if truth.shape != f.shape:
        raise ValueError("ground truth and data differ in shape")
    cfg = cfg or SolverConfig()
    h = cfg.grid_spacing(f.shape)
    order = np.argsort(lambda2s, kind="stable")

    def row(i):
        l1 = lambda1s[i]
        out = [None] * len(lambda2s)
        x0 = None
        for j in order:
            l2 = lambda2s[j]
            rec = {"i": i, "j": int(j), "lambda1": l1, "lambda2": l2}
            try:
                res = solve(model, f, cfg.with_weights(l1, l2), x0=x0)
            except Exception as exc:
                rec.update(cost=math.nan, psnr=math.nan, iterations=0, status=f"error: {exc}")
                out[j] = rec
                x0 = None
                continue
            ok = res.termination_reason in OK_STATUS and np.all(np.isfinite(res.u))
            rec.update(cost=learning_cost(res.u, truth, cost, cfg.gamma, h) if ok else math.nan,
                       psnr=psnr(res.u, truth), iterations=res.iterations,
                       status=res.termination_reason)
            out[j] = rec
            x0 = (res.u, res.v) if (warm_start and ok) else None
        return out

    rows = [r for chunk in ordered_map(row, range(len(lambda1s)), threads) for r in chunk]
    good = [r for r in rows if r["status"] in OK_STATUS and math.isfinite(r["cost"])]
    best = min(good, key=lambda r: (r["cost"], r["i"], r["j"])) if good else None
    return GridResult(rows=rows, best=best)


GRID_COLUMNS = ("i", "j", "lambda1", "lambda2", "cost", "psnr", "iterations", "status")


def compare(f, truth, specs, cfg: SolverConfig | None = None, threads=None):
    """Run ``specs`` (a list of ``(model, params)``) and tabulate PSNR.

    ``params`` may hold ``lambda1``, ``lambda2``, ``sigma2``, ``peak``,
    ``weight`` and ``n_max``.  Failures become rows with their message.
    """
    if not specs:
        raise ValueError("empty model list")
    cfg = cfg or SolverConfig()
    p_f = psnr(f, truth) if truth is not None else math.nan

    def one(spec):
        model, params = spec
        params = dict(params)
        l1 = float(params.pop("lambda1", cfg.weights.lambda1))
        l2 = float(params.pop("lambda2", cfg.weights.lambda2))
        row = {"model": model, "lambda1": l1, "lambda2": l2, "psnr_f": p_f}
        try:
            res = solve(model, f, cfg.with_weights(l1, l2), **params)
        except Exception as exc:
            row.update(psnr_u=math.nan, iterations=0, status=f"error: {exc}")
            return row, None
        row.update(psnr_u=psnr(res.u, truth) if truth is not None else math.nan,
                   iterations=res.iterations, status=res.termination_reason)
        return row, res

    return ordered_map(one, specs, threads)


COMPARE_COLUMNS = ("model", "lambda1", "lambda2", "psnr_f", "psnr_u", "iterations", "status")
