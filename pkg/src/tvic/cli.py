"""Command-line front end: ``tvic synth | denoise | asymptotics | learn-grid | compare | report``.

Every command accepts ``--config FILE`` with ``key = value`` lines naming the
command's long options; options given on the command line win.  Exit codes:
0 success, 2 bad flags, 3 I/O error, 4 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .experiments import (ASYMPTOTICS_COLUMNS, COMPARE_COLUMNS, GRID_COLUMNS, asymptotics, compare,
                          learn_grid)
from .fidelity import FidelityWeights
from .io import ImageIOError, read_image, write_image
from .metrics import decompose, psnr
from .noise import RNG_ALGORITHM, NoiseSpec, corrupt
from .phantom import phantom
from .solvers import MAX_ITER, MODELS, TOLERANCE, SolverConfig, solve

EXIT_OK = 0
EXIT_FLAGS = 2
EXIT_IO = 3
EXIT_SOLVER = 4

COMMANDS = ("synth", "denoise", "asymptotics", "learn-grid", "compare", "report")
IC_MODELS = ("tvic-l1l2", "tvic-l2kl")

log = logging.getLogger("tvic")


class FlagError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config files


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from exc
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FlagError(f"{path}:{n}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def config_tokens(cfg, parser):
    """Turn config entries into option tokens understood by ``parser``."""
    flags = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                flags[opt[2:]] = action
    tokens = []
    for key, value in cfg.items():
        if key == "config":
            continue
        action = flags.get(key)
        if action is None:
            raise FlagError(f"unknown config key {key!r}")
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append("--" + key)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise FlagError(f"config key {key!r} expects a boolean")
        elif action.nargs in ("+", "*"):
            tokens += ["--" + key] + value.split()
        elif isinstance(action, argparse._AppendAction):
            for item in value.split(";"):
                tokens += ["--" + key, item.strip()]
        else:
            tokens += ["--" + key, value]
    return tokens


# ---------------------------------------------------------------------------
# parser


def _spacing(text):
    if text == "paper":
        return text
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("spacing must be 'paper' or a positive number") from None
    if not h > 0:
        raise argparse.ArgumentTypeError("spacing must be positive")
    return h


def _positive(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def _nonneg(text):
    x = float(text)
    if x < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return x


def _solver_options(p):
    g = p.add_argument_group("solver")
    g.add_argument("--gamma", type=_positive, default=1e5, help="Huber parameter")
    g.add_argument("--tol", type=_positive, default=1e-6, help="relative step tolerance")
    g.add_argument("--res-tol", type=_positive, default=1e-6, help="residual tolerance relative to 1+|f|")
    g.add_argument("--max-iter", type=int, default=35)
    g.add_argument("--linsolve", choices=("auto", "direct", "iterative"), default="auto")
    g.add_argument("--no-damping", action="store_true", help="disable the energy line search")
    g.add_argument("--continuation", choices=("auto", "on", "off"), default="auto")
    g.add_argument("--spacing", type=_spacing, default="paper", help="grid step h ('paper' = 1/N)")


def _noise_options(p):
    g = p.add_argument_group("noise")
    g.add_argument("--sp-density", type=float, default=0.0)
    g.add_argument("--gauss-var", type=float, default=0.0)
    g.add_argument("--poisson", action="store_true")
    g.add_argument("--peak", type=_positive, default=100.0, help="Poisson peak (counts per unit intensity)")
    g.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="tvic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tvic {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value file; command-line flags override it")
        return p

    p = command("synth", "corrupt an image with salt & pepper / Gaussian / Poisson noise")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--phantom", type=int, metavar="N", help="use the built-in N x N phantom")
    p.add_argument("--output", required=True, help="noisy image (.png/.pgm); a .npy twin keeps exact values")
    p.add_argument("--clean-output", help="also save the clean image (useful with --phantom)")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    _noise_options(p)

    p = command("denoise", "run one model and write u, v and both residual channels")
    p.add_argument("--input", required=True)
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--lambda1", type=_nonneg)
    p.add_argument("--lambda2", type=_nonneg)
    p.add_argument("--sigma2", type=_positive, help="Gaussian variance (tv-gp)")
    p.add_argument("--gp-peak", type=_positive, default=1.0, help="counts per unit intensity (tv-gp)")
    p.add_argument("--gp-weight", type=_positive, default=1.0, help="likelihood weight (tv-gp)")
    p.add_argument("--n-max", type=int, help="series truncation (tv-gp)")
    p.add_argument("--truth", help="ground truth for PSNR")
    p.add_argument("--outdir", required=True)
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    _solver_options(p)

    p = command("asymptotics", "sweep one IC weight and compare with the single-noise limit")
    p.add_argument("--input", required=True)
    p.add_argument("--model", choices=IC_MODELS, required=True)
    p.add_argument("--sweep", choices=("lambda1", "lambda2"), required=True)
    p.add_argument("--fixed", type=_positive, required=True, help="value of the other weight")
    p.add_argument("--start", type=_positive, default=1e1)
    p.add_argument("--stop", type=_positive, default=1e5)
    p.add_argument("--num", type=int, default=9)
    p.add_argument("--output", required=True, help="CSV file")
    _solver_options(p)

    p = command("learn-grid", "grid search of (lambda1, lambda2) against a ground truth")
    p.add_argument("--input", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--model", choices=("tvic-l1l2", "tvic-l2kl", "tv-l1l2", "tv-l2kl"), required=True)
    p.add_argument("--cost", choices=("l2", "huber-tv"), default="huber-tv")
    for w in ("lambda1", "lambda2"):
        p.add_argument(f"--{w}-min", type=_positive, default=1e1)
        p.add_argument(f"--{w}-max", type=_positive, default=1e5)
        p.add_argument(f"--{w}-num", type=int, default=15)
    p.add_argument("--cold-start", action="store_true", help="solve every cell from the default start")
    p.add_argument("--output", required=True, help="CSV file")
    _solver_options(p)

    p = command("compare", "run several models on one image and tabulate PSNR")
    p.add_argument("--input", required=True)
    p.add_argument("--truth")
    p.add_argument("--models", nargs="+", required=True, choices=MODELS)
    p.add_argument("--param", action="append", default=[], metavar="MODEL:KEY=VALUE",
                   help="per-model parameter, e.g. tv-l1:lambda1=60")
    p.add_argument("--outdir", required=True)
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    _solver_options(p)

    p = command("report", "summarise an experiment record")
    p.add_argument("record")
    return parser


def _insert_config(argv, parser):
    """Expand ``--config FILE`` into option tokens placed right after the command."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    cmd_pos = next((i for i, a in enumerate(argv) if a in COMMANDS), None)
    if cmd_pos is None:
        return argv
    path = None
    rest = []
    it = iter(range(cmd_pos + 1, len(argv)))
    for i in it:
        a = argv[i]
        if a == "--config":
            try:
                path = argv[next(it)]
            except StopIteration:
                raise FlagError("--config needs a file") from None
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
        else:
            rest.append(a)
    subparser = parser._subparsers._group_actions[0].choices[argv[cmd_pos]]
    tokens = config_tokens(read_config(path), subparser)
    return argv[:cmd_pos + 1] + tokens + rest


# ---------------------------------------------------------------------------
# helpers


def solver_config(ns, lambda1=1.0, lambda2=1.0):
    return SolverConfig(weights=FidelityWeights(lambda1, lambda2), gamma=ns.gamma, tol=ns.tol,
                        res_tol=ns.res_tol, max_iter=ns.max_iter, linsolve=ns.linsolve,
                        damping=not ns.no_damping, continuation=ns.continuation,
                        spacing=ns.spacing)


def config_dict(cfg):
    d = asdict(cfg)
    d["penalty_init"] = list(cfg.penalty_init)
    return d


def load(path):
    """PGM/PNG through :mod:`tvic.io`; ``.npy`` keeps unclamped values."""
    if str(path).lower().endswith(".npy"):
        try:
            img = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ImageIOError(f"{path}: {exc}") from exc
        if img.ndim != 2:
            raise ImageIOError(f"{path}: expected a 2-D array")
        return img.astype(float)
    return read_image(path)


def save(path, img, files, bits=8):
    write_image(path, img, bits)
    files.append(os.fspath(path))


def save_npy(path, arr, files):
    try:
        np.save(path, np.asarray(arr, dtype=float), allow_pickle=False)
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    files.append(os.fspath(path))


def write_csv(path, columns, rows, files):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(r.get(c, "")) for c in columns])
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    files.append(os.fspath(path))


def _cell(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_record(path, record, files):
    record = dict(record)
    record.update(tool="tvic", version=__version__, rng=RNG_ALGORITHM)
    record["files"] = list(files)
    record["record"] = os.fspath(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(record), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc


def _outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return path


def _record_path(output):
    return os.path.splitext(output)[0] + ".json"


def run_summary(res, f, truth):
    out = {"model": res.model, "iterations": res.iterations, "converged": res.converged,
           "termination_reason": res.termination_reason, "residual": res.residual,
           "energies": res.energies, "flags": res.flags}
    if truth is not None:
        out["psnr_f"] = psnr(f, truth)
        out["psnr_u"] = psnr(res.u, truth)
    return out


def failed(res):
    return res.termination_reason not in (TOLERANCE, MAX_ITER)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(ns):
    spec = NoiseSpec(ns.sp_density, ns.gauss_var, ns.poisson, ns.peak, ns.seed)
    clean = phantom(ns.phantom) if ns.phantom is not None else load(ns.input)
    f, mask = corrupt(clean, spec)
    files = []
    stem = os.path.splitext(ns.output)[0]
    save(ns.output, f, files, ns.bits)
    save_npy(stem + ".npy", f, files)
    save(stem + "_mask.png", mask.astype(float), files)
    if ns.clean_output:
        save(ns.clean_output, clean, files, ns.bits)
        save_npy(os.path.splitext(ns.clean_output)[0] + ".npy", clean, files)
    write_record(_record_path(ns.output), {
        "command": "synth", "input": ns.input if ns.input else f"phantom:{ns.phantom}",
        "noise": spec.to_dict(), "shape": list(f.shape)}, files)
    return EXIT_OK


def _weights_for(model, l1, l2):
    need = {"tvic-l1l2": ("lambda1", "lambda2"), "tvic-l2kl": ("lambda1", "lambda2"),
            "tv-l1": ("lambda1",), "tv-l2": ("lambda2",), "tv-l1l2": ("lambda1", "lambda2"),
            "tv-kl": ("lambda2",), "tv-l2kl": ("lambda1", "lambda2"), "tv-gp": ()}[model]
    given = {"lambda1": l1, "lambda2": l2}
    missing = [k for k in need if given[k] is None]
    if missing:
        raise FlagError(f"model {model} needs --{' --'.join(missing)}")
    return (l1 if l1 is not None else 0.0), (l2 if l2 is not None else 0.0)


def cmd_denoise(ns):
    l1, l2 = _weights_for(ns.model, ns.lambda1, ns.lambda2)
    if ns.model == "tv-gp" and ns.sigma2 is None:
        raise FlagError("tv-gp needs --sigma2")
    f = load(ns.input)
    truth = load(ns.truth) if ns.truth else None
    if truth is not None and truth.shape != f.shape:
        raise FlagError("--truth has a different shape from --input")
    cfg = solver_config(ns, l1, l2)
    res = solve(ns.model, f, cfg, sigma2=ns.sigma2, peak=ns.gp_peak, n_max=ns.n_max,
                weight=ns.gp_weight)
    dec = decompose(f, res)
    out = _outdir(ns.outdir)
    files = []
    ext = "." + ns.format
    for name, img in (("u", dec.u), ("v", dec.v), ("f_minus_v", dec.residual_mid),
                      ("f_minus_v_minus_u", dec.residual_final)):
        if name == "v" and res.v is None:
            continue
        save(os.path.join(out, name + ext), img, files)
        save_npy(os.path.join(out, name + ".npy"), img, files)
    write_record(os.path.join(out, "record.json"), {
        "command": "denoise", "input": ns.input, "truth": ns.truth,
        "solver": config_dict(cfg), "runs": [run_summary(res, f, truth)]}, files)
    if truth is not None:
        print(f"PSNR f = {psnr(f, truth):.2f} dB, u = {psnr(res.u, truth):.2f} dB")
    print(f"{res.model}: {res.termination_reason} after {res.iterations} iterations")
    if failed(res):
        log.error("solver failure: %s", res.termination_reason)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_asymptotics(ns):
    if ns.num < 1:
        raise FlagError("--num must be >= 1")
    f = load(ns.input)
    values = np.logspace(math.log10(ns.start), math.log10(ns.stop), ns.num)
    cfg = solver_config(ns)
    rows, base = asymptotics(f, ns.model, ns.sweep, values, ns.fixed, cfg)
    files = []
    write_csv(ns.output, ASYMPTOTICS_COLUMNS, rows, files)
    write_record(_record_path(ns.output), {
        "command": "asymptotics", "input": ns.input, "model": ns.model, "sweep": ns.sweep,
        "fixed": ns.fixed, "solver": config_dict(cfg),
        "baseline": {"model": base.model, "termination_reason": base.termination_reason,
                     "iterations": base.iterations},
        "runs": rows}, files)
    print(f"{len(rows)} sweep points written to {ns.output}")
    return EXIT_OK


def cmd_learn_grid(ns):
    for w in ("lambda1", "lambda2"):
        if getattr(ns, f"{w}_num") < 1:
            raise FlagError(f"--{w}-num must be >= 1")
    f = load(ns.input)
    truth = load(ns.truth)
    if truth.shape != f.shape:
        raise FlagError("--truth has a different shape from --input")

    def axis(w):
        lo, hi, n = getattr(ns, f"{w}_min"), getattr(ns, f"{w}_max"), getattr(ns, f"{w}_num")
        return np.logspace(math.log10(lo), math.log10(hi), n)

    cfg = solver_config(ns)
    grid = learn_grid(f, truth, ns.model, ns.cost, axis("lambda1"), axis("lambda2"), cfg,
                      warm_start=not ns.cold_start)
    files = []
    write_csv(ns.output, GRID_COLUMNS, grid.rows, files)
    write_record(_record_path(ns.output), {
        "command": "learn-grid", "input": ns.input, "truth": ns.truth, "model": ns.model,
        "cost": ns.cost, "solver": config_dict(cfg), "best": grid.best,
        "failed_cells": sum(1 for r in grid.rows if math.isnan(r["cost"]))}, files)
    if grid.best is None:
        log.error("no grid cell solved successfully")
        return EXIT_SOLVER
    b = grid.best
    print(f"argmin: lambda1 = {b['lambda1']:.6g}, lambda2 = {b['lambda2']:.6g}, "
          f"cost = {b['cost']:.6g}, PSNR = {b['psnr']:.2f} dB")
    return EXIT_OK


def parse_params(items, models):
    """``MODEL:KEY=VALUE`` strings to ``{model: {key: value}}``."""
    allowed = {"lambda1", "lambda2", "sigma2", "peak", "weight", "n_max"}
    out = {m: {} for m in models}
    for item in items:
        try:
            model, kv = item.split(":", 1)
            key, value = kv.split("=", 1)
        except ValueError:
            raise FlagError(f"bad --param {item!r}, expected MODEL:KEY=VALUE") from None
        key = key.strip().replace("-", "_")
        if model not in out:
            raise FlagError(f"--param for {model!r}, which is not in --models")
        if key not in allowed:
            raise FlagError(f"unknown parameter {key!r} (allowed: {', '.join(sorted(allowed))})")
        try:
            out[model][key] = int(value) if key == "n_max" else float(value)
        except ValueError:
            raise FlagError(f"bad value in --param {item!r}") from None
    return out


def cmd_compare(ns):
    params = parse_params(ns.param, ns.models)
    f = load(ns.input)
    truth = load(ns.truth) if ns.truth else None
    if truth is not None and truth.shape != f.shape:
        raise FlagError("--truth has a different shape from --input")
    cfg = solver_config(ns)
    specs = [(m, params[m]) for m in ns.models]
    results = compare(f, truth, specs, cfg)
    out = _outdir(ns.outdir)
    files = []
    rows = []
    for k, (row, res) in enumerate(results):
        rows.append(row)
        if res is not None:
            save(os.path.join(out, f"{k:02d}_{row['model']}.{ns.format}"), res.u, files)
    write_csv(os.path.join(out, "compare.csv"), COMPARE_COLUMNS, rows, files)
    write_record(os.path.join(out, "record.json"), {
        "command": "compare", "input": ns.input, "truth": ns.truth, "solver": config_dict(cfg),
        "runs": rows}, files)
    for r in rows:
        print(f"{r['model']:<10} psnr_u = {r['psnr_u']:.2f} dB  {r['status']}")
    return EXIT_OK


def cmd_report(ns):
    try:
        with open(ns.record, encoding="utf-8") as fh:
            rec = json.load(fh)
    except OSError as exc:
        raise ImageIOError(f"{ns.record}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ImageIOError(f"{ns.record}: not a valid record ({exc})") from exc
    print(f"command: {rec.get('command')}  (tvic {rec.get('version')}, rng {rec.get('rng')})")
    for key in ("input", "truth", "model", "cost", "best"):
        if rec.get(key) is not None:
            print(f"{key}: {rec[key]}")
    for run in rec.get("runs", []):
        print("run: " + ", ".join(f"{k}={v}" for k, v in run.items() if k not in ("energies", "flags")))
    missing = [p for p in rec.get("files", []) if not os.path.exists(p)]
    print(f"files: {len(rec.get('files', []))} listed, {len(missing)} missing")
    return EXIT_OK if not missing else EXIT_IO


HANDLERS = {"synth": cmd_synth, "denoise": cmd_denoise, "asymptotics": cmd_asymptotics,
            "learn-grid": cmd_learn_grid, "compare": cmd_compare, "report": cmd_report}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _insert_config(argv, parser)
    except FlagError as exc:
        parser.error(str(exc))
    except ImageIOError as exc:
        print(f"tvic: {exc}", file=sys.stderr)
        return EXIT_IO
    ns = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(ns.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[ns.command](ns)
    except FlagError as exc:
        print(f"tvic: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except ImageIOError as exc:
        print(f"tvic: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # parameter validation inside the library
        print(f"tvic: {exc}", file=sys.stderr)
        return EXIT_FLAGS


if __name__ == "__main__":
    sys.exit(main())
