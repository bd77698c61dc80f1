"""Command-line front end.

Usage::

    fracsys solve    --config problem.yaml --out runs/a
    fracsys decay    --config problem.yaml --out runs/b
    fracsys invert   --config problem.yaml --out runs/c --seed 3
    fracsys validate --config problem.yaml
    fracsys mlf-eval --alpha 0.5 --beta 1 --z -1 -2 -3

Every command prints a JSON report on stdout and writes it to
``OUT/report.json`` when ``--out`` is given.  Floats are written with 17
significant digits and the report embeds the config hash, the library
version and the seed, so identical inputs give byte-identical reports.
Errors go to stderr as a JSON object; exit status 2 means a bad config, 3 a
numerical failure and 4 a violated precondition.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import config_hash, load_config
from .errors import ConfigError, FracsysError
from .io import fmt, write_decay_csv, write_snapshot, write_solution_csv, write_trace_csv

__all__ = ["main", "dumps"]


# ---------------------------------------------------------------------------
# deterministic JSON
# ---------------------------------------------------------------------------

def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return fmt(v) if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits; non-finite become null."""
    return _encode(obj, indent, 0) + "\n"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _map_jobs(fns, jobs: int):
    """Run callables, possibly on threads; results keep the input order."""
    if jobs <= 1 or len(fns) <= 1:
        return [f() for f in fns]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(f) for f in fns]
        return [f.result() for f in futs]


def _num(sec: dict, key: str, default, cast=float):
    val = sec.get(key, default)
    if val is None:
        return None
    try:
        return cast(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {cast.__name__}, got {val!r}") from exc


def _floats(sec: dict, key: str, default=None):
    val = sec.get(key, default)
    if val is None:
        return None
    try:
        return [float(v) for v in val]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected a list of numbers") from exc


def _load(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if cfg.problem is None:
        raise ConfigError("config has no 'problem' section")
    return cfg


def _envelope(args, cfg_hash: str, command: str) -> dict:
    return {"command": command, "version": __version__, "config_hash": cfg_hash, "seed": args.seed}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> dict:
    from .solver import TimeGrid, cross_method_tolerance, discrete_l2_time, l1_solve, picard_solve

    cfg = _load(args)
    spec = cfg.problem
    sec = cfg.section("solve")
    method = str(sec.get("method", "picard"))
    if method not in ("picard", "l1", "both"):
        raise ConfigError("solve.method must be picard, l1 or both")
    M = _num(sec, "M", 400, int)
    r = _num(sec, "r", None)
    if M < 1:
        raise ConfigError("solve.M must be >= 1")
    tgrid = (TimeGrid.graded(spec.horizon, M, spec.orders.alphas[-1]) if r is None
             else TimeGrid(spec.horizon, M, r))
    n_modes = _num(sec, "n_modes", None, int)
    tol = _num(sec, "tol", 1e-10)
    max_iter = _num(sec, "max_iter", 200, int)
    tasks = []
    if method in ("picard", "both"):
        tasks.append(lambda: picard_solve(spec, tgrid, n_modes=n_modes, tol=tol, max_iter=max_iter))
    if method in ("l1", "both"):
        tasks.append(lambda: l1_solve(spec, tgrid))
    sols = _map_jobs(tasks, args.jobs)
    report = _envelope(args, cfg.hash, "solve")
    report.update({"method": method, "K": spec.K, "M": M, "n_interior": spec.n, "r": tgrid.r,
                   "horizon": spec.horizon})
    for sol in sols:
        if hasattr(sol.diagnostics, "to_dict"):
            report["picard"] = sol.diagnostics.to_dict()
        report.setdefault("final_l2", {})[sol.method] = float(sol.l2_in_space()[-1])
    if len(sols) == 2:
        diff = sols[0].values - sols[1].values
        tolx = cross_method_tolerance(spec.grid.h, M, tgrid.r, spec.orders.alphas)
        d = discrete_l2_time(diff, tgrid, spec.grid.h)
        report["cross_method"] = {"l2_difference": d, "max_abs_difference": float(np.max(np.abs(diff))),
                                  "tolerance": tolx, "agree": bool(d <= tolx)}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        files = []
        for sol in sols:
            if args.format == "csv":
                name = f"solution_{sol.method}.csv"
                write_solution_csv(sol, os.path.join(args.out, name))
                files.append(name)
            name = f"solution_{sol.method}.bin"
            write_snapshot(sol, os.path.join(args.out, name))
            files.append(name)
        report["files"] = files
    return report


def cmd_decay(args) -> dict:
    from .laplace import decay_profile

    cfg = _load(args)
    sec = cfg.section("decay")
    t_min = _num(sec, "t_min", 10.0)
    t_max = _num(sec, "t_max", 1e4)
    pts = _num(sec, "points", 13, int)
    if not 0 < t_min < t_max or pts < 2:
        raise ConfigError("decay needs 0 < t_min < t_max and points >= 2")
    times = np.logspace(math.log10(t_min), math.log10(t_max), pts)
    res = decay_profile(cfg.problem, times)
    report = _envelope(args, cfg.hash, "decay")
    report.update(res.to_dict())
    report["within_0.05"] = bool(abs(res.slope - res.expected) <= 0.05)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        if args.format == "csv":
            write_decay_csv(res, os.path.join(args.out, "decay.csv"))
            report["files"] = ["decay.csv"]
    return report


def cmd_invert(args) -> dict:
    from .io import read_trace_csv
    from .inverse import fit_orders, synthetic_trace

    cfg = _load(args)
    spec = cfg.problem
    sec = cfg.section("invert")
    alpha_true = _floats(sec, "alpha_true", list(spec.orders.alphas))
    alpha_init = _floats(sec, "alpha_init")
    if alpha_init is None:
        alpha_init = [min(0.95, a + 0.1) for a in alpha_true]
    sigma = _num(sec, "sigma", 0.0)
    s_grid = _floats(sec, "s_grid")
    restarts = _num(sec, "restarts", 4, int)
    trace_path = sec.get("trace")
    if trace_path:
        if cfg.path and not os.path.isabs(trace_path):
            trace_path = os.path.join(os.path.dirname(cfg.path), trace_path)
        trace = read_trace_csv(trace_path)
    else:
        x0 = _num(sec, "x0", float(spec.grid.x[spec.n // 2]))
        k0 = _num(sec, "k0", 0, int)
        truth = spec.with_orders(alpha_true)
        trace = synthetic_trace(truth, x0, k0, t_min=_num(sec, "t_min", 1e-3), t_max=_num(sec, "t_max", 1e5),
                                per_decade=_num(sec, "per_decade", 40, int))
    if sigma > 0.0:
        trace = trace.with_noise(sigma, seed=args.seed)
    res = fit_orders(trace, spec, alpha_init, s_grid=s_grid, restarts=restarts, seed=args.seed,
                     sigma=sigma or None)
    report = _envelope(args, cfg.hash, "invert")
    report.update(res.to_dict())
    report.update({"alpha_true": alpha_true, "alpha_init": alpha_init, "sigma": sigma,
                   "x0": trace.x0, "k0": trace.k0,
                   "delta_alpha": [a - b for a, b in zip(res.alpha_hat, alpha_true)]})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_trace_csv(trace, os.path.join(args.out, "trace.csv"))
        report["files"] = ["trace.csv"]
    return report


def cmd_validate(args) -> dict:
    from .expr import compile_expr
    from .inverse import maximum_principle_check
    from .system import validate_cooperative, validate_negative_semidefinite

    cfg = _load(args)
    spec = cfg.problem
    sec = cfg.section("validate")
    coop = validate_cooperative(spec.coupling)
    nsd = validate_negative_semidefinite(spec.coupling)
    report = _envelope(args, cfg.hash, "validate")
    report["cooperative"] = coop.to_dict()
    report["semidefinite"] = nsd.to_dict()
    notes = []
    if not coop.strict:
        notes.append("strict cooperativity fails: some off-diagonal coupling is identically zero "
                     "(decoupled case), so the uniqueness result does not apply")
    if not coop.rowsum:
        notes.append("row sums of C are positive somewhere")
    if not nsd.holds:
        notes.append("symmetric part of C is not negative semidefinite: decay estimate not covered")
    report["notes"] = notes
    F_src = sec.get("F")
    if F_src is not None:
        if not isinstance(F_src, list) or len(F_src) != spec.K:
            raise ConfigError(f"validate.F must list {spec.K} expressions")
        F = np.stack([np.broadcast_to(compile_expr(f)(spec.grid.x, 0.0), (spec.n,)) for f in F_src])
        verdict = maximum_principle_check(spec, F, diagnostic_solve=bool(sec.get("diagnostic_solve", False)))
        report["maximum_principle"] = verdict.to_dict()
    table = [("strict cooperative", coop.strict), ("weak cooperative", coop.weak),
             ("row sums <= 0", coop.rowsum), ("negative semidefinite", nsd.holds)]
    report["table"] = [{"check": a, "pass": b} for a, b in table]
    if not args.quiet:
        for a, b in table:
            print(f"{a:<24s} {'PASS' if b else 'FAIL'}", file=sys.stderr)
    return report


def cmd_mlf_eval(args) -> dict:
    from .mlf import mittag_leffler

    if args.config:
        cfg = load_config(args.config)
        sec = cfg.section("mlf")
        alpha, beta = _num(sec, "alpha", None), _num(sec, "beta", 1.0)
        z = _floats(sec, "z")
        h = cfg.hash
    else:
        alpha, beta, z = args.alpha, args.beta, args.z
        h = config_hash({"alpha": alpha, "beta": beta, "z": z})
    if alpha is None or not z:
        raise ConfigError("mlf-eval needs alpha and a list of z values")
    zs = np.asarray(z, dtype=float)
    chunks = np.array_split(zs, max(1, min(args.jobs, zs.size)))
    vals = np.concatenate(_map_jobs([lambda c=c: np.atleast_1d(mittag_leffler(alpha, beta, c)) for c in chunks],
                                    args.jobs))
    report = _envelope(args, h, "mlf-eval")
    report.update({"alpha": alpha, "beta": beta, "z": zs, "values": vals})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        if args.format == "csv":
            with open(os.path.join(args.out, "mlf.csv"), "w", encoding="utf-8") as fh:
                fh.write("z,value\n")
                fh.writelines(f"{fmt(a)},{fmt(b)}\n" for a, b in zip(zs, vals))
            report["files"] = ["mlf.csv"]
    return report


COMMANDS = {
    "solve": cmd_solve,
    "decay": cmd_decay,
    "invert": cmd_invert,
    "validate": cmd_validate,
    "mlf-eval": cmd_mlf_eval,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracsys", description="Coupled time-fractional diffusion systems.")
    p.add_argument("--version", action="version", version=f"fracsys {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML problem/experiment file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--quiet", action="store_true", help="suppress the report on stdout")
        if name == "mlf-eval":
            sp.add_argument("--alpha", type=float)
            sp.add_argument("--beta", type=float, default=1.0)
            sp.add_argument("--z", type=float, nargs="+")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        report = COMMANDS[args.command](args)
    except FracsysError as exc:
        sys.stderr.write(dumps({"error": exc.to_dict(), "command": args.command, "version": __version__}))
        return exc.exit_code
    text = dumps(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(text)
    if not args.quiet:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
