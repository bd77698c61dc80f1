"""YAML problem and experiment files.

A problem file looks like::

    problem:
      grid: {a: 0.0, b: 1.0, n_interior: 200}
      orders: [0.8, 0.4]
      horizon: 1.0
      components:
        - {a: "1 + x", u0: "sin(pi*x)"}
        - {a: "1", u0: {modes: [1.0, 0.3]}, source: "exp(-t)*x*(1-x)"}
      coupling:
        c: [["-2", "1"], ["1", "-2"]]
        b: [["0", "0"], ["0", "0"]]      # optional
        t_nodes: [0.0, 0.5, 1.0]         # optional, for t-dependent entries
    solve: {...}                         # command sections, see cli

Every coefficient is an expression in ``x`` and ``t`` (see ``fracsys.expr``)
or a plain number.  ``u0`` may instead list coefficients on the eigenmodes
of that component's operator.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError, FracsysError
from .expr import compile_expr
from .spectral import EllipticOperator1D, Grid1D, eigensystem
from .system import CouplingCoeffs, OrderVector, ProblemSpec

__all__ = ["ExperimentConfig", "load_config", "build_problem", "config_hash"]


def config_hash(raw: dict) -> str:
    """sha256 of the canonical JSON form of the parsed configuration."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    raw: dict
    problem: ProblemSpec | None
    path: str | None = None
    hash: str = ""
    sections: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        sec = self.sections.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        return sec


def _get(d: dict, key: str, where: str, default=None, required=False):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    if key not in d:
        if required:
            raise ConfigError(f"missing key {where}.{key}")
        return default
    return d[key]


def _expr(src, where):
    try:
        return compile_expr(src)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_problem(pdict: dict) -> ProblemSpec:
    """Construct a ProblemSpec from the ``problem`` mapping."""
    g = _get(pdict, "grid", "problem", required=True)
    try:
        grid = Grid1D(float(_get(g, "a", "grid", 0.0)), float(_get(g, "b", "grid", 1.0)),
                      int(_get(g, "n_interior", "grid", required=True)))
        orders = OrderVector(_get(pdict, "orders", "problem", required=True))
    except FracsysError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid or orders: {exc}") from exc
    K = orders.K
    T = float(_get(pdict, "horizon", "problem", 1.0))
    comps = _get(pdict, "components", "problem", required=True)
    if not isinstance(comps, list) or len(comps) != K:
        raise ConfigError(f"problem.components must list {K} entries")
    x = grid.x
    ops, u0, src = [], [], []
    for k, comp in enumerate(comps):
        where = f"components[{k}]"
        a_fun = _expr(_get(comp, "a", where, 1.0), where + ".a")
        if a_fun.depends_on_t:
            raise ConfigError(f"{where}.a must not depend on t")
        try:
            op = EllipticOperator1D(grid, np.broadcast_to(a_fun(grid.x_mid, 0.0), (grid.n_interior + 1,)).copy())
        except FracsysError as exc:
            raise ConfigError(f"{where}.a: {exc}") from exc
        ops.append(op)
        u = _get(comp, "u0", where, 0.0)
        if isinstance(u, dict):
            modes = np.asarray(_get(u, "modes", where + ".u0", required=True), dtype=float)
            eig = eigensystem(op, len(modes))
            u0.append(eig.synth(modes))
        else:
            u0.append(np.broadcast_to(_expr(u, where + ".u0")(x, 0.0), x.shape))
        s = _get(comp, "source", where)
        src.append(None if s is None else _expr(s, where + ".source"))
    cp = _get(pdict, "coupling", "problem", {}) or {}
    c_src = _get(cp, "c", "coupling")
    b_src = _get(cp, "b", "coupling")

    def table(srcs, name):
        if srcs is None:
            return None
        if not (isinstance(srcs, list) and len(srcs) == K and all(isinstance(r, list) and len(r) == K for r in srcs)):
            raise ConfigError(f"coupling.{name} must be a {K}x{K} list")
        return [[_expr(srcs[k][l], f"coupling.{name}[{k}][{l}]") for l in range(K)] for k in range(K)]

    c_funs = table(c_src, "c")
    b_funs = table(b_src, "b")
    funs = [f for tab in (c_funs, b_funs) if tab for row in tab for f in row]
    t_nodes = _get(cp, "t_nodes", "coupling")
    if t_nodes is None:
        t_nodes = np.linspace(0.0, T, 65) if any(f.depends_on_t for f in funs) else [0.0]
    if c_funs is None and b_funs is None:
        coupling = CouplingCoeffs.zeros(K, grid.n_interior)
    else:
        if c_funs is None:
            c_funs = [[None] * K for _ in range(K)]
        coupling = CouplingCoeffs.from_functions(c_funs, x, b_funs, t_nodes)

    def stacked(t, _src=tuple(src), _x=x):
        return np.stack([np.zeros_like(_x) if f is None else np.broadcast_to(f(_x, t), _x.shape) for f in _src])

    source = stacked if any(f is not None for f in src) else None
    try:
        return ProblemSpec(orders, tuple(ops), coupling, np.array(u0), T, source)
    except FracsysError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path_or_dict) -> ExperimentConfig:
    """Read a YAML experiment file (or an already parsed mapping)."""
    path = None
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        path = os.fspath(path_or_dict)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    problem = build_problem(raw["problem"]) if "problem" in raw else None
    sections = {k: v for k, v in raw.items() if k != "problem"}
    return ExperimentConfig(raw, problem, path, config_hash(raw), sections)
