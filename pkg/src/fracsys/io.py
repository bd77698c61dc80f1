"""Solution, trace and decay-report files.

Binary snapshot layout (little-endian, no padding)::

    int64  K, M, n            number of components, time steps, interior nodes
    float64 times[M + 1]      t_0 = 0, ..., t_M = T
    float64 x[n]              interior nodes
    float64 values[K, M+1, n] row-major

The CSV export is long format with columns ``t,x,component,value`` and skips
t = 0 unless asked, so it has ``K * M * n`` data rows.
"""
from __future__ import annotations

import csv
import io as _io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidParameterError

__all__ = [
    "Snapshot",
    "write_solution_csv",
    "write_snapshot",
    "read_snapshot",
    "write_trace_csv",
    "read_trace_csv",
    "write_decay_csv",
    "fmt",
]

_HEADER = struct.Struct("<qqq")


def fmt(v: float) -> str:
    """Fixed 17-significant-digit formatting for reproducible text output."""
    return format(float(v), ".17g")


@dataclass
class Snapshot:
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray  # (K, M+1, n)

    @property
    def K(self) -> int:
        return self.values.shape[0]


def _fields(sol):
    return np.asarray(sol.times, float), np.asarray(sol.x, float), np.asarray(sol.values, float)


def write_solution_csv(sol, path, include_initial: bool = False) -> int:
    """Write ``t,x,component,value`` rows; returns the number of data rows.

    Components are numbered from 0.
    """
    t, x, v = _fields(sol)
    j0 = 0 if include_initial else 1
    K, _, n = v.shape
    tt = np.repeat(t[j0:], n)
    xx = np.tile(x, t.size - j0)
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("t,x,component,value\n")
        for k in range(K):
            vals = v[k, j0:].ravel()
            fh.writelines(f"{fmt(a)},{fmt(b)},{k},{fmt(c)}\n" for a, b, c in zip(tt, xx, vals))
            rows += vals.size
    return rows


def write_snapshot(sol, path) -> None:
    t, x, v = _fields(sol)
    K, m1, n = v.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(K, m1 - 1, n))
        fh.write(t.astype("<f8").tobytes())
        fh.write(x.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(v).astype("<f8").tobytes())


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise InvalidParameterError("snapshot file is truncated")
    K, M, n = _HEADER.unpack_from(blob)
    if K < 1 or M < 0 or n < 1:
        raise InvalidParameterError("snapshot header is invalid", K=K, M=M, n=n)
    need = _HEADER.size + 8 * ((M + 1) + n + K * (M + 1) * n)
    if len(blob) != need:
        raise InvalidParameterError("snapshot size does not match its header", expected=need, got=len(blob))
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(float)
    t = data[: M + 1]
    x = data[M + 1: M + 1 + n]
    v = data[M + 1 + n:].reshape(K, M + 1, n)
    return Snapshot(t, x, v)


def write_trace_csv(trace, path) -> None:
    """Trace file: a ``# x0=...,k0=...`` line, then ``t,value`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# x0={fmt(trace.x0)},k0={trace.k0}\n")
        fh.write("t,value\n")
        fh.writelines(f"{fmt(a)},{fmt(b)}\n" for a, b in zip(trace.times, trace.values))


def read_trace_csv(path):
    from .inverse import ObservationTrace

    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ConfigError("trace file must start with '# x0=...,k0=...'")
    meta = {}
    for item in lines[0][1:].split(","):
        if "=" in item:
            key, val = item.split("=", 1)
            meta[key.strip()] = val.strip()
    if "x0" not in meta or "k0" not in meta:
        raise ConfigError("trace header must name x0 and k0")
    reader = csv.reader(_io.StringIO("\n".join(lines[1:])))
    head = next(reader, None)
    if head is None or [h.strip() for h in head] != ["t", "value"]:
        raise ConfigError("trace columns must be 't,value'")
    try:
        rows = np.array([[float(a), float(b)] for a, b in reader if a.strip()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"bad number in trace file: {exc}") from exc
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ConfigError("trace file has fewer than two samples")
    return ObservationTrace(float(meta["x0"]), int(meta["k0"]), rows[:, 0], rows[:, 1])


def write_decay_csv(result, path) -> None:
    """Columns ``t,norm,fitted``; ``fitted`` is the regression line."""
    fitted = np.exp(result.intercept) * result.times ** result.slope
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# slope={fmt(result.slope)}\n")
        fh.write("t,norm,fitted\n")
        fh.writelines(f"{fmt(a)},{fmt(b)},{fmt(c)}\n" for a, b, c in zip(result.times, result.norms, fitted))


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return os.fspath(path)
