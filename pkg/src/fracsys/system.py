"""Problem definition for coupled time-fractional diffusion systems.

Each component solves

    d_t^{alpha_k} u_k + A_k u_k = sum_l (b_kl d_x u_l + c_kl u_l) + F_k

on an interval with homogeneous Dirichlet conditions.  Coefficients are
sampled on the spatial grid at a set of time nodes and interpolated linearly
in time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .spectral import Grid1D

__all__ = [
    "OrderVector",
    "CouplingCoeffs",
    "ProblemSpec",
    "SampledField",
    "CooperativeReport",
    "SemidefiniteReport",
    "validate_cooperative",
    "validate_negative_semidefinite",
    "nonneg_nonzero",
    "ZERO_TOL",
    "NONZERO_TOL",
]

ZERO_TOL = 1e-12
NONZERO_TOL = 1e-8


def nonneg_nonzero(v) -> bool:
    """Discrete reading of ``v >= 0`` and ``v`` not identically zero."""
    v = np.asarray(v, dtype=float)
    return bool(v.size and np.min(v) >= -ZERO_TOL and np.max(v) >= NONZERO_TOL)


@dataclass(frozen=True)
class OrderVector:
    """Caputo orders with ``1 > alpha_1 >= ... >= alpha_K > 0``."""

    alphas: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(self.alphas))
        if len(a) < 1:
            raise InvalidParameterError("need at least one order")
        if not all(0.0 < v < 1.0 for v in a):
            raise InvalidParameterError(f"orders must lie in (0, 1), got {a!r}")
        if any(a[i] < a[i + 1] for i in range(len(a) - 1)):
            raise InvalidParameterError(f"orders must be non-increasing, got {a!r}")
        object.__setattr__(self, "alphas", a)

    @property
    def K(self) -> int:
        return len(self.alphas)

    def as_array(self) -> np.ndarray:
        return np.array(self.alphas)

    def betas(self, gamma: float) -> np.ndarray:
        """beta_k = alpha_k (1 - gamma)."""
        return self.as_array() * (1.0 - gamma)

    def beta_bar(self, gamma: float) -> float:
        return float(np.max(self.betas(gamma)))

    def beta_under(self, gamma: float) -> float:
        return float(np.min(self.betas(gamma)))

    def __getitem__(self, k):
        return self.alphas[k]

    def __len__(self):
        return len(self.alphas)


def _interp_weights(t_nodes: np.ndarray, t: float):
    """Index pair and weight for linear interpolation (constant outside)."""
    if t_nodes.size == 1 or t <= t_nodes[0]:
        return 0, 0, 0.0
    if t >= t_nodes[-1]:
        j = t_nodes.size - 1
        return j, j, 0.0
    j = int(np.searchsorted(t_nodes, t, side="right")) - 1
    w = (t - t_nodes[j]) / (t_nodes[j + 1] - t_nodes[j])
    return j, j + 1, float(w)


@dataclass(frozen=True)
class CouplingCoeffs:
    """Sampled coupling coefficients.

    Attributes
    ----------
    b, c : ndarray, shape (K, K, nt, n)
        Advection and reaction coefficients at the interior nodes.
    t_nodes : ndarray, shape (nt,)
        Sampling times; a single node means time independent.
    """

    b: np.ndarray
    c: np.ndarray
    t_nodes: np.ndarray = field(default=None)

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        c = np.array(self.c, dtype=float)
        if c.ndim != 4 or c.shape[0] != c.shape[1]:
            raise InvalidParameterError(f"c must have shape (K, K, nt, n), got {c.shape}")
        if b.shape != c.shape:
            raise InvalidParameterError("b and c must have the same shape")
        tn = np.zeros(c.shape[2]) if self.t_nodes is None else np.array(self.t_nodes, dtype=float).ravel()
        if tn.size != c.shape[2]:
            raise InvalidParameterError("t_nodes does not match the time axis of c")
        if tn.size > 1 and np.any(np.diff(tn) <= 0):
            raise InvalidParameterError("t_nodes must be strictly increasing")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise InvalidParameterError("coupling samples must be finite")
        for arr in (b, c, tn):
            arr.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "t_nodes", tn)

    @classmethod
    def zeros(cls, K: int, n: int) -> "CouplingCoeffs":
        z = np.zeros((K, K, 1, n))
        return cls(z, z)

    @classmethod
    def constant(cls, C, n: int, B=None) -> "CouplingCoeffs":
        """Spatially and temporally constant matrices ``C`` (and ``B``)."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        K = C.shape[0]
        c = np.broadcast_to(C[:, :, None, None], (K, K, 1, n))
        b = np.zeros_like(c) if B is None else np.broadcast_to(np.asarray(B, float)[:, :, None, None], (K, K, 1, n))
        return cls(b, c)

    @classmethod
    def from_functions(cls, c_funs, x, b_funs=None, t_nodes=None) -> "CouplingCoeffs":
        """Sample ``c_funs[k][l](x, t)`` (and ``b_funs``) on ``x`` at ``t_nodes``."""
        K = len(c_funs)
        tn = np.array([0.0]) if t_nodes is None else np.asarray(t_nodes, dtype=float)
        n = np.asarray(x).size

        def sample(funs):
            out = np.zeros((K, K, tn.size, n))
            if funs is None:
                return out
            for k in range(K):
                for l in range(K):
                    f = funs[k][l]
                    if f is None:
                        continue
                    for j, t in enumerate(tn):
                        out[k, l, j] = np.broadcast_to(f(x, t), (n,))
            return out

        return cls(sample(b_funs), sample(c_funs), tn)

    @property
    def K(self) -> int:
        return self.c.shape[0]

    @property
    def n(self) -> int:
        return self.c.shape[3]

    @property
    def time_independent(self) -> bool:
        if self.t_nodes.size == 1:
            return True
        return bool(np.all(self.c == self.c[:, :, :1]) and np.all(self.b == self.b[:, :, :1]))

    @property
    def weakly_coupled(self) -> bool:
        return bool(np.all(self.b == 0.0))

    @property
    def L0(self) -> float:
        """max(1, sum_{k,l} (||b_kl||_inf + ||c_kl||_inf))."""
        nb = np.abs(self.b).max(axis=(2, 3)).sum()
        nc = np.abs(self.c).max(axis=(2, 3)).sum()
        return float(max(1.0, nb + nc))

    def c_at(self, t: float) -> np.ndarray:
        """c(., t) with shape (K, K, n)."""
        i, j, w = _interp_weights(self.t_nodes, float(t))
        return (1.0 - w) * self.c[:, :, i] + w * self.c[:, :, j]

    def b_at(self, t: float) -> np.ndarray:
        i, j, w = _interp_weights(self.t_nodes, float(t))
        return (1.0 - w) * self.b[:, :, i] + w * self.b[:, :, j]

    def matrix_field(self) -> np.ndarray:
        """Time-independent C(x) as an array of shape (n, K, K)."""
        return np.moveaxis(self.c[:, :, 0], -1, 0)


@dataclass(frozen=True)
class SampledField:
    """K space-time samples with linear interpolation in t; shape (K, nt, n)."""

    values: np.ndarray
    t_nodes: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        tn = np.array(self.t_nodes, dtype=float).ravel()
        if v.ndim != 3 or v.shape[1] != tn.size:
            raise InvalidParameterError("values must have shape (K, nt, n) matching t_nodes")
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("field samples must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "t_nodes", tn)

    def __call__(self, t: float) -> np.ndarray:
        i, j, w = _interp_weights(self.t_nodes, float(t))
        return (1.0 - w) * self.values[:, i] + w * self.values[:, j]


@dataclass(frozen=True)
class ProblemSpec:
    """Complete initial-boundary value problem.

    Attributes
    ----------
    orders : OrderVector
    operators : tuple of EllipticOperator1D
        One per component, all on the same grid.
    coupling : CouplingCoeffs
    u0 : ndarray, shape (K, n)
        Initial data at interior nodes.  Arrays of length n + 2 are accepted
        and their boundary entries dropped.
    horizon : float
    source : callable or None
        ``source(t)`` returns an array of shape (K, n); None means F = 0.
    """

    orders: OrderVector
    operators: tuple
    coupling: CouplingCoeffs
    u0: np.ndarray
    horizon: float = 1.0
    source: object = None

    def __post_init__(self):
        if not isinstance(self.orders, OrderVector):
            object.__setattr__(self, "orders", OrderVector(self.orders))
        ops = tuple(self.operators)
        K = self.orders.K
        if len(ops) != K:
            raise InvalidParameterError(f"expected {K} operators, got {len(ops)}")
        grid = ops[0].grid
        if any(op.grid != grid for op in ops):
            raise InvalidParameterError("all components must share one grid")
        n = grid.n_interior
        u0 = np.array(self.u0, dtype=float)
        if u0.ndim == 1 and K == 1:
            u0 = u0[None, :]
        if u0.shape == (K, n + 2):
            u0 = u0[:, 1:-1].copy()
        if u0.shape != (K, n):
            raise InvalidParameterError(f"u0 must have shape ({K}, {n}), got {u0.shape}")
        if not np.all(np.isfinite(u0)):
            raise InvalidParameterError("u0 must be finite")
        if self.coupling.K != K or self.coupling.n != n:
            raise InvalidParameterError("coupling coefficients do not match K or the grid")
        if not self.horizon > 0.0:
            raise InvalidParameterError("horizon must be positive")
        if self.source is not None and not callable(self.source):
            raise InvalidParameterError("source must be callable or None")
        u0.setflags(write=False)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def K(self) -> int:
        return self.orders.K

    @property
    def grid(self) -> Grid1D:
        return self.operators[0].grid

    @property
    def n(self) -> int:
        return self.grid.n_interior

    @property
    def has_source(self) -> bool:
        return self.source is not None

    def source_at(self, t: float) -> np.ndarray:
        if self.source is None:
            return np.zeros((self.K, self.n))
        f = np.asarray(self.source(float(t)), dtype=float)
        return np.broadcast_to(f, (self.K, self.n))

    def with_orders(self, alphas) -> "ProblemSpec":
        return ProblemSpec(OrderVector(alphas), self.operators, self.coupling, self.u0, self.horizon, self.source)

    def with_u0(self, u0) -> "ProblemSpec":
        return ProblemSpec(self.orders, self.operators, self.coupling, u0, self.horizon, self.source)

    def with_source(self, source) -> "ProblemSpec":
        return ProblemSpec(self.orders, self.operators, self.coupling, self.u0, self.horizon, source)

    def with_coupling(self, coupling) -> "ProblemSpec":
        return ProblemSpec(self.orders, self.operators, coupling, self.u0, self.horizon, self.source)

    def require_weak_static(self, what: str):
        if not self.coupling.weakly_coupled:
            raise InvalidParameterError(f"{what} needs a weakly coupled system (b = 0)")
        if not self.coupling.time_independent:
            raise InvalidParameterError(f"{what} needs time-independent coefficients")


@dataclass
class CooperativeReport:
    strict_offdiag: np.ndarray   # (K, K) bool, c_kl >= 0 and not identically 0
    weak_offdiag: np.ndarray     # (K, K) bool, c_kl >= 0
    rowsum_ok: np.ndarray        # (K,) bool, sum_l c_kl <= 0 everywhere
    max_rowsum: np.ndarray       # (K,)

    @property
    def strict(self) -> bool:
        K = self.strict_offdiag.shape[0]
        off = ~np.eye(K, dtype=bool)
        return bool(np.all(self.strict_offdiag[off])) if K > 1 else False

    @property
    def weak(self) -> bool:
        K = self.weak_offdiag.shape[0]
        off = ~np.eye(K, dtype=bool)
        return bool(np.all(self.weak_offdiag[off]))

    @property
    def rowsum(self) -> bool:
        return bool(np.all(self.rowsum_ok))

    def to_dict(self) -> dict:
        return {
            "strict_cooperative": self.strict,
            "weak_cooperative": self.weak,
            "row_sum_nonpositive": self.rowsum,
            "max_row_sum": self.max_rowsum.tolist(),
            "strict_offdiag": self.strict_offdiag.tolist(),
        }


@dataclass
class SemidefiniteReport:
    holds: bool
    worst_eigenvalue: float
    worst_node: int
    worst_time_index: int

    def to_dict(self) -> dict:
        return {"negative_semidefinite": self.holds, "worst_eigenvalue": self.worst_eigenvalue}


def validate_cooperative(coupling: CouplingCoeffs) -> CooperativeReport:
    """Sign conditions on C: off-diagonal entries and row sums (report only).

    Off-diagonal ``c_kl`` is strictly cooperative when it is ``>= 0`` everywhere
    and positive somewhere, weakly cooperative when only ``>= 0``.  Row sums
    must be ``<= 0`` at every node.  All time samples are scanned.
    """
    c = coupling.c
    K = coupling.K
    strict = np.zeros((K, K), dtype=bool)
    weak = np.zeros((K, K), dtype=bool)
    for k in range(K):
        for l in range(K):
            if k == l:
                continue
            weak[k, l] = bool(np.min(c[k, l]) >= -ZERO_TOL)
            strict[k, l] = nonneg_nonzero(c[k, l])
    rows = c.sum(axis=1)  # (K, nt, n)
    max_row = rows.max(axis=(1, 2))
    return CooperativeReport(strict, weak, max_row <= ZERO_TOL, max_row)


def validate_negative_semidefinite(coupling: CouplingCoeffs) -> SemidefiniteReport:
    """Largest eigenvalue of (C + C^T)/2 over all nodes must be <= 1e-12."""
    c = np.moveaxis(coupling.c, (0, 1), (-2, -1))  # (nt, n, K, K)
    sym = 0.5 * (c + np.swapaxes(c, -1, -2))
    top = np.linalg.eigvalsh(sym)[..., -1]
    jt, jx = np.unravel_index(int(np.argmax(top)), top.shape)
    worst = float(top[jt, jx])
    return SemidefiniteReport(worst <= ZERO_TOL, worst, int(jx), int(jt))
