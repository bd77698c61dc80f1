"""Time-domain solvers: Picard iteration on the mild formulation and an L1 scheme.

Picard iteration
    u^(0) = 0,  u^(m) = w + Q u^(m-1),  with
    w(t)  = S(t) u0 - int_0^t A^{-1} S'(t - tau) F(tau) dtau,
    Q v   = - int_0^t A^{-1} S'(t - tau) (P v)(tau) dtau.
    In the eigenbasis of A_k each mode of the convolution y solves
    y + lambda J^alpha y = J^alpha g, which is marched with product
    integration weights that are exact for piecewise-linear integrands.

L1 scheme
    Implicit, piecewise-linear Caputo discretisation with all coupling terms
    at the new time level; one banded block solve per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from . import _kernels
from .errors import InsufficientDataError, InvalidParameterError, NonConvergenceError, NumericError
from .mlf import MLParams, ml, multinomial_layer
from .spectral import eigensystem
from .system import ProblemSpec

__all__ = [
    "TimeGrid",
    "Solution",
    "PicardDiagnostics",
    "picard_solve",
    "l1_solve",
    "caputo_l1_weights",
    "rl_weights",
    "rl_integral",
    "smoothing_exponent",
    "smoothing_norms",
    "picard_envelope",
    "cross_method_tolerance",
    "discrete_l2_time",
    "eigensystems",
    "apply_P",
    "block_matrix",
]


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Graded grid t_j = T (j/M)^r, j = 0..M.

    ``nodes`` includes t_0 = 0; the positive nodes are ``nodes[1:]``.
    """

    T: float
    M: int
    r: float = 1.0
    nodes: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if not self.T > 0.0:
            raise InvalidParameterError("T must be positive")
        if int(self.M) < 1:
            raise InvalidParameterError("M must be at least 1")
        if not self.r >= 1.0:
            raise InvalidParameterError("grading exponent must be >= 1")
        object.__setattr__(self, "M", int(self.M))
        if self.nodes is None:
            nodes = self.T * (np.arange(self.M + 1) / self.M) ** self.r
            nodes[-1] = self.T
        else:
            nodes = np.asarray(self.nodes, dtype=float)
            if nodes.size != self.M + 1 or nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
                raise InvalidParameterError("nodes must start at 0 and increase strictly")
            if nodes[-1] != self.T:
                raise InvalidParameterError("last node must equal T")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def graded(cls, T: float, M: int, alpha_min: float) -> "TimeGrid":
        """Default grading r = 2 / alpha_K."""
        return cls(T, M, 2.0 / alpha_min)

    @classmethod
    def from_nodes(cls, nodes) -> "TimeGrid":
        nodes = np.asarray(nodes, dtype=float)
        return cls(float(nodes[-1]), nodes.size - 1, 1.0, nodes)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def max_step(self) -> float:
        return float(np.max(self.steps))


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _pairs(nodes):
    M = nodes.size - 1
    jj, ii = np.tril_indices(M + 1, k=-1)  # i < j
    ii = ii + 1  # interval index 1..j, interval [t_{i-1}, t_i]
    keep = ii <= jj
    return jj[keep], ii[keep]


def rl_weights(alpha: float, tgrid: TimeGrid) -> np.ndarray:
    """Product-integration table for J^alpha on piecewise-linear data.

    Returns W of shape (M+1, M+1), lower triangular, with
    (J^alpha f)(t_j) = sum_i W[j, i] f(t_i) exact for piecewise-linear f.
    """
    if not alpha > 0.0:
        raise InvalidParameterError("alpha must be positive")
    t = tgrid.nodes
    M = t.size - 1
    W = np.zeros((M + 1, M + 1))
    j, i = _pairs(t)
    b = t[j] - t[i - 1]
    a = t[j] - t[i]
    d = t[i] - t[i - 1]
    x = d / b
    # I1 = int_a^b s^(alpha-1) (s - a) ds,  I2 = int_a^b s^(alpha-1) (b - s) ds
    I1 = np.empty_like(b)
    I2 = np.empty_like(b)
    far = x >= 0.5
    bf, af = b[far], a[far]
    p1 = (bf ** (alpha + 1) - af ** (alpha + 1)) / (alpha + 1)
    p0 = (bf ** alpha - af ** alpha) / alpha
    I1[far] = p1 - af * p0
    I2[far] = bf * p0 - p1
    near = ~far
    if np.any(near):
        an, bn = a[near], b[near]
        half = 0.5 * (bn - an)
        s = 0.5 * (bn + an)[:, None] + half[:, None] * _GL_X[None, :]
        ks = s ** (alpha - 1.0) * _GL_W[None, :]
        I1[near] = half * np.sum(ks * (s - an[:, None]), axis=1)
        I2[near] = half * np.sum(ks * (bn[:, None] - s), axis=1)
    scale = 1.0 / (d * math.gamma(alpha))
    np.add.at(W, (j, i - 1), I1 * scale)
    np.add.at(W, (j, i), I2 * scale)
    return W


def rl_integral(alpha: float, samples, tgrid: TimeGrid) -> np.ndarray:
    """J^alpha f at every node for nodal samples of f (first axis = time)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != tgrid.M + 1:
        raise InvalidParameterError("samples must have one row per time node")
    return np.tensordot(rl_weights(alpha, tgrid), samples, axes=(1, 0))


def caputo_l1_weights(alpha: float, tgrid: TimeGrid) -> np.ndarray:
    """L1 table: d^alpha f(t_j) ~ sum_{i=1..j} w[j, i] (f(t_i) - f(t_{i-1})).

    w[j, i] = ((t_j - t_{i-1})^(1-alpha) - (t_j - t_i)^(1-alpha)) / (Gamma(2-alpha) dt_i),
    evaluated through expm1/log1p so that short steps far from t_j keep
    full relative accuracy.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError("alpha must lie in (0, 1)")
    t = tgrid.nodes
    M = t.size - 1
    W = np.zeros((M + 1, M + 1))
    j, i = _pairs(t)
    b = t[j] - t[i - 1]
    d = t[i] - t[i - 1]
    x = d / b
    first = x >= 1.0
    xs = np.where(first, 0.5, x)
    diff = -(b ** (1.0 - alpha)) * np.expm1((1.0 - alpha) * np.log1p(-xs))
    diff = np.where(first, b ** (1.0 - alpha), diff)
    W[j, i] = diff / (math.gamma(2.0 - alpha) * d)
    return W


# ---------------------------------------------------------------------------
# solution container
# ---------------------------------------------------------------------------

@dataclass
class PicardDiagnostics:
    iterations: int
    increments: list
    M_const: float
    L0: float
    C1: float
    C3: float
    n_modes: int
    converged: bool
    envelope: list | None = None
    tol: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "increments": list(map(float, self.increments)),
            "M_const": self.M_const,
            "L0": self.L0,
            "C1": self.C1,
            "C3": self.C3,
            "n_modes": self.n_modes,
            "converged": self.converged,
            "envelope": None if self.envelope is None else list(map(float, self.envelope)),
            "tol": self.tol,
        }


@dataclass
class Solution:
    """K-component field on a time grid.

    ``values`` has shape (K, M+1, n) and includes t_0 = 0.
    """

    values: np.ndarray
    tgrid: TimeGrid
    spec: ProblemSpec
    method: str
    diagnostics: object = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericError(f"{self.method} produced non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.tgrid.nodes

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.spec.grid.x

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in t, shape (K, n)."""
        nodes = self.tgrid.nodes
        if not nodes[0] <= t <= nodes[-1]:
            raise InvalidParameterError("t outside the time grid", t=t)
        j = min(int(np.searchsorted(nodes, t, side="right")) - 1, nodes.size - 2)
        w = (t - nodes[j]) / (nodes[j + 1] - nodes[j])
        return (1.0 - w) * self.values[:, j] + w * self.values[:, j + 1]

    def l2_in_space(self) -> np.ndarray:
        """||u(t_j)||_{L^2} over all components, shape (M+1,)."""
        h = self.spec.grid.h
        return np.sqrt(h * np.sum(self.values ** 2, axis=(0, 2)))


def discrete_l2_time(diff: np.ndarray, tgrid: TimeGrid, h: float) -> float:
    """Discrete L^2(0,T; L^2) norm of a (K, M+1, n) field (trapezoid in t)."""
    sq = h * np.sum(np.asarray(diff) ** 2, axis=(0, 2))
    return float(math.sqrt(integrate.trapezoid(sq, tgrid.nodes)))


def cross_method_tolerance(h: float, M: int, r: float, alphas, C: float = 1.0) -> float:
    """max(1e-3, 5 h^2 + C M^(-min(r alpha_K, 2 - alpha_1)))."""
    a = np.asarray(alphas, dtype=float)
    return max(1e-3, 5.0 * h * h + C * M ** (-min(r * a.min(), 2.0 - a.max())))


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def eigensystems(spec: ProblemSpec, n_modes: int | None = None) -> list:
    """One EigenSystem per component (shared when operators coincide)."""
    cache = {}
    out = []
    for op in spec.operators:
        key = op.a_coeff.tobytes()
        if key not in cache:
            cache[key] = eigensystem(op, n_modes)
        out.append(cache[key])
    return out


def _dx(u: np.ndarray, h: float) -> np.ndarray:
    """Central difference along the last axis with zero Dirichlet data."""
    out = np.empty_like(u)
    out[..., 1:-1] = u[..., 2:] - u[..., :-2]
    out[..., 0] = u[..., 1]
    out[..., -1] = -u[..., -2]
    return out / (2.0 * h)


def apply_P(spec: ProblemSpec, U: np.ndarray, times) -> np.ndarray:
    """(P u)_k = sum_l b_kl d_x u_l + c_kl u_l for U of shape (K, nt, n)."""
    cp = spec.coupling
    times = np.atleast_1d(times)
    if cp.time_independent:
        out = np.einsum("kln,ltn->ktn", cp.c[:, :, 0], U)
        if not cp.weakly_coupled:
            out += np.einsum("kln,ltn->ktn", cp.b[:, :, 0], _dx(U, spec.grid.h))
        return out
    cc = np.stack([cp.c_at(t) for t in times], axis=2)  # K, K, nt, n
    out = np.einsum("kltn,ltn->ktn", cc, U)
    if not cp.weakly_coupled:
        bb = np.stack([cp.b_at(t) for t in times], axis=2)
        out += np.einsum("kltn,ltn->ktn", bb, _dx(U, spec.grid.h))
    return out


def _source_nodes(spec: ProblemSpec, times) -> np.ndarray:
    return np.stack([spec.source_at(t) for t in times], axis=1)  # K, nt, n


# ---------------------------------------------------------------------------
# Picard
# ---------------------------------------------------------------------------

def picard_envelope(m: int, M_const: float, betas, t: float, alpha1_gamma: float = 0.0) -> float:
    """M^(m+1) sum_{|j|=m} (m!/j!) t^(beta.j - a) / Gamma(beta.j + 1 - a), a = alpha_1 gamma."""
    if m < 0:
        raise InvalidParameterError("m must be non-negative")
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    if not t > 0.0:
        raise InvalidParameterError("t must be positive")
    zs = t ** betas
    layer = multinomial_layer(int(m), betas, 1.0 - alpha1_gamma, zs)
    return float(M_const ** (m + 1) * t ** (-alpha1_gamma) * layer)


def _smoothing_constant(alphas) -> float:
    # with gamma = 0: ||S(t)|| <= 1 and ||A^{-1} S'(t)|| t^(1-alpha) = sup E_{a,a}(-x) = 1/Gamma(a)
    return float(max(1.0, max(1.0 / math.gamma(a) for a in alphas)))


def picard_solve(
    spec: ProblemSpec,
    tgrid: TimeGrid | None = None,
    n_modes: int | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    M: int = 400,
) -> Solution:
    """Mild solution by Picard iteration.

    Parameters
    ----------
    spec : ProblemSpec
    tgrid : TimeGrid, optional
        Defaults to the graded grid with ``M`` steps and r = 2 / alpha_K.
    n_modes : int, optional
        Modes kept per component (default ``min(n, 256)``).
    tol : float
        Stop when ``max_j ||u^(m)(t_j) - u^(m-1)(t_j)||_{L^2} <= tol``.
    max_iter : int

    Returns
    -------
    Solution
        ``diagnostics`` is a :class:`PicardDiagnostics`.

    Raises
    ------
    NonConvergenceError
        After ``max_iter`` iterations; the increment history is attached.
    """
    if not tol > 0.0:
        raise InvalidParameterError("tol must be positive")
    if int(max_iter) < 1:
        raise InvalidParameterError("max_iter must be >= 1")
    if tgrid is None:
        tgrid = TimeGrid.graded(spec.horizon, M, spec.orders.alphas[-1])
    K, h = spec.K, spec.grid.h
    t = tgrid.nodes
    alphas = spec.orders.alphas
    eigs = eigensystems(spec, n_modes)
    weights = {}
    for a in set(alphas):
        weights[a] = rl_weights(a, tgrid)

    # w = S(t) u0 + convolution of F, in modal coordinates
    F = _source_nodes(spec, t) if spec.has_source else None
    w_modal = []
    for k in range(K):
        eig, a = eigs[k], alphas[k]
        c0 = eig.coeffs(spec.u0[k])
        z = -np.outer(t ** a, eig.lambdas)
        E = ml(MLParams(a, 1.0), z)
        wm = E * c0[None, :]
        if F is not None:
            Wa = weights[a]
            wm = wm + _kernels.volterra_march(Wa, Wa @ eig.coeffs(F[k]), eig.lambdas)
        w_modal.append(wm)

    def synth(modal):
        return np.stack([modal[k] @ eigs[k].phis for k in range(K)])

    W_field = synth(w_modal)
    cp = spec.coupling
    L0 = cp.L0
    C1 = _smoothing_constant(alphas)
    M_const = C1 * L0 * math.gamma(alphas[-1])
    C3 = C1
    n_kept = eigs[0].n_modes

    def norm_t(V):
        return np.sqrt(h * np.sum(V ** 2, axis=(0, 2)))

    increments = [float(np.max(norm_t(W_field)))]
    coupled = bool(np.any(cp.c != 0.0) or np.any(cp.b != 0.0))
    U = W_field
    iters = 1
    converged = increments[0] <= tol or not coupled
    while not converged and iters < max_iter:
        PU = apply_P(spec, U, t)
        Q_modal = []
        for k in range(K):
            eig, Wa = eigs[k], weights[alphas[k]]
            Q_modal.append(_kernels.volterra_march(Wa, Wa @ eig.coeffs(PU[k]), eig.lambdas))
        U_new = W_field + synth(Q_modal)
        inc = float(np.max(norm_t(U_new - U)))
        increments.append(inc)
        U = U_new
        iters += 1
        if not math.isfinite(inc):
            break
        converged = inc <= tol

    envelope = None
    if not spec.has_source:
        u0n = float(np.sqrt(h * np.sum(spec.u0 ** 2)))
        betas = np.array(alphas)
        envelope = []
        for m in range(len(increments)):
            try:
                envelope.append(C3 * u0n * picard_envelope(m, M_const, betas, tgrid.T))
            except OverflowError:
                envelope.append(math.inf)
    diag = PicardDiagnostics(iters, increments, M_const, L0, C1, C3, n_kept, converged, envelope, tol)
    if not converged:
        raise NonConvergenceError(
            f"Picard iteration did not reach tol={tol:g} in {iters} iterations",
            increments=increments,
            iterations=iters,
            M_const=M_const,
            envelope=envelope,
        )
    return Solution(U, tgrid, spec, "picard", diag)


# ---------------------------------------------------------------------------
# L1 scheme
# ---------------------------------------------------------------------------

def block_matrix(spec: ProblemSpec, t: float, shifts, coupling_sign: float = -1.0, dtype=float):
    """Banded form of ``A + diag(shifts) + coupling_sign * P(t)``.

    Unknowns are interleaved (index ``i*K + k``) so that the matrix has
    ``2K - 1`` bands on each side.  ``shifts`` holds one value per component.
    Returns ``(ab, l_and_u)`` for :func:`scipy.linalg.solve_banded`.
    """
    K, n, h = spec.K, spec.n, spec.grid.h
    bw = 2 * K - 1
    N = K * n
    ab = np.zeros((2 * bw + 1, N), dtype=dtype)

    def put(rows, cols, vals):
        ab[bw + rows - cols, cols] += vals

    idx = np.arange(n)
    for k in range(K):
        d, e = spec.operators[k].bands()
        rows = idx * K + k
        put(rows, rows, d + shifts[k])
        put(rows[:-1], rows[1:], e)
        put(rows[1:], rows[:-1], e)
    cp = spec.coupling
    c = cp.c_at(t)
    b = None if cp.weakly_coupled else cp.b_at(t)
    for k in range(K):
        rows = idx * K + k
        for l in range(K):
            cols = idx * K + l
            put(rows, cols, coupling_sign * c[k, l])
            if b is not None:
                coef = coupling_sign * b[k, l] / (2.0 * h)
                put(rows[:-1], cols[1:], coef[:-1])
                put(rows[1:], cols[:-1], -coef[1:])
    return ab, (bw, bw)


def l1_solve(spec: ProblemSpec, tgrid: TimeGrid | None = None, M: int = 400) -> Solution:
    """Implicit L1 scheme for the full system (general b, c and F)."""
    if tgrid is None:
        tgrid = TimeGrid.graded(spec.horizon, M, spec.orders.alphas[-1])
    K, n = spec.K, spec.n
    t = tgrid.nodes
    alphas = spec.orders.alphas
    tables = {a: caputo_l1_weights(a, tgrid) for a in set(alphas)}
    U = np.zeros((K, t.size, n))
    U[:, 0] = spec.u0
    dU = np.zeros((K, t.size, n))
    static = spec.coupling.time_independent
    for j in range(1, t.size):
        diag = np.array([tables[a][j, j] for a in alphas])
        ab, lu = block_matrix(spec, t[j] if not static else 0.0, diag)
        rhs = spec.source_at(t[j]).copy() if spec.has_source else np.zeros((K, n))
        for k in range(K):
            hist = _kernels.l1_history(tables[alphas[k]], dU[k], j)
            rhs[k] += diag[k] * U[k, j - 1] - hist
        try:
            sol = linalg.solve_banded(lu, ab, rhs.T.ravel(), check_finite=False)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"L1 step {j} failed: {exc}", step=j) from exc
        U[:, j] = sol.reshape(n, K).T
        dU[:, j] = U[:, j] - U[:, j - 1]
    meta = {"scheme": "L1", "M": tgrid.M, "r": tgrid.r, "max_step": tgrid.max_step}
    return Solution(U, tgrid, spec, "l1", meta)


# ---------------------------------------------------------------------------
# smoothing exponent
# ---------------------------------------------------------------------------

def smoothing_norms(sol: Solution, gamma: float, eigs=None) -> np.ndarray:
    """||u(t_j)||_{D(A^gamma)} summed over components (modal form), shape (M+1,)."""
    if eigs is None:
        eigs = eigensystems(sol.spec)
    tot = np.zeros(sol.values.shape[1])
    for k in range(sol.K):
        c = eigs[k].coeffs(sol.values[k])
        tot += np.sum(eigs[k].lambdas ** (2.0 * gamma) * c ** 2, axis=1)
    return np.sqrt(tot)


def smoothing_exponent(sol: Solution, gamma: float, eigs=None, window=None, min_nodes: int = 5) -> float:
    """Least-squares slope of log ||u(t)||_{D(A^gamma)} against log t.

    The default window is the first time decade ``[t_a, 10 t_a]`` of the
    grid, with ``t_a`` the earliest positive node for which the decade holds
    at least ``min_nodes`` nodes.

    Raises
    ------
    InsufficientDataError
        If fewer than ``min_nodes`` nodes fall in the window.
    """
    t = sol.times
    norms = smoothing_norms(sol, gamma, eigs)
    pos = t > 0.0
    if window is None:
        tp = t[pos]
        lo = None
        for ta in tp:
            if np.count_nonzero((tp >= ta) & (tp <= 10.0 * ta * (1 + 1e-12))) >= min_nodes:
                lo = ta
                break
        if lo is None:
            raise InsufficientDataError("no time decade contains enough nodes", min_nodes=min_nodes)
        window = (lo, 10.0 * lo * (1 + 1e-12))
    sel = pos & (t >= window[0]) & (t <= window[1]) & (norms > 0.0)
    if np.count_nonzero(sel) < min_nodes:
        raise InsufficientDataError("too few nodes in the fitting window", nodes=int(np.count_nonzero(sel)))
    slope, _ = np.polyfit(np.log(t[sel]), np.log(norms[sel]), 1)
    return float(slope)
