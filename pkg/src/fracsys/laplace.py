"""Laplace-domain solver, sector-contour inversion and long-time decay.

For a weakly coupled, time-independent system with F = 0 the transform
solves

    (A + s^alpha - C) u_hat(s) = s^(alpha - 1) u0,

with ``s^alpha = diag(s^alpha_1, ..., s^alpha_K)`` on the principal branch.
The time-domain solution is recovered from

    u(t) = (1 / 2 pi i) int_gamma u_hat(s) e^(s t) ds

along the two rays ``arg s = +-theta``.  Both rays are integrated
independently; the imaginary part of the sum measures the quadrature error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, special

from . import _kernels
from .errors import InvalidParameterError, InversionAccuracyError, NumericError, PreconditionError
from .solver import block_matrix
from .system import ProblemSpec, validate_negative_semidefinite

__all__ = [
    "SectorContour",
    "LaplaceSolveResult",
    "laplace_elliptic_solve",
    "contour_invert",
    "contour_invert_many",
    "solve_many",
    "h2_norm",
    "decay_rate",
    "decay_profile",
    "DecayResult",
    "g_function",
    "resolvent_bound",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _theta_max(alpha1: float) -> float:
    return min(math.pi / (2.0 * alpha1), math.pi)


@dataclass(frozen=True)
class SectorContour:
    """Two rays ``arg s = +-theta`` (and an optional arc of radius epsilon).

    ``theta`` must lie in (pi/2, min(pi/(2 alpha_1), pi)).  With
    ``epsilon = 0`` the arc is skipped and the small-|s| piece of each ray is
    integrated analytically from the leading behaviour of u_hat; with
    ``epsilon > 0`` the rays start at radius epsilon and the arc
    ``|s| = epsilon`` is integrated by Gauss-Legendre in the angle.
    """

    theta: float
    epsilon: float = 0.0
    panel_width: float = 0.5
    cutoff: float = 40.0
    r_min_factor: float = 1e-6

    @classmethod
    def default(cls, alpha1: float, **kw) -> "SectorContour":
        return cls(0.5 * (0.5 * math.pi + _theta_max(alpha1)), **kw)

    def check(self, alpha1: float):
        if not 0.5 * math.pi < self.theta < _theta_max(alpha1):
            raise InvalidParameterError(
                f"theta={self.theta!r} outside (pi/2, {_theta_max(alpha1)!r})", theta=self.theta
            )
        if self.epsilon < 0.0:
            raise InvalidParameterError("epsilon must be non-negative")


@dataclass
class LaplaceSolveResult:
    s: complex
    u_hat: np.ndarray   # (K, n) complex
    residual: float


def _rhs(spec: ProblemSpec, s: complex) -> np.ndarray:
    a = np.asarray(spec.orders.alphas)
    return (s ** (a - 1.0))[:, None] * spec.u0


def _band_matvec(ab, lu, x):
    """y = A x for A given in LAPACK band storage."""
    l, u = lu
    N = ab.shape[1]
    y = np.zeros(N, dtype=np.result_type(ab, x))
    for d in range(-l, u + 1):  # d = col - row
        row = u - d
        if d >= 0:
            y[: N - d] += ab[row, d:] * x[d:]
        else:
            y[-d:] += ab[row, : N + d] * x[: N + d]
    return y


def _check_spec(spec: ProblemSpec, what: str):
    spec.require_weak_static(what)
    if spec.has_source:
        raise InvalidParameterError(f"{what} assumes F = 0")


def _solve_one(spec: ProblemSpec, s: complex, rhs: np.ndarray, with_residual: bool = False):
    K, n = spec.K, spec.n
    shifts = np.asarray(s, dtype=complex) ** np.asarray(spec.orders.alphas)
    ab, lu = block_matrix(spec, 0.0, shifts, -1.0, dtype=complex)
    b = rhs.T.ravel().astype(complex)
    try:
        x = linalg.solve_banded(lu, ab, b, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"block system singular at s={s!r}: {exc}", s=str(s)) from exc
    res = None
    if with_residual:
        r = _band_matvec(ab, lu, x) - b
        res = float(np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300))
    return x.reshape(n, K).T, res


def laplace_elliptic_solve(spec: ProblemSpec, s: complex) -> LaplaceSolveResult:
    """Solve the transformed block system at one point ``s`` of the sector.

    Raises
    ------
    NumericError
        If the system is singular or the relative residual exceeds 1e-10.
    """
    _check_spec(spec, "laplace_elliptic_solve")
    s = complex(s)
    if s == 0.0:
        raise InvalidParameterError("s must be non-zero")
    if abs(np.angle(s)) >= math.pi:
        raise InvalidParameterError("s on the branch cut")
    u, res = _solve_one(spec, s, _rhs(spec, s), with_residual=True)
    if not np.all(np.isfinite(u)) or res > 1e-10:
        raise NumericError("block solve inaccurate", s=str(s), residual=res)
    return LaplaceSolveResult(s, u, res)


def _ray_nodes(r_lo: float, r_hi: float, t_osc: float, sin_t: float, width: float):
    """Composite Gauss-Legendre nodes in v = log r, refined where e^{i r t sin} oscillates."""
    v_lo, v_hi = math.log(r_lo), math.log(r_hi)
    edges = [v_lo]
    v = v_lo
    while v < v_hi:
        r = math.exp(v)
        step = min(width, 3.0 / max(r * t_osc * sin_t, 1e-300))
        v = min(v + step, v_hi)
        edges.append(v)
    edges = np.array(edges)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    vv = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
    ww = half[:, None] * _GL_W[None, :]
    r = np.exp(vv.ravel())
    return r, ww.ravel() * r  # dr = r dv


def _bands(spec: ProblemSpec):
    d = np.stack([op.bands()[0] for op in spec.operators])
    e = np.stack([op.bands()[1] for op in spec.operators])
    return d, e, spec.coupling.matrix_field()


def solve_many(spec: ProblemSpec, s_values) -> np.ndarray:
    """u_hat at many points ``s`` at once, shape (S, K, n)."""
    _check_spec(spec, "solve_many")
    s = np.atleast_1d(np.asarray(s_values, dtype=complex))
    a = np.asarray(spec.orders.alphas)
    shifts = s[:, None] ** a[None, :]
    rhs = (s[:, None] ** (a[None, :] - 1.0))[:, :, None] * spec.u0[None]
    d, e, C = _bands(spec)
    return _kernels.block_tridiag_solve(d, e, C, shifts, rhs)


def contour_invert_many(spec: ProblemSpec, times, contour: SectorContour | None = None,
                        residue_tol: float = 1e-8, return_residue: bool = False, chunk: int = 2048):
    """Invert at several times sharing one node set per time decade.

    Returns an array of shape (len(times), K, n); with ``return_residue``
    also the relative imaginary residue per time.
    """
    _check_spec(spec, "contour_invert")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(~np.isfinite(times)) or np.any(times <= 0.0):
        raise InvalidParameterError("t must be positive")
    alphas = np.asarray(spec.orders.alphas)
    if contour is None:
        contour = SectorContour.default(alphas[0])
    contour.check(alphas[0])
    th = contour.theta
    cos_t, sin_t = math.cos(th), math.sin(th)
    K, n = spec.K, spec.n
    d, e, C = _bands(spec)
    out = np.zeros((times.size, K, n))
    resid = np.zeros(times.size)
    order = np.argsort(times)
    dec = np.floor(np.log10(times[order]) + 1e-12)
    groups = [order[dec == v] for v in np.unique(dec)]
    rmin_base = min(contour.r_min_factor, 10.0 ** (-5.0 / alphas.min()))
    eps = contour.epsilon

    def accumulate(acc, tg, s_all, w_all):
        for c0 in range(0, s_all.size, chunk):
            s, wq = s_all[c0:c0 + chunk], w_all[c0:c0 + chunk]
            expo = np.exp(np.outer(tg, s))  # (T, S)
            live = np.any(np.abs(expo) > 1e-300, axis=0)
            if not np.any(live):
                continue
            s, wq, expo = s[live], wq[live], expo[:, live]
            shifts = s[:, None] ** alphas[None, :]
            rhs = (s[:, None] ** (alphas[None, :] - 1.0))[:, :, None] * spec.u0[None]
            u = _kernels.block_tridiag_solve(d, e, C, shifts, rhs)
            acc += ((expo * wq[None, :]) @ u.reshape(u.shape[0], -1)).reshape(acc.shape)

    for idx in groups:
        tg = times[idx]
        # the endpoint expansion needs both |s| t and |s|^alpha small
        r_min = rmin_base / max(tg.max(), 1.0)
        r_lo = eps if eps > 0.0 else r_min
        r_hi = contour.cutoff / (tg.min() * abs(cos_t))
        if r_lo >= r_hi:
            raise InvalidParameterError("epsilon exceeds the ray truncation radius", epsilon=eps)
        r, wr = _ray_nodes(r_lo, r_hi, tg.max(), sin_t, contour.panel_width)
        acc = np.zeros((idx.size, K, n), dtype=complex)
        for sign in (1.0, -1.0):
            ray = complex(cos_t, sign * sin_t)
            accumulate(acc, tg, r * ray, sign * wr * ray)
            if eps > 0.0:
                continue
            # analytic piece on [0, r_min]: u_hat ~ (A - C)^{-1} s^(alpha-1) u0
            rm = np.full(tg.shape, r_min)
            lead = (ray ** alphas)[None, :, None] * (rm[:, None] ** alphas[None, :] / alphas[None, :])[:, :, None]
            rhs = lead * spec.u0[None]
            acc += sign * _kernels.block_tridiag_solve(d, e, C, np.zeros((idx.size, K), complex), rhs)
        if eps > 0.0:
            # arc s = eps e^{i phi}, phi from -theta to theta
            n_pan = max(4, int(math.ceil(2.0 * th * max(1.0, eps * tg.max()))))
            edges = np.linspace(-th, th, n_pan + 1)
            half = 0.5 * np.diff(edges)
            phi = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * _GL_X[None, :]
            wphi = (half[:, None] * _GL_W[None, :]).ravel()
            sa = eps * np.exp(1j * phi.ravel())
            accumulate(acc, tg, sa, 1j * sa * wphi)
        vals = acc / (2j * math.pi)
        out[idx] = vals.real
        scale = np.max(np.abs(vals.real), axis=(1, 2))
        resid[idx] = np.max(np.abs(vals.imag), axis=(1, 2)) / np.maximum(scale, 1.0)
    if np.any(resid > residue_tol):
        bad = int(np.argmax(resid))
        raise InversionAccuracyError(
            "imaginary residue above threshold", t=float(times[bad]), residue=float(resid[bad])
        )
    if return_residue:
        return out, resid
    return out


def contour_invert(spec: ProblemSpec, t: float, contour: SectorContour | None = None) -> np.ndarray:
    """u(t) of shape (K, n) from the sector contour integral.

    Raises
    ------
    InversionAccuracyError
        If the imaginary residue exceeds 1e-8.
    """
    return contour_invert_many(spec, [t], contour)[0]


def h2_norm(u: np.ndarray, h: float) -> float:
    """sqrt(||u||^2 + ||D+ u||^2 + ||D+D- u||^2) with zero boundary values."""
    u = np.atleast_2d(u)
    pad = np.pad(u, ((0, 0), (1, 1)))
    d1 = np.diff(pad, axis=1) / h
    d2 = (pad[:, 2:] - 2.0 * pad[:, 1:-1] + pad[:, :-2]) / h ** 2
    return float(np.sqrt(h * (np.sum(u ** 2) + np.sum(d1 ** 2) + np.sum(d2 ** 2))))


@dataclass
class DecayResult:
    slope: float
    intercept: float
    times: np.ndarray
    norms: np.ndarray
    expected: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "expected": self.expected,
                "times": self.times.tolist(), "norms": self.norms.tolist()}


def decay_profile(spec: ProblemSpec, t_samples, contour: SectorContour | None = None) -> DecayResult:
    """H^2-discrete norms of u(t) and their log-log slope.

    Raises
    ------
    PreconditionError
        If the symmetric part of C is not negative semidefinite.
    """
    rep = validate_negative_semidefinite(spec.coupling)
    if not rep.holds:
        raise PreconditionError(
            "coupling matrix is not negative semidefinite", worst_eigenvalue=rep.worst_eigenvalue
        )
    t = np.asarray(t_samples, dtype=float)
    if t.size < 3:
        raise InvalidParameterError("need at least 3 sample times")
    vals = contour_invert_many(spec, t, contour)
    h = spec.grid.h
    norms = np.array([h2_norm(v, h) for v in vals])
    slope, icpt = np.polyfit(np.log(t), np.log(norms), 1)
    return DecayResult(float(slope), float(icpt), t, norms, -float(spec.orders.alphas[-1]))


def decay_rate(spec: ProblemSpec, t_samples, contour: SectorContour | None = None) -> float:
    """Fitted exponent of ||u(t)||_{H^2} ~ t^slope over ``t_samples``."""
    return decay_profile(spec, t_samples, contour).slope


def resolvent_bound(spec: ProblemSpec, s: complex) -> float:
    """||u0|| (sum_{k,l} |s|^(a_k + a_l - 1) + sum_k |s|^(a_k - 1))."""
    a = np.asarray(spec.orders.alphas)
    r = abs(s)
    u0n = math.sqrt(spec.grid.h * float(np.sum(spec.u0 ** 2)))
    return u0n * float(np.sum(r ** (a[:, None] + a[None, :] - 1.0)) + np.sum(r ** (a - 1.0)))


# ---------------------------------------------------------------------------
# g(s) = s^(1 - alpha) L[t^(-alpha) f](s)
# ---------------------------------------------------------------------------

def _weighted_linear_moments(a, b, alpha):
    """int_a^b t^-alpha (b - t) dt and int_a^b t^-alpha (t - a) dt on panels."""
    p = 1.0 - alpha
    x = (b - a) / b
    I_right = np.empty_like(b)  # multiplies f(a)
    I_left = np.empty_like(b)   # multiplies f(b)
    far = x >= 0.5
    bf, af = b[far], a[far]
    m0 = (bf ** p - af ** p) / p
    m1 = (bf ** (p + 1) - af ** (p + 1)) / (p + 1)
    I_right[far] = bf * m0 - m1
    I_left[far] = m1 - af * m0
    near = ~far
    if np.any(near):
        an, bn = a[near], b[near]
        half = 0.5 * (bn - an)
        s = 0.5 * (bn + an)[:, None] + half[:, None] * _GL_X[None, :]
        ks = s ** (-alpha) * _GL_W[None, :]
        I_right[near] = half * np.sum(ks * (bn[:, None] - s), axis=1)
        I_left[near] = half * np.sum(ks * (s - an[:, None]), axis=1)
    d = b - a
    return I_right / d, I_left / d


def _head_samples(times, values, alpha, s):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float) * np.exp(-s * t)
    if t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise InvalidParameterError("samples must start at t = 0 and increase")
    a, b = t[:-1], t[1:]
    wr, wl = _weighted_linear_moments(a, b, alpha)
    return float(np.sum(wr * v[:-1] + wl * v[1:]))


def g_function(f, alpha_K: float, s: float, N: float | None = None, tail=None) -> float:
    """g(s) = s^(1 - alpha_K) int_0^inf t^(-alpha_K) f(t) e^(-s t) dt.

    Parameters
    ----------
    f : callable or (times, values)
        The function on [0, N].  Samples must start at t = 0; the integral
        over [0, N] is then exact for piecewise-linear ``f e^{-st}``.  A
        callable is integrated adaptively with the algebraic endpoint weight.
    alpha_K : float in (0, 1)
    s : float in (0, 1]
    N : float
        Split point; defaults to the last sample time.
    tail : None, ("exp", A, kappa), ("power", A, p) or callable
        Model of f on (N, inf).  None means f = 0 there.
    """
    if not 0.0 < alpha_K < 1.0:
        raise InvalidParameterError("alpha_K must lie in (0, 1)")
    if not 0.0 < s <= 1.0:
        raise InvalidParameterError("s must lie in (0, 1]")
    a = alpha_K
    if callable(f):
        if N is None:
            raise InvalidParameterError("N is required for a callable f")
        head, _ = integrate.quad(lambda t: f(t) * math.exp(-s * t), 0.0, N, weight="alg",
                                 wvar=(-a, 0.0), limit=400, epsabs=0.0, epsrel=1e-12)
    else:
        times, values = f
        if N is None:
            N = float(times[-1])
        elif not math.isclose(N, float(times[-1])):
            raise InvalidParameterError("N must equal the last sample time")
        head = _head_samples(times, values, a, s)
    tail_val = 0.0
    if tail is not None:
        if callable(tail):
            tail_val, _ = integrate.quad(lambda t: t ** -a * tail(t) * math.exp(-s * t), N, np.inf,
                                         limit=400, epsabs=0.0, epsrel=1e-12)
        elif tail[0] == "exp":
            _, A, kappa = tail
            lam = kappa + s
            tail_val = A * lam ** (a - 1.0) * special.gamma(1.0 - a) * special.gammaincc(1.0 - a, lam * N)
        elif tail[0] == "power":
            _, A, p = tail
            # substitute t = N u to keep the integrand O(1)
            q = a + p
            val, _ = integrate.quad(lambda u: u ** -q * math.exp(-s * N * (u - 1.0)), 1.0, np.inf,
                                    limit=400, epsabs=0.0, epsrel=1e-12)
            tail_val = A * N ** (1.0 - q) * math.exp(-s * N) * val
        else:
            raise InvalidParameterError(f"unknown tail model {tail[0]!r}")
    return float(s ** (1.0 - a) * (head + tail_val))
