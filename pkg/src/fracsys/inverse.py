"""Recovery of the fractional orders from one component at one point.

The fit works in the Laplace domain: the transformed observation
``int u_k0(x0, t) e^{-st} dt`` is compared with the transformed model, which
is a real block solve per ``s``.  The module also provides the positivity
machinery behind uniqueness: the auxiliary function
``w(s) = s (u_hat - v_hat)(s) / (s^a - s^b)``, its limit system
``(A - C) w0 = D u0`` and a discrete maximum-principle check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, optimize, special

from .errors import (
    FitFailureError,
    InsufficientDataError,
    InvalidParameterError,
    NumericError,
    PreconditionError,
    UnreliableTransformError,
)
from .laplace import contour_invert_many, solve_many
from .solver import block_matrix
from .system import (
    ProblemSpec,
    OrderVector,
    nonneg_nonzero,
    validate_cooperative,
    validate_negative_semidefinite,
)

__all__ = [
    "ObservationTrace",
    "TransformValue",
    "OrderFitResult",
    "WitnessReport",
    "MaxPrincipleVerdict",
    "trace_laplace",
    "transform_noise_level",
    "fit_orders",
    "forward_transform",
    "uniqueness_witness",
    "solve_w0",
    "witness_matrix",
    "maximum_principle_check",
    "synthetic_trace",
    "node_index",
]

ORDER_TIE_TOL = 1e-12


def node_index(spec: ProblemSpec, x0: float) -> int:
    """Index of the interior node at ``x0`` (must coincide with a node)."""
    x = spec.grid.x
    i = int(np.argmin(np.abs(x - x0)))
    if abs(x[i] - x0) > 1e-9 * (spec.grid.b_end - spec.grid.a_end):
        raise InvalidParameterError(f"x0={x0!r} is not an interior grid node", x0=x0)
    return i


@dataclass(frozen=True)
class ObservationTrace:
    """Samples of u_k0(x0, t); ``k0`` is a 0-based component index."""

    x0: float
    k0: int
    times: np.ndarray
    values: np.ndarray
    T_obs: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.size != v.size or t.size < 2:
            raise InvalidParameterError("times and values must have equal length >= 2")
        if np.any(np.diff(t) <= 0) or t[0] < 0:
            raise InvalidParameterError("times must be non-negative and strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("trace values must be finite")
        if int(self.k0) < 0:
            raise InvalidParameterError("k0 must be a 0-based component index")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "k0", int(self.k0))
        object.__setattr__(self, "T_obs", float(t[-1]) if self.T_obs is None else float(self.T_obs))

    def with_noise(self, sigma: float, seed: int = 0) -> "ObservationTrace":
        rng = np.random.default_rng(seed)
        noisy = self.values + sigma * rng.standard_normal(self.values.size)
        return ObservationTrace(self.x0, self.k0, self.times, noisy, self.T_obs)


@dataclass
class TransformValue:
    value: float
    tail: float
    tail_fraction: float
    tail_model: tuple | None

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# Laplace transform of a sampled trace
# ---------------------------------------------------------------------------

_FACT = np.array([math.factorial(m + 2) for m in range(14)], dtype=float)


def _panel_weights(d: np.ndarray, s: float):
    """int_0^d (1 - tau/d) e^{-s tau} dtau and int_0^d (tau/d) e^{-s tau} dtau."""
    z = s * d
    left = np.empty_like(z)
    right = np.empty_like(z)
    small = z < 0.5
    zs = z[small]
    m = np.arange(14)
    pw = (-zs[:, None]) ** m[None, :]
    left[small] = pw @ (1.0 / _FACT)
    right[small] = pw @ ((m + 1) / _FACT)
    zb = z[~small]
    ez = np.exp(-zb)
    left[~small] = (zb - 1.0 + ez) / zb ** 2
    right[~small] = (1.0 - ez - zb * ez) / zb ** 2
    return d * left, d * right


def fit_power_tail(times, values, decades: float = 1.0):
    """Fit f ~ A t^-p on the last ``decades`` of the trace (log-log least squares)."""
    t = np.asarray(times)
    v = np.asarray(values)
    sel = (t >= t[-1] * 10.0 ** (-decades)) & (t > 0)
    if np.count_nonzero(sel) < 5:
        raise InsufficientDataError("too few samples in the last decade for a tail fit")
    vs = v[sel]
    if np.all(vs > 0):
        sign = 1.0
    elif np.all(vs < 0):
        sign = -1.0
    else:
        raise UnreliableTransformError("trace changes sign in its last decade; no power tail")
    slope, icpt = np.polyfit(np.log(t[sel]), np.log(sign * vs), 1)
    return ("power", sign * math.exp(icpt), -slope)


def _tail_integral(model, T: float, s: float) -> float:
    kind = model[0]
    if kind == "power":
        _, A, p = model
        if p < 1.0:
            return float(A * s ** (p - 1.0) * special.gamma(1.0 - p) * special.gammaincc(1.0 - p, s * T))
        val, _ = integrate.quad(lambda u: u ** -p * math.exp(-s * T * (u - 1.0)), 1.0, np.inf,
                                epsabs=0.0, epsrel=1e-12, limit=400)
        return float(A * T ** (1.0 - p) * math.exp(-s * T) * val)
    if kind == "exp":
        _, A, kappa = model
        return float(A * math.exp(-(kappa + s) * T) / (kappa + s))
    raise InvalidParameterError(f"unknown tail model {kind!r}")


def _sample_weights(times: np.ndarray, s: float) -> np.ndarray:
    """Weights c_i with head = sum_i c_i f(t_i) for the piecewise-linear rule."""
    wl, wr = _panel_weights(np.diff(times), s)
    e0 = np.exp(-s * times[:-1])
    c = np.zeros(times.size)
    c[:-1] += e0 * wl
    c[1:] += e0 * wr
    return c


def transform_noise_level(trace: ObservationTrace, s_grid, sigma: float) -> float:
    """Standard deviation (Euclidean over ``s_grid``) of the transformed noise.

    Propagates i.i.d. N(0, sigma^2) sample noise through the quadrature
    weights; the tail model's sensitivity is ignored.
    """
    var = sum(float(np.sum(_sample_weights(trace.times, si) ** 2)) for si in np.asarray(s_grid, float))
    return float(sigma) * math.sqrt(var)


def trace_laplace(trace: ObservationTrace, s: float, tail="auto") -> TransformValue:
    """int_0^inf f(t) e^{-st} dt for the sampled trace.

    The sampled range is integrated exactly for piecewise-linear f.  Beyond
    the last sample a tail model contributes analytically.

    Parameters
    ----------
    tail : "auto", "power", None, or a model tuple
        ``"auto"`` uses no tail when ``s T >= 20`` and a fitted power law
        otherwise; ``None`` never adds a tail; ``"power"`` always fits one;
        tuples ``("power", A, p)`` or ``("exp", A, kappa)`` are used as given.

    Raises
    ------
    UnreliableTransformError
        If no tail model is used and the estimated tail exceeds 10% of the
        value.
    """
    if not s > 0.0:
        raise InvalidParameterError("s must be positive")
    t, v = trace.times, trace.values
    if t[0] > 0.0:
        raise InvalidParameterError("trace must start at t = 0")
    head = float(_sample_weights(t, s) @ v)
    T = t[-1]
    model = None
    if tail == "auto":
        tail = None if s * T >= 20.0 else "power"
    if tail == "power":
        model = fit_power_tail(t, v)
    elif isinstance(tail, tuple):
        model = tail
    elif tail is not None:
        raise InvalidParameterError(f"bad tail option {tail!r}")
    if model is None:
        # crude bound: constant continuation of the last sample
        est = abs(v[-1]) * math.exp(-s * T) / s
        frac = est / max(abs(head) + est, 1e-300)
        if frac > 0.1:
            raise UnreliableTransformError(
                "tail beyond the observation horizon is not negligible", s=s, tail_fraction=frac
            )
        return TransformValue(head, 0.0, frac, None)
    tl = _tail_integral(model, T, s)
    total = head + tl
    return TransformValue(total, tl, abs(tl) / max(abs(total), 1e-300), model)


# ---------------------------------------------------------------------------
# order fitting
# ---------------------------------------------------------------------------

@dataclass
class OrderFitResult:
    alpha_hat: tuple
    residual: float
    relative_residual: float
    s_grid: np.ndarray
    iterations: int
    covariance: np.ndarray
    ordered: bool
    restarts: int
    data: np.ndarray = field(repr=False, default=None)

    @property
    def orders(self) -> OrderVector:
        return OrderVector(self.alpha_hat)

    def to_dict(self) -> dict:
        return {
            "alpha_hat": list(self.alpha_hat),
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "s_grid": self.s_grid.tolist(),
            "iterations": self.iterations,
            "std_error": np.sqrt(np.clip(np.diag(self.covariance), 0, None)).tolist(),
            "ordered": self.ordered,
            "restarts": self.restarts,
        }


def forward_transform(spec: ProblemSpec, alphas, s_grid, x0: float, k0: int) -> np.ndarray:
    """u_hat_k0(x0; s) for each real s, with orders ``alphas`` (any order)."""
    alphas = np.asarray(alphas, dtype=float)
    i0 = node_index(spec, x0)
    s = np.asarray(s_grid, dtype=float)
    # bypass OrderVector so the optimiser may visit unsorted points
    sub = _SpecView(spec, alphas)
    u = solve_many(sub, s)
    return u[:, k0, i0].real


class _SpecView:
    """Duck-typed ProblemSpec with replaced orders (no ordering check)."""

    def __init__(self, spec: ProblemSpec, alphas):
        self._spec = spec
        self.orders = type("O", (), {"alphas": tuple(float(a) for a in alphas)})()

    def __getattr__(self, name):
        return getattr(self._spec, name)

    def require_weak_static(self, what):
        return self._spec.require_weak_static(what)


def _default_s_grid():
    return np.logspace(-3.0, 0.0, 12)


def fit_orders(
    trace: ObservationTrace,
    spec_known: ProblemSpec,
    alpha_init,
    s_grid=None,
    tail="auto",
    restarts: int = 4,
    seed: int = 0,
    noise_floor: float | None = None,
    bounds=(1e-3, 1.0 - 1e-3),
    data=None,
    sigma: float | None = None,
) -> OrderFitResult:
    """Least-squares fit of the orders in the Laplace domain.

    Minimises ``sum_s (u_hat_k0(x0; s; alpha) - L[trace](s))^2`` over the box
    ``bounds^K`` with a trust-region reflective solver (finite-difference
    Jacobian), starting at ``alpha_init`` and at ``restarts`` further random
    points.  The orders of ``spec_known`` are ignored.  ``data`` may supply
    the transformed observation on ``s_grid`` directly, bypassing
    ``trace_laplace`` (the trace then only provides ``x0`` and ``k0``).
    With a known observation noise ``sigma`` the default floor is raised by
    three times ``transform_noise_level``.

    Raises
    ------
    FitFailureError
        If the best residual exceeds ``noise_floor`` (default 1e-3 times the
        norm of the transformed data, plus the noise allowance above).
    """
    spec_known.require_weak_static("fit_orders")
    a0 = np.asarray(getattr(alpha_init, "alphas", alpha_init), dtype=float)
    K = spec_known.K
    if a0.size != K:
        raise InvalidParameterError(f"alpha_init must have {K} entries")
    if not 0 <= trace.k0 < K:
        raise InvalidParameterError("trace.k0 out of range")
    s = _default_s_grid() if s_grid is None else np.asarray(s_grid, dtype=float)
    if s.size < 3 * K:
        raise InvalidParameterError(f"need at least {3 * K} s values")
    if np.any(s <= 0.0) or np.any(s > 1.0):
        raise InvalidParameterError("s_grid must lie in (0, 1]")
    node_index(spec_known, trace.x0)
    if data is None:
        data = np.array([trace_laplace(trace, si, tail).value for si in s])
    else:
        data = np.asarray(data, dtype=float)
        if data.shape != s.shape:
            raise InvalidParameterError("data must match s_grid")

    def resid(a):
        return forward_transform(spec_known, a, s, trace.x0, trace.k0) - data

    lo, hi = bounds
    rng = np.random.default_rng(seed)
    starts = [np.clip(a0, lo + 1e-6, hi - 1e-6)]
    for _ in range(restarts):
        starts.append(np.sort(rng.uniform(0.1, 0.95, K))[::-1])
    best = None
    nfev = 0
    for x0 in starts:
        try:
            res = optimize.least_squares(resid, x0, bounds=(lo, hi), method="trf",
                                         x_scale=0.1, xtol=1e-14, ftol=1e-14, gtol=1e-14,
                                         max_nfev=400)
        except (NumericError, ValueError):
            continue
        nfev += res.nfev
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitFailureError("all optimiser starts failed")
    r = best.fun
    rnorm = float(np.linalg.norm(r))
    dnorm = float(np.linalg.norm(data))
    if noise_floor is not None:
        floor = float(noise_floor)
    else:
        floor = 1e-3 * dnorm
        if sigma:
            floor += 3.0 * transform_noise_level(trace, s, sigma)
    J = best.jac
    dof = max(s.size - K, 1)
    try:
        cov = np.linalg.inv(J.T @ J) * (rnorm ** 2 / dof)
    except np.linalg.LinAlgError:
        cov = np.full((K, K), np.inf)
    a_hat = tuple(float(v) for v in best.x)
    ordered = all(a_hat[i] >= a_hat[i + 1] for i in range(K - 1))
    out = OrderFitResult(a_hat, rnorm, rnorm / max(dnorm, 1e-300), s, nfev, cov, ordered,
                         len(starts) - 1, data)
    if rnorm > floor:
        raise FitFailureError(
            "fit residual above the noise floor", residual=rnorm, floor=floor, alpha_hat=list(a_hat)
        )
    return out


def synthetic_trace(spec: ProblemSpec, x0: float, k0: int, t_min: float = 1e-3, t_max: float = 1e5,
                    per_decade: int = 40, contour=None) -> ObservationTrace:
    """Exact trace from contour inversion on log-spaced times plus t = 0."""
    i0 = node_index(spec, x0)
    n_dec = math.log10(t_max / t_min)
    times = np.logspace(math.log10(t_min), math.log10(t_max), int(round(n_dec * per_decade)) + 1)
    vals = contour_invert_many(spec, times, contour)[:, k0, i0]
    return ObservationTrace(x0, k0, np.concatenate([[0.0], times]),
                            np.concatenate([[spec.u0[k0, i0]], vals]), t_max)


# ---------------------------------------------------------------------------
# limit system and maximum principle
# ---------------------------------------------------------------------------

def _static_solve(spec: ProblemSpec, rhs: np.ndarray) -> np.ndarray:
    K, n = spec.K, spec.n
    ab, lu = block_matrix(spec, 0.0, np.zeros(K), -1.0)
    b = np.asarray(rhs, dtype=float).T.ravel()
    try:
        x = linalg.solve_banded(lu, ab, b, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"(A - C) w = f is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericError("(A - C) w = f produced non-finite values")
    return x.reshape(n, K).T


def solve_w0(spec: ProblemSpec, D) -> np.ndarray:
    """Solve (A - C) w0 = D u0; ``D`` is a 0/1 diagonal (matrix or vector)."""
    spec.require_weak_static("solve_w0")
    D = np.asarray(D, dtype=float)
    dvec = np.diag(D) if D.ndim == 2 else D
    if dvec.size != spec.K:
        raise InvalidParameterError("D has the wrong size")
    return _static_solve(spec, dvec[:, None] * spec.u0)


def witness_matrix(alpha, beta):
    """k1, swap flag and D for two order vectors.

    ``k1`` is the largest index with alpha_k1 != beta_k1 (0-based).  When
    alpha_k1 > beta_k1 the roles are swapped so that alpha_k1 < beta_k1.
    D has d_kk = 1 for k = k1 and for k < k1 with alpha_k = alpha_k1.
    """
    a = np.asarray(getattr(alpha, "alphas", alpha), dtype=float)
    b = np.asarray(getattr(beta, "alphas", beta), dtype=float)
    if a.shape != b.shape:
        raise InvalidParameterError("order vectors differ in length")
    diff = np.abs(a - b) > ORDER_TIE_TOL
    if not np.any(diff):
        raise InvalidParameterError("alpha and beta coincide")
    k1 = int(np.nonzero(diff)[0][-1])
    swapped = bool(a[k1] > b[k1])
    if swapped:
        a, b = b, a
    d = np.zeros(a.size)
    d[k1] = 1.0
    for k in range(k1):
        if abs(a[k] - a[k1]) <= ORDER_TIE_TOL:
            d[k] = 1.0
    return k1, swapped, np.diag(d), a, b


@dataclass
class WitnessReport:
    k1: int
    swapped: bool
    D: np.ndarray
    s_values: np.ndarray
    w_at_x0: np.ndarray        # (len(s), K)
    w0: np.ndarray             # (K, n)
    distances: np.ndarray      # ||w(s) - w0||_{L^2}
    w0_positive: bool
    w_positive_at_x0: bool
    converging: bool

    @property
    def positive(self) -> bool:
        return self.w0_positive and self.w_positive_at_x0

    def to_dict(self) -> dict:
        return {
            "k1": self.k1,
            "swapped": self.swapped,
            "D": np.diag(self.D).tolist(),
            "s_values": self.s_values.tolist(),
            "w_at_x0": self.w_at_x0.tolist(),
            "distances": self.distances.tolist(),
            "w0_positive": self.w0_positive,
            "w_positive_at_x0": self.w_positive_at_x0,
            "converging": self.converging,
            "positive": self.positive,
        }


def _cooperative_or_raise(spec: ProblemSpec):
    rep = validate_cooperative(spec.coupling)
    if not (rep.strict and rep.rowsum):
        raise PreconditionError("coupling matrix is not strictly cooperative with non-positive row sums",
                                **rep.to_dict())


def uniqueness_witness(spec: ProblemSpec, alpha, beta, x0: float, k0: int, s_values) -> WitnessReport:
    """Positivity certificate that distinct orders give distinct traces.

    Raises
    ------
    PreconditionError
        If C is not strictly cooperative with non-positive row sums, or some
        u0 component fails ``>= 0, not identically 0``.
    """
    spec.require_weak_static("uniqueness_witness")
    _cooperative_or_raise(spec)
    if not all(nonneg_nonzero(u) for u in spec.u0):
        raise PreconditionError("every u0 component must be >= 0 and not identically 0")
    i0 = node_index(spec, x0)
    k1, swapped, D, a, b = witness_matrix(alpha, beta)
    s = np.asarray(s_values, dtype=float)
    if np.any(s <= 0.0) or np.any(s >= 1.0):
        raise InvalidParameterError("s_values must lie in (0, 1)")
    u_hat = solve_many(_SpecView(spec, a), s).real
    v_hat = solve_many(_SpecView(spec, b), s).real
    scale = s / (s ** a[k1] - s ** b[k1])
    w = scale[:, None, None] * (u_hat - v_hat)
    w0 = solve_w0(spec, D)
    h = spec.grid.h
    dist = np.sqrt(h * np.sum((w - w0[None]) ** 2, axis=(1, 2)))
    order = np.argsort(s)
    w_small = w[order[0]]
    report = WitnessReport(
        k1=k1,
        swapped=swapped,
        D=D,
        s_values=s,
        w_at_x0=w[:, :, i0],
        w0=w0,
        distances=dist,
        w0_positive=bool(np.all(w0 > 0.0)),
        w_positive_at_x0=bool(np.all(w_small[:, i0] > 0.0)),
        converging=bool(np.all(np.diff(dist[order][::-1]) < 0.0)) if s.size > 1 else True,
    )
    return report


@dataclass
class MaxPrincipleVerdict:
    regime: str  # "strict-cooperative", "weak-cooperative", "semidefinite-pair", "not-applicable"
    positivity_observed: bool | None
    min_interior: float | None
    mandated: tuple               # components whose positivity is guaranteed
    w: np.ndarray | None = None
    component_min: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "positivity_observed": self.positivity_observed,
            "min_interior": self.min_interior,
            "mandated": list(self.mandated),
            "component_min": None if self.component_min is None else list(self.component_min),
        }


def maximum_principle_check(spec: ProblemSpec, F, diagnostic_solve: bool = False) -> MaxPrincipleVerdict:
    """Classify the hypotheses and verify interior positivity of (A - C)^{-1} F.

    * ``"strict-cooperative"``: strictly cooperative C, row sums <= 0, every F_k >= 0 and
      some F_k not identically 0.  All components must be positive.
    * ``"weak-cooperative"``: weakly cooperative C, row sums <= 0, every F_k >= 0 and not
      identically 0.  All components must be positive.
    * ``"semidefinite-pair"``: K = 2, strictly cooperative, C negative
      semidefinite (row sums may be positive).  Reported only.
    * ``"not-applicable"``: otherwise; nothing is solved unless
      ``diagnostic_solve`` is set.
    """
    spec.require_weak_static("maximum_principle_check")
    F = np.asarray(F, dtype=float)
    if F.shape != (spec.K, spec.n):
        raise InvalidParameterError(f"F must have shape ({spec.K}, {spec.n})")
    coop = validate_cooperative(spec.coupling)
    nonneg = bool(np.min(F) >= -1e-12)
    each_nz = [nonneg_nonzero(f) for f in F]
    if coop.strict and coop.rowsum and nonneg and any(each_nz):
        regime = "strict-cooperative"
    elif coop.weak and coop.rowsum and all(each_nz):
        regime = "weak-cooperative"
    elif spec.K == 2 and coop.strict and validate_negative_semidefinite(spec.coupling).holds and nonneg and any(each_nz):
        regime = "semidefinite-pair"
    else:
        regime = "not-applicable"
    mandated = tuple(range(spec.K)) if regime in ("strict-cooperative", "weak-cooperative") else ()
    if regime == "not-applicable" and not diagnostic_solve:
        return MaxPrincipleVerdict(regime, None, None, mandated)
    w = _static_solve(spec, F)
    comp_min = tuple(float(np.min(wk)) for wk in w)
    if mandated:
        observed = bool(all(comp_min[k] > 0.0 for k in mandated))
        mn = float(min(comp_min[k] for k in mandated))
    else:
        observed = bool(all(m > 0.0 for m in comp_min))
        mn = float(min(comp_min))
    return MaxPrincipleVerdict(regime, observed, mn, mandated, w, comp_min)
