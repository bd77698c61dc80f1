"""Two-parameter and multinomial Mittag-Leffler functions on the real line.

The two-parameter function

    E_{a,b}(z) = sum_{m>=0} z^m / Gamma(a m + b)

is evaluated with four regimes:

* ``|z| <= 1``: Taylor series.
* ``z > 1``: the (all positive) series summed in log space, so that values up
  to the double range are produced with relative accuracy.
* ``-r_asym < z < -1``: trapezoidal rule on a parabolic Hankel contour for the
  Laplace-transform representation ``s^(a-b) / (s^a - z)``, with explicit
  residues for poles on the principal sheet (``a > 1``).
* ``z <= -r_asym``: algebraic asymptotic expansion plus pole residues.

The kernels live in :mod:`fracsys._kernels`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .errors import InvalidParameterError, MLOverflowError, NonConvergenceError, NumericError

__all__ = [
    "MLParams",
    "MultiMLParams",
    "ml",
    "mittag_leffler",
    "ml_bound_holds",
    "calibrate_c0",
    "multinomial_ml",
    "multinomial_layer",
    "overflow_threshold",
    "switch_radius",
]

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class MLParams:
    """Parameters (alpha, beta) of E_{alpha,beta}.

    ``alpha`` must lie in (0, 2]; ``alpha = 2`` is admitted so that the
    cosine identity can be exercised.  ``beta`` must be positive.
    """

    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        a, b = float(self.alpha), float(self.beta)
        if not (math.isfinite(a) and 0.0 < a <= 2.0):
            raise InvalidParameterError(f"alpha must lie in (0, 2], got {a!r}", alpha=a)
        if not (math.isfinite(b) and b > 0.0):
            raise InvalidParameterError(f"beta must be positive, got {b!r}", beta=b)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class MultiMLParams:
    """Parameters of the multinomial function E_{(b_1..b_K), b_0}."""

    betas: tuple
    beta0: float

    def __post_init__(self):
        betas = tuple(float(b) for b in np.atleast_1d(self.betas))
        if len(betas) < 1:
            raise InvalidParameterError("need at least one beta")
        if not all(math.isfinite(b) and b > 0.0 for b in betas):
            raise InvalidParameterError(f"betas must be positive, got {betas!r}")
        b0 = float(self.beta0)
        if not math.isfinite(b0):
            raise InvalidParameterError(f"beta0 must be finite, got {b0!r}")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "beta0", b0)

    @property
    def K(self) -> int:
        return len(self.betas)


def switch_radius(alpha: float) -> float:
    """|z| beyond which the asymptotic expansion is used on the negative axis."""
    return float(_kernels.asymptotic_radius(float(alpha)))


def overflow_threshold(params: MLParams) -> float:
    """Largest z > 0 (to ~1e-6 relative) with E_{alpha,beta}(z) below the double range."""
    lo, hi = 1.0, 2.0
    while math.isfinite(_kernels.ml_scalar(params.alpha, params.beta, hi)):
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            return math.inf
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if math.isfinite(_kernels.ml_scalar(params.alpha, params.beta, mid)):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * hi:
            break
    return lo


def ml(params: MLParams, z):
    """Evaluate E_{alpha,beta}(z) for real ``z`` (scalar or array).

    Parameters
    ----------
    params : MLParams
    z : float or array_like
        Real arguments.

    Returns
    -------
    float or ndarray
        Same shape as ``z``.

    Raises
    ------
    MLOverflowError
        If any value exceeds the double range; the threshold is attached.
    """
    if not isinstance(params, MLParams):
        raise InvalidParameterError("params must be an MLParams instance")
    za = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(za)):
        raise InvalidParameterError("z must be finite")
    out = _kernels.ml_array(params.alpha, params.beta, za)
    if not np.all(np.isfinite(out)):
        thr = overflow_threshold(params)
        raise MLOverflowError(
            f"E_{{{params.alpha},{params.beta}}} overflows for z > {thr:.6g}",
            threshold=thr,
            alpha=params.alpha,
            beta=params.beta,
        )
    out = out.reshape(za.shape)
    return float(out) if out.ndim == 0 else out


def mittag_leffler(alpha: float, beta: float, z):
    """Shorthand for ``ml(MLParams(alpha, beta), z)``."""
    return ml(MLParams(alpha, beta), z)


def _bound_rhs(params: MLParams, z: float, c0: float) -> float:
    a, b = params.alpha, params.beta
    return c0 * (1.0 + z) ** ((1.0 - b) / a) * math.exp(z ** (1.0 / a))


def ml_bound_holds(params: MLParams, z: float, c0: float) -> bool:
    """Check ``0 < |E(z)| <= c0 (1+z)^((1-beta)/alpha) exp(z^(1/alpha))`` for z > 0.

    Both sides are compared in log form so that large ``z`` does not overflow.
    """
    if not (z > 0.0):
        raise InvalidParameterError("the bound is stated for z > 0", z=z)
    if not (c0 > 0.0):
        raise InvalidParameterError("c0 must be positive", c0=c0)
    a, b = params.alpha, params.beta
    val = _kernels.ml_scalar(a, b, float(z))
    rhs_log = math.log(c0) + ((1.0 - b) / a) * math.log1p(z) + z ** (1.0 / a)
    if math.isfinite(val):
        if val == 0.0:
            return False
        return math.log(abs(val)) <= rhs_log
    # beyond the double range compare against the leading residue
    lead = z ** (1.0 / a) + ((1.0 - b) / a) * math.log(z) - math.log(a)
    return lead <= rhs_log


def calibrate_c0(params: MLParams, z_grid) -> float:
    """Smallest c0 for which the bound holds on ``z_grid`` (max ratio, log form)."""
    a, b = params.alpha, params.beta
    best = -math.inf
    for z in np.asarray(z_grid, dtype=float):
        val = _kernels.ml_scalar(a, b, float(z))
        if math.isfinite(val):
            lv = math.log(abs(val))
        else:
            lv = z ** (1.0 / a) + ((1.0 - b) / a) * math.log(z) - math.log(a)
        ratio = lv - (((1.0 - b) / a) * math.log1p(z) + z ** (1.0 / a))
        best = max(best, ratio)
    return math.exp(best)


# ---------------------------------------------------------------------------
# multinomial Mittag-Leffler function
# ---------------------------------------------------------------------------

def _compositions(total: int, parts: int):
    """All multi-indices j in N^parts with |j| = total (lexicographic)."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def multinomial_layer(ell: int, betas, beta0: float, zs, with_abs: bool = False):
    """Sum over |j| = ell of (ell!/prod j_k!) prod z_k^j_k / Gamma(beta0 + beta.j).

    Returns the signed layer sum, and also the sum of absolute values when
    ``with_abs`` is true.
    """
    betas = np.asarray(betas, dtype=float)
    zs = np.asarray(zs, dtype=float)
    K = betas.size
    idx = np.array(list(_compositions(ell, K)), dtype=float).reshape(-1, K)
    log_coef = math.lgamma(ell + 1.0) - special.gammaln(idx + 1.0).sum(axis=1)
    arg = beta0 + idx @ betas
    lr, sg = _kernels._np_log_rgamma(arg)
    # 0^0 = 1, 0^j = 0 for j > 0
    zero_hit = ((zs[None, :] == 0.0) & (idx > 0)).any(axis=1)
    logz = np.log(np.where(zs == 0.0, 1.0, np.abs(zs)))
    pow_log = (idx * logz[None, :]).sum(axis=1)
    neg = (zs[None, :] < 0.0) & (idx % 2 == 1)
    sign = np.where(neg.sum(axis=1) % 2 == 1, -1.0, 1.0) * sg
    with np.errstate(invalid="ignore", over="ignore"):
        mag = np.where(zero_hit | (sg == 0.0), 0.0, np.exp(log_coef + pow_log + lr))
    total = float(np.sum(sign * mag))
    if with_abs:
        return total, float(np.sum(mag))
    return total


def multinomial_ml(params: MultiMLParams, zs, max_layers: int = 10_000) -> float:
    """Evaluate the multinomial Mittag-Leffler function layer by layer.

    Layers ``|j| = ell`` are summed for ell = 0, 1, ... until the absolute
    layer sum drops below 1e-16 of the running total (three layers in a row,
    so that sparse layers do not stop the loop early).

    Raises
    ------
    NonConvergenceError
        If ``max_layers`` layers do not reach the tolerance.
    NumericError
        If cancellation between terms of mixed sign leaves fewer than about
        eight correct digits (sum of |terms| times machine epsilon above
        1e-8 of the result).
    """
    if not isinstance(params, MultiMLParams):
        raise InvalidParameterError("params must be a MultiMLParams instance")
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    if zs.size != params.K:
        raise InvalidParameterError(f"expected {params.K} arguments, got {zs.size}")
    if not np.all(np.isfinite(zs)):
        raise InvalidParameterError("arguments must be finite")
    total = 0.0
    quiet = 0
    history = []
    for ell in range(max_layers + 1):
        layer, layer_abs = multinomial_layer(ell, params.betas, params.beta0, zs, with_abs=True)
        total += layer
        history.append(layer_abs)
        if layer_abs <= 1e-16 * abs(total) or layer_abs == 0.0 and ell > 0:
            quiet += 1
            if quiet >= 3:
                mass = math.fsum(history)
                if mass * _EPS > 1e-8 * max(abs(total), 1e-300):
                    raise NumericError("multinomial series is ill-conditioned in double precision",
                                       condition=mass / max(abs(total), 1e-300), layers=len(history))
                return total
        else:
            quiet = 0
        if not math.isfinite(total):
            break
    raise NonConvergenceError(
        "multinomial Mittag-Leffler series did not converge",
        layers=len(history),
        last_layer=history[-1] if history else None,
    )
