"""Hot loops, compiled with numba when available.

Each kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorised pure-numpy version.  The numpy path is used when numba is missing or
when the environment variable ``ARTIFACT_NO_NUMBA`` is set to a non-empty value
other than ``0``.  Both paths implement the same algorithm and are compared in
the test suite and in ``benchmarks/bench_kernels.py``.
"""
from __future__ import annotations

import cmath
import math
import os

import numpy as np
from scipy import special

_DISABLED = os.environ.get("ARTIFACT_NO_NUMBA", "") not in ("", "0")

try:
    if _DISABLED:
        raise ImportError("numba disabled by ARTIFACT_NO_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def jit(fn):
    """``numba.njit(cache=True)`` when numba is active, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


# target exponent for the contour trapezoid error, exp(-40) ~ 4e-18
_L_TARGET = 40.0
_MU_FREE = 5.0
_MU_CAP = 8.0
_LOG_DBL_MAX = 709.78


# ---------------------------------------------------------------------------
# Mittag-Leffler kernels, scalar (numba) versions
# ---------------------------------------------------------------------------

@jit
def _log_rgamma(x):
    """Return (log|1/Gamma(x)|, sign(1/Gamma(x))); sign is 0 at the poles."""
    if x > 0.0:
        return -math.lgamma(x), 1.0
    if x == math.floor(x):
        return 0.0, 0.0
    k = math.ceil(-x)
    sgn = -1.0 if (k % 2) == 1 else 1.0
    return -math.lgamma(x), sgn


@jit
def _rgamma(x):
    lr, sg = _log_rgamma(x)
    if sg == 0.0:
        return 0.0
    return sg * math.exp(lr)


@jit
def _ml_taylor(alpha, beta, z):
    s = 0.0
    zm = 1.0
    for m in range(0, 4000):
        g = alpha * m + beta
        term = zm * _rgamma(g)
        s += term
        if g > 3.0 and abs(term) <= 1e-18 * max(abs(s), 1e-280):
            break
        zm *= z
    return s


@jit
def _ml_positive(alpha, beta, z):
    """Series for z > 1 summed in log space; returns inf past the double range."""
    lz = math.log(z)
    est = z ** (1.0 / alpha) + ((1.0 - beta) / alpha) * lz - math.log(alpha)
    if est > _LOG_DBL_MAX + 5.0:
        return math.inf
    emax = -math.inf
    acc = 0.0
    m = 0
    while True:
        e = m * lz - math.lgamma(alpha * m + beta)
        if e > emax:
            if emax == -math.inf:
                acc = 1.0
            else:
                acc = acc * math.exp(emax - e) + 1.0
            emax = e
        else:
            acc += math.exp(e - emax)
            if e < emax - 40.0:
                break
        m += 1
    logv = emax + math.log(acc)
    if logv > _LOG_DBL_MAX:
        return math.inf
    return math.exp(logv)


@jit
def _contour_steps(mu, d_up, d_dn):
    """Step and node count of the parabolic trapezoid rule."""
    L = _L_TARGET
    h_up = 2.0 * math.pi * d_up / (L + mu)
    c_opt = math.sqrt(1.0 + L / mu)
    if d_dn >= c_opt:
        h_dn = math.pi / (mu * (1.0 + c_opt))
    else:
        h_dn = 2.0 * math.pi * d_dn / (L + mu * (1.0 + d_dn) ** 2)
    h = min(h_up, h_dn)
    n = int(math.ceil(c_opt / h))
    return h, n


@jit
def _contour_plan(alpha, x):
    """Choose (mu, h, n, use_residue) for E(-x) with x > 0."""
    if alpha > 1.0:
        r = x ** (1.0 / alpha)
        th = math.pi / alpha
        cc = r * math.cos(0.5 * th) ** 2
        mu_a = max(_MU_FREE, 4.0 * cc)
        d_a = 1.0 - math.sqrt(cc / mu_a)
        h_a, n_a = _contour_steps(mu_a, d_a, math.inf)
        mu_b = min(_MU_FREE, 0.25 * cc)
        d_b = math.sqrt(cc / mu_b) - 1.0
        h_b, n_b = _contour_steps(mu_b, 1.0, d_b)
        if mu_a <= _MU_CAP and n_a <= n_b:
            return mu_a, h_a, n_a, False
        return mu_b, h_b, n_b, True
    h, n = _contour_steps(_MU_FREE, 1.0, math.inf)
    return _MU_FREE, h, n, False


@jit
def _pole_residues(alpha, beta, x):
    """Sum of the residues at the two principal-sheet poles (alpha > 1, z = -x)."""
    r = x ** (1.0 / alpha)
    s = cmath.rect(r, math.pi / alpha)
    val = cmath.exp((1.0 - beta) * cmath.log(s) + s) / alpha
    return 2.0 * val.real


@jit
def _ml_contour(alpha, beta, z):
    x = -z
    mu, h, n, use_res = _contour_plan(alpha, x)
    acc = 0.0
    for k in range(0, n + 1):
        u = k * h
        w = complex(1.0, u)
        s = mu * w * w
        ls = cmath.log(s)
        val = cmath.exp(s + (alpha - beta) * ls) / (cmath.exp(alpha * ls) + x) * w
        if k == 0:
            acc += val.real
        else:
            acc += 2.0 * val.real
    out = mu * h / math.pi * acc
    if use_res:
        out += _pole_residues(alpha, beta, x)
    return out


@jit
def _ml_asymptotic(alpha, beta, z):
    x = -z
    lx = math.log(x)
    s = 0.0
    prev = math.inf
    for m in range(1, 600):
        y = beta - alpha * m
        # smooth envelope |Gamma(1-y)| / (pi x^m), free of the sin(pi y) zeros
        env = math.lgamma(1.0 - y) - m * lx if y < 1.0 else -math.lgamma(y) - m * lx
        if env > prev and m > 2:
            break
        prev = env
        lr, sg = _log_rgamma(y)
        if sg != 0.0:
            term = sg * math.exp(lr - m * lx)
            if m % 2 == 0:
                term = -term
            s += term
        if math.exp(env) <= 1e-18 * abs(s):
            break
    if alpha > 1.0:
        s += _pole_residues(alpha, beta, x)
    return s


@jit
def asymptotic_radius(alpha):
    r_switch = max(10.0, (2.0 - alpha) * 15.0)
    return max(r_switch, 42.0 ** alpha)


@jit
def ml_scalar(alpha, beta, z):
    """E_{alpha,beta}(z) for real z; returns +inf when the value overflows."""
    if z == 0.0:
        return _rgamma(beta)
    if alpha == 1.0 and beta == 1.0:
        if z > _LOG_DBL_MAX:
            return math.inf
        return math.exp(z)
    az = abs(z)
    if az <= 1.0:
        return _ml_taylor(alpha, beta, z)
    if z > 0.0:
        return _ml_positive(alpha, beta, z)
    if az >= asymptotic_radius(alpha):
        return _ml_asymptotic(alpha, beta, z)
    return _ml_contour(alpha, beta, z)


@jit
def _ml_loop(alpha, beta, z, out):
    for i in range(z.size):
        out[i] = ml_scalar(alpha, beta, z[i])


# ---------------------------------------------------------------------------
# Mittag-Leffler kernels, vectorised numpy versions
# ---------------------------------------------------------------------------

def _np_log_rgamma(x):
    x = np.asarray(x, dtype=float)
    lr = -special.gammaln(x)
    sgn = np.sign(special.gamma(np.where(np.abs(x) < 170, x, 0.5)))
    big_neg = (x < 0) & (np.abs(x) >= 170)
    if np.any(big_neg):
        k = np.ceil(-x[big_neg])
        sgn[big_neg] = np.where(k % 2 == 1, -1.0, 1.0)
    sgn = np.where(x > 0, 1.0, sgn)
    pole = (x <= 0) & (x == np.floor(x))
    sgn = np.where(pole, 0.0, sgn)
    lr = np.where(pole, 0.0, lr)
    return lr, sgn


def _np_taylor(alpha, beta, z):
    mmax = int(math.ceil(max(30.0 - beta, 0.0) / alpha)) + 4
    m = np.arange(mmax + 1, dtype=float)
    rg = special.rgamma(alpha * m + beta)
    powers = z[:, None] ** m[None, :]
    return powers @ rg


def _np_positive(alpha, beta, z):
    lz = np.log(z)
    est = z ** (1.0 / alpha) + ((1.0 - beta) / alpha) * lz - math.log(alpha)
    out = np.full(z.shape, np.inf)
    ok = est <= _LOG_DBL_MAX + 5.0
    if not np.any(ok):
        return out
    lz = lz[ok]
    emax = np.full(lz.shape, -np.inf)
    acc = np.zeros(lz.shape)
    done = np.zeros(lz.shape, dtype=bool)
    block = 256
    start = 0
    while not np.all(done):
        m = np.arange(start, start + block, dtype=float)
        e = m[None, :] * lz[:, None] - special.gammaln(alpha * m + beta)[None, :]
        bmax = e.max(axis=1)
        new_max = np.maximum(emax, bmax)
        with np.errstate(invalid="ignore"):
            scale = np.where(np.isfinite(emax), np.exp(emax - new_max), 0.0)
        acc = acc * scale + np.exp(e - new_max[:, None]).sum(axis=1)
        emax = new_max
        done |= e[:, -1] < emax - 40.0
        start += block
    logv = emax + np.log(acc)
    vals = np.where(logv > _LOG_DBL_MAX, np.inf, np.exp(np.minimum(logv, _LOG_DBL_MAX)))
    out[ok] = vals
    return out


def _np_steps(mu, d_up, d_dn):
    L = _L_TARGET
    h_up = 2.0 * np.pi * d_up / (L + mu)
    c_opt = np.sqrt(1.0 + L / mu)
    with np.errstate(invalid="ignore", divide="ignore"):
        h_free = np.pi / (mu * (1.0 + c_opt))
        h_con = 2.0 * np.pi * d_dn / (L + mu * (1.0 + d_dn) ** 2)
    h_dn = np.where(d_dn >= c_opt, h_free, h_con)
    h = np.minimum(h_up, h_dn)
    n = np.ceil(c_opt / h).astype(int)
    return h, n


def _np_pole_residues(alpha, beta, x):
    r = x ** (1.0 / alpha)
    s = r * np.exp(1j * np.pi / alpha)
    return 2.0 * (np.exp((1.0 - beta) * np.log(s) + s) / alpha).real


def _np_contour(alpha, beta, z):
    x = -z
    if alpha > 1.0:
        r = x ** (1.0 / alpha)
        cc = r * math.cos(0.5 * math.pi / alpha) ** 2
        mu_a = np.maximum(_MU_FREE, 4.0 * cc)
        h_a, n_a = _np_steps(mu_a, 1.0 - np.sqrt(cc / mu_a), np.full(x.shape, np.inf))
        mu_b = np.minimum(_MU_FREE, 0.25 * cc)
        h_b, n_b = _np_steps(mu_b, np.ones_like(x), np.sqrt(cc / mu_b) - 1.0)
        pick_a = (mu_a <= _MU_CAP) & (n_a <= n_b)
        mu = np.where(pick_a, mu_a, mu_b)
        h = np.where(pick_a, h_a, h_b)
        n = np.where(pick_a, n_a, n_b)
        use_res = ~pick_a
    else:
        mu = np.full(x.shape, _MU_FREE)
        h, n = _np_steps(mu, np.ones_like(x), np.full(x.shape, np.inf))
        use_res = np.zeros(x.shape, dtype=bool)
    k = np.arange(int(n.max()) + 1, dtype=float)
    u = h[:, None] * k[None, :]
    w = 1.0 + 1j * u
    s = mu[:, None] * w * w
    ls = np.log(s)
    val = np.exp(s + (alpha - beta) * ls) / (np.exp(alpha * ls) + x[:, None]) * w
    wts = np.where(k[None, :] <= n[:, None], 2.0, 0.0)
    wts[:, 0] = 1.0
    out = mu * h / np.pi * (val.real * wts).sum(axis=1)
    if np.any(use_res):
        out[use_res] += _np_pole_residues(alpha, beta, x[use_res])
    return out


def _np_asymptotic(alpha, beta, z):
    x = -z
    m = np.arange(1, 200, dtype=float)
    y = beta - alpha * m
    lr, sg = _np_log_rgamma(y)
    lx = np.log(x)[:, None]
    env_m = np.where(y < 1.0, special.gammaln(np.maximum(1.0 - y, 1e-300)), -special.gammaln(np.maximum(y, 1e-300)))
    env = env_m[None, :] - m[None, :] * lx
    stop = np.argmin(env, axis=1)
    alt = np.where(m % 2 == 0, -1.0, 1.0) * sg
    terms = alt[None, :] * np.exp(np.minimum(lr[None, :] - m[None, :] * lx, _LOG_DBL_MAX))
    keep = np.arange(m.size)[None, :] <= stop[:, None]
    out = (terms * keep).sum(axis=1)
    if alpha > 1.0:
        out = out + _np_pole_residues(alpha, beta, x)
    return out


def _ml_numpy(alpha, beta, z):
    out = np.empty(z.shape)
    az = np.abs(z)
    zero = z == 0.0
    out[zero] = special.rgamma(beta)
    if alpha == 1.0 and beta == 1.0:
        with np.errstate(over="ignore"):
            out[~zero] = np.exp(z[~zero])
        return out
    tay = (az <= 1.0) & ~zero
    if np.any(tay):
        out[tay] = _np_taylor(alpha, beta, z[tay])
    pos = z > 1.0
    if np.any(pos):
        out[pos] = _np_positive(alpha, beta, z[pos])
    rad = asymptotic_radius(alpha)
    asy = (z < -1.0) & (az >= rad)
    if np.any(asy):
        out[asy] = _np_asymptotic(alpha, beta, z[asy])
    mid = (z < -1.0) & (az < rad)
    if np.any(mid):
        out[mid] = _np_contour(alpha, beta, z[mid])
    return out


def ml_array(alpha: float, beta: float, z: np.ndarray) -> np.ndarray:
    """Vectorised E_{alpha,beta} on a flat float array (inf marks overflow)."""
    z = np.ascontiguousarray(z, dtype=float).ravel()
    if HAVE_NUMBA:
        out = np.empty_like(z)
        _ml_loop(float(alpha), float(beta), z, out)
        return out
    return _ml_numpy(float(alpha), float(beta), z)


# ---------------------------------------------------------------------------
# Volterra march for y + lam * J^alpha y = J^alpha g, modewise
# ---------------------------------------------------------------------------

@jit
def _volterra_march_nb(W, G, lam, Y):
    n_t, n_m = G.shape
    acc = np.zeros(n_m)
    for j in range(1, n_t):
        for n in range(n_m):
            acc[n] = 0.0
        for i in range(1, j):
            w = W[j, i]
            for n in range(n_m):
                acc[n] += w * Y[i, n]
        d = W[j, j]
        for n in range(n_m):
            Y[j, n] = (G[j, n] - lam[n] * acc[n]) / (1.0 + lam[n] * d)


def _volterra_march_np(W, G, lam, Y):
    for j in range(1, G.shape[0]):
        acc = W[j, 1:j] @ Y[1:j] if j > 1 else 0.0
        Y[j] = (G[j] - lam * acc) / (1.0 + lam * W[j, j])


def volterra_march(W: np.ndarray, G: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Solve y_j + lam sum_i W[j,i] y_i = G_j for all j with y_0 = 0.

    ``W`` is the lower-triangular product-integration table of J^alpha,
    ``G`` has shape (n_times, n_modes) and ``lam`` one entry per mode.
    """
    W = np.ascontiguousarray(W, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    Y = np.zeros_like(G)
    if HAVE_NUMBA:
        _volterra_march_nb(W, G, lam, Y)
    else:
        _volterra_march_np(W, G, lam, Y)
    return Y


# ---------------------------------------------------------------------------
# L1 history sum  H_j = sum_{i<j} w_{j,i} (u_i - u_{i-1})
# ---------------------------------------------------------------------------

@jit
def _l1_history_nb(W, dU, j, out):
    n = dU.shape[1]
    for x in range(n):
        out[x] = 0.0
    for i in range(1, j):
        w = W[j, i]
        for x in range(n):
            out[x] += w * dU[i, x]


def l1_history(W: np.ndarray, dU: np.ndarray, j: int) -> np.ndarray:
    """History term of the L1 scheme at step ``j`` (rows 1..j-1 of ``dU``)."""
    if HAVE_NUMBA:
        out = np.empty(dU.shape[1])
        _l1_history_nb(W, dU, j, out)
        return out
    if j <= 1:
        return np.zeros(dU.shape[1])
    return W[j, 1:j] @ dU[1:j]


# ---------------------------------------------------------------------------
# block tridiagonal solves for many complex shifts
#   (T_k + shift_k) x_k - sum_l C[:, k, l] x_l = rhs_k,
# with T_k symmetric tridiagonal (diag d[k], off-diagonal e[k]).
# ---------------------------------------------------------------------------

@jit
def _small_solve(Mat, B, K, ncol):
    """Solve Mat X = B in place (partial pivoting); X overwrites B."""
    for c in range(K):
        p = c
        best = abs(Mat[c, c])
        for r in range(c + 1, K):
            if abs(Mat[r, c]) > best:
                best = abs(Mat[r, c])
                p = r
        if p != c:
            for q in range(K):
                tmp = Mat[c, q]
                Mat[c, q] = Mat[p, q]
                Mat[p, q] = tmp
            for q in range(ncol):
                tmp = B[c, q]
                B[c, q] = B[p, q]
                B[p, q] = tmp
        piv = Mat[c, c]
        for r in range(c + 1, K):
            f = Mat[r, c] / piv
            if f != 0:
                for q in range(c, K):
                    Mat[r, q] -= f * Mat[c, q]
                for q in range(ncol):
                    B[r, q] -= f * B[c, q]
    for c in range(K - 1, -1, -1):
        for q in range(ncol):
            acc = B[c, q]
            for r in range(c + 1, K):
                acc -= Mat[c, r] * B[r, q]
            B[c, q] = acc / Mat[c, c]


@jit
def _block_tridiag_nb(d, e, C, shifts, rhs, out):
    S = shifts.shape[0]
    K = d.shape[0]
    n = d.shape[1]
    G = np.empty((n, K, K), dtype=np.complex128)
    y = np.empty((n, K), dtype=np.complex128)
    Mat = np.empty((K, K), dtype=np.complex128)
    B = np.empty((K, K + 1), dtype=np.complex128)
    for si in range(S):
        for i in range(n):
            for k in range(K):
                for l in range(K):
                    Mat[k, l] = -C[i, k, l]
                Mat[k, k] += d[k, i] + shifts[si, k]
                B[k, K] = rhs[si, k, i]
            if i > 0:
                # Mat -= E_{i-1} G_{i-1};  b -= E_{i-1} y_{i-1}
                for k in range(K):
                    ek = e[k, i - 1]
                    for l in range(K):
                        Mat[k, l] -= ek * G[i - 1, k, l]
                    B[k, K] -= ek * y[i - 1, k]
            for k in range(K):
                for l in range(K):
                    B[k, l] = 0.0
                if i < n - 1:
                    B[k, k] = e[k, i]
            _small_solve(Mat, B, K, K + 1)
            for k in range(K):
                for l in range(K):
                    G[i, k, l] = B[k, l]
                y[i, k] = B[k, K]
        for k in range(K):
            out[si, k, n - 1] = y[n - 1, k]
        for i in range(n - 2, -1, -1):
            for k in range(K):
                acc = y[i, k]
                for l in range(K):
                    acc -= G[i, k, l] * out[si, l, i + 1]
                out[si, k, i] = acc


def _block_tridiag_np(d, e, C, shifts, rhs):
    S = shifts.shape[0]
    K, n = d.shape
    eyeK = np.eye(K)
    G = np.zeros((n, S, K, K), dtype=complex)
    y = np.zeros((n, S, K), dtype=complex)
    for i in range(n):
        Mat = (np.diag(d[:, i]) - C[i])[None] + shifts[:, :, None] * eyeK[None]
        b = rhs[:, :, i].astype(complex)
        if i > 0:
            Mat = Mat - e[:, i - 1][None, :, None] * G[i - 1]
            b = b - e[:, i - 1][None, :] * y[i - 1]
        E = np.diag(e[:, i]) if i < n - 1 else np.zeros((K, K))
        rhs_all = np.concatenate([np.broadcast_to(E, (S, K, K)), b[:, :, None]], axis=2)
        sol = np.linalg.solve(Mat, rhs_all)
        G[i] = sol[:, :, :K]
        y[i] = sol[:, :, K]
    out = np.empty((S, K, n), dtype=complex)
    out[:, :, n - 1] = y[n - 1]
    for i in range(n - 2, -1, -1):
        out[:, :, i] = y[i] - np.einsum("skl,sl->sk", G[i], out[:, :, i + 1])
    return out


def block_tridiag_solve(d, e, C, shifts, rhs) -> np.ndarray:
    """Solve the weakly coupled block system for many shifts at once.

    Parameters
    ----------
    d, e : ndarray, shapes (K, n) and (K, n-1)
        Tridiagonal bands of each component operator.
    C : ndarray, shape (n, K, K)
        Coupling matrix at every node.
    shifts : complex ndarray, shape (S, K)
    rhs : complex ndarray, shape (S, K, n)

    Returns
    -------
    complex ndarray, shape (S, K, n)
    """
    d = np.ascontiguousarray(d, dtype=float)
    e = np.ascontiguousarray(e, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    shifts = np.ascontiguousarray(shifts, dtype=complex)
    rhs = np.ascontiguousarray(rhs, dtype=complex)
    if HAVE_NUMBA:
        out = np.empty(rhs.shape, dtype=complex)
        _block_tridiag_nb(d, e, C, shifts, rhs, out)
        return out
    return _block_tridiag_np(d, e, C, shifts, rhs)
