"""Finite-difference elliptic operators on an interval and their spectral calculus.

The operator ``-(a(x) u')'`` with homogeneous Dirichlet conditions is
discretised by the conservative three-point stencil with the coefficient
sampled at cell midpoints.  All inner products carry the weight ``h`` so that
discrete identities mirror their L^2 counterparts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .errors import EllipticityError, InvalidParameterError, NumericError
from .mlf import MLParams, ml

__all__ = [
    "Grid1D",
    "EllipticOperator1D",
    "EigenSystem",
    "assemble",
    "assemble_sparse",
    "eigensystem",
    "inner",
    "l2_norm",
    "project",
    "frac_power_apply",
    "resolvent_apply",
    "resolvent_prime_apply",
    "frac_power_norm",
    "closed_form_eigenvalues",
]


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[a_end, b_end]`` with ``n_interior`` unknowns."""

    a_end: float = 0.0
    b_end: float = 1.0
    n_interior: int = 100

    def __post_init__(self):
        if not (self.b_end > self.a_end):
            raise InvalidParameterError("b_end must exceed a_end")
        if int(self.n_interior) < 3:
            raise InvalidParameterError("need at least 3 interior nodes")
        object.__setattr__(self, "n_interior", int(self.n_interior))

    @property
    def h(self) -> float:
        return (self.b_end - self.a_end) / (self.n_interior + 1)

    @property
    def x(self) -> np.ndarray:
        """Interior nodes."""
        return self.a_end + self.h * np.arange(1, self.n_interior + 1)

    @property
    def x_mid(self) -> np.ndarray:
        """Cell midpoints x_{i+1/2}, i = 0..n (n+1 values)."""
        return self.a_end + self.h * (np.arange(self.n_interior + 1) + 0.5)

    @property
    def x_full(self) -> np.ndarray:
        """Nodes including both boundary points."""
        return self.a_end + self.h * np.arange(self.n_interior + 2)


@dataclass(frozen=True)
class EllipticOperator1D:
    """``-(a u')'`` on ``grid``; ``a_coeff`` holds a at the n+1 cell midpoints."""

    grid: Grid1D
    a_coeff: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.grid.n_interior
        a = np.ones(n + 1) if self.a_coeff is None else np.asarray(self.a_coeff, dtype=float)
        if a.ndim == 0:
            a = np.full(n + 1, float(a))
        if a.shape != (n + 1,):
            raise InvalidParameterError(f"a_coeff needs {n + 1} midpoint values, got {a.shape}")
        if not np.all(np.isfinite(a)) or np.min(a) <= 0.0:
            raise EllipticityError("diffusion coefficient must be positive", min_a=float(np.min(a)))
        a.setflags(write=False)
        object.__setattr__(self, "a_coeff", a)

    @classmethod
    def from_function(cls, grid: Grid1D, a_fun) -> "EllipticOperator1D":
        return cls(grid, np.broadcast_to(np.asarray(a_fun(grid.x_mid), dtype=float), (grid.n_interior + 1,)).copy())

    @property
    def kappa(self) -> float:
        return float(np.min(self.a_coeff))

    def bands(self):
        """Diagonal and off-diagonal of the symmetric tridiagonal matrix."""
        h2 = self.grid.h ** 2
        a = self.a_coeff
        return (a[:-1] + a[1:]) / h2, -a[1:-1] / h2

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Matrix-vector product along the last axis."""
        d, e = self.bands()
        out = d * u
        out[..., :-1] += e * u[..., 1:]
        out[..., 1:] += e * u[..., :-1]
        return out


def assemble(op: EllipticOperator1D) -> np.ndarray:
    """Dense symmetric tridiagonal matrix of ``op``."""
    d, e = op.bands()
    return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)


def assemble_sparse(op: EllipticOperator1D) -> sparse.csr_matrix:
    d, e = op.bands()
    return sparse.diags([e, d, e], [-1, 0, 1], format="csr")


@dataclass(frozen=True)
class EigenSystem:
    """Leading eigenpairs; ``phis`` has shape (n_modes, n_interior)."""

    lambdas: np.ndarray
    phis: np.ndarray
    h: float

    @property
    def n_modes(self) -> int:
        return self.lambdas.size

    def coeffs(self, psi: np.ndarray) -> np.ndarray:
        """Modal coefficients (psi, phi_n) along the last axis of ``psi``."""
        return self.h * (np.asarray(psi) @ self.phis.T)

    def synth(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c) @ self.phis


def closed_form_eigenvalues(n_interior: int, length: float = 1.0, a: float = 1.0) -> np.ndarray:
    """(4a/h^2) sin^2(n pi h / (2 L)) for the constant-coefficient operator."""
    h = length / (n_interior + 1)
    n = np.arange(1, n_interior + 1)
    return 4.0 * a / h ** 2 * np.sin(n * np.pi * h / (2.0 * length)) ** 2


def eigensystem(op: EllipticOperator1D, n_modes: int | None = None) -> EigenSystem:
    """First ``n_modes`` eigenpairs, normalised in the h-weighted inner product.

    The default keeps ``min(n_interior, 256)`` modes.  Signs are fixed so that
    each eigenvector is positive at the first interior node.
    """
    n = op.grid.n_interior
    if n_modes is None:
        n_modes = min(n, 256)
    n_modes = int(n_modes)
    if not 1 <= n_modes <= n:
        raise InvalidParameterError(f"n_modes must lie in [1, {n}]", n_modes=n_modes)
    d, e = op.bands()
    try:
        lam, vec = linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, n_modes - 1))
    except linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"tridiagonal eigensolver failed: {exc}") from exc
    phis = vec.T / np.sqrt(op.grid.h)
    sgn = np.sign(phis[:, 0])
    sgn[sgn == 0] = 1.0
    phis = phis * sgn[:, None]
    resid = np.max(np.abs(op.apply(phis) - lam[:, None] * phis)) / max(1.0, np.max(np.abs(lam)))
    if not np.isfinite(resid) or resid > 1e-8:
        raise NumericError("eigenpair residual too large", residual=float(resid))
    lam.setflags(write=False)
    phis.setflags(write=False)
    return EigenSystem(lam, phis, op.grid.h)


def inner(u: np.ndarray, v: np.ndarray, h: float) -> float:
    return float(h * np.sum(u * v))


def l2_norm(u: np.ndarray, h: float, axis=-1):
    return np.sqrt(h * np.sum(np.asarray(u) ** 2, axis=axis))


def project(eig: EigenSystem, psi: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the retained modes."""
    return eig.synth(eig.coeffs(psi))


def _check_shape(eig: EigenSystem, psi):
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != eig.phis.shape[1]:
        raise InvalidParameterError("grid function has the wrong length")
    return psi


def frac_power_apply(eig: EigenSystem, gamma: float, psi: np.ndarray) -> np.ndarray:
    """sum_n lambda_n^gamma (psi, phi_n) phi_n over the retained modes."""
    psi = _check_shape(eig, psi)
    if not -1.0 <= gamma <= 1.0:
        raise InvalidParameterError("gamma must lie in [-1, 1]")
    return eig.synth(eig.lambdas ** gamma * eig.coeffs(psi))


def frac_power_norm(eig: EigenSystem, gamma: float, psi: np.ndarray) -> np.ndarray:
    """Discrete D(A^gamma) norm ``(sum lambda^(2 gamma) |c_n|^2)^(1/2)``."""
    c = eig.coeffs(_check_shape(eig, psi))
    return np.sqrt(np.sum(eig.lambdas ** (2.0 * gamma) * c ** 2, axis=-1))


def _check_t(t):
    if not t > 0.0:
        raise InvalidParameterError("resolvents are defined for t > 0", t=t)


def resolvent_apply(eig: EigenSystem, alpha: float, t: float, psi: np.ndarray) -> np.ndarray:
    """S(t) psi = sum_n E_{alpha,1}(-lambda_n t^alpha) (psi, phi_n) phi_n."""
    _check_t(t)
    psi = _check_shape(eig, psi)
    e = ml(MLParams(alpha, 1.0), -eig.lambdas * t ** alpha)
    return eig.synth(e * eig.coeffs(psi))


def resolvent_prime_apply(eig: EigenSystem, alpha: float, t: float, psi: np.ndarray) -> np.ndarray:
    """S'(t) psi = -t^(alpha-1) sum_n lambda_n E_{alpha,alpha}(-lambda_n t^alpha) (psi, phi_n) phi_n."""
    _check_t(t)
    psi = _check_shape(eig, psi)
    e = ml(MLParams(alpha, alpha), -eig.lambdas * t ** alpha)
    return -t ** (alpha - 1.0) * eig.synth(eig.lambdas * e * eig.coeffs(psi))
