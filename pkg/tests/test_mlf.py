from __future__ import annotations

import math
import os

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracsys import _kernels
from fracsys.errors import InvalidParameterError, MLOverflowError, NonConvergenceError, NumericError
from fracsys.mlf import (
    MLParams,
    MultiMLParams,
    calibrate_c0,
    mittag_leffler,
    ml,
    ml_bound_holds,
    multinomial_layer,
    multinomial_ml,
    overflow_threshold,
)

from conftest import DATA
from oracles.ml_oracle import reference


def ml_tolerance(ref, tol=1e-10):
    return tol * np.maximum(1.0, np.abs(ref))


@pytest.mark.parametrize("alpha,beta,z", [
    (0.5, 1.0, -1.0), (0.5, 1.0, -7.3), (0.3, 0.5, -40.0), (0.8, 0.8, -12.0),
    (1.2, 1.0, -30.0), (0.9, 1.0, 3.0), (1.5, 0.7, -5.0), (0.2, 1.0, -0.5),
])
def test_against_mpmath_pointwise(alpha, beta, z):
    ref = float(reference(alpha, beta, z))
    assert abs(mittag_leffler(alpha, beta, z) - ref) <= ml_tolerance(ref)


def test_frozen_reference_grid():
    path = os.path.join(DATA, "ml_reference.npz")
    if not os.path.exists(path):
        pytest.skip("reference data not generated")
    d = np.load(path)
    for (a, b), ref in zip(d["params"], d["values"]):
        ok = np.isfinite(ref)
        got = ml(MLParams(a, b), d["z"][ok])
        assert np.all(np.abs(got - ref[ok]) <= ml_tolerance(ref[ok])), (a, b)


def test_exponential_and_cosine_identities():
    z = np.linspace(-30.0, 30.0, 301)
    assert np.allclose(ml(MLParams(1.0, 1.0), z), np.exp(z), rtol=1e-12, atol=0)
    x = np.linspace(0.0, 10.0, 101)
    assert np.max(np.abs(ml(MLParams(2.0, 1.0), -x ** 2) - np.cos(x))) <= 1e-12


def test_zero_argument_is_reciprocal_gamma():
    for a, b in [(0.3, 0.5), (0.7, 2.5), (1.9, 0.2)]:
        assert mittag_leffler(a, b, 0.0) == pytest.approx(1.0 / math.gamma(b), rel=1e-14)


def test_scalar_and_array_shapes():
    assert np.ndim(mittag_leffler(0.5, 1.0, -1.0)) == 0
    assert mittag_leffler(0.5, 1.0, np.zeros((3, 2))).shape == (3, 2)


def test_parameter_validation():
    with pytest.raises(InvalidParameterError):
        MLParams(0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        MLParams(2.5, 1.0)
    with pytest.raises(InvalidParameterError):
        MLParams(0.5, -1.0)


def test_overflow_is_reported_with_threshold():
    p = MLParams(0.5, 1.0)
    thr = overflow_threshold(p)
    # E_{1/2,1}(z) ~ 2 exp(z^2): overflow near sqrt(709)
    assert 26.0 < thr < 27.0
    with pytest.raises(MLOverflowError):
        ml(p, thr * 1.01)
    assert np.isfinite(ml(p, thr * 0.99))


@given(st.floats(0.1, 1.0), st.floats(0.0, 50.0))
def test_completely_monotone_decay(alpha, x):
    # for 0 < alpha <= 1, E_alpha(-x) lies in (0, 1] and decreases
    v1 = mittag_leffler(alpha, 1.0, -x)
    v2 = mittag_leffler(alpha, 1.0, -x - 0.5)
    assert 0.0 < v2 <= v1 <= 1.0 + 1e-14


@given(st.floats(0.2, 1.5), st.floats(0.3, 2.0), st.floats(-20.0, 5.0))
def test_recurrence_identity(alpha, beta, z):
    # E_{a,b}(z) = 1/Gamma(b) + z E_{a,a+b}(z)
    lhs = mittag_leffler(alpha, beta, z)
    rhs = 1.0 / math.gamma(beta) + z * mittag_leffler(alpha, alpha + beta, z)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs), abs(z * mittag_leffler(alpha, alpha + beta, z)))


@given(st.floats(0.1, 0.99), st.floats(0.1, 3.0), st.floats(0.01, 8.0))
def test_growth_bound_with_calibrated_constant(alpha, beta, z):
    p = MLParams(alpha, beta)
    c0 = calibrate_c0(p, np.geomspace(0.01, 8.0, 60))
    assert ml_bound_holds(p, z, c0 * 1.5)


def test_bound_rejects_nonpositive_z():
    with pytest.raises(InvalidParameterError):
        ml_bound_holds(MLParams(0.5, 1.0), -1.0, 1.0)


# ---------------------------------------------------------------------------
# multinomial
# ---------------------------------------------------------------------------

def brute(b1, b2, b0, z1, z2):
    with mp.workdps(40):
        s = mp.mpf(0)
        for ell in range(80):
            for j1 in range(ell + 1):
                j2 = ell - j1
                s += mp.binomial(ell, j1) * mp.mpf(z1) ** j1 * mp.mpf(z2) ** j2 * mp.rgamma(b0 + b1 * j1 + b2 * j2)
        return float(s)


def test_multinomial_frozen_draws():
    path = os.path.join(DATA, "multinomial_reference.npz")
    if not os.path.exists(path):
        pytest.skip("reference data not generated")
    d = np.load(path)
    for (b1, b2, b0, z1, z2), ref in zip(d["draws"], d["values"]):
        got = multinomial_ml(MultiMLParams((b1, b2), b0), (z1, z2))
        assert abs(got - ref) <= 1e-10 * max(1.0, abs(ref))


def test_multinomial_small_case_against_live_mpmath():
    got = multinomial_ml(MultiMLParams((0.5, 0.3), 1.0), (0.4, -0.7))
    assert got == pytest.approx(brute(0.5, 0.3, 1.0, 0.4, -0.7), abs=1e-12)


@given(st.floats(0.1, 1.5), st.floats(0.1, 2.0), st.floats(-1.0, 1.0))
def test_multinomial_k1_reduces_to_ml(beta, beta0, z):
    got = multinomial_ml(MultiMLParams((beta,), beta0), (z,))
    assert abs(got - mittag_leffler(beta, beta0, z)) <= 1e-10


def test_multinomial_layer_zero_and_zero_args():
    assert multinomial_layer(0, (0.5, 0.5), 1.0, (3.0, 4.0)) == pytest.approx(1.0)
    assert multinomial_layer(2, (0.5, 0.5), 1.0, (0.0, 0.0)) == 0.0
    assert multinomial_ml(MultiMLParams((0.5, 0.5), 2.0), (0.0, 0.0)) == pytest.approx(1.0)


def test_multinomial_validation():
    with pytest.raises(InvalidParameterError):
        multinomial_ml(MultiMLParams((0.5, 0.5), 1.0), (1.0,))
    with pytest.raises(InvalidParameterError):
        MultiMLParams((0.5, -0.1), 1.0)
    with pytest.raises(NonConvergenceError):
        multinomial_ml(MultiMLParams((0.5, 0.5), 1.0), (30.0, 30.0), max_layers=3)


def test_multinomial_ill_conditioned_raises():
    # small orders with |z| near 1 and mixed signs cancel far beyond double precision
    with pytest.raises(NumericError):
        multinomial_ml(MultiMLParams((0.107, 0.152), 1.61), (-0.916, 0.988))
    # the same orders with same-sign arguments are fine
    assert multinomial_ml(MultiMLParams((0.107, 0.152), 1.61), (0.3, 0.2)) > 0


def test_backend_reports_name():
    assert _kernels.backend() in ("numba", "numpy")
