from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_spec
from fracsys.errors import InsufficientDataError, InvalidParameterError, NonConvergenceError
from fracsys.mlf import MultiMLParams, mittag_leffler, multinomial_ml
from fracsys.spectral import EllipticOperator1D, Grid1D, eigensystem
from fracsys.solver import (
    TimeGrid,
    caputo_l1_weights,
    cross_method_tolerance,
    discrete_l2_time,
    l1_solve,
    picard_envelope,
    picard_solve,
    rl_integral,
    rl_weights,
    smoothing_exponent,
)
from fracsys.system import CouplingCoeffs, OrderVector, ProblemSpec


# ---------------------------------------------------------------------------
# time grid and weights
# ---------------------------------------------------------------------------

def test_time_grid():
    g = TimeGrid(2.0, 4, 2.0)
    assert np.allclose(g.nodes, [0, 0.125, 0.5, 1.125, 2.0])
    assert TimeGrid.graded(1.0, 10, 0.5).r == 4.0
    assert g.max_step == pytest.approx(0.875)
    assert TimeGrid.from_nodes([0.0, 0.3, 1.0]).M == 2
    for args in [(0.0, 3), (1.0, 0), (1.0, 3, 0.5)]:
        with pytest.raises(InvalidParameterError):
            TimeGrid(*args)
    with pytest.raises(InvalidParameterError):
        TimeGrid.from_nodes([0.1, 0.5])


@pytest.mark.parametrize("alpha", [0.3, 0.7, 1.0, 1.6])
@pytest.mark.parametrize("r", [1.0, 3.0])
def test_rl_exact_on_linear(alpha, r):
    g = TimeGrid(1.5, 40, r)
    t = g.nodes
    assert np.max(np.abs(rl_integral(alpha, np.ones_like(t), g) - t ** alpha / math.gamma(alpha + 1))) <= 1e-13
    assert np.max(np.abs(rl_integral(alpha, t, g) - t ** (1 + alpha) / math.gamma(2 + alpha))) <= 1e-13


def test_rl_semigroup_on_sine():
    g = TimeGrid(1.0, 2000)
    f = np.sin(g.nodes)
    two = rl_integral(0.4, rl_integral(0.3, f, g), g)
    one = rl_integral(0.7, f, g)
    assert np.max(np.abs(two - one)) <= 1e-6


def test_rl_weights_validate():
    with pytest.raises(InvalidParameterError):
        rl_weights(0.0, TimeGrid(1.0, 3))
    with pytest.raises(InvalidParameterError):
        rl_integral(0.5, np.ones(3), TimeGrid(1.0, 3))


def l1_apply(alpha, f, g):
    W = caputo_l1_weights(alpha, g)
    return W[:, 1:] @ np.diff(f)


@pytest.mark.parametrize("r", [1.0, 2.5])
def test_l1_exact_on_linear_and_constant(r):
    g = TimeGrid(1.0, 50, r)
    t = g.nodes
    d = l1_apply(0.6, t, g)
    assert abs(d[-1] - 1.0 / math.gamma(1.4)) <= 1e-10
    assert np.max(np.abs(d - t ** 0.4 / math.gamma(1.4))) <= 1e-12
    assert np.max(np.abs(l1_apply(0.6, np.full_like(t, 3.0), g))) == 0.0


def test_l1_order_on_quadratic():
    errs = []
    Ms = (50, 100, 200, 400)
    for M in Ms:
        g = TimeGrid(1.0, M)
        d = l1_apply(0.5, g.nodes ** 2, g)
        errs.append(abs(d[-1] - 2.0 / math.gamma(2.5)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert errs[-1] < 1e-3
    assert orders[-1] == pytest.approx(1.5, abs=0.1)


# ---------------------------------------------------------------------------
# Picard and L1 solutions
# ---------------------------------------------------------------------------

def test_single_mode_picard_is_exact():
    spec = make_spec([0.5], [[0.0]])
    sol = picard_solve(spec, M=100)
    assert sol.diagnostics.iterations == 1
    eig = eigensystem(spec.operators[0], 1)
    exact = mittag_leffler(0.5, 1.0, -eig.lambdas[0] * sol.times ** 0.5)[:, None] * eig.phis[0]
    assert np.max(np.abs(sol.values[0] - exact)) <= 1e-10


def test_weak_coupling_geometric_increments():
    eps = 1e-3
    spec = make_spec([0.8, 0.5], [[0.0, eps], [eps, 0.0]], n=49)
    sol = picard_solve(spec, M=200)
    inc = sol.diagnostics.increments
    ratios = [b / a for a, b in zip(inc[:-1], inc[1:])]
    assert all(r <= 0.1 for r in ratios)


def test_increments_below_envelope():
    spec = make_spec([0.8, 0.4], [[-2.0, 1.0], [1.0, -2.0]], n=49)
    d = picard_solve(spec, M=200).diagnostics
    for m in range(1, len(d.increments)):
        # increment m is u^(m+1) - u^(m): the m-th Picard difference
        assert d.increments[m] <= d.envelope[m]


def test_picard_matches_l1(spec_k2):
    g = TimeGrid.graded(1.0, 400, 0.4)
    p = picard_solve(spec_k2, g, n_modes=64)
    q = l1_solve(spec_k2, g)
    d = discrete_l2_time(p.values - q.values, g, spec_k2.grid.h)
    assert d <= cross_method_tolerance(spec_k2.grid.h, 400, g.r, (0.8, 0.4))


def test_picard_matches_l1_with_advection_and_time_dependence():
    g = Grid1D(0.0, 1.0, 49)
    op = EllipticOperator1D(g)
    x = g.x
    cfun = [[lambda x, t: -1.0 + 0 * x, lambda x, t: 0.5 * (1 + t) + 0 * x],
            [lambda x, t: x, lambda x, t: -1.0 + 0 * x]]
    bfun = [[None, lambda x, t: 0.3 + 0 * x], [lambda x, t: -0.2 * x, None]]
    cp = CouplingCoeffs.from_functions(cfun, x, bfun, np.linspace(0, 1, 11))
    u0 = np.stack([np.sin(np.pi * x), x * (1 - x)])
    spec = ProblemSpec(OrderVector([0.7, 0.5]), (op, op), cp, u0)
    tg = TimeGrid.graded(1.0, 300, 0.5)
    p = picard_solve(spec, tg)
    q = l1_solve(spec, tg)
    d = discrete_l2_time(p.values - q.values, tg, g.h)
    assert d <= cross_method_tolerance(g.h, 300, tg.r, (0.7, 0.5))


def test_l1_classical_limit():
    spec = make_spec([1.0 - 1e-6], [[0.0]], n=199)
    g = TimeGrid(1.0, 200)
    sol = l1_solve(spec.with_u0(np.sin(np.pi * spec.grid.x)[None]), g)
    exact = math.exp(-math.pi ** 2 * 0.5) * np.sin(np.pi * spec.grid.x)
    assert np.max(np.abs(sol.at(0.5)[0] - exact)) <= 1e-3


def manufactured(alpha, n=49):
    spec = make_spec([alpha], [[0.0]], n=n)
    eig = eigensystem(spec.operators[0], 1)
    lam, phi = eig.lambdas[0], eig.phis[0]

    def F(t):
        return ((2.0 * t ** (2.0 - alpha) / math.gamma(3.0 - alpha) + lam * t * t) * phi)[None]

    return spec.with_u0(np.zeros((1, n))).with_source(F), phi


def test_l1_manufactured_order():
    alpha = 0.4
    spec, phi = manufactured(alpha)
    errs = []
    for M in (25, 50, 100, 200):
        sol = l1_solve(spec, TimeGrid(1.0, M))
        errs.append(np.max(np.abs(sol.values[0] - sol.times[:, None] ** 2 * phi)))
    order = math.log2(errs[-2] / errs[-1])
    assert order == pytest.approx(2.0 - alpha, abs=0.15)


def test_picard_with_source_manufactured():
    spec, phi = manufactured(0.6)
    sol = picard_solve(spec, TimeGrid(1.0, 200))
    assert np.max(np.abs(sol.values[0] - sol.times[:, None] ** 2 * phi)) <= 1e-4


def test_zero_data_gives_zero(spec_k2):
    z = spec_k2.with_u0(np.zeros_like(spec_k2.u0))
    assert np.all(l1_solve(z, M=20).values == 0.0)
    assert np.all(picard_solve(z, M=20).values == 0.0)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_linearity(seed):
    rng = np.random.default_rng(seed)
    base = make_spec([0.7, 0.3], [[-1.0, 0.5], [0.5, -1.0]], n=29)
    u1, u2 = rng.standard_normal((2, 2, 29))
    f1, f2 = rng.standard_normal((2, 2, 29))
    a, b = rng.uniform(-2, 2, 2)
    g = TimeGrid.graded(1.0, 60, 0.3)
    for solve in (lambda s: l1_solve(s, g), lambda s: picard_solve(s, g)):
        s1 = solve(base.with_u0(u1).with_source(lambda t: np.cos(t) * f1))
        s2 = solve(base.with_u0(u2).with_source(lambda t: t * f2))
        s12 = solve(base.with_u0(a * u1 + b * u2).with_source(lambda t: a * np.cos(t) * f1 + b * t * f2))
        assert np.max(np.abs(s12.values - a * s1.values - b * s2.values)) <= 1e-10 * max(1.0, np.max(np.abs(s12.values)))


def test_stability_in_source():
    g = TimeGrid(1.0, 100)

    def ratio(C, seed):
        r = np.random.default_rng(seed)
        spec = make_spec([0.8, 0.5], C, n=39)
        f = r.standard_normal((2, 39))
        spec = spec.with_u0(np.zeros((2, 39))).with_source(lambda t: np.sin(3 * t) * f)
        sol = l1_solve(spec, g)
        Fv = np.stack([np.sin(3 * t) * f for t in g.nodes], axis=1)
        return discrete_l2_time(sol.values, g, spec.grid.h) / discrete_l2_time(Fv, g, spec.grid.h)

    C_cal = 2.0 * ratio([[-2.0, 1.0], [1.0, -2.0]], 0)
    for seed, C in enumerate([[[-1.0, 0.5], [0.2, -1.0]], [[0.0, 0.0], [0.0, 0.0]], [[-3.0, 2.0], [2.0, -3.0]]], 1):
        assert ratio(C, seed) <= C_cal


def test_initial_condition_recovery():
    spec = make_spec([0.6], [[0.0]], n=79)
    rough = np.where(np.abs(spec.grid.x - 0.5) < 0.2, 1.0, 0.0)[None]
    spec = spec.with_u0(rough)
    errs = []
    for M in (50, 100, 200):
        sol = l1_solve(spec, TimeGrid.graded(1.0, M, 0.6))
        errs.append(math.sqrt(spec.grid.h * np.sum((sol.values[:, 1] - rough) ** 2)))
    assert errs[0] > errs[1] > errs[2]


def test_nonconvergence_reported():
    spec = make_spec([0.8, 0.5], [[-20.0, 10.0], [10.0, -20.0]], n=29)
    with pytest.raises(NonConvergenceError) as ei:
        picard_solve(spec, M=50, max_iter=1)
    assert ei.value.kind == "non-convergence"
    assert len(ei.value.details["increments"]) == 1


def test_solver_argument_validation(spec_k2):
    with pytest.raises(InvalidParameterError):
        picard_solve(spec_k2, M=10, tol=0.0)
    with pytest.raises(InvalidParameterError):
        picard_solve(spec_k2, M=10, max_iter=0)


def test_solution_interpolation(spec_k2):
    sol = l1_solve(spec_k2, M=20)
    assert np.allclose(sol.at(0.0), spec_k2.u0)
    assert np.allclose(sol.at(1.0), sol.values[:, -1])
    with pytest.raises(InvalidParameterError):
        sol.at(1.5)


# ---------------------------------------------------------------------------
# envelope and smoothing
# ---------------------------------------------------------------------------

def test_envelope_examples():
    M, b, t = 2.0, 0.6, 0.7
    assert picard_envelope(0, M, [b], t) == pytest.approx(M / math.gamma(1.0))
    g = 0.5
    assert picard_envelope(0, M, [b], t, alpha1_gamma=0.3) == pytest.approx(M * t ** (-0.3) / math.gamma(0.7))
    b1, b2 = 0.8, 0.4
    terms = [(1, 2 * b1), (2, b1 + b2), (1, 2 * b2)]
    exp = M ** 3 * sum(c * t ** e / math.gamma(e + 1) for c, e in terms)
    assert picard_envelope(2, M, [b1, b2], t) == pytest.approx(exp, rel=1e-13)
    with pytest.raises(InvalidParameterError):
        picard_envelope(-1, M, [b], t)
    del g


def test_envelope_series_bounded_by_multinomial():
    M, betas, t = 1.5, (0.8, 0.4), 0.9
    total = M * multinomial_ml(MultiMLParams(betas, 1.0), [M * t ** b for b in betas])
    partial = 0.0
    for m in range(100):
        partial += picard_envelope(m, M, betas, t)
        assert partial <= total * (1 + 1e-12)
    assert partial == pytest.approx(total, rel=1e-10)


def test_smoothing_slope_smooth_data_is_flat():
    spec = make_spec([0.5], [[0.0]], n=99)
    sol = picard_solve(spec, TimeGrid.graded(1.0, 400, 0.5))
    for gamma in (0.0, 0.5, 0.9):
        assert abs(smoothing_exponent(sol, gamma)) <= 0.05


def indicator_solution(alpha=0.5, n=199, M=2000):
    spec = make_spec([alpha], [[0.0]], n=n)
    x = spec.grid.x
    spec = spec.with_u0(np.where((x > 0.3) & (x < 0.7), 1.0, 0.0)[None])
    return picard_solve(spec, TimeGrid(1.0, M, 2.0))


@pytest.fixture(scope="module")
def indicator_sol():
    return indicator_solution()


def test_smoothing_indicator_gamma_zero_flat(indicator_sol):
    assert abs(smoothing_exponent(indicator_sol, 0.0)) <= 0.05


def test_smoothing_indicator_matches_modal_prediction(indicator_sol):
    # coefficients of an indicator decay like 1/n, so sum_n lambda_n c_n^2 E^2
    # counts ~ t^(-alpha/2) modes: ||u||_{D(A^1/2)} ~ t^(-alpha/4)
    s = smoothing_exponent(indicator_sol, 0.5)
    assert s == pytest.approx(-0.125, abs=0.03)
    assert s >= -0.5 / 2 - 0.05


@pytest.mark.xfail(strict=True, reason="indicator data attains -alpha/4, not -alpha/2; see decisions ledger")
def test_smoothing_indicator_reaches_full_rate(indicator_sol):
    assert smoothing_exponent(indicator_sol, 0.5) == pytest.approx(-0.25, abs=0.05)


def test_smoothing_window_errors(spec_k1):
    sol = picard_solve(spec_k1, TimeGrid(1.0, 3))
    with pytest.raises(InsufficientDataError):
        smoothing_exponent(sol, 0.5)
