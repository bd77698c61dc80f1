from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import settings

from fracsys.spectral import EllipticOperator1D, Grid1D, eigensystem
from fracsys.system import CouplingCoeffs, OrderVector, ProblemSpec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = os.path.join(os.path.dirname(__file__), "data")


def make_spec(alphas, C, n=99, modes=None, a_fun=None, horizon=1.0, source=None, B=None):
    """Uniform-grid spec on (0, 1); ``modes`` lists eigen-coefficients per component."""
    g = Grid1D(0.0, 1.0, n)
    op = EllipticOperator1D(g) if a_fun is None else EllipticOperator1D.from_function(g, a_fun)
    K = len(alphas)
    eig = eigensystem(op, 8)
    if modes is None:
        modes = [[1.0]] * K
    u0 = np.stack([eig.synth(np.pad(np.asarray(m, float), (0, 8 - len(m)))) for m in modes])
    cp = CouplingCoeffs.constant(np.asarray(C, float), n, B)
    return ProblemSpec(OrderVector(alphas), (op,) * K, cp, u0, horizon, source)


@pytest.fixture
def spec_k2():
    return make_spec([0.8, 0.4], [[-2.0, 1.0], [1.0, -2.0]])


@pytest.fixture
def spec_k1():
    return make_spec([0.5], [[0.0]])


# ---------------------------------------------------------------------------
# acceptance report: one line per criterion in the terminal summary
# ---------------------------------------------------------------------------

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
