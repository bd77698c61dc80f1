from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracsys.config import build_problem, config_hash, load_config
from fracsys.errors import ConfigError
from fracsys.expr import BinOp, Num, Var, compile_expr, evaluate, parse, to_string, uses_t


def test_precedence_and_associativity():
    x = np.array([0.3])
    assert evaluate(parse("1 + 2 * 3")) == 7.0
    assert evaluate(parse("2 ^ 3 ^ 2")) == 2.0 ** 9
    assert evaluate(parse("-2 ^ 2")) == -4.0
    assert evaluate(parse("(1 - x) / 2"), x)[0] == pytest.approx(0.35)
    assert evaluate(parse("max(x, 0.5) + min(x, 0.1)"), x)[0] == pytest.approx(0.6)
    assert evaluate(parse("step(x - 0.3)"), np.array([0.2, 0.3]))[1] == 1.0
    assert evaluate(parse("sin(pi * x)"), x)[0] == pytest.approx(math.sin(math.pi * 0.3))


def test_parse_errors():
    for bad in ("1 +", "sin(x", "foo(x)", "max(x)", "x $ 2", "", "1 2"):
        with pytest.raises(ConfigError):
            parse(bad)


def test_compile_rejects_non_finite():
    f = compile_expr("1 / x")
    with pytest.raises(ConfigError):
        f(np.array([0.0, 1.0]))


def test_time_dependence_flag():
    assert uses_t(parse("exp(-t) * x"))
    assert not uses_t(parse("exp(-x)"))
    assert compile_expr("t").depends_on_t


def test_numbers_accepted():
    assert compile_expr(2)(np.zeros(3)).tolist() == [2.0, 2.0, 2.0]
    assert compile_expr(-1.5)(np.zeros(2)).tolist() == [-1.5, -1.5]


_leaf = st.one_of(st.builds(Num, st.floats(0, 1e6, allow_nan=False)), st.sampled_from([Var("x"), Var("t"), Var("pi")]))
_tree = st.recursive(_leaf, lambda ch: st.builds(BinOp, st.sampled_from("+-*/^"), ch, ch), max_leaves=8)


@given(_tree)
def test_round_trip(node):
    assert parse(to_string(node)) == node


PROBLEM = {
    "grid": {"a": 0.0, "b": 1.0, "n_interior": 30},
    "orders": [0.7, 0.4],
    "horizon": 2.0,
    "components": [
        {"a": "1 + x", "u0": "sin(pi*x)"},
        {"a": 1, "u0": {"modes": [0.0, 1.0]}, "source": "exp(-t) * x * (1 - x)"},
    ],
    "coupling": {"c": [["-2", "1"], ["x", "-1 - t"]]},
}


def test_build_problem():
    spec = build_problem(PROBLEM)
    assert spec.K == 2 and spec.n == 30 and spec.horizon == 2.0
    x = spec.grid.x
    assert np.allclose(spec.u0[0], np.sin(np.pi * x))
    assert np.allclose(spec.operators[0].a_coeff, 1.0 + spec.grid.x_mid)
    assert spec.coupling.t_nodes.size == 65
    assert not spec.coupling.time_independent
    assert np.allclose(spec.coupling.c_at(1.0)[1, 1], -2.0)
    assert np.allclose(spec.source_at(0.0)[1], x * (1 - x))
    assert np.allclose(spec.source_at(0.0)[0], 0.0)


def test_config_errors():
    bad = dict(PROBLEM, orders=[0.4, 0.7])
    with pytest.raises(ConfigError):
        build_problem(bad)
    with pytest.raises(ConfigError):
        build_problem(dict(PROBLEM, components=PROBLEM["components"][:1]))
    with pytest.raises(ConfigError):
        build_problem(dict(PROBLEM, coupling={"c": [["1"]]}))
    with pytest.raises(ConfigError):
        build_problem({"orders": [0.5]})
    with pytest.raises(ConfigError):
        build_problem(dict(PROBLEM, components=[{"a": "-1"}, {"a": "1"}]))


def test_load_yaml_and_hash(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("problem:\n  grid: {n_interior: 10}\n  orders: [0.5]\n  components: [{u0: 'x*(1-x)'}]\nsolve: {M: 10}\n")
    cfg = load_config(p)
    assert cfg.problem.K == 1
    assert cfg.section("solve") == {"M": 10}
    assert cfg.section("decay") == {}
    assert cfg.hash == config_hash(cfg.raw)
    assert len(cfg.hash) == 64
    p.write_text("problem: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
