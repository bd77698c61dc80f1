from __future__ import annotations

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_spec
from fracsys.cli import dumps, main
from fracsys.errors import ConfigError, InvalidParameterError
from fracsys.inverse import ObservationTrace
from fracsys.io import fmt, read_snapshot, read_trace_csv, write_snapshot, write_solution_csv, write_trace_csv
from fracsys.solver import TimeGrid, picard_solve

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SMALL = """\
problem:
  grid: {a: 0.0, b: 1.0, n_interior: 19}
  orders: [0.8, 0.5]
  horizon: 1.0
  components:
    - {a: "1", u0: {modes: [1.0]}}
    - {a: "1 + x", u0: "sin(pi*x)"}
  coupling:
    c: [["-2", "1"], ["1", "-2"]]
solve: {method: both, M: 40, n_modes: 19}
decay: {t_min: 10, t_max: 10000, points: 7}
validate:
  F: ["max(0, sin(2*pi*x))", "0"]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def small_solution():
    spec = make_spec([0.8, 0.5], [[-2.0, 1.0], [1.0, -2.0]], n=9)
    return picard_solve(spec, TimeGrid.graded(1.0, 12, 0.5), n_modes=9)


def test_solution_csv_rows(tmp_path, small_solution):
    p = tmp_path / "u.csv"
    rows = write_solution_csv(small_solution, p)
    assert rows == 2 * 12 * 9
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x,component,value" and len(lines) == rows + 1
    t, x, k, v = lines[1].split(",")
    assert float(t) == small_solution.times[1] and k == "0"
    assert float(v) == small_solution.values[0, 1, 0]
    assert write_solution_csv(small_solution, p, include_initial=True) == 2 * 13 * 9


def test_snapshot_round_trip(tmp_path, small_solution):
    p = tmp_path / "u.bin"
    write_snapshot(small_solution, p)
    snap = read_snapshot(p)
    assert snap.K == 2
    assert np.array_equal(snap.times, small_solution.times)
    assert np.array_equal(snap.x, small_solution.x)
    assert np.array_equal(snap.values, small_solution.values)
    assert os.path.getsize(p) == 24 + 8 * (13 + 9 + 2 * 13 * 9)


def test_snapshot_rejects_bad_files(tmp_path, small_solution):
    p = tmp_path / "u.bin"
    write_snapshot(small_solution, p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(InvalidParameterError):
        read_snapshot(p)
    p.write_bytes(blob[:10])
    with pytest.raises(InvalidParameterError):
        read_snapshot(p)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=2, max_size=30))
def test_trace_round_trip_exact(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("tr") / "trace.csv"
    tr = ObservationTrace(0.25, 1, np.arange(len(vals), dtype=float) * 0.1, np.array(vals))
    write_trace_csv(tr, p)
    back = read_trace_csv(p)
    assert (back.x0, back.k0) == (0.25, 1)
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.values, tr.values)


def test_trace_reader_errors(tmp_path):
    p = tmp_path / "t.csv"
    for text in ("t,value\n0,1\n1,2\n", "# x0=0.5\nt,value\n0,1\n1,2\n", "# x0=0.5,k0=0\na,b\n0,1\n",
                 "# x0=0.5,k0=0\nt,value\n0,x\n1,2\n", "# x0=0.5,k0=0\nt,value\n0,1\n"):
        p.write_text(text)
        with pytest.raises(ConfigError):
            read_trace_csv(p)
    with pytest.raises(ConfigError):
        read_trace_csv(tmp_path / "missing.csv")


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, np.pi):
        assert float(fmt(v)) == v


def test_dumps_is_deterministic():
    obj = {"b": np.float64(0.1), "a": [np.inf, np.nan, np.int64(3)], "c": np.array([1 / 3, True])}
    text = dumps(obj)
    assert text == dumps(obj)
    back = json.loads(text)
    assert back["a"] == [None, None, 3]
    assert back["b"] == 0.1 and list(back) == ["b", "a", "c"]


def test_cli_solve(tmp_path, cfg, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run(["solve", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    rep = json.loads(stdout)
    assert rep["command"] == "solve" and rep["cross_method"]["agree"]
    assert sorted(os.listdir(out)) == ["report.json", "solution_l1.bin", "solution_l1.csv",
                                       "solution_picard.bin", "solution_picard.csv"]
    lines = (out / "solution_picard.csv").read_text().splitlines()
    assert len(lines) == 2 * 40 * 19 + 1
    snap = read_snapshot(out / "solution_l1.bin")
    assert snap.values.shape == (2, 41, 19)


def test_cli_reports_byte_identical(tmp_path, cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["solve", "--config", cfg, "--out", str(a), "--quiet"], capsys)
    run(["solve", "--config", cfg, "--out", str(b), "--quiet", "--jobs", "2"], capsys)
    for name in ("report.json", "solution_picard.csv", "solution_l1.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_cli_json_format_skips_csv(tmp_path, cfg, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["solve", "--config", cfg, "--out", str(out), "--format", "json", "--quiet"], capsys)
    assert code == 0 and not any(f.endswith(".csv") for f in os.listdir(out))


def test_cli_validate(cfg, capsys):
    code, stdout, stderr = run(["validate", "--config", cfg], capsys)
    rep = json.loads(stdout)
    assert code == 0
    assert rep["maximum_principle"]["regime"] == "strict-cooperative"
    assert rep["maximum_principle"]["positivity_observed"] is True
    assert "strict cooperative       PASS" in stderr


def test_cli_validate_decoupled(tmp_path, capsys):
    p = tmp_path / "d.yaml"
    p.write_text(SMALL.replace('["-2", "1"], ["1", "-2"]', '["-2", "0"], ["0", "-2"]'))
    code, stdout, _ = run(["validate", "--config", str(p)], capsys)
    rep = json.loads(stdout)
    assert code == 0 and rep["maximum_principle"]["regime"] == "not-applicable"
    assert any("decoupled" in n for n in rep["notes"])


def test_cli_decay(tmp_path, cfg, capsys):
    out = tmp_path / "d"
    code, stdout, _ = run(["decay", "--config", cfg, "--out", str(out)], capsys)
    rep = json.loads(stdout)
    assert code == 0 and abs(rep["slope"] + 0.5) <= 0.05
    assert (out / "decay.csv").read_text().startswith("# slope=")


def test_cli_mlf_eval(tmp_path, capsys):
    out = tmp_path / "m"
    code, stdout, _ = run(["mlf-eval", "--alpha", "1", "--z", "0", "1", "-2", "--out", str(out)], capsys)
    rep = json.loads(stdout)
    assert code == 0
    assert rep["values"] == pytest.approx([1.0, np.e, np.exp(-2.0)], rel=1e-14)
    assert (out / "mlf.csv").read_text().splitlines()[0] == "z,value"


def test_cli_exit_codes(tmp_path, cfg, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(SMALL.replace("[0.8, 0.5]", "[0.5, 0.8]"))
    code, _, stderr = run(["solve", "--config", str(bad)], capsys)
    assert code == 2 and json.loads(stderr)["error"]["kind"]
    bad.write_text("problem: [unterminated")
    assert run(["solve", "--config", str(bad)], capsys)[0] == 2
    assert run(["solve", "--config", str(tmp_path / "none.yaml")], capsys)[0] == 2
    assert run(["solve"], capsys)[0] == 2
    bad.write_text(SMALL.replace("n_modes: 19}", "n_modes: 19, max_iter: 1}").replace("method: both", "method: picard"))
    assert run(["solve", "--config", str(bad)], capsys)[0] == 3
    bad.write_text(SMALL.replace('["-2", "1"], ["1", "-2"]', '["0", "1"], ["1", "0"]'))
    assert run(["decay", "--config", str(bad)], capsys)[0] == 4
    assert run(["mlf-eval"], capsys)[0] == 2


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "fracsys", "mlf-eval", "--alpha", "0.5", "--z", "0"],
                         capture_output=True, text=True, cwd=ROOT, timeout=120)
    assert res.returncode == 0
    assert json.loads(res.stdout)["values"] == [1.0]


def test_shipped_configs_validate(capsys):
    for name in ("coupled_k2.yaml", "single_k1.yaml"):
        code, stdout, _ = run(["validate", "--config", os.path.join(ROOT, "configs", name)], capsys)
        assert code == 0 and json.loads(stdout)["command"] == "validate"
