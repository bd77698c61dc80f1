"""Compare the numba kernels with the numpy fallback.

Each backend runs in a fresh interpreter because the choice is fixed at
import time (``ARTIFACT_NO_NUMBA=1`` selects numpy).  The numba timings
exclude compilation: every workload is run once before timing.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from fracsys import _kernels as kn
from fracsys.solver import TimeGrid, rl_weights, picard_solve, l1_solve
from fracsys.spectral import EllipticOperator1D, Grid1D
from fracsys.system import CouplingCoeffs, OrderVector, ProblemSpec
from fracsys.laplace import contour_invert_many

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
z = rng.uniform(-50.0, 10.0, 100_000)
W = rl_weights(0.5, TimeGrid.graded(1.0, 800, 0.5))
G = rng.standard_normal((801, 64))
lam = np.linspace(10.0, 4e4, 64)
K, n, S = 2, 200, 64
d = 2.0 + rng.uniform(0, 1, (K, n)); e = -0.5 * np.ones((K, n - 1))
C = np.broadcast_to(np.array([[-2.0, 1.0], [1.0, -2.0]]), (n, K, K)).copy()
shifts = (rng.uniform(0.1, 3.0, (S, 1)) * np.exp(1j * rng.uniform(-2, 2, (S, 1)))) * np.ones((1, K))
rhs = rng.standard_normal((S, K, n)) + 0j
g = Grid1D(0.0, 1.0, 200)
op = EllipticOperator1D(g)
x = g.x
spec = ProblemSpec(OrderVector((0.8, 0.5)), (op, op), CouplingCoeffs.constant([[-2.0, 1.0], [1.0, -2.0]], 200),
                   np.stack([np.sin(np.pi * x), x * (1 - x)]), 1.0, None)
tg = TimeGrid.graded(1.0, 400, 0.5)

work = {
    "ml_array (1e5 points)": lambda: kn.ml_array(0.6, 1.0, z),
    "volterra_march (801 x 64)": lambda: kn.volterra_march(W, G, lam),
    "block_tridiag (K=2, n=200, 64 shifts)": lambda: kn.block_tridiag_solve(d, e, C, shifts, rhs),
    "picard_solve (K=2, n=200, M=400)": lambda: picard_solve(spec, tg, n_modes=64),
    "l1_solve (K=2, n=200, M=400)": lambda: l1_solve(spec, tg),
    "contour_invert (K=2, n=200, 13 times)": lambda: contour_invert_many(spec, np.logspace(-2, 4, 13)),
}
out = {"backend": kn.backend(), "times": {}}
for name, fn in work.items():
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t0)
    out["times"][name] = best
print(json.dumps(out))
"""


def run(no_numba: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("ARTIFACT_NO_NUMBA", None)
    if no_numba:
        env["ARTIFACT_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], capture_output=True, text=True, env=env,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", help="write the raw timings here")
    args = p.parse_args(argv)
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'workload':<42s} {fast['backend']:>10s} {slow['backend']:>10s} {'speed-up':>9s}")
    for name, tf in fast["times"].items():
        ts = slow["times"][name]
        print(f"{name:<42s} {tf:10.4f} {ts:10.4f} {ts / tf:8.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"accelerated": fast, "fallback": slow}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
