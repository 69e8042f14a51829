"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs a fixed number of split steps on a random state with both backends,
checks that the results agree, and reports the best-of-N wall time per step.
"""
import argparse
import json
import sys
import time

import numpy as np

from apwave import _kernels as K
from apwave.flux import PiecewiseFlux, burgers, lift_flux
from apwave.solver import GridState, SchemeConfig, Stepper, TorusGrid, cfl_dt

CASES = [
    # name, grid shape, flux rule, steps
    ("1d godunov burgers", (4096,), "godunov", 200),
    ("1d llf cubic", (4096,), "llf", 200),
    ("2d godunov burgers", (256, 256), "godunov", 20),
    ("2d llf burgers", (256, 256), "llf", 20),
    ("3d godunov burgers", (48, 48, 48), "godunov", 5),
]


def _flux(name, dim):
    base = PiecewiseFlux.scalar([-2.0, 2.0], [[0.0, -1.0, 0.0, 1.0]]) if "cubic" in name else burgers()
    if dim == 1:
        return base
    return lift_flux(base, np.sqrt(np.arange(1, dim + 1, dtype=float))[:, None])


def _time(stepper, u, dt, n, alphas, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = stepper.steps(u, dt, n, alphas)
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(repeat: int) -> list[dict]:
    rows = []
    rng = np.random.default_rng(0)
    for name, shape, rule, n in CASES:
        grid = TorusGrid(shape)
        f = _flux(name, grid.dim)
        cfg = SchemeConfig(flux_rule=rule)
        u = rng.uniform(-1, 1, shape)
        dt = cfl_dt(GridState(grid, u), f, cfg, (-1.0, 1.0))
        res = {}
        for backend in ("numba", "numpy"):
            if backend == "numba" and not K.HAVE_NUMBA:
                continue
            st = Stepper(grid, f, cfg, backend=backend)
            al = st.alphas(-1.0, 1.0)
            st.steps(u, dt, 1, al)  # compile / warm caches
            res[backend] = _time(st, u, dt, n, al, repeat)
        row = {"case": name, "cells": int(np.prod(shape)), "steps": n}
        for b, (t, _) in res.items():
            row[f"{b}_ms_per_step"] = 1e3 * t / n
        if len(res) == 2:
            row["speedup"] = res["numpy"][0] / res["numba"][0]
            row["max_abs_diff"] = float(np.max(np.abs(res["numba"][1] - res["numpy"][1])))
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    print(f"{'case':<22}{'cells':>9}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}{'max diff':>11}")
    for r in rows:
        print(f"{r['case']:<22}{r['cells']:>9}{r.get('numba_ms_per_step', float('nan')):>11.3f}"
              f"{r['numpy_ms_per_step']:>11.3f}{r.get('speedup', float('nan')):>9.1f}"
              f"{r.get('max_abs_diff', float('nan')):>11.2g}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
