#!/usr/bin/env python3
"""Feedback-error table: coarse grids against a fine reference.

Reproduces the published experiment: N = 1000 backward sweeps at h = 0.05
on m = 10^2, 20^2, 30^2 nodes with the fully centered control stencil,
compared in the weighted L2 norm against the converged 150^2 feedback.

Usage: python scripts/grid_convergence.py [--ref N] [--coarse M [M ...]]
"""

import argparse
import sys
import time

import numpy as np

from ergodp.conjugate import DualCost
from ergodp.dp import dp_step, solve_ergodic, solve_finite_horizon
from ergodp.grid import build_grid, interpolate
from ergodp.model import load_example
from ergodp.operators import build_discrete_system


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ref", type=int, default=150)
    ap.add_argument("--coarse", type=int, nargs="+", default=[10, 20, 30])
    ap.add_argument("--h", type=float, default=0.05)
    ap.add_argument("--sweeps", type=int, default=1000)
    args = ap.parse_args(argv)

    spec = load_example("case_study_2d")
    gref = build_grid(spec.x_lower, spec.x_upper, [args.ref, args.ref])
    sysref = build_discrete_system(spec, gref, h=args.h, flux="sg", positivity="off")
    solref = solve_ergodic(sysref, DualCost(spec, gref), tol=1e-6)
    uref = solref.mu_inf[:, 0]
    print(f"reference m = {args.ref}^2: ell_inf = {solref.ell_inf:.5f}")
    print(f"{'m':>8} {'N':>6} {'L2 error':>12} {'cpu':>10}")
    for m in args.coarse:
        g = build_grid(spec.x_lower, spec.x_upper, [m, m])
        sys_ = build_discrete_system(spec, g, h=args.h, flux="sg",
                                     positivity="off", centering_margin=np.inf)
        dc = DualCost(spec, g)
        t0 = time.perf_counter()
        y0, _ = solve_finite_horizon(sys_, dc, N=args.sweeps, keep_schedule=False)
        u0 = dp_step(sys_, dc, y0).u[:, 0]
        cpu = time.perf_counter() - t0
        err = float(np.sqrt(np.sum(gref.weights
                                   * (interpolate(g, u0, gref.nodes) - uref) ** 2)))
        print(f"{m * m:>8} {args.sweeps:>6} {err:>12.4f} {cpu * 1e3:>8.0f}ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
