"""Command-line entry point: solve, simulate, verify.

Exit codes are stable API: 0 success, 1 configuration problem, 2 solver
failure, 3 grid/compatibility mismatch, 4 verification failure.

Output files are self-describing: every grid field goes out as a CSV
whose '#'-prefixed header carries the axis bounds, counts and spacing,
and each run writes a manifest listing solver parameters, per-phase
timings and the size and checksum of every produced file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import check_bakry_emery, check_hasminskii, duality_report
from .conjugate import DualCost
from .dp import reanchor_mean_zero, solve_ergodic, solve_finite_horizon, dp_step
from .errors import ConfigError, ErgodpError, GridMismatch, MissingQ, NoConvergence, PNotPositive
from .fpk import primal_cost, steady_state
from .grid import GridDiscretization, build_grid
from .model import ProblemSpec, load_config, load_example
from .operators import apply_step, build_discrete_system
from .sde import SimConfig, default_initial_ring, simulate, simulate_deterministic

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_COMPAT = 3
EXIT_VERIFY = 4


def _load_problem(ref: str) -> ProblemSpec:
    """Config path or registry example name."""
    path = Path(ref)
    if path.is_file():
        return load_config(path)
    try:
        return load_example(ref)
    except ConfigError:
        pass
    raise ConfigError(f"no config file or registered example named '{ref}'")


def _parse_counts(values, n_x) -> list[int]:
    if len(values) == 1:
        return [int(values[0])] * n_x
    if len(values) != n_x:
        raise ConfigError(f"--grid needs 1 or {n_x} counts, got {len(values)}")
    return [int(v) for v in values]


# ---------------------------------------------------------------- file formats

def write_grid_field(path: Path, g: GridDiscretization, columns: dict) -> None:
    """GridFieldFile: '#' header with grid metadata, then CSV rows."""
    names = list(columns)
    data = np.column_stack([g.nodes] + [np.asarray(columns[c], dtype=float) for c in names])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# gridfield v1\n")
        fh.write(f"# axes: {g.dim}\n")
        for a in range(g.dim):
            fh.write(f"# axis{a}: lower={float(g.lower[a])!r} upper={float(g.upper[a])!r} "
                     f"count={int(g.counts[a])} spacing={float(g.spacing[a])!r}\n")
        coord_names = [f"x{a + 1}" for a in range(g.dim)]
        fh.write("# columns: " + ",".join(coord_names + names) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_grid_field(path: Path):
    """Returns (grid, {column: values}) from a GridFieldFile."""
    lower, upper, counts = [], [], []
    columns = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("axis") and ":" in body:
                    fields = dict(kv.split("=") for kv in body.split(":", 1)[1].split())
                    lower.append(float(fields["lower"]))
                    upper.append(float(fields["upper"]))
                    counts.append(int(fields["count"]))
                elif body.startswith("columns:"):
                    columns = [c.strip() for c in body.split(":", 1)[1].split(",")]
            else:
                rows.append([float(v) for v in line.split(",")])
    if columns is None or not lower:
        raise GridMismatch(f"{path} is not a grid field file (missing header)")
    g = build_grid(lower, upper, counts)
    data = np.asarray(rows)
    if data.shape != (g.m, len(columns)):
        raise GridMismatch(
            f"{path}: {data.shape[0]} rows, header promises {g.m}")
    fields = {name: data[:, i] for i, name in enumerate(columns)}
    return g, fields


def _grids_match(g1: GridDiscretization, g2: GridDiscretization, tol=1e-12) -> bool:
    return (
        g1.dim == g2.dim
        and np.array_equal(g1.counts, g2.counts)
        and np.allclose(g1.lower, g2.lower, atol=tol)
        and np.allclose(g1.upper, g2.upper, atol=tol)
    )


def _file_entry(path: Path) -> dict:
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return {"name": path.name, "bytes": path.stat().st_size, "sha256": digest}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    spec = _load_problem(args.config)
    counts = _parse_counts(args.grid, spec.n_x)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    timings = {}
    t0 = time.perf_counter()
    g = build_grid(spec.x_lower, spec.x_upper, counts)
    sys_ = build_discrete_system(spec, g, args.h, flux=args.flux, positivity="warn")
    dc = DualCost(spec, g)
    timings["assemble_ms"] = 1e3 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    trace_rows = None
    if args.mode == "ergodic":
        sol = solve_ergodic(sys_, dc, tol=args.tol, max_iter=args.max_iter,
                            offset_rel_tol=args.offset_tol)
        V = sol.V_inf
        feedback = sol.mu_inf
        ell = sol.ell_inf
        iterations = sol.iterations
        trace_rows = sol.trace
    else:
        y0, _ = solve_finite_horizon(sys_, dc, N=args.horizon, keep_schedule=False)
        it = dp_step(sys_, dc, y0)
        V = y0 - y0[g.center_node()]
        feedback = it.u
        ell = float("nan")
        iterations = args.horizon
    timings["iterate_ms"] = 1e3 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    p_inf = steady_state(sys_, feedback)
    ell_primal = primal_cost(g, dc, feedback, p_inf)
    timings["steady_state_ms"] = 1e3 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    write_grid_field(out / "mu_inf.csv", g,
                     {f"mu{j + 1}": feedback[:, j] for j in range(spec.n_u)})
    write_grid_field(out / "v_inf.csv", g,
                     {"v": V, "v_meanzero": reanchor_mean_zero(V, p_inf.p)})
    write_grid_field(out / "rho_inf.csv", g,
                     {"rho": p_inf.p / g.weights, "mass": p_inf.p})
    outputs = [out / "mu_inf.csv", out / "v_inf.csv", out / "rho_inf.csv"]
    if trace_rows is not None:
        with open(out / "trace.csv", "w", encoding="utf-8") as fh:
            fh.write("iteration,feedback_residual,ell_estimate\n")
            for k, du, le in trace_rows:
                fh.write(f"{int(k)},{float(du)!r},{float(le)!r}\n")
        outputs.append(out / "trace.csv")
    timings["write_ms"] = 1e3 * (time.perf_counter() - t0)

    manifest = {
        "tool": {"name": "ergodp", "version": __version__},
        "problem": spec.name or args.config,
        "config_sha256": hashlib.sha256(
            Path(args.config).read_bytes() if Path(args.config).is_file()
            else args.config.encode()).hexdigest(),
        "grid": {"counts": counts,
                 "lower": [float(v) for v in g.lower],
                 "upper": [float(v) for v in g.upper],
                 "spacing": [float(v) for v in g.spacing]},
        "solver": {"mode": args.mode, "h": args.h, "tol": args.tol,
                   "offset_rel_tol": args.offset_tol, "max_iter": args.max_iter,
                   "horizon": args.horizon, "flux": args.flux,
                   "anchor_node": int(g.center_node()),
                   "positivity_h_max": float(sys_.positivity_h_max)},
        "results": {"ell_inf": None if np.isnan(ell) else ell,
                    "ell_primal": ell_primal,
                    "iterations": iterations,
                    "duality_rel_gap": None if np.isnan(ell) else
                    abs(ell - ell_primal) / max(abs(ell), 1e-300)},
        "timings": timings,
        "outputs": [_file_entry(p) for p in outputs],
    }
    _write_json(out / "manifest.json", manifest)

    if args.mode == "ergodic":
        print(f"ell_inf = {ell:.6f}  (primal {ell_primal:.6f}, "
              f"{iterations} sweeps, residual {sol.residual:.2e})")
    else:
        print(f"finite horizon N = {args.horizon}: J0 functional written; "
              f"primal steady-state cost {ell_primal:.6f}")
    for phase, ms in timings.items():
        print(f"  {phase:>16}: {ms:9.1f}")
    return EXIT_OK


# ------------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    spec = _load_problem(args.config)
    g_fb, fields = read_grid_field(Path(args.feedback))
    expected = [f"mu{j + 1}" for j in range(spec.n_u)]
    if any(name not in fields for name in expected):
        raise GridMismatch(
            f"feedback file lacks columns {expected}, has {list(fields)}")
    # the problem's box must agree with the feedback file's grid
    if not (np.allclose(g_fb.lower, spec.x_lower) and np.allclose(g_fb.upper, spec.x_upper)):
        raise GridMismatch("feedback grid box does not match the problem domain")
    feedback = np.column_stack([fields[name] for name in expected])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    if args.deterministic:
        X0 = default_initial_ring(spec) if spec.n_x == 2 else None
        times, paths = simulate_deterministic(spec, g_fb, feedback, X0=X0,
                                              T=args.T, dt=args.dt)
        stride = max(1, args.stride)
        with open(out / "paths_deterministic.csv", "w", encoding="utf-8") as fh:
            fh.write("traj,t," + ",".join(f"x{i + 1}" for i in range(spec.n_x)) + "\n")
            for ti in range(paths.shape[0]):
                for k in range(0, paths.shape[1], stride):
                    fh.write(f"{ti},{float(times[k])!r}," +
                             ",".join(repr(float(v)) for v in paths[ti, k]) + "\n")
        outputs.append(out / "paths_deterministic.csv")
        summary = {"mode": "deterministic", "trajectories": int(paths.shape[0]),
                   "T": args.T, "dt": args.dt,
                   "final_states": paths[:, -1].tolist()}
        print(f"deterministic rollout: {paths.shape[0]} paths, T={args.T}")
    else:
        cfg = SimConfig(n_traj=args.traj, dt=args.dt, horizon=args.T,
                        seed=args.seed, burn_in=args.burn_in,
                        thin_stride=args.stride if args.paths else 0)
        res = simulate(spec, g_fb, feedback, cfg)
        summary = {
            "mode": "stochastic", "trajectories": cfg.n_traj, "T": args.T,
            "dt": args.dt, "seed": args.seed, "burn_in": cfg.burn_in,
            "mean_cost": res.mean, "stderr": res.stderr,
            "traj_costs": [float(c) for c in res.traj_costs],
        }
        if res.samples is not None:
            with open(out / "paths.csv", "w", encoding="utf-8") as fh:
                fh.write("traj,t," + ",".join(f"x{i + 1}" for i in range(spec.n_x)) + "\n")
                for row in res.samples:
                    fh.write(f"{int(row[0])},{float(row[1])!r}," +
                             ",".join(repr(float(v)) for v in row[2:]) + "\n")
            outputs.append(out / "paths.csv")
        print(f"mc_mean = {res.mean:.6f}  stderr = {res.stderr:.6f}  "
              f"({cfg.n_traj} trajectories, T={args.T}, dt={args.dt})")
    _write_json(out / "sim_summary.json", summary)
    outputs.append(out / "sim_summary.json")
    manifest = {"outputs": [_file_entry(p) for p in outputs]}
    _write_json(out / "sim_manifest.json", manifest)
    return EXIT_OK


# --------------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    spec = _load_problem(args.config)
    counts = _parse_counts(args.grid, spec.n_x)
    g = build_grid(spec.x_lower, spec.x_upper, counts)
    out = Path(args.out) if args.out else None
    report: dict = {"check": args.check, "grid": counts}
    ok = False

    if args.check == "hasminskii":
        if spec.Q is None:
            print("error: problem spec has no lyapunov_Q", file=sys.stderr)
            return EXIT_CONFIG
        gammas = args.gammas or spec.gammas
        if gammas is None:
            print("error: no gamma constants (pass --gammas g1 g2 g3 g4)", file=sys.stderr)
            return EXIT_CONFIG
        chk = check_hasminskii(spec, None, g, gammas=gammas)
        report.update({
            "gammas": list(chk.gammas), "margin": chk.margin,
            "hessian_ok": chk.hessian_ok, "boundary_ok": chk.boundary_ok,
            "drift_ok": chk.drift_ok,
            "hessian_eig_range": list(chk.hess_eig_range),
            "violating_nodes": chk.violations[:50],
        })
        ok = chk.passed
        print(f"hasminskii: {'pass' if ok else 'FAIL'} (margin {chk.margin:.6g})")

    elif args.check == "bakry-emery":
        if spec.P is None:
            print("error: problem spec has no be_weight_P", file=sys.stderr)
            return EXIT_CONFIG
        lam = args.be_lambda if args.be_lambda is not None else spec.be_lambda
        if lam is None:
            print("error: no rate parameter (pass --lambda)", file=sys.stderr)
            return EXIT_CONFIG
        bounds = args.lambda_bounds or spec.be_lambda_bounds
        try:
            chk = check_bakry_emery(spec, None, g, lam, lambda_bounds=bounds)
        except PNotPositive as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VERIFY
        report.update({
            "lambda": chk.lam, "lambda_lower": chk.lambda_lower,
            "lambda_upper": chk.lambda_upper, "gamma": chk.gamma,
            "worst_eigenvalue": chk.worst, "kink_nodes": chk.kink_nodes[:50],
        })
        ok = chk.passed
        print(f"bakry-emery: {'pass' if ok else 'FAIL'} "
              f"(gamma = {chk.gamma:.6g}, worst eigenvalue {chk.worst:.3e})")

    elif args.check == "duality":
        sys_ = build_discrete_system(spec, g, args.h, flux=args.flux, positivity="warn")
        dc = DualCost(spec, g)
        sol = solve_ergodic(sys_, dc, tol=args.tol, max_iter=args.max_iter,
                            offset_rel_tol=args.offset_tol)
        p_inf = steady_state(sys_, sol.mu_inf)
        rep = duality_report(sol, primal_cost(g, dc, sol.mu_inf, p_inf))
        report.update({"ell_dual": rep.ell_dual, "ell_primal": rep.ell_primal,
                       "abs_gap": rep.abs_gap, "rel_gap": rep.rel_gap,
                       "max_rel_gap": args.max_rel_gap})
        ok = rep.rel_gap <= args.max_rel_gap
        print(f"duality: {'pass' if ok else 'FAIL'} "
              f"(dual {rep.ell_dual:.6f}, primal {rep.ell_primal:.6f}, "
              f"rel gap {rep.rel_gap:.2e})")

    elif args.check == "conservation":
        sys_ = build_discrete_system(spec, g, args.h, flux=args.flux, positivity="off")
        rng = np.random.default_rng(args.seed)
        worst_drift, worst_neg = 0.0, 0.0
        for _ in range(args.draws):
            p = rng.random(g.m)
            p /= p.sum()
            u = rng.uniform(spec.u_lower, spec.u_upper, size=(g.m, spec.n_u))
            p_next = apply_step(sys_, p, u * p[:, None], mass_tol=np.inf, neg_tol=np.inf)
            worst_drift = max(worst_drift, abs(p_next.sum() - 1.0))
            worst_neg = min(worst_neg, float(p_next.min()))
        report.update({
            "draws": args.draws, "h": args.h,
            "conservation_residual": sys_.conservation_residual,
            "worst_mass_drift": worst_drift, "worst_negative": worst_neg,
            "positivity_h_max": float(sys_.positivity_h_max),
        })
        ok = worst_drift <= 1e-10 and worst_neg >= -1e-12 \
            and sys_.conservation_residual <= 1e-10
        print(f"conservation: {'pass' if ok else 'FAIL'} "
              f"(mass drift {worst_drift:.2e}, min component {worst_neg:.2e})")

    report["passed"] = bool(ok)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"verify_{args.check}.json", report)
    return EXIT_OK if ok else EXIT_VERIFY


# ----------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ergodp",
        description="Globally optimal feedback for stochastic nonlinear control "
                    "via Fokker-Planck discretization and operator dynamic programming.")
    ap.add_argument("--threads", type=int, default=None,
                    help="cap worker threads (sets thread-pool env caps, best effort)")
    sub = ap.add_subparsers(dest="command", required=True)

    sol = sub.add_parser("solve", help="solve for the optimal feedback law")
    sol.add_argument("config", help="config file path or registry example name")
    sol.add_argument("--grid", nargs="+", default=["101"], help="nodes per axis")
    sol.add_argument("--h", type=float, default=0.05, help="time step")
    sol.add_argument("--tol", type=float, default=1e-6,
                     help="sup-norm feedback-change tolerance")
    sol.add_argument("--offset-tol", type=float, default=1e-8, dest="offset_tol",
                     help="relative offset-stabilization tolerance (ergodic mode)")
    sol.add_argument("--max-iter", type=int, default=50000, dest="max_iter")
    sol.add_argument("--mode", choices=["ergodic", "finite"], default="ergodic")
    sol.add_argument("--horizon", type=int, default=1000,
                     help="number of backward steps (finite mode)")
    sol.add_argument("--flux", choices=["sg", "upwind"], default="sg",
                     help="drift flux: exponential fitting (default) or plain upwind")
    sol.add_argument("--out", default="run", help="output directory")
    sol.set_defaults(func=cmd_solve)

    sim = sub.add_parser("simulate", help="Monte-Carlo closed-loop rollout")
    sim.add_argument("config")
    sim.add_argument("--feedback", required=True, help="mu_inf.csv from a solve")
    sim.add_argument("--traj", type=int, default=64)
    sim.add_argument("--T", type=float, default=200.0)
    sim.add_argument("--dt", type=float, default=0.005)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--burn-in", type=float, default=0.2, dest="burn_in")
    sim.add_argument("--deterministic", action="store_true",
                     help="noiseless rollouts from a ring of initial states")
    sim.add_argument("--paths", action="store_true", help="dump thinned paths")
    sim.add_argument("--stride", type=int, default=100, help="path thinning stride")
    sim.add_argument("--out", default="run", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="assumption and conservation checks")
    ver.add_argument("config")
    ver.add_argument("--check", required=True,
                     choices=["hasminskii", "bakry-emery", "duality", "conservation"])
    ver.add_argument("--grid", nargs="+", default=["101"])
    ver.add_argument("--h", type=float, default=0.01)
    ver.add_argument("--tol", type=float, default=1e-6)
    ver.add_argument("--offset-tol", type=float, default=1e-8, dest="offset_tol")
    ver.add_argument("--max-iter", type=int, default=50000, dest="max_iter")
    ver.add_argument("--flux", choices=["sg", "upwind"], default="sg")
    ver.add_argument("--gammas", nargs=4, type=float, default=None,
                     metavar=("G1", "G2", "G3", "G4"))
    ver.add_argument("--lambda", dest="be_lambda", type=float, default=None,
                     help="rate parameter of the decay LMI")
    ver.add_argument("--lambda-bounds", nargs=2, type=float, default=None,
                     dest="lambda_bounds", metavar=("LO", "HI"),
                     help="verified spectral bounds of the weight matrix")
    ver.add_argument("--max-rel-gap", type=float, default=0.01, dest="max_rel_gap")
    ver.add_argument("--draws", type=int, default=1000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", default=None, help="directory for the report file")
    ver.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        import os
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ConfigError, MissingQ, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GridMismatch,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ErgodpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
