"""Problem specifications: drift, input map, stage cost, boxes, diffusion.

A ProblemSpec holds the continuous-time data

    dx = f(x) dt + G(x) u dt + sqrt(2 eps) dW,   x in Omega (reflected),
    stage cost  l(x, u) = q(x) + 1/2 u' R u,     u in the box U,

with f, G, q given as expression trees, R a strictly positive diagonal,
and Omega / U axis-aligned boxes.  Optional extras carry a weak
Lyapunov function Q and a decay-certificate weight matrix P.

The registry exposes the worked examples used throughout the test
suite; ``load_config`` reads the same data from a TOML file.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .expr import Expr, eval_expr, parse_expr, to_source

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "ProblemSpec", "ValidationReport", "ExampleId",
    "load_example", "validate_spec", "load_config", "spec_to_toml",
]


@dataclass
class ProblemSpec:
    n_x: int
    n_u: int
    f: tuple[Expr, ...]                 # drift, length n_x
    G: tuple[tuple[Expr, ...], ...]     # input map, n_x rows x n_u cols
    ell_q: Expr                         # state cost q(x)
    ell_R: np.ndarray                   # diagonal control weights, length n_u
    u_lower: np.ndarray
    u_upper: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    epsilon: float
    Q: Expr | None = None
    P: tuple[tuple[Expr, ...], ...] | None = None
    name: str = ""
    # registry-supplied defaults for the assumption checkers, optional
    gammas: tuple[float, float, float, float] | None = None
    be_lambda: float | None = None
    be_lambda_bounds: tuple[float, float] | None = None

    def drift_at(self, x):
        """f(x); x has shape (..., n_x), result (..., n_x)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape, dtype=float)
        for i, fi in enumerate(self.f):
            out[..., i] = eval_expr(fi, x)
        return out

    def input_map_at(self, x):
        """G(x); result shape (..., n_x, n_u)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (self.n_x, self.n_u), dtype=float)
        for i in range(self.n_x):
            for j in range(self.n_u):
                out[..., i, j] = eval_expr(self.G[i][j], x)
        return out

    def stage_cost(self, x, u):
        """l(x, u) = q(x) + 1/2 u' R u, broadcast over leading axes."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        quad = 0.5 * np.sum(self.ell_R * u * u, axis=-1)
        return eval_expr(self.ell_q, x) + quad

    def closed_loop_drift(self, x, u):
        """F[mu](x) = f(x) + G(x) u."""
        Gx = self.input_map_at(x)
        return self.drift_at(x) + np.einsum("...ij,...j->...i", Gx, np.asarray(u, dtype=float))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "valid"
        return "\n".join(self.violations)


def validate_spec(spec: ProblemSpec, samples_per_axis: int = 5) -> ValidationReport:
    """Check the structural invariants and sample the data for finiteness.

    The report lists every violated invariant; an empty report means the
    spec is usable.  Lower-boundedness of the stage cost is confirmed by
    sampling a coarse lattice on Omega x U.
    """
    rep = ValidationReport()
    if spec.epsilon <= 0:
        rep.violations.append("epsilon must be positive")
    if np.any(spec.ell_R <= 0):
        rep.violations.append("control cost not strongly convex (R must be strictly positive)")
    if np.any(spec.u_lower >= spec.u_upper):
        rep.violations.append("control box is empty (need lower < upper per component)")
    if np.any(spec.x_lower >= spec.x_upper):
        rep.violations.append("domain box is empty (need lower < upper per component)")
    if len(spec.f) != spec.n_x:
        rep.violations.append(f"drift has {len(spec.f)} components, expected n_x={spec.n_x}")
    if len(spec.G) != spec.n_x or any(len(row) != spec.n_u for row in spec.G):
        rep.violations.append("input map must be an n_x by n_u matrix of expressions")
    if len(spec.ell_R) != spec.n_u:
        rep.violations.append(f"R has {len(spec.ell_R)} entries, expected n_u={spec.n_u}")
    if rep.violations:
        return rep

    # finiteness of every expression on a coarse Omega x U lattice
    axes_x = [np.linspace(lo, hi, samples_per_axis) for lo, hi in zip(spec.x_lower, spec.x_upper)]
    axes_u = [np.linspace(lo, hi, 3) for lo, hi in zip(spec.u_lower, spec.u_upper)]
    X = np.array(list(itertools.product(*axes_x)), dtype=float)
    U = np.array(list(itertools.product(*axes_u)), dtype=float)
    try:
        fx = spec.drift_at(X)
        Gx = spec.input_map_at(X)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(Gx))):
            rep.violations.append("drift or input map is not finite on Omega")
        costs = np.array([spec.stage_cost(X, np.broadcast_to(u, (len(X), spec.n_u))) for u in U])
        if not np.all(np.isfinite(costs)):
            rep.violations.append("stage cost is not finite on Omega x U")
        if spec.Q is not None and not np.all(np.isfinite(eval_expr(spec.Q, X))):
            rep.violations.append("Lyapunov function Q is not finite on Omega")
        if spec.P is not None:
            for row in spec.P:
                for pij in row:
                    if not np.all(np.isfinite(eval_expr(pij, X))):
                        rep.violations.append("weight matrix P is not finite on Omega")
                        break
    except Exception as exc:  # evaluation errors count as violations, not crashes
        rep.violations.append(f"expression evaluation failed: {exc}")
    return rep


class ExampleId(str, enum.Enum):
    LQG1D = "lqg_1d"
    DoubleWell1D = "double_well_1d"
    CubicUncontrolled1D = "cubic_uncontrolled_1d"
    CaseStudy2D = "case_study_2d"


def _build(name, n_x, n_u, f, G, q, R, U, Omega, eps, Q=None, P=None,
           gammas=None, be_lambda=None, be_bounds=None):
    px = lambda s: parse_expr(s, n_x, n_u)
    u_lo, u_hi = map(np.asarray, zip(*U))
    x_lo, x_hi = map(np.asarray, zip(*Omega))
    return ProblemSpec(
        n_x=n_x, n_u=n_u,
        f=tuple(px(s) for s in f),
        G=tuple(tuple(px(s) for s in row) for row in G),
        ell_q=px(q),
        ell_R=np.asarray(R, dtype=float),
        u_lower=u_lo.astype(float), u_upper=u_hi.astype(float),
        x_lower=x_lo.astype(float), x_upper=x_hi.astype(float),
        epsilon=float(eps),
        Q=None if Q is None else px(Q),
        P=None if P is None else tuple(tuple(px(s) for s in row) for row in P),
        name=name,
        gammas=gammas, be_lambda=be_lambda, be_lambda_bounds=be_bounds,
    )


def load_example(example) -> ProblemSpec:
    """Fully populated spec for one of the registered worked examples."""
    if isinstance(example, str) and not isinstance(example, ExampleId):
        try:
            example = ExampleId(example)
        except ValueError:
            names = ", ".join(e.value for e in ExampleId)
            raise ConfigError(f"unknown example '{example}' (known: {names})") from None

    if example is ExampleId.CaseStudy2D:
        # two-state system with rotational drift, double-well cost in x2
        return _build(
            "case_study_2d", n_x=2, n_u=1,
            f=("x2 - 0.5*x1*x2", "-x1"),
            G=(("0",), ("1",)),
            q="0.25*x1^2 + 3*(x2^2 - 1)^2",
            R=(1.0,),
            U=((-4.0, 4.0),),
            Omega=((-3.0, 3.0), (-3.0, 3.0)),
            eps=0.2,
            Q="0.5*(x1^2 + x2^2)",
            gammas=(1.0, 1.0, 40.0, 0.125),
        )
    if example is ExampleId.DoubleWell1D:
        # uncontrolled double well with known multi-modal steady state
        return _build(
            "double_well_1d", n_x=1, n_u=1,
            f=("0.5*x1 - x1^3",),
            G=(("0",),),
            q="x1^2",
            R=(2.0,),
            U=((-1.0, 1.0),),
            Omega=((-3.0, 3.0),),
            eps=1.0,
            Q="0.5*x1^2",
            P=(("1 - 0.5*exp(-x1^2)",),),
            gammas=(1.0, 1.0, 2.0, 0.25),
            be_lambda=0.05,
            be_bounds=(0.5, 1.0),
        )
    if example is ExampleId.CubicUncontrolled1D:
        return _build(
            "cubic_uncontrolled_1d", n_x=1, n_u=1,
            f=("x1 - x1^3",),
            G=(("0",),),
            q="x1^2 + x1^4",
            R=(2.0,),
            U=((-1.0, 1.0),),
            Omega=((-3.0, 3.0),),
            eps=1.0,
            Q="0.5*x1^2",
            gammas=(1.0, 1.0, 1.0, 0.25),
        )
    if example is ExampleId.LQG1D:
        # linear-quadratic problem on a wide box; interior feedback should
        # reproduce the closed-form Riccati gain
        return _build(
            "lqg_1d", n_x=1, n_u=1,
            f=("-x1",),
            G=(("1",),),
            q="x1^2",
            R=(2.0,),
            U=((-4.0, 4.0),),
            Omega=((-4.0, 4.0),),
            eps=0.5,
            Q="0.5*x1^2",
        )
    raise ConfigError(f"unknown example {example!r}")


_TOP_KEYS = {"dimensions", "domain", "controls", "epsilon", "drift",
             "input_map", "cost", "lyapunov_Q", "be_weight_P"}


def _require(table, key, where):
    if key not in table:
        raise ConfigError(f"missing key '{key}' in {where}")
    return table[key]


def _reject_unknown(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {where}")


def load_config(path) -> ProblemSpec:
    """Read a problem spec from a TOML file.

    Schema (all expressions are strings in the x1../u1.. language):

        [dimensions]     nx = 2, nu = 1
        [domain]         lower = [-3.0, -3.0], upper = [3.0, 3.0]
        [controls]       lower = [-4.0],       upper = [4.0]
        epsilon = 0.2
        drift = ["x2 - 0.5*x1*x2", "-x1"]
        input_map = [["0"], ["1"]]           # nx rows, nu columns
        [cost]           q = "...", R = [1.0]
        lyapunov_Q = "0.5*(x1^2 + x2^2)"     # optional
        be_weight_P = [["..."]]              # optional, nx x nx

    Unknown keys are hard errors.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return spec_from_dict(data, name=path.stem)


def spec_from_dict(data: dict, name: str = "") -> ProblemSpec:
    _reject_unknown(data, _TOP_KEYS, "config")
    dims = _require(data, "dimensions", "config")
    _reject_unknown(dims, {"nx", "nu"}, "dimensions")
    n_x = int(_require(dims, "nx", "dimensions"))
    n_u = int(_require(dims, "nu", "dimensions"))
    if n_x < 1 or n_u < 1:
        raise ConfigError("nx and nu must be at least 1")

    dom = _require(data, "domain", "config")
    _reject_unknown(dom, {"lower", "upper"}, "domain")
    ctl = _require(data, "controls", "config")
    _reject_unknown(ctl, {"lower", "upper"}, "controls")
    cost = _require(data, "cost", "config")
    _reject_unknown(cost, {"q", "R"}, "cost")

    def vec(values, n, what):
        arr = np.asarray(values, dtype=float)
        if arr.shape != (n,):
            raise ConfigError(f"{what} must have {n} entries, got shape {arr.shape}")
        return arr

    x_lo = vec(_require(dom, "lower", "domain"), n_x, "domain.lower")
    x_hi = vec(_require(dom, "upper", "domain"), n_x, "domain.upper")
    u_lo = vec(_require(ctl, "lower", "controls"), n_u, "controls.lower")
    u_hi = vec(_require(ctl, "upper", "controls"), n_u, "controls.upper")

    drift = _require(data, "drift", "config")
    if len(drift) != n_x:
        raise ConfigError(f"drift must have nx={n_x} expressions")
    gmat = _require(data, "input_map", "config")
    if len(gmat) != n_x or any(len(row) != n_u for row in gmat):
        raise ConfigError(f"input_map must be nx x nu = {n_x} x {n_u}")

    R = vec(_require(cost, "R", "cost"), n_u, "cost.R")

    def px(s, where):
        try:
            return parse_expr(str(s), n_x, n_u)
        except Exception as exc:
            raise ConfigError(f"bad expression in {where}: {exc}") from exc

    pmat = data.get("be_weight_P")
    if pmat is not None and (len(pmat) != n_x or any(len(row) != n_x for row in pmat)):
        raise ConfigError(f"be_weight_P must be nx x nx = {n_x} x {n_x}")

    spec = ProblemSpec(
        n_x=n_x, n_u=n_u,
        f=tuple(px(s, "drift") for s in drift),
        G=tuple(tuple(px(s, "input_map") for s in row) for row in gmat),
        ell_q=px(_require(cost, "q", "cost"), "cost.q"),
        ell_R=R,
        u_lower=u_lo, u_upper=u_hi,
        x_lower=x_lo, x_upper=x_hi,
        epsilon=float(_require(data, "epsilon", "config")),
        Q=None if "lyapunov_Q" not in data else px(data["lyapunov_Q"], "lyapunov_Q"),
        P=None if pmat is None else tuple(tuple(px(s, "be_weight_P") for s in row) for row in pmat),
        name=name,
    )
    rep = validate_spec(spec)
    if not rep.ok:
        raise ConfigError(f"invalid problem spec: {rep}")
    return spec


def spec_to_toml(spec: ProblemSpec) -> str:
    """Serialize a spec back to config text (used to ship the registry)."""

    def exprs(seq):
        return "[" + ", ".join(f'"{to_source(e)}"' for e in seq) + "]"

    def matrix(rows):
        return "[" + ", ".join(exprs(row) for row in rows) + "]"

    def floats(arr):
        return "[" + ", ".join(repr(float(v)) for v in arr) + "]"

    lines = [
        f"epsilon = {spec.epsilon!r}",
        f"drift = {exprs(spec.f)}",
        f"input_map = {matrix(spec.G)}",
    ]
    if spec.Q is not None:
        lines.append(f'lyapunov_Q = "{to_source(spec.Q)}"')
    if spec.P is not None:
        lines.append(f"be_weight_P = {matrix(spec.P)}")
    lines += [
        "",
        "[dimensions]",
        f"nx = {spec.n_x}",
        f"nu = {spec.n_u}",
        "",
        "[domain]",
        f"lower = {floats(spec.x_lower)}",
        f"upper = {floats(spec.x_upper)}",
        "",
        "[controls]",
        f"lower = {floats(spec.u_lower)}",
        f"upper = {floats(spec.u_upper)}",
        "",
        "[cost]",
        f'q = "{to_source(spec.ell_q)}"',
        f"R = {floats(spec.ell_R)}",
        "",
    ]
    return "\n".join(lines)
