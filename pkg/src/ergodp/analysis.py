"""Assumption checkers: Lyapunov condition, Bakry-Emery LMI, duality gap.

Derivatives of expression-valued data are taken by central finite
differences with step 1e-5 of the axis span (nested for second
derivatives), which balances truncation against rounding on O(1)
domains.  The distributional LMI is verified pointwise on the grid:
per-node positive semidefiniteness of the shifted block matrix is a
conservative stand-in for the integral formulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import ErgodicSolution
from .errors import MissingQ, PNotPositive
from .expr import Expr, eval_expr
from .grid import GridDiscretization
from .model import ProblemSpec

__all__ = [
    "LyapunovCheck", "BakryEmeryCheck", "DualityReport",
    "check_hasminskii", "check_bakry_emery", "duality_report",
    "value_energy_bound",
]

_FD_REL_STEP = 1e-5        # first derivatives
_FD_REL_STEP_HESS = 1e-4   # second derivatives: eps^(1/4)-scale balances rounding


def _fd_steps(g: GridDiscretization, hess: bool = False):
    rel = _FD_REL_STEP_HESS if hess else _FD_REL_STEP
    return rel * (g.upper - g.lower)


def _grad_fd(e: Expr, X, steps):
    """Central-difference gradient of a scalar expression, X (N, d)."""
    N, d = X.shape
    out = np.empty((N, d))
    for a in range(d):
        delta = np.zeros(d)
        delta[a] = steps[a]
        out[:, a] = (eval_expr(e, X + delta) - eval_expr(e, X - delta)) / (2 * steps[a])
    return out


def _hess_fd(e: Expr, X, steps):
    """Nested central-difference Hessian, X (N, d) -> (N, d, d)."""
    N, d = X.shape
    H = np.empty((N, d, d))
    e0 = eval_expr(e, X)
    for a in range(d):
        da = np.zeros(d)
        da[a] = steps[a]
        H[:, a, a] = (eval_expr(e, X + da) - 2 * e0 + eval_expr(e, X - da)) / steps[a] ** 2
        for b in range(a + 1, d):
            db = np.zeros(d)
            db[b] = steps[b]
            cross = (
                eval_expr(e, X + da + db) - eval_expr(e, X + da - db)
                - eval_expr(e, X - da + db) + eval_expr(e, X - da - db)
            ) / (4 * steps[a] * steps[b])
            H[:, a, b] = cross
            H[:, b, a] = cross
    return H


def _feedback_values(spec: ProblemSpec, mu, g: GridDiscretization):
    """Per-node control table from None, an array table, or expressions."""
    if mu is None:
        return np.zeros((g.m, spec.n_u)), None
    if isinstance(mu, np.ndarray) or (isinstance(mu, (list, tuple)) and mu and isinstance(mu[0], (int, float, np.ndarray))):
        u = np.asarray(mu, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        return u, None
    exprs = tuple(mu) if isinstance(mu, (list, tuple)) else (mu,)
    u = np.stack([np.broadcast_to(np.asarray(eval_expr(e, g.nodes), dtype=float), (g.m,))
                  for e in exprs], axis=1)
    return u, exprs


@dataclass
class LyapunovCheck:
    gammas: tuple[float, float, float, float]
    margin: float                     # min over nodes of g3 - g4*l[mu] - F[mu]'grad Q
    hessian_ok: bool
    boundary_ok: bool
    drift_ok: bool
    violations: list[int] = field(default_factory=list)  # offending node indices
    hess_eig_range: tuple[float, float] = (np.nan, np.nan)

    @property
    def passed(self) -> bool:
        return self.hessian_ok and self.boundary_ok and self.drift_ok


def check_hasminskii(spec: ProblemSpec, mu, g: GridDiscretization,
                     gammas=None, tol: float = 1e-6) -> LyapunovCheck:
    """Weak Lyapunov condition F[mu]'grad Q <= g3 - g4*l[mu] on the grid.

    Also verifies the Hessian bounds g1 I <= hess Q <= g2 I per node and
    the outward-slope condition grad Q' n >= 0 on every boundary face.
    """
    if spec.Q is None:
        raise MissingQ("problem spec has no Lyapunov function Q")
    if gammas is None:
        gammas = spec.gammas
    if gammas is None:
        raise MissingQ("no gamma constants given and none stored in the spec")
    g1, g2, g3, g4 = (float(v) for v in gammas)

    X = g.nodes
    gradQ = _grad_fd(spec.Q, X, _fd_steps(g))
    hessQ = _hess_fd(spec.Q, X, _fd_steps(g, hess=True))
    eigs = np.linalg.eigvalsh(0.5 * (hessQ + np.swapaxes(hessQ, 1, 2)))
    hessian_ok = bool(np.all(eigs[:, 0] >= g1 - tol) and np.all(eigs[:, -1] <= g2 + tol))

    boundary_ok = True
    multis = np.unravel_index(np.arange(g.m), tuple(g.counts))
    for a in range(g.dim):
        on_lo = multis[a] == 0
        on_hi = multis[a] == g.counts[a] - 1
        if np.any(gradQ[on_lo, a] > tol) or np.any(gradQ[on_hi, a] < -tol):
            boundary_ok = False

    u, _ = _feedback_values(spec, mu, g)
    F = spec.drift_at(X) + np.einsum("nij,nj->ni", spec.input_map_at(X), u)
    ell = np.asarray(eval_expr(spec.ell_q, X), dtype=float) + 0.5 * np.sum(spec.ell_R * u * u, axis=1)
    margins = g3 - g4 * ell - np.sum(F * gradQ, axis=1)
    margin = float(margins.min())
    drift_ok = bool(margin >= -tol)
    violations = np.nonzero(margins < -tol)[0].tolist()

    return LyapunovCheck(
        gammas=(g1, g2, g3, g4), margin=margin, hessian_ok=hessian_ok,
        boundary_ok=boundary_ok, drift_ok=drift_ok, violations=violations,
        hess_eig_range=(float(eigs[:, 0].min()), float(eigs[:, -1].max())),
    )


@dataclass
class BakryEmeryCheck:
    lam: float
    lambda_lower: float
    lambda_upper: float
    min_eigs: np.ndarray              # per-node minimum eigenvalue of the shifted block
    gamma: float
    kink_nodes: list[int] = field(default_factory=list)
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return bool(np.all(self.min_eigs >= -self.tol))

    @property
    def worst(self) -> float:
        return float(self.min_eigs.min())


def check_bakry_emery(spec: ProblemSpec, mu, g: GridDiscretization, lam: float,
                      P=None, lambda_bounds=None, tol: float = 1e-9) -> BakryEmeryCheck:
    """Pointwise LMI check for the Lyapunov diffusion operator weight P.

    Assembles at every node the (n_x + n_x^2)-square symmetric block

        [ R[mu]P - lam*P   eps * (grad x P)' ]
        [ eps * (grad x P)   eps * I x P     ]

    with R[mu]P = (L[mu]P - F'[mu]P - P F'[mu]')/2, and reports its
    minimum eigenvalue per node.  lambda_bounds, when given, are
    verified to bracket P's nodal spectrum and then used verbatim in
    gamma = 2*lam*(lambda_lower/lambda_upper); otherwise the nodal
    extremes are used.  Feedback tables get finite-difference Jacobians;
    nodes where those jump more than 10x the median are excluded from
    the margin and reported as kinks.
    """
    if P is None:
        P = spec.P
    if P is None:
        raise PNotPositive("no weight matrix P given")
    d = spec.n_x
    X = g.nodes
    m = g.m
    steps = _fd_steps(g)
    eps = spec.epsilon

    P_nodes = np.empty((m, d, d))
    gradP = np.empty((m, d, d, d))      # gradP[:, a, i, j] = d/dx_a P_ij
    lapP = np.zeros((m, d, d))
    for i in range(d):
        for j in range(d):
            e = P[i][j]
            P_nodes[:, i, j] = np.broadcast_to(np.asarray(eval_expr(e, X), dtype=float), (m,))
            gp = _grad_fd(e, X, steps)
            for a in range(d):
                gradP[:, a, i, j] = gp[:, a]
            hp = _hess_fd(e, X, _fd_steps(g, hess=True))
            lapP[:, i, j] = np.trace(hp, axis1=1, axis2=2)
    P_nodes = 0.5 * (P_nodes + np.swapaxes(P_nodes, 1, 2))

    p_eigs = np.linalg.eigvalsh(P_nodes)
    p_min, p_max = float(p_eigs[:, 0].min()), float(p_eigs[:, -1].max())
    if p_min <= 0:
        raise PNotPositive(f"P has nodal minimum eigenvalue {p_min:.3e} <= 0")
    if lambda_bounds is not None:
        lam_lo, lam_hi = (float(v) for v in lambda_bounds)
        if p_min < lam_lo - 1e-9 or p_max > lam_hi + 1e-9:
            raise PNotPositive(
                f"given spectral bounds [{lam_lo}, {lam_hi}] do not bracket "
                f"P's nodal spectrum [{p_min:.6g}, {p_max:.6g}]")
    else:
        lam_lo, lam_hi = p_min, p_max

    u, mu_exprs = _feedback_values(spec, mu, g)
    F = spec.drift_at(X) + np.einsum("nij,nj->ni", spec.input_map_at(X), u)

    # Jacobian of the closed-loop drift
    kinks: list[int] = []
    if mu is None or mu_exprs is not None:
        Fjac = np.empty((m, d, d))
        for a in range(d):
            delta = np.zeros(d)
            delta[a] = steps[a]
            if mu is None:
                Fp = spec.drift_at(X + delta)
                Fm = spec.drift_at(X - delta)
            else:
                up = np.stack([np.broadcast_to(np.asarray(eval_expr(e, X + delta), dtype=float), (m,))
                               for e in mu_exprs], axis=1)
                um = np.stack([np.broadcast_to(np.asarray(eval_expr(e, X - delta), dtype=float), (m,))
                               for e in mu_exprs], axis=1)
                Fp = spec.drift_at(X + delta) + np.einsum("nij,nj->ni", spec.input_map_at(X + delta), up)
                Fm = spec.drift_at(X - delta) + np.einsum("nij,nj->ni", spec.input_map_at(X - delta), um)
            Fjac[:, :, a] = (Fp - Fm) / (2 * steps[a])
    else:
        # node-table feedback: difference the closed-loop drift on the lattice
        Fgrid = F.reshape(tuple(g.counts) + (d,))
        Fjac = np.empty((m, d, d))
        for a in range(d):
            dFa = np.gradient(Fgrid, g.axes[a], axis=a)
            Fjac[:, :, a] = dFa.reshape(m, d)
        # flag saturation kinks: per-node Jacobian magnitude far above the median
        mag = np.max(np.abs(Fjac), axis=(1, 2))
        med = np.median(mag)
        if med > 0:
            kinks = np.nonzero(mag > 10.0 * med)[0].tolist()

    # L[mu]P = F'gradP + eps lapP, componentwise
    LP = np.einsum("na,naij->nij", F, gradP) + eps * lapP
    RP = 0.5 * (LP - np.einsum("nik,nkj->nij", Fjac, P_nodes)
                - np.einsum("nik,njk->nij", P_nodes, Fjac))

    block = np.zeros((m, d + d * d, d + d * d))
    block[:, :d, :d] = 0.5 * (RP + np.swapaxes(RP, 1, 2)) - lam * P_nodes
    # (grad x P) stacks the per-axis derivative matrices vertically
    for a in range(d):
        block[:, d + a * d: d + (a + 1) * d, :d] = eps * gradP[:, a]
        block[:, :d, d + a * d: d + (a + 1) * d] = eps * np.swapaxes(gradP[:, a], 1, 2)
        block[:, d + a * d: d + (a + 1) * d, d + a * d: d + (a + 1) * d] = eps * P_nodes
    min_eigs = np.linalg.eigvalsh(block)[:, 0]
    if kinks:
        min_eigs = min_eigs.copy()
        min_eigs[np.array(kinks, dtype=int)] = np.inf  # excluded, reported separately

    return BakryEmeryCheck(
        lam=float(lam), lambda_lower=lam_lo, lambda_upper=lam_hi,
        min_eigs=min_eigs, gamma=2.0 * float(lam) * (lam_lo / lam_hi),
        kink_nodes=kinks, tol=tol,
    )


@dataclass
class DualityReport:
    ell_dual: float
    ell_primal: float

    @property
    def abs_gap(self) -> float:
        return abs(self.ell_dual - self.ell_primal)

    @property
    def rel_gap(self) -> float:
        scale = max(abs(self.ell_dual), abs(self.ell_primal), 1e-300)
        return self.abs_gap / scale


def duality_report(dual: ErgodicSolution, primal_cost: float) -> DualityReport:
    """Tie the DP-offset average cost to the primal steady-state cost."""
    return DualityReport(ell_dual=float(dual.ell_inf), ell_primal=float(primal_cost))


def value_energy_bound(V_mean_zero, p_inf, ell_nodes, gamma: float):
    """Energy estimate sum V^2 p <= (1/gamma^2) sum l[mu]^2 p.

    Returns (lhs, rhs, ok).  gamma is a fitted estimate, so a violation
    is advisory, not a failure.
    """
    V = np.asarray(V_mean_zero, dtype=float)
    p = np.asarray(p_inf, dtype=float)
    ell = np.asarray(ell_nodes, dtype=float)
    lhs = float(V @ (V * p))
    rhs = float(ell @ (ell * p)) / gamma**2
    return lhs, rhs, lhs <= rhs
