"""Operator-theoretic dynamic programming on the discretized system.

The cost-to-go of the discrete program is the linear functional
J_k(p) = y_k' E p.  One backward step solves

    E' y_k = A' y_{k+1} + h * d(x_i, (B_c' y_{k+1})_i)_i

where d is the closed-form stage-cost conjugate; the per-node minimizers
are the feedback table.  In mass representation the quadrature weights
live inside the state, so the conjugate is evaluated with unweighted
nodal dual variables lambda_i = (B_c' y)_i and the stage term carries
the step length h.  Letting h -> 0 recovers the parabolic HJB
-Vdot = H(x, grad V) + eps Laplace V with Neumann boundary.

Ergodic problems run the same step as a relative value iteration: after
each sweep the value at an anchor node is subtracted and recorded; since
total mass is one, the per-step drift equals h times the ergodic average
cost, so ell_inf = offset / h at convergence.  Anchoring is exact by
shift equivariance (A'1 = E'1 and B'1 = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conjugate import DualCost
from .errors import LinearSolveFailure, NoConvergence
from .operators import DiscreteSystem

__all__ = [
    "ValueIterate", "ErgodicSolution", "dp_step",
    "solve_finite_horizon", "solve_ergodic", "extract_feedback",
    "functional_value", "reanchor_mean_zero",
]


@dataclass
class ValueIterate:
    y: np.ndarray                 # dual/value coefficients, length m
    u: np.ndarray                 # per-node feedback, (m, n_u)
    k: int = 0
    offset_per_step: float = 0.0


@dataclass
class ErgodicSolution:
    V_inf: np.ndarray             # nodal values, anchored to 0 at anchor_node
    mu_inf: np.ndarray            # (m, n_u)
    ell_inf: float
    iterations: int
    residual: float               # final feedback change, sup norm
    anchor_node: int
    trace: np.ndarray = field(default=None, repr=False)  # (iters, 3): k, |du|, offset/h


def dp_step(sys: DiscreteSystem, dc: DualCost, y_next) -> ValueIterate:
    """One backward step of the recursion E'y_k = A'y_{k+1} + D(B'y_{k+1}).

    The sign-split control operators contribute one dual price per
    branch, lam+ = B+' y and lam- = B-' y; the stage conjugate minimizes
    over both sign branches in closed form.
    """
    y_next = np.asarray(y_next, dtype=float)
    if not np.all(np.isfinite(y_next)):
        raise LinearSolveFailure("y_next is not finite")
    lam_p = np.empty((sys.m, sys.n_u))
    lam_m = np.empty((sys.m, sys.n_u))
    for j, bc in enumerate(sys.Bc):
        lam_p[:, j] = bc.plus.T @ y_next
        lam_m[:, j] = bc.minus.T @ y_next
    u_star, dvals = dc.argmin_nodes_signed(lam_p, lam_m)
    rhs = sys.A.T @ y_next + sys.h * dvals
    y_k = sys.solve_T(rhs)
    if not np.all(np.isfinite(y_k)):
        raise LinearSolveFailure("transposed solve returned non-finite values")
    return ValueIterate(y=y_k, u=u_star)


def solve_finite_horizon(sys: DiscreteSystem, dc: DualCost, N: int, keep_schedule: bool = True):
    """Backward sweep from y_N = 0 over N steps.

    Returns (y_0, schedule) with schedule the time-indexed feedback
    [u_0, ..., u_{N-1}] (empty when keep_schedule is False).  The value
    of the program from initial masses p0 is y_0' E p0.
    """
    if N < 1:
        raise ValueError("horizon must be at least one step")
    y = np.zeros(sys.m)
    schedule = []
    for _ in range(N):
        it = dp_step(sys, dc, y)
        y = it.y
        if keep_schedule:
            schedule.append(it.u)
    schedule.reverse()
    return y, schedule


def functional_value(sys: DiscreteSystem, y, p0) -> float:
    """Evaluate the linear cost functional y' E p0."""
    return float(np.asarray(y) @ (sys.E @ np.asarray(p0, dtype=float)))


def solve_ergodic(sys: DiscreteSystem, dc: DualCost, tol: float = 1e-6,
                  anchor: int | None = None, max_iter: int = 50000,
                  offset_rel_tol: float = 1e-8, keep_trace: bool = True) -> ErgodicSolution:
    """Relative value iteration for the ergodic problem.

    Each sweep re-anchors the value vector at ``anchor`` (default: node
    nearest the domain center) and records the subtracted offset.
    Terminates when the feedback change drops below ``tol`` in sup norm
    AND the offset has stabilized to ``offset_rel_tol`` relative change;
    requiring both avoids premature stops when the feedback saturates
    early.  ell_inf = offset / h.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if anchor is None:
        anchor = sys.grid.center_node()
    y = np.zeros(sys.m)
    u_prev = None
    offset_prev = None
    trace = []
    for k in range(1, max_iter + 1):
        it = dp_step(sys, dc, y)
        offset = float(it.y[anchor])
        y = it.y - offset
        du = np.inf if u_prev is None else float(np.max(np.abs(it.u - u_prev)))
        doff = np.inf if offset_prev is None else abs(offset - offset_prev)
        if keep_trace:
            trace.append((k, du, offset / sys.h))
        u_prev = it.u
        offset_prev = offset
        if du <= tol and doff <= offset_rel_tol * max(abs(offset), 1e-300):
            return ErgodicSolution(
                V_inf=y, mu_inf=it.u, ell_inf=offset / sys.h, iterations=k,
                residual=du, anchor_node=anchor,
                trace=np.array(trace) if keep_trace else None,
            )
    raise NoConvergence(
        f"relative value iteration did not converge in {max_iter} sweeps "
        f"(last feedback change {du:.2e})",
        iterations=max_iter, residual=du,
    )


def extract_feedback(result) -> np.ndarray:
    """Per-node control table of a ValueIterate or ErgodicSolution."""
    if isinstance(result, ValueIterate):
        return result.u
    if isinstance(result, ErgodicSolution):
        return result.mu_inf
    raise TypeError(f"no feedback in {type(result).__name__}")


def reanchor_mean_zero(V, p) -> np.ndarray:
    """Shift nodal values so their mass-weighted mean vanishes."""
    V = np.asarray(V, dtype=float)
    p = np.asarray(p, dtype=float)
    return V - float(V @ p) * np.ones_like(V)
