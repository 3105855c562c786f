"""Forward Fokker-Planck propagation and validation diagnostics.

Everything here works on the same discrete system as the backward
recursion, which is what makes the dual/primal cross-checks exact: the
fixed point of the semi-implicit one-step map E^{-1}(A + B diag(u)) is
precisely the kernel of the continuous-time closed-loop generator
L[u] = A_c + sum_j B_c^(j) diag(u_j), independent of the step size.

The energy is tracked in mass coordinates, E = sum_i (p_i - pinf_i)^2 /
pinf_i, which equals the trapezoidal quadrature of the weighted density
distance int (rho - rho_inf)^2 / rho_inf dx node by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .conjugate import DualCost
from .errors import NoConvergence, PositivityViolation, InsufficientData
from .grid import GridDiscretization
from .operators import DiscreteSystem

__all__ = [
    "DensityState", "EnergyTrace", "ClosedLoopMap",
    "closed_loop_matrix", "steady_state", "propagate",
    "estimate_decay_rate", "primal_cost", "subdominant_decay_rate",
]


@dataclass
class DensityState:
    p: np.ndarray
    time: float = 0.0

    def validate(self, mass_tol: float = 1e-10, neg_tol: float = 1e-12):
        if self.p.min() < -neg_tol:
            raise PositivityViolation(f"density state has mass {self.p.min():.2e}")
        if abs(self.p.sum() - 1.0) > mass_tol:
            raise PositivityViolation(f"density state mass {self.p.sum()!r} is not 1")
        return self


@dataclass
class EnergyTrace:
    t: np.ndarray
    E: np.ndarray


def _feedback_table(feedback, m, n_u):
    u = np.asarray(feedback, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape != (m, n_u):
        raise ValueError(f"feedback table has shape {u.shape}, expected {(m, n_u)}")
    return u


@dataclass
class ClosedLoopMap:
    """One-step map p' = E^{-1} K p with K = A + sum_j B^(j) diag(u_j)."""

    sys: DiscreteSystem
    K: sp.csr_matrix
    u: np.ndarray

    def step(self, p):
        return self.sys.solve(self.K @ np.asarray(p, dtype=float))

    def generator(self) -> sp.csr_matrix:
        """Continuous-time closed loop L[u] = A_c + sum_j B_c^(j) diag(u_j).

        A Markov generator (Metzler, zero column sums) for any feedback
        inside the box, thanks to the sign-split control upwinding.
        """
        L = self.sys.Ac.copy()
        for j, bc in enumerate(self.sys.Bc):
            if bc.nnz:
                up = sp.diags(np.maximum(self.u[:, j], 0.0))
                um = sp.diags(np.maximum(-self.u[:, j], 0.0))
                L = L + bc.plus @ up + bc.minus @ um
        return L.tocsr()


def closed_loop_matrix(sys: DiscreteSystem, feedback) -> ClosedLoopMap:
    """Close the loop with a per-node feedback table (values inside U)."""
    u = _feedback_table(feedback, sys.m, sys.n_u)
    K = sys.A.copy().tocsr()
    for j, bc in enumerate(sys.B):
        if bc.nnz:
            up = sp.diags(np.maximum(u[:, j], 0.0))
            um = sp.diags(np.maximum(-u[:, j], 0.0))
            K = K + bc.plus @ up + bc.minus @ um
    return ClosedLoopMap(sys=sys, K=K.tocsr(), u=u)


def steady_state(sys: DiscreteSystem, feedback, tol: float = 1e-12,
                 max_iter: int = 5000, h_big: float | None = None) -> DensityState:
    """Stationary masses of the closed-loop map, normalized to unit mass.

    Inverse power iteration for the unit eigenvalue: iterate the
    resolvent (I - h_big L)^{-1}, whose fixed point is the kernel of the
    closed-loop generator L and therefore the fixed point of the
    one-step map for every step size.  A large internal step makes the
    spectral gap wide, so convergence to 1e-12 takes tens of iterations;
    the resolvent is an M-matrix whenever the mesh Peclet condition
    holds, which keeps every iterate strictly positive.
    """
    cl = closed_loop_matrix(sys, feedback)
    L = cl.generator()
    if h_big is None:
        h_big = max(1.0, 50.0 * sys.h)
    K = (sp.identity(sys.m, format="csc") - h_big * L.tocsc()).tocsc()
    lu = splu(K)
    p = sys.grid.weights / sys.grid.weights.sum()
    for _ in range(max_iter):
        q = lu.solve(p)
        q /= q.sum()
        delta = np.max(np.abs(q - p))
        p = q
        if delta <= tol:
            return DensityState(p=p, time=np.inf)
    raise NoConvergence(
        f"steady-state iteration stalled at update {delta:.2e}", residual=delta)


def propagate(sys: DiscreteSystem, feedback, p0: DensityState, steps: int,
              p_inf: DensityState | None = None, assert_monotone: bool = True,
              monotone_slack: float = 1e-10, snapshot_stride: int = 0):
    """Roll the closed-loop map; record the energy distance to steady state.

    Returns (snapshots, trace): snapshots is a list of (t, p) pairs
    taken every ``snapshot_stride`` steps (empty when 0), trace is the
    EnergyTrace.  Monotone nonincrease of the energy is asserted up to
    ``monotone_slack`` unless disabled.
    """
    cl = closed_loop_matrix(sys, feedback)
    if p_inf is None:
        p_inf = steady_state(sys, feedback)
    pinf = p_inf.p
    if pinf.min() <= 0:
        raise PositivityViolation("steady state must be strictly positive for the energy norm")

    p = np.asarray(p0.p, dtype=float).copy()
    t = float(p0.time)
    energies = [float(np.sum((p - pinf) ** 2 / pinf))]
    times = [t]
    snapshots = []
    if snapshot_stride:
        snapshots.append((t, p.copy()))
    for k in range(1, steps + 1):
        p = cl.step(p)
        neg = p.min()
        if neg < -1e-12:
            raise PositivityViolation(f"propagation produced negative mass {neg:.2e} at step {k}")
        np.clip(p, 0.0, None, out=p)
        t = float(p0.time) + k * sys.h
        e = float(np.sum((p - pinf) ** 2 / pinf))
        if assert_monotone and e > energies[-1] + monotone_slack:
            raise PositivityViolation(
                f"energy increased at step {k}: {energies[-1]:.6e} -> {e:.6e}")
        energies.append(e)
        times.append(t)
        if snapshot_stride and k % snapshot_stride == 0:
            snapshots.append((t, p.copy()))
    return snapshots, EnergyTrace(t=np.array(times), E=np.array(energies))


def estimate_decay_rate(trace: EnergyTrace, window: float = 0.5) -> float:
    """Exponential decay rate from the trailing part of an energy trace.

    Fits the least-squares slope of (1/2) log E(t) over the last
    ``window`` fraction of the time span with E above 1e-14 and returns
    gamma_hat = -slope.
    """
    mask = trace.E > 1e-14
    t = trace.t[mask]
    E = trace.E[mask]
    if t.size < 10:
        raise InsufficientData(
            f"need at least 10 energy samples above 1e-14, have {t.size}")
    t0 = t[-1] - window * (t[-1] - t[0])
    sel = t >= t0
    if sel.sum() < 2:
        raise InsufficientData("trailing window holds fewer than 2 samples")
    ts, ys = t[sel], 0.5 * np.log(E[sel])
    slope = np.polyfit(ts, ys, 1)[0]
    return float(-slope)


def subdominant_decay_rate(sys: DiscreteSystem, feedback, p_inf: DensityState | None = None,
                           iters: int = 4000, tol: float = 1e-10) -> float:
    """Decay-rate oracle from the one-step map's second eigenvalue.

    Power iteration on the zero-mass subspace (the unit eigenpair is
    deflated through its known left eigenvector 1); the estimate is
    gamma = -log(lambda_2) / h.
    """
    cl = closed_loop_matrix(sys, feedback)
    if p_inf is None:
        p_inf = steady_state(sys, feedback)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(sys.m)
    x -= x.sum() * p_inf.p
    lam = 0.0
    for _ in range(iters):
        y = cl.step(x)
        y -= y.sum() * p_inf.p
        nrm = np.linalg.norm(y)
        if nrm == 0:
            break
        lam_new = nrm / np.linalg.norm(x)
        x = y / nrm
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-30):
            lam = lam_new
            break
        lam = lam_new
    return float(-np.log(lam) / sys.h)


def primal_cost(g: GridDiscretization, dc: DualCost, feedback, p) -> float:
    """Mass-weighted stage cost sum_i l(x_i, u_i) p_i."""
    p_arr = p.p if isinstance(p, DensityState) else np.asarray(p, dtype=float)
    u = _feedback_table(feedback, g.m, dc.spec.n_u)
    ell = dc.q_nodes + 0.5 * np.sum(dc.spec.ell_R * u * u, axis=1)
    return float(ell @ p_arr)


def write_snapshots_csv(path, g: GridDiscretization, snapshots) -> None:
    """Trajectory snapshots as CSV rows (snapshot, t, node, coords..., mass)."""
    coord_names = ",".join(f"x{a + 1}" for a in range(g.dim))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"snapshot,t,node,{coord_names},mass\n")
        for s, (t, p) in enumerate(snapshots):
            for i in range(g.m):
                coords = ",".join(repr(float(c)) for c in g.nodes[i])
                fh.write(f"{s},{float(t)!r},{i},{coords},{float(p[i])!r}\n")
