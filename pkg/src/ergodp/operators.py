"""Finite-volume assembly of the controlled Fokker-Planck operators.

State vectors hold per-node probability masses p_i = w_i * rho(x_i), so
the conservation laws read 1' E^{-1} A = 1' and 1' E^{-1} B = 0 with the
plain ones vector.  The continuous-time generator A_c collects the
eps-diffusion (second-difference flux) and the drift (first-order upwind
flux, direction chosen by the sign of the drift component at the face
midpoint); "sg" flux replaces the separate diffusion/upwind split by
Scharfetter-Gummel exponential fitting, which has the same M-matrix
structure with far less numerical diffusion.

Control transport carries a signed per-node mass flow, so the upwind
direction depends on the control sign, which the assembly cannot know.
Each channel therefore gets a pair of operators: B+ transports the
positive control part with velocity +G, B- the negative part with
velocity -G, each one upwinded for its own velocity.  Every closed-loop
generator A_c + sum_j (B+_j diag(u+_j) + B-_j diag(u-_j)) is then a
proper Markov generator (Metzler, zero column sums) for any feedback
inside the box, on any grid.

Time discretization is semi-implicit: E = I - h A_c (drift-diffusion
implicit), A = I, B = h B_c (control explicit).  E is an M-matrix for
any h, so E^{-1} is nonnegative and one sparse factorization serves
every forward step and every transposed solve of the backward recursion.
The explicit control part keeps unit masses nonnegative exactly when no
cell can be drained below zero in one step; the largest such step is
reported as positivity_h_max.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import product
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import AssemblyError, LinearSolveFailure, PositivityViolation, StepTooLarge
from .expr import eval_expr
from .grid import GridDiscretization
from .model import ProblemSpec

__all__ = [
    "ControlOperator", "DiscreteSystem",
    "assemble_generator", "discretize_time", "build_discrete_system",
    "apply_step", "positivity_safe_step",
]


class ControlOperator(NamedTuple):
    """Transport pair for one control channel (positive / negative part)."""

    plus: sp.csr_matrix
    minus: sp.csr_matrix

    @property
    def nnz(self) -> int:
        return self.plus.nnz + self.minus.nnz

    def apply(self, v):
        """B(v) = B+ max(v,0) + B- max(-v,0) for a signed control-mass vector."""
        v = np.asarray(v, dtype=float)
        return self.plus @ np.maximum(v, 0.0) + self.minus @ np.maximum(-v, 0.0)

    def scaled(self, c: float) -> "ControlOperator":
        return ControlOperator((c * self.plus).tocsr(), (c * self.minus).tocsr())


def _face_index_arrays(g: GridDiscretization, axis: int):
    """Flat indices of the lower/upper cells of every interior face on an axis."""
    multis = np.unravel_index(np.arange(g.m), tuple(g.counts))
    mask = multis[axis] < g.counts[axis] - 1
    lo = np.arange(g.m)[mask]
    hi = lo + g.strides[axis]
    return lo, hi


def _bernoulli(z):
    """B(z) = z / (exp(z) - 1), stable near zero."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-5
    zs = z[small]
    out[small] = 1.0 - zs / 2.0 + zs * zs / 12.0
    zb = z[~small]
    out[~small] = zb / np.expm1(zb)
    return out


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add_face(self, lo, hi, coef_lo, coef_hi):
        # flux (lo -> hi) = coef_lo*state_lo - coef_hi*state_hi; the paired
        # +/- entries per column make the column sums vanish identically
        self.rows.append(lo); self.cols.append(lo); self.vals.append(-coef_lo)
        self.rows.append(hi); self.cols.append(lo); self.vals.append(coef_lo)
        self.rows.append(hi); self.cols.append(hi); self.vals.append(-coef_hi)
        self.rows.append(lo); self.cols.append(hi); self.vals.append(coef_hi)

    def build(self, m):
        if not self.rows:
            return sp.csr_matrix((m, m))
        mat = sp.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(m, m),
        ).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat


def assemble_generator(spec: ProblemSpec, g: GridDiscretization, flux: str = "upwind",
                       centering_margin: float = 0.9):
    """Assemble (A_c, [B_c^(1), ..., B_c^(n_u)]) in mass representation.

    flux selects the drift discretization of A_c: "upwind" (plain
    first-order) or "sg" (Scharfetter-Gummel).  Each B_c^(j) is a
    ControlOperator pair.  Per face, the control flux blends the
    second-order centered stencil with the sign-split upwind pair: the
    centered share is the largest fraction theta for which the face's
    diffusive coefficient still dominates the worst-case control
    coupling (times ``centering_margin``), so the closed-loop generator
    stays Metzler for every feedback inside the box.  On grids that
    resolve the control transport theta is 1 everywhere and the control
    discretization is fully centered; on coarse grids it degrades
    gracefully to monotone upwinding instead of going unstable.  A
    margin above 1 deliberately exceeds the monotone budget (up to the
    fully centered stencil); backward sweeps over short horizons remain
    usable that way, but positivity and ergodic-iteration stability are
    no longer guaranteed.

    Column sums of every operator vanish by construction (conservative
    flux form); boundary faces carry no flux (reflecting boundary).
    """
    if flux not in ("upwind", "sg"):
        raise AssemblyError(f"unknown flux scheme '{flux}'")
    if centering_margin < 0.0:
        raise AssemblyError("centering_margin must be nonnegative")
    w = g.weights
    eps = spec.epsilon
    u_bound = np.maximum(np.abs(spec.u_lower), np.abs(spec.u_upper))

    acc_a = _Triplets()
    acc_bp = [_Triplets() for _ in range(spec.n_u)]
    acc_bm = [_Triplets() for _ in range(spec.n_u)]

    for axis in range(g.dim):
        lo, hi = _face_index_arrays(g, axis)
        if lo.size == 0:
            continue
        h_a = g.spacing[axis]
        x_face = 0.5 * (g.nodes[lo] + g.nodes[hi])
        # face area = product of perpendicular dual-cell widths (shared by both cells)
        axis_pos = np.unravel_index(lo, tuple(g.counts))[axis]
        S = w[lo] / g.axis_weights[axis][axis_pos]

        v = np.broadcast_to(np.asarray(eval_expr(spec.f[axis], x_face), dtype=float), lo.shape)
        if not np.all(np.isfinite(v)):
            raise AssemblyError(f"drift component {axis + 1} not finite at a face midpoint")

        # diffusive off-diagonal budget per face, in velocity units
        if flux == "upwind":
            a_lo = eps / h_a + np.maximum(v, 0.0)
            a_hi = eps / h_a + np.maximum(-v, 0.0)
        else:  # Scharfetter-Gummel
            z = v * h_a / eps
            a_lo = (eps / h_a) * _bernoulli(-z)
            a_hi = (eps / h_a) * _bernoulli(z)
        acc_a.add_face(lo, hi, S * a_lo / w[lo], S * a_hi / w[hi])

        gvals = []
        s_half = np.zeros(lo.shape)
        for j in range(spec.n_u):
            gv = np.broadcast_to(
                np.asarray(eval_expr(spec.G[axis][j], x_face), dtype=float), lo.shape)
            if not np.all(np.isfinite(gv)):
                raise AssemblyError(f"input map ({axis + 1},{j + 1}) not finite at a face midpoint")
            gvals.append(gv)
            s_half = s_half + 0.5 * np.abs(gv) * u_bound[j]

        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.where(
                s_half > 0.0,
                np.minimum(1.0, centering_margin * np.minimum(a_lo, a_hi) / s_half),
                1.0,
            )

        for j in range(spec.n_u):
            gv = gvals[j]
            if not np.any(gv):
                continue
            gp = np.maximum(gv, 0.0)
            gm = np.maximum(-gv, 0.0)
            up_w = (1.0 - theta) * S
            # upwind pair: positive control part rides +G, negative part -G
            acc_bp[j].add_face(lo, hi, up_w * gp / w[lo], up_w * gm / w[hi])
            acc_bm[j].add_face(lo, hi, up_w * gm / w[lo], up_w * gp / w[hi])
            # centered share acts on the signed flow: B- takes the mirror image
            cen = 0.5 * theta * S * gv
            acc_bp[j].add_face(lo, hi, cen / w[lo], -cen / w[hi])
            acc_bm[j].add_face(lo, hi, -cen / w[lo], cen / w[hi])

    A_c = acc_a.build(g.m)
    B_c = [ControlOperator(acc_bp[j].build(g.m), acc_bm[j].build(g.m))
           for j in range(spec.n_u)]
    return A_c, B_c


@dataclass
class DiscreteSystem:
    """Discrete-time triple (E, A, B) with cached factorization of E.

    representation is "mass": state entries are node probabilities.
    A equals the identity under the semi-implicit scheme; it is stored
    explicitly so the conservation identities can be checked as written.
    """

    E: sp.csc_matrix
    A: sp.csr_matrix
    B: tuple                      # h-scaled ControlOperator per channel
    Ac: sp.csr_matrix
    Bc: tuple                     # continuous-time ControlOperator per channel
    h: float
    grid: GridDiscretization
    representation: str = "mass"
    positivity_h_max: float = np.inf
    conservation_residual: float = 0.0
    _lu: object = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.E.shape[0]

    @property
    def n_u(self) -> int:
        return len(self.B)

    def solve(self, b):
        """x with E x = b."""
        return self._lu.solve(np.asarray(b, dtype=float))

    def solve_T(self, b):
        """y with E' y = b (shares the cached factorization)."""
        return self._lu.solve(np.asarray(b, dtype=float), trans="T")

    def control_drain_rates(self, u_lower, u_upper):
        """Worst per-node drain rate of the explicit control transport."""
        drain = np.zeros(self.m)
        for j, bc in enumerate(self.Bc):
            dp = bc.plus.diagonal()    # <= 0
            dm = bc.minus.diagonal()   # <= 0
            at_hi = dp * max(u_upper[j], 0.0) + dm * max(-u_upper[j], 0.0)
            at_lo = dp * max(u_lower[j], 0.0) + dm * max(-u_lower[j], 0.0)
            drain += np.minimum(at_hi, at_lo)
        return drain


def discretize_time(A_c, B_c, h: float, grid: GridDiscretization,
                    u_lower=None, u_upper=None, positivity: str = "warn") -> DiscreteSystem:
    """Semi-implicit time discretization: E = I - h A_c, A = I, B = h B_c.

    One explicit control application maps unit masses to nonnegative
    vectors iff no cell can be drained below zero, i.e. iff h stays
    below 1/(worst drain rate) over nodes and control-box vertices; that
    bound is positivity_h_max.  positivity="error" raises StepTooLarge
    beyond it, "warn" (default) warns, "off" skips the check.  E itself
    is an M-matrix for every h, so the uncontrolled step is positive
    unconditionally.
    """
    if h <= 0:
        raise StepTooLarge(h, np.inf)
    m = A_c.shape[0]
    E = (sp.identity(m, format="csc") - h * A_c.tocsc()).tocsc()
    A = sp.identity(m, format="csr")
    B = tuple(bc.scaled(h) for bc in B_c)

    try:
        lu = splu(E)
    except RuntimeError as exc:
        raise LinearSolveFailure(f"factorization of E failed: {exc}") from exc

    sys = DiscreteSystem(E=E, A=A, B=B, Ac=A_c.tocsr(), Bc=tuple(B_c),
                         h=h, grid=grid, _lu=lu)

    if positivity != "off" and u_lower is not None and any(bc.nnz for bc in B_c):
        drain = sys.control_drain_rates(np.asarray(u_lower, float), np.asarray(u_upper, float))
        worst = -drain.min()
        if worst > 0:
            sys.positivity_h_max = 1.0 / worst
            if h > sys.positivity_h_max:
                if positivity == "error":
                    raise StepTooLarge(h, sys.positivity_h_max)
                warnings.warn(
                    f"explicit control transport can drain cells negative at h={h:g} "
                    f"(admissible h <= {sys.positivity_h_max:g}); forward rollouts "
                    f"may need a smaller step",
                    stacklevel=2,
                )

    # conservation: 1'E^{-1}A = 1'  and  1'E^{-1}B = 0
    ones = np.ones(m)
    r1 = np.max(np.abs(sys.solve_T(ones) - ones))
    r2 = 0.0
    for bc in B:
        for mat in (bc.plus, bc.minus):
            if mat.nnz:
                r2 = max(r2, np.max(np.abs(np.asarray(mat.sum(axis=0)).ravel())))
    sys.conservation_residual = float(max(r1, r2))
    if sys.conservation_residual > 1e-10:
        raise AssemblyError(
            f"conservation residual {sys.conservation_residual:.2e} exceeds 1e-10")
    return sys


def build_discrete_system(spec: ProblemSpec, g: GridDiscretization, h: float,
                          flux: str = "upwind", positivity: str = "warn",
                          centering_margin: float = 0.9) -> DiscreteSystem:
    A_c, B_c = assemble_generator(spec, g, flux=flux, centering_margin=centering_margin)
    return discretize_time(A_c, B_c, h, g, spec.u_lower, spec.u_upper, positivity=positivity)


def _delta_positivity_holds(sys: DiscreteSystem, u_lower, u_upper,
                            sample: int, tol: float, rng) -> bool:
    """Empirical one-step positivity on sampled unit masses at box vertices."""
    idx = np.arange(sys.m) if sys.m <= sample else rng.choice(sys.m, size=sample, replace=False)
    P = np.zeros((sys.m, len(idx)))
    P[idx, np.arange(len(idx))] = 1.0
    for u in _vertex_controls(u_lower, u_upper):
        rhs = P.copy()
        for j, bc in enumerate(sys.B):
            if bc.nnz:
                rhs += bc.apply(u[j] * P)
        out = sys._lu.solve(rhs)
        if out.min() < -tol:
            return False
    return True


def _vertex_controls(u_lower, u_upper):
    return [np.array(vtx, dtype=float) for vtx in product(*zip(u_lower, u_upper))]


def positivity_safe_step(spec: ProblemSpec, g: GridDiscretization, flux: str = "upwind",
                         sample: int = 128, tol: float = 1e-12, seed: int = 0) -> float:
    """Largest h at which one forward step keeps sampled unit masses nonnegative.

    Bisects on an empirical check: unit masses at (up to) ``sample``
    nodes are stepped once under every vertex of the control box and the
    minimum entry is compared against -tol.  Used to pick admissible
    steps for forward rollouts.
    """
    A_c, B_c = assemble_generator(spec, g, flux=flux)
    if not any(bc.nnz for bc in B_c):
        return np.inf
    rng = np.random.default_rng(seed)

    def ok(h):
        sys = discretize_time(A_c, B_c, h, g, positivity="off")
        return _delta_positivity_holds(sys, spec.u_lower, spec.u_upper, sample, tol, rng)

    h_lo, h_hi = 0.0, 1e-4
    while ok(h_hi) and h_hi < 1e4:
        h_lo, h_hi = h_hi, 4.0 * h_hi
    if h_hi >= 1e4:
        return np.inf
    for _ in range(30):
        mid = 0.5 * (h_lo + h_hi)
        if ok(mid):
            h_lo = mid
        else:
            h_hi = mid
    return h_lo


def dump_coordinate_format(sys: DiscreteSystem, path) -> None:
    """Debug dump of E, A, B as (matrix, row, col, value) text lines."""
    def emit(fh, tag, mat):
        coo = mat.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{tag} {int(r)} {int(c)} {float(v)!r}\n")

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# discrete system: m={sys.m} n_u={sys.n_u} h={sys.h!r}\n")
        emit(fh, "E", sys.E)
        emit(fh, "A", sys.A)
        for j, bc in enumerate(sys.B):
            emit(fh, f"B{j + 1}+", bc.plus)
            emit(fh, f"B{j + 1}-", bc.minus)


def apply_step(sys: DiscreteSystem, p, v, mass_tol: float = 1e-10, neg_tol: float = 1e-12):
    """One forward step: solve E p' = A p + sum_j B^(j)(v_j).

    v has shape (m, n_u) and must satisfy the per-node cone constraint
    v_ij in p_i * U_j.  Mass conservation is asserted to mass_tol;
    negative entries above -neg_tol are clipped to zero, anything worse
    raises PositivityViolation.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    rhs = sys.A @ p
    for j, bc in enumerate(sys.B):
        if bc.nnz:
            rhs += bc.apply(v[:, j])
    p_next = sys.solve(rhs)
    if not np.all(np.isfinite(p_next)):
        raise LinearSolveFailure("non-finite forward step")
    drift = abs(p_next.sum() - p.sum())
    if drift > mass_tol:
        raise LinearSolveFailure(f"mass drift {drift:.2e} exceeds {mass_tol:g}")
    neg = p_next.min()
    if neg < -neg_tol:
        raise PositivityViolation(
            f"forward step produced negative mass {neg:.2e} (tolerance -{neg_tol:g})")
    np.clip(p_next, 0.0, None, out=p_next)
    return p_next
