"""Closed-form Fenchel conjugate of the stage cost and the Hamiltonian.

For the separable cost l(x,u) = q(x) + 1/2 u'Ru with diagonal positive R
and a box U, the dual cost

    d(x, lam) = min_{u in U} { l(x,u) + lam'u }

has the explicit minimizer u*_j = clamp(-lam_j / R_j, U_j), making d and
the node-wise dual perspective map cheap enough to evaluate at every grid
node in every backward step.  All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import eval_expr
from .grid import GridDiscretization
from .model import ProblemSpec

__all__ = ["DualCost", "dual_argmin", "dual_perspective", "hamiltonian"]


@dataclass
class DualCost:
    """Stage-cost conjugate bound to a grid (caches q at the nodes)."""

    spec: ProblemSpec
    grid: GridDiscretization
    q_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.q_nodes = np.asarray(eval_expr(self.spec.ell_q, self.grid.nodes), dtype=float)
        if self.q_nodes.ndim == 0:  # constant q
            self.q_nodes = np.full(self.grid.m, float(self.q_nodes))

    def argmin_nodes(self, lam):
        """Vectorized minimizer and dual value at every node.

        lam has shape (m, n_u); returns (u_star (m, n_u), d (m,)).
        """
        lam = np.asarray(lam, dtype=float)
        sp = self.spec
        u_star = np.clip(-lam / sp.ell_R, sp.u_lower, sp.u_upper)
        d = self.q_nodes + np.sum((0.5 * sp.ell_R * u_star + lam) * u_star, axis=-1)
        return u_star, d

    def argmin_nodes_signed(self, lam_plus, lam_minus):
        """Minimizer of l(x,u) + lam_plus'max(u,0) + lam_minus'max(-u,0).

        This is the per-node stage term of the sign-split control
        transport: the positive and negative control parts carry their
        own dual prices.  Channels stay separable, so each reduces to
        two clamped quadratics (one per sign branch); with
        lam_minus = -lam_plus it coincides with argmin_nodes.  Returns
        (u_star (m, n_u), d (m,)).
        """
        lam_p = np.asarray(lam_plus, dtype=float)
        lam_m = np.asarray(lam_minus, dtype=float)
        sp = self.spec
        u_star = np.empty_like(lam_p)
        total = np.zeros(lam_p.shape[0])
        for j in range(sp.n_u):
            R = sp.ell_R[j]
            lo, hi = sp.u_lower[j], sp.u_upper[j]
            lp, lm = lam_p[:, j], lam_m[:, j]
            if hi >= 0.0:
                u_pos = np.clip(-lp / R, max(lo, 0.0), hi)
                phi_pos = (0.5 * R * u_pos + lp) * u_pos
            else:
                u_pos = np.zeros_like(lp)
                phi_pos = np.full_like(lp, np.inf)
            if lo <= 0.0:
                u_neg = np.clip(lm / R, lo, min(hi, 0.0))
                phi_neg = (0.5 * R * u_neg - lm) * u_neg
            else:
                u_neg = np.zeros_like(lm)
                phi_neg = np.full_like(lm, np.inf)
            take_pos = phi_pos <= phi_neg
            u_star[:, j] = np.where(take_pos, u_pos, u_neg)
            total += np.where(take_pos, phi_pos, phi_neg)
        return u_star, self.q_nodes + total


def dual_argmin(spec: ProblemSpec, x, lam):
    """Pointwise conjugate: minimizer u*(x, lam) and value d(x, lam).

    x is a single point (n_x,) or batch (..., n_x); lam broadcasts with
    trailing dimension n_u.
    """
    lam = np.asarray(lam, dtype=float)
    u_star = np.clip(-lam / spec.ell_R, spec.u_lower, spec.u_upper)
    q = eval_expr(spec.ell_q, np.asarray(x, dtype=float))
    d = q + np.sum((0.5 * spec.ell_R * u_star + lam) * u_star, axis=-1)
    return u_star, d


def dual_perspective(dc: DualCost, g: GridDiscretization, lam, return_minimizers=False):
    """Quadrature-weighted dual cost in density coordinates.

    Component i is w_i * d(x_i, lam_i / w_i) where lam is grouped per
    node, shape (m, n_u) (a flat vector of length m*n_u in node-major
    layout is accepted).
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        lam = lam.reshape(g.m, dc.spec.n_u)
    w = g.weights[:, None]
    u_star, d = dc.argmin_nodes(lam / w)
    values = g.weights * d
    if return_minimizers:
        return values, u_star
    return values


def hamiltonian(spec: ProblemSpec, x, grad_v):
    """H(x, grad V) = grad_V' f(x) + d(x, G(x)' grad_V)."""
    x = np.asarray(x, dtype=float)
    grad_v = np.asarray(grad_v, dtype=float)
    fx = spec.drift_at(x)
    Gx = spec.input_map_at(x)
    lam = np.einsum("...ij,...i->...j", Gx, grad_v)
    _, d = dual_argmin(spec, x, lam)
    return np.sum(grad_v * fx, axis=-1) + d
