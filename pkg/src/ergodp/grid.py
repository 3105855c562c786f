"""Tensor-product grids with trapezoidal quadrature weights.

Nodes enumerate the lattice in row-major (C) order: the last axis is
fastest.  The per-node weight is the tensor product of 1-D trapezoid
weights, so boundary nodes carry half the interior weight per extremal
axis and the weights sum to the box volume exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGrid, OutOfDomain

__all__ = ["GridDiscretization", "build_grid", "interpolate"]


@dataclass
class GridDiscretization:
    lower: np.ndarray           # (d,)
    upper: np.ndarray           # (d,)
    counts: np.ndarray          # (d,) nodes per axis, each >= 3
    spacing: np.ndarray         # (d,) h_a = (upper-lower)/(counts-1)
    axes: tuple[np.ndarray, ...]          # per-axis coordinates
    axis_weights: tuple[np.ndarray, ...]  # per-axis trapezoid weights
    nodes: np.ndarray           # (m, d) coordinates, row-major order
    weights: np.ndarray         # (m,) quadrature weights
    strides: np.ndarray = field(init=False)  # flat-index stride per axis

    def __post_init__(self):
        strides = np.ones(len(self.counts), dtype=np.int64)
        for a in range(len(self.counts) - 2, -1, -1):
            strides[a] = strides[a + 1] * self.counts[a + 1]
        self.strides = strides

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def m(self) -> int:
        return int(np.prod(self.counts))

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def flat_to_multi(self, i):
        return np.unravel_index(i, tuple(self.counts))

    def multi_to_flat(self, idx):
        return np.ravel_multi_index(tuple(np.asarray(idx)), tuple(self.counts))

    def center_node(self) -> int:
        """Flat index of the node nearest the box center."""
        return int(self.multi_to_flat([(c - 1) // 2 for c in self.counts]))

    def boundary_mask(self) -> np.ndarray:
        """True for nodes that lie on at least one face."""
        mask = np.zeros(self.m, dtype=bool)
        multis = np.unravel_index(np.arange(self.m), tuple(self.counts))
        for a, idx in enumerate(multis):
            mask |= (idx == 0) | (idx == self.counts[a] - 1)
        return mask


def build_grid(lower, upper, counts) -> GridDiscretization:
    """Equidistant tensor grid on the box with trapezoidal weights."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
    if counts.shape != lower.shape or lower.shape != upper.shape:
        raise InvalidGrid("lower, upper and counts must have matching lengths")
    if np.any(counts < 3):
        raise InvalidGrid(f"need at least 3 nodes per axis, got {counts.tolist()}")
    if np.any(lower >= upper):
        raise InvalidGrid("box must have lower < upper per axis")

    spacing = (upper - lower) / (counts - 1)
    axes = tuple(np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, counts))
    axis_weights = []
    for h, n in zip(spacing, counts):
        w = np.full(n, h)
        w[0] *= 0.5
        w[-1] *= 0.5
        axis_weights.append(w)
    axis_weights = tuple(axis_weights)

    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([mm.ravel(order="C") for mm in mesh], axis=-1)
    wmesh = np.meshgrid(*axis_weights, indexing="ij")
    weights = np.ones(nodes.shape[0])
    for wm in wmesh:
        weights = weights * wm.ravel(order="C")

    return GridDiscretization(lower, upper, counts, spacing, axes, axis_weights, nodes, weights)


def interpolate(g: GridDiscretization,            # noqa: C901 - plain stencil code
                field_values, x, clip_tol: float = 1e-12):
    """Multilinear interpolation of per-node values at point(s) x.

    x may be a single point (d,) or a batch (N, d).  Points within
    ``clip_tol`` (relative to the axis span) outside the box are clamped;
    anything farther out raises OutOfDomain.  The result is exact at the
    nodes and always a convex combination of the surrounding values.
    """
    field_values = np.asarray(field_values, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[-1] != g.dim:
        raise OutOfDomain(f"point dimension {pts.shape[-1]} != grid dimension {g.dim}")

    span = g.upper - g.lower
    below = g.lower - pts
    above = pts - g.upper
    if np.any(below > clip_tol * span) or np.any(above > clip_tol * span):
        raise OutOfDomain("point outside the domain box")
    pts = np.clip(pts, g.lower, g.upper)

    # cell index and barycentric coordinate along each axis
    rel = (pts - g.lower) / g.spacing
    cell = np.minimum(rel.astype(np.int64), g.counts - 2)
    frac = rel - cell

    flat_base = cell @ g.strides
    result = np.zeros(pts.shape[0], dtype=float)
    for corner in range(2 ** g.dim):
        offset = np.array([(corner >> (g.dim - 1 - a)) & 1 for a in range(g.dim)])
        weight = np.ones(pts.shape[0])
        for a in range(g.dim):
            weight = weight * (frac[:, a] if offset[a] else 1.0 - frac[:, a])
        idx = flat_base + offset @ g.strides
        result += weight * field_values[idx]
    return float(result[0]) if single else result
