"""Dual representation of smooth maps: Taylor table plus optional grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol

import numpy as np

from .grid import GridRep
from .poly import TaylorRep, multi_indices

__all__ = ["SmoothMapRep", "RadialCutoff", "fit_taylor"]


class RadialCutoff(Protocol):
    """What a map needs from a cutoff: radii and the transition polynomial."""

    inner_radius: float
    outer_radius: float

    def transition_poly(self, dim: int) -> TaylorRep: ...


@dataclass(frozen=True, eq=False)
class SmoothMapRep:
    """A C^n map ``R^d -> R^p``.

    Evaluation uses the grid when one is present.  Otherwise the Taylor table
    is used, multiplied by ``cutoff`` when the map is localized.  A localized
    polynomial is piecewise polynomial (the bump is a polynomial in the
    squared radius), so its derivatives are evaluated exactly.

    ``trust_radius`` bounds the ball where the Taylor table describes the
    map; it is infinite for exact polynomial input.
    """

    taylor: TaylorRep
    grid: GridRep | None = None
    cutoff: RadialCutoff | None = None
    trust_radius: float = math.inf
    norm_cache: dict = field(default_factory=dict)
    label: str = ""

    # ------------------------------------------------------------------ shape
    @property
    def domain_dim(self) -> int:
        return self.taylor.domain_dim

    @property
    def codomain_dim(self) -> int:
        return self.taylor.codomain_dim

    @property
    def is_polynomial(self) -> bool:
        return self.grid is None and self.cutoff is None

    @classmethod
    def polynomial(cls, table: TaylorRep, label: str = "") -> SmoothMapRep:
        return cls(table, label=label)

    @classmethod
    def zero(cls, dim_in: int, dim_out: int, cap: int = 2) -> SmoothMapRep:
        return cls(TaylorRep.zeros(dim_in, dim_out, cap))

    def localized(self, cutoff: RadialCutoff) -> SmoothMapRep:
        return SmoothMapRep(self.taylor, None, cutoff, self.trust_radius, {}, self.label)

    def with_grid(self, grid: GridRep | None) -> SmoothMapRep:
        return SmoothMapRep(self.taylor, grid, self.cutoff, self.trust_radius, {}, self.label)

    @cached_property
    def _transition(self) -> TaylorRep:
        xi = self.cutoff.transition_poly(self.domain_dim)
        return self.taylor.times_scalar(xi)

    def _regions(self, pts: np.ndarray):
        rad = np.linalg.norm(pts, axis=1)
        inner = rad <= self.cutoff.inner_radius
        outer = rad >= self.cutoff.outer_radius
        return inner, ~(inner | outer)

    # ------------------------------------------------------------- evaluation
    def derivative(self, pts, m: int) -> np.ndarray:
        """``D^m`` at points ``(n, d)``; shape ``(n, p) + (d,) * m``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.grid is not None:
            return self.grid.derivative(pts, m)
        if self.cutoff is None:
            return self.taylor.derivative(pts, m)
        out = np.zeros((pts.shape[0], self.codomain_dim) + (self.domain_dim,) * m)
        inner, trans = self._regions(pts)
        if inner.any():
            out[inner] = self.taylor.derivative(pts[inner], m)
        if trans.any():
            out[trans] = self._transition.derivative(pts[trans], m)
        return out

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        out = self.derivative(np.atleast_2d(pts), 0)
        return out[0] if single else out

    def jet(self, pts, m: int) -> list[np.ndarray]:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return [self.derivative(pts, k) for k in range(m + 1)]

    # ----------------------------------------------------------- consistency
    def cross_check(self, radius: float | None = None, rel_tol: float = 1e-6) -> float:
        """Max relative gap between grid and Taylor at nodes inside the trust radius."""
        if self.grid is None:
            return 0.0
        radius = self.trust_radius if radius is None else radius
        nodes = self.grid.nodes
        sel = np.linalg.norm(nodes, axis=1) <= radius
        if not sel.any():
            return 0.0
        g = self.grid.flat_values[sel]
        t = self.taylor(nodes[sel])
        scale = max(np.abs(g).max(), np.finfo(float).tiny)
        return float(np.abs(g - t).max() / scale)


def fit_taylor(
    grid: GridRep,
    degree: int,
    radius: float,
    lowest: int = 2,
    cap: int | None = None,
) -> TaylorRep:
    """Least-squares Taylor table fitted to grid values on a ball.

    Coefficients below ``lowest`` are pinned to exactly zero, which keeps
    ``h(0) = 0`` and ``Dh(0) = 0`` exact in the table.  Monomials are scaled
    by ``radius`` before the solve for conditioning.
    """
    d, p = grid.dim, grid.codomain_dim
    cap = degree if cap is None else cap
    nodes = grid.nodes
    sel = np.linalg.norm(nodes, axis=1) <= radius
    pts = nodes[sel] / radius
    basis = [a for k in range(lowest, degree + 1) for a in multi_indices(d, k)]
    out = TaylorRep.zeros(d, p, cap)
    if not basis or p == 0:
        return TaylorRep(out.coeffs, exact=False)
    V = np.stack([np.prod(pts ** np.asarray(a), axis=1) for a in basis], axis=1)
    sol, *_ = np.linalg.lstsq(V, grid.flat_values[sel], rcond=None)
    c = np.zeros(out.coeffs.shape)
    for row, a in enumerate(basis):
        c[a] = sol[row] / radius ** sum(a)
    return TaylorRep(c, exact=False)
