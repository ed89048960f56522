"""Norms, composition and Faa di Bruno derivatives of :class:`SmoothMapRep`."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainEscape, InsufficientSmoothness
from .grid import MAX_FD_ORDER, GridRep
from .maps import SmoothMapRep
from .tensors import SymmetricTensor, fdb_from_jets, tensor_opnorm

__all__ = [
    "NormEstimate",
    "cn_norm",
    "sup_derivative",
    "ball_samples",
    "compose",
    "faa_di_bruno",
    "partition_remainder",
    "jet_of_composition",
]


@dataclass(frozen=True)
class NormEstimate:
    """A norm value with its provenance.

    ``kind`` is ``"upper-bound"`` for the coefficient majorant and
    ``"estimate"`` for sampled grids.  Neither is interval-rigorous.
    """

    value: float
    kind: str

    def __float__(self) -> float:
        return self.value


def ball_samples(dim: int, radius: float, per_axis: int | None = None) -> np.ndarray:
    """Tensor grid points inside the closed Euclidean ball (boundary included in 1-D)."""
    if per_axis is None:
        per_axis = {1: 2001, 2: 161, 3: 41}.get(dim, 15)
    ax = np.linspace(-radius, radius, per_axis)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


def sup_derivative(f: SmoothMapRep, m: int, radius: float | None = None) -> NormEstimate:
    """Estimated ``sup |D^m f|`` (over ``radius`` ball, or the whole box/support)."""
    if f.grid is not None:
        if m > MAX_FD_ORDER:
            raise InsufficientSmoothness(f"order {m} exceeds the finite-difference support {MAX_FD_ORDER}")
        tens = f.grid.node_tensor(m)
        norms = tensor_opnorm(tens)
        if radius is not None:
            norms = norms[np.linalg.norm(f.grid.nodes, axis=1) <= radius * (1 + 1e-12)]
        return NormEstimate(float(norms.max(initial=0.0)), "estimate")
    if f.cutoff is None:
        if radius is None:
            radius = f.trust_radius
        if not math.isfinite(radius):
            raise ValueError("a polynomial needs a finite radius for its sup norm")
        return NormEstimate(f.taylor.majorant(radius, m), "upper-bound")
    rad = f.cutoff.outer_radius if radius is None else radius
    pts = ball_samples(f.domain_dim, rad)
    return NormEstimate(float(tensor_opnorm(f.derivative(pts, m)).max(initial=0.0)), "estimate")


def cn_norm(f: SmoothMapRep, k: int, radius: float | None = None) -> NormEstimate:
    """``max_{0<=m<=k} sup |D^m f|`` with the provenance of the route taken."""
    vals = [sup_derivative(f, m, radius) for m in range(k + 1)]
    kind = "upper-bound" if all(v.kind == "upper-bound" for v in vals) else "estimate"
    out = NormEstimate(max(v.value for v in vals), kind)
    f.norm_cache[(k, radius)] = out
    return out


def _effective_trust(f: SmoothMapRep) -> float:
    r = f.trust_radius
    if f.cutoff is not None:
        r = min(r, f.cutoff.inner_radius)
    if f.grid is not None and not math.isfinite(r):
        r = float(np.min(np.abs(np.concatenate([f.grid.lower, f.grid.upper]))))
    return r


def compose(f1: SmoothMapRep, f2: SmoothMapRep, degree_cap: int) -> SmoothMapRep:
    """``f1 o f2`` as a Taylor table through ``degree_cap`` plus pointwise grid values."""
    if f2.codomain_dim != f1.domain_dim:
        raise ValueError("codomain of the inner map does not match the domain of the outer map")
    c0 = f2.taylor.coefficient((0,) * f2.domain_dim)
    trust = _effective_trust(f1)
    if np.linalg.norm(c0) > trust:
        raise DomainEscape(f"inner map sends 0 to {c0}, outside the outer map's trust radius {trust}")
    table = f1.taylor.compose(f2.taylor, degree_cap)
    grid = None
    cache: dict = {}
    if f2.grid is not None:
        inner_vals = f2.grid.flat_values
        if f1.grid is not None:
            outside = ~f1.grid.contains(inner_vals)
            frac = float(outside.mean())
            if frac > 0.10:
                raise DomainEscape(f"{frac:.0%} of grid nodes map outside the outer grid box")
            cache["invalid_nodes"] = np.flatnonzero(outside)
        grid = f2.grid.with_values(f1(inner_vals))
    trust_out = min(f2.trust_radius, trust)
    if f1.is_polynomial and f2.is_polynomial:
        trust_out = math.inf
    return SmoothMapRep(table, grid, None, trust_out, cache, label=f"{f1.label}o{f2.label}")


def jet_of_composition(f1: SmoothMapRep, f2: SmoothMapRep, pts: np.ndarray, m: int) -> list[np.ndarray]:
    """Derivatives ``D^k (f1 o f2)`` for ``k <= m`` at points, by the partition formula."""
    pts = np.atleast_2d(pts)
    inner = f2.jet(pts, m)
    outer = f1.jet(inner[0], m)
    out = [outer[0]]
    for k in range(1, m + 1):
        out.append(fdb_from_jets(outer, inner, k))
    return out


def _wrap(arr: np.ndarray, single: bool):
    return SymmetricTensor(arr[0]) if single else arr


def faa_di_bruno(f1: SmoothMapRep, f2: SmoothMapRep, m: int, x, route: str = "auto"):
    """``D^m (f1 o f2)(x)``.

    For polynomial inputs the composition is expanded exactly on Taylor
    tables and differentiated; otherwise (or with ``route="partition"``) the
    set-partition sum over pointwise jets is used.  A single point returns a
    :class:`SymmetricTensor`; a batch ``(n, d)`` returns the dense array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if route == "auto":
        route = "taylor" if (f1.is_polynomial and f2.is_polynomial) else "partition"
    if route == "taylor":
        table = f1.taylor.compose(f2.taylor)
        return _wrap(table.derivative(pts, m), single)
    if route != "partition":
        raise ValueError(f"unknown route {route!r}")
    if m > MAX_FD_ORDER and (f1.grid is not None or f2.grid is not None):
        raise InsufficientSmoothness(f"order {m} exceeds grid derivative support")
    inner = f2.jet(pts, m)
    outer = f1.jet(inner[0], m)
    return _wrap(fdb_from_jets(outer, inner, m), single)


def extremal_terms(f1: SmoothMapRep, f2: SmoothMapRep, m: int, pts: np.ndarray) -> np.ndarray:
    """``Df1(f2) D^m f2 + D^m f1(f2) (Df2)^{(x)m}`` at points."""
    inner = f2.jet(pts, m)
    outer = f1.jet(inner[0], m)
    one = fdb_from_jets(outer, inner, m, min_blocks=1, max_blocks=1)
    if m == 1:
        return one
    return one + fdb_from_jets(outer, inner, m, min_blocks=m, max_blocks=m)


def partition_remainder(f1: SmoothMapRep, f2: SmoothMapRep, m: int, x, route: str = "auto"):
    """``P_m(f1, f2)(x)``: the derivative of the composition minus the two extremal terms.

    Identically zero for ``m = 2`` (the sum over partitions with
    ``2 <= blocks <= m-1`` is empty).
    """
    if m < 2:
        raise ValueError("the partition remainder is defined for m >= 2")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    shape = (pts.shape[0], f1.codomain_dim) + (f2.domain_dim,) * m
    if m == 2:
        return _wrap(np.zeros(shape), single)
    if route == "auto":
        route = "taylor" if (f1.is_polynomial and f2.is_polynomial) else "partition"
    if route == "taylor":
        full = f1.taylor.compose(f2.taylor).derivative(pts, m)
        return _wrap(full - extremal_terms(f1, f2, m, pts), single)
    inner = f2.jet(pts, m)
    outer = f1.jet(inner[0], m)
    return _wrap(fdb_from_jets(outer, inner, m, min_blocks=2, max_blocks=m - 1), single)


def grid_of(f: SmoothMapRep, lower, upper, resolution, stencil_order: int = 4) -> GridRep:
    """Sample any representation onto a new grid."""
    return GridRep.on_box(lower, upper, resolution, f, stencil_order)
