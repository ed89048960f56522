"""Truncated multivariate Taylor tables.

A :class:`TaylorRep` stores the coefficients of a map ``R^d -> R^p`` as a
dense array of shape ``(cap + 1,) * d + (p,)``.  Entry ``coeffs[alpha]`` is
the coefficient vector of the monomial ``x**alpha``.  Entries with total
degree above ``cap`` are kept at zero, so arithmetic on the dense array is
ordinary n-dimensional convolution followed by a total-degree mask.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import convolve

__all__ = ["TaylorRep", "multi_indices", "degree_mask"]


@lru_cache(maxsize=None)
def degree_mask(dim: int, cap: int) -> np.ndarray:
    """Boolean array, True where the total degree of the index is <= cap."""
    if dim == 0:
        return np.ones((), dtype=bool)
    grids = np.indices((cap + 1,) * dim).sum(axis=0)
    mask = grids <= cap
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def _total_degree(dim: int, cap: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((), dtype=int)
    out = np.indices((cap + 1,) * dim).sum(axis=0)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def multi_indices(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices of length ``dim`` with total degree ``degree``.

    The order is lexicographically decreasing, which puts ``(d, 0, ..., 0)``
    first; it is the fixed monomial basis used by the homological solver.
    """
    if dim == 0:
        return ((),) if degree == 0 else ()
    if dim == 1:
        return ((degree,),)
    out = []
    for first in range(degree, -1, -1):
        for rest in multi_indices(dim - 1, degree - first):
            out.append((first,) + rest)
    return tuple(out)


def _scalar_product(a: np.ndarray, b: np.ndarray, cap: int) -> np.ndarray:
    """Truncated product of two scalar coefficient arrays."""
    dim = a.ndim
    if not a.any() or not b.any():
        return np.zeros((cap + 1,) * dim)
    # direct summation keeps products of exactly representable coefficients exact
    full = convolve(a, b, method="direct")
    out = full[(slice(0, cap + 1),) * dim]
    out = np.array(out, copy=True)
    out[~degree_mask(dim, cap)] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class TaylorRep:
    """Truncated Taylor table of a map ``R^d -> R^p``.

    ``exact`` is the tail flag: True when the table is the whole polynomial
    (nothing was discarded by truncation).
    """

    coeffs: np.ndarray
    exact: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim < 1:
            raise ValueError("coefficient array needs a codomain axis")
        dims = c.shape[:-1]
        if len(set(dims)) > 1:
            raise ValueError(f"ragged coefficient array {c.shape}")
        c = np.array(c, copy=True)
        if len(dims):
            c[~degree_mask(len(dims), dims[0] - 1)] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # ------------------------------------------------------------------ shape
    @property
    def domain_dim(self) -> int:
        return self.coeffs.ndim - 1

    @property
    def codomain_dim(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def degree_cap(self) -> int:
        return self.coeffs.shape[0] - 1 if self.domain_dim else 0

    def degree(self) -> int:
        """Largest total degree carrying a nonzero coefficient (-1 for zero)."""
        nz = np.abs(self.coeffs).max(axis=-1, initial=0.0) > 0
        if not nz.any():
            return -1
        return int(_total_degree(self.domain_dim, self.degree_cap)[nz].max())

    # ----------------------------------------------------------- constructors
    @classmethod
    def zeros(cls, dim_in: int, dim_out: int, cap: int) -> TaylorRep:
        return cls(np.zeros((cap + 1,) * dim_in + (dim_out,)))

    @classmethod
    def from_dict(
        cls,
        table: dict[tuple[int, ...], np.ndarray | list[float]],
        dim_in: int,
        dim_out: int,
        cap: int | None = None,
    ) -> TaylorRep:
        if cap is None:
            cap = max((sum(a) for a in table), default=0)
        c = np.zeros((cap + 1,) * dim_in + (dim_out,))
        exact = True
        for alpha, vec in table.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim_in:
                raise ValueError(f"multi-index {alpha} has wrong length")
            if sum(alpha) > cap:
                exact = False
                continue
            c[alpha] += np.asarray(vec, dtype=float).reshape(dim_out)
        return cls(c, exact=exact)

    @classmethod
    def linear(cls, matrix: np.ndarray, cap: int = 1) -> TaylorRep:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        p, d = matrix.shape
        c = np.zeros((max(cap, 1) + 1,) * d + (p,))
        for j in range(d):
            idx = [0] * d
            idx[j] = 1
            c[tuple(idx)] = matrix[:, j]
        return cls(c)

    @classmethod
    def identity(cls, dim: int, cap: int = 1) -> TaylorRep:
        return cls.linear(np.eye(dim), cap)

    @classmethod
    def constant(cls, vec, dim_in: int, cap: int = 0) -> TaylorRep:
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        c = np.zeros((cap + 1,) * dim_in + (vec.size,))
        c[(0,) * dim_in] = vec
        return cls(c)

    def to_dict(self, tol: float = 0.0) -> dict[tuple[int, ...], np.ndarray]:
        out = {}
        for d in range(self.degree_cap + 1):
            for alpha in multi_indices(self.domain_dim, d):
                v = self.coeffs[alpha]
                if np.abs(v).max(initial=0.0) > tol:
                    out[alpha] = np.array(v)
        return out

    def coefficient(self, alpha: tuple[int, ...]) -> np.ndarray:
        if sum(alpha) > self.degree_cap:
            return np.zeros(self.codomain_dim)
        return np.array(self.coeffs[tuple(alpha)])

    # -------------------------------------------------------------- structure
    def with_cap(self, cap: int) -> TaylorRep:
        """Pad or truncate to a new degree cap."""
        d = self.domain_dim
        if d == 0:
            return self
        if cap >= self.degree_cap:
            c = np.zeros((cap + 1,) * d + (self.codomain_dim,))
            c[(slice(0, self.degree_cap + 1),) * d] = self.coeffs
            return TaylorRep(c, self.exact)
        c = self.coeffs[(slice(0, cap + 1),) * d]
        lost = self.degree() > cap
        return TaylorRep(c, self.exact and not lost)

    def homogeneous(self, degree: int) -> TaylorRep:
        mask = _total_degree(self.domain_dim, self.degree_cap) == degree
        c = np.where(mask[..., None], self.coeffs, 0.0)
        return TaylorRep(c, self.exact)

    def truncate_below(self, degree: int) -> TaylorRep:
        """Zero every coefficient of total degree < ``degree``."""
        mask = _total_degree(self.domain_dim, self.degree_cap) >= degree
        return TaylorRep(np.where(mask[..., None], self.coeffs, 0.0), self.exact)

    def component(self, idx) -> TaylorRep:
        return TaylorRep(self.coeffs[..., idx].reshape(self.coeffs.shape[:-1] + (-1,)), self.exact)

    # ------------------------------------------------------------- arithmetic
    def _aligned(self, other: TaylorRep) -> tuple[np.ndarray, np.ndarray, int]:
        cap = max(self.degree_cap, other.degree_cap)
        return self.with_cap(cap).coeffs, other.with_cap(cap).coeffs, cap

    def __add__(self, other: TaylorRep) -> TaylorRep:
        a, b, _ = self._aligned(other)
        return TaylorRep(a + b, self.exact and other.exact)

    def __sub__(self, other: TaylorRep) -> TaylorRep:
        a, b, _ = self._aligned(other)
        return TaylorRep(a - b, self.exact and other.exact)

    def __neg__(self) -> TaylorRep:
        return TaylorRep(-self.coeffs, self.exact)

    def scale(self, factor: float) -> TaylorRep:
        return TaylorRep(self.coeffs * factor, self.exact)

    def left_matmul(self, matrix: np.ndarray) -> TaylorRep:
        """The map ``x -> matrix @ f(x)``."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return TaylorRep(self.coeffs @ matrix.T, self.exact)

    def stack(self, *others: TaylorRep) -> TaylorRep:
        """Concatenate codomains (all maps share the domain)."""
        reps = (self,) + others
        cap = max(r.degree_cap for r in reps)
        arrays = [r.with_cap(cap).coeffs for r in reps]
        return TaylorRep(np.concatenate(arrays, axis=-1), all(r.exact for r in reps))

    def times_scalar(self, s: TaylorRep, cap: int | None = None) -> TaylorRep:
        """Pointwise product with a scalar-valued map ``s``."""
        if s.codomain_dim != 1:
            raise ValueError("times_scalar needs a scalar-valued factor")
        if cap is None:
            cap = self.degree() + s.degree()
            cap = max(cap, 0)
        a = self.with_cap(cap).coeffs
        b = s.with_cap(cap).coeffs[..., 0]
        if self.domain_dim == 0:
            return TaylorRep(a * b)
        out = np.stack([_scalar_product(a[..., k], b, cap) for k in range(self.codomain_dim)], axis=-1) if self.codomain_dim else a
        exact = self.exact and s.exact and self.degree() + s.degree() <= cap
        return TaylorRep(out, exact)

    # ------------------------------------------------------------ composition
    def compose(self, inner: TaylorRep, cap: int | None = None) -> TaylorRep:
        """Truncated Taylor table of ``self o inner``.

        With ``cap=None`` the cap is ``deg(self) * deg(inner)`` so the result
        is exact for polynomial inputs.
        """
        if inner.codomain_dim != self.domain_dim:
            raise ValueError(
                f"cannot compose: inner codomain {inner.codomain_dim} != outer domain {self.domain_dim}"
            )
        dout = self.degree()
        din = max(inner.degree(), 0)
        if cap is None:
            cap = max(dout, 0) * max(din, 1)
        d = inner.domain_dim
        p = self.codomain_dim
        q = self.domain_dim
        result = np.zeros((cap + 1,) * d + (p,))
        if dout < 0 or p == 0:
            return TaylorRep(result, self.exact and inner.exact)
        g = inner.with_cap(cap).coeffs
        one = np.zeros((cap + 1,) * d)
        one[(0,) * d] = 1.0
        # powers[j][k] = inner_j ** k, truncated
        powers: list[list[np.ndarray]] = []
        for j in range(q):
            kmax = min(self.degree_cap, dout)
            pj = [one]
            for _ in range(kmax):
                pj.append(_scalar_product(pj[-1], g[..., j], cap))
            powers.append(pj)

        coeffs = self.coeffs

        def rec(block: np.ndarray, j: int) -> np.ndarray | None:
            # block has shape (cap_f+1,)*(q-j) + (p,)
            if not block.any():
                return None
            if j == q:
                return one[..., None] * block
            acc = None
            for k in range(min(block.shape[0], len(powers[j]))):
                sub = rec(block[k], j + 1)
                if sub is None:
                    continue
                if k == 0:
                    term = sub
                else:
                    term = np.stack(
                        [_scalar_product(powers[j][k], sub[..., c], cap) for c in range(p)], axis=-1
                    )
                acc = term if acc is None else acc + term
            return acc

        total = rec(coeffs, 0)
        if total is not None:
            result = total
        exact = self.exact and inner.exact and max(dout, 0) * max(din, 1) <= cap
        return TaylorRep(result, exact)

    # ------------------------------------------------------------- evaluation
    def __call__(self, pts) -> np.ndarray:
        """Evaluate at points of shape ``(n, d)`` (or a single point)."""
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if self.domain_dim == 0:
            out = np.broadcast_to(self.coeffs, (pts.shape[0], self.codomain_dim)).copy()
            return out[0] if single else out
        n = pts.shape[0]
        cap = self.degree_cap
        powers = pts[:, :, None] ** np.arange(cap + 1)[None, None, :]
        res = np.einsum("nk,k...->n...", powers[:, 0, :], self.coeffs)
        for j in range(1, self.domain_dim):
            res = np.einsum("nk,nk...->n...", powers[:, j, :], res)
        res = res.reshape(n, self.codomain_dim)
        return res[0] if single else res

    def partial(self, alpha: tuple[int, ...]) -> TaylorRep:
        """Partial derivative ``d^alpha`` as a new table (same cap)."""
        c = np.array(self.coeffs)
        for axis, order in enumerate(alpha):
            for _ in range(order):
                k = np.arange(1, c.shape[axis])
                shape = [1] * c.ndim
                shape[axis] = -1
                moved = np.take(c, k, axis=axis) * k.reshape(shape)
                pad = [(0, 0)] * c.ndim
                pad[axis] = (0, 1)
                c = np.pad(moved, pad)
        return TaylorRep(c, self.exact)

    def derivative(self, pts, m: int) -> np.ndarray:
        """``D^m f`` at points, shape ``(n, p) + (d,) * m`` (fully symmetric)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        d = self.domain_dim
        out = np.zeros((n, self.codomain_dim) + (d,) * m)
        if m == 0:
            return self(pts)
        for combo in itertools.combinations_with_replacement(range(d), m):
            alpha = tuple(combo.count(j) for j in range(d))
            val = self.partial(alpha)(pts)
            for perm in set(itertools.permutations(combo)):
                out[(slice(None), slice(None)) + perm] = val
        return out

    def jet(self, pts, m: int) -> list[np.ndarray]:
        return [self.derivative(pts, k) for k in range(m + 1)]

    # ---------------------------------------------------------------- scaling
    def rescaled(self, eps: float) -> TaylorRep:
        """Table of ``x -> f(eps x) / eps``: order-d coefficients times eps**(d-1)."""
        deg = _total_degree(self.domain_dim, self.degree_cap)
        factor = np.power(float(eps), deg - 1.0)
        return TaylorRep(self.coeffs * factor[..., None], self.exact)

    # ------------------------------------------------------------------ norms
    def majorant(self, radius: float, m: int) -> float:
        """Coefficient-sum bound on ``sup_{|x|<=radius} |D^m f(x)|``.

        Uses ``|D^m x^alpha| <= |alpha|!/(|alpha|-m)! |x|^(|alpha|-m)`` for
        Euclidean norms, summed with Euclidean norms of coefficient vectors.
        """
        deg = _total_degree(self.domain_dim, self.degree_cap)
        norms = np.linalg.norm(self.coeffs, axis=-1)
        total = 0.0
        for k in range(m, self.degree_cap + 1):
            sel = norms[deg == k]
            if sel.size == 0:
                continue
            total += sel.sum() * math.perm(k, m) * radius ** (k - m)
        return float(total)

    def __repr__(self) -> str:
        terms = {a: v.tolist() for a, v in self.to_dict().items()}
        return f"TaylorRep(d={self.domain_dim}, p={self.codomain_dim}, cap={self.degree_cap}, {terms})"
