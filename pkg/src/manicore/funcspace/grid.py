"""Sampled grid functions on a box in center coordinates.

Values live at the nodes of a uniform tensor grid.  Off-grid evaluation uses
quintic splines (scipy) in one and two dimensions and cubic tensor
interpolation above that; derivatives at nodes come from central finite
difference stencils of order 2 or 4.  Outside the box every grid function
is extended by zero, which is exact for the localized problems this package
solves (all unknowns vanish beyond the cutoff ball).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator, make_interp_spline

from ..errors import InsufficientSmoothness

__all__ = ["GridRep", "fd_weights", "fd_apply", "MAX_FD_ORDER"]

MAX_FD_ORDER = 4


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[float, ...], k: int) -> np.ndarray:
    """Weights ``w`` with ``sum_i w_i f(s_i h) ~ h^k f^(k)(0)``.

    Solves the moment equations ``sum_i w_i s_i^j / j! = [j == k]``.
    """
    s = np.asarray(offsets, dtype=float)
    n = s.size
    if n <= k:
        raise InsufficientSmoothness(f"{n}-point stencil cannot resolve derivative order {k}")
    V = np.vstack([s**j / math.factorial(j) for j in range(n)])
    rhs = np.zeros(n)
    rhs[k] = 1.0
    w = np.linalg.solve(V, rhs)
    w.setflags(write=False)
    return w


def _stencil_width(k: int, acc: int) -> int:
    return 2 * ((k + 1) // 2) - 1 + acc


def fd_apply(values: np.ndarray, axis: int, h: float, k: int, acc: int = 4) -> np.ndarray:
    """k-th derivative along ``axis`` with accuracy order ``acc``.

    Central stencils in the interior, shifted stencils of the same width at
    the two ends so that every node gets a value of the same formal order.
    """
    if k == 0:
        return np.array(values, copy=True)
    if k > MAX_FD_ORDER:
        raise InsufficientSmoothness(f"derivative order {k} exceeds stencil support {MAX_FD_ORDER}")
    width = _stencil_width(k, acc)
    n = values.shape[axis]
    if n < width:
        raise InsufficientSmoothness(f"{n} nodes along axis {axis}, stencil needs {width}")
    half = width // 2
    v = np.moveaxis(values, axis, 0)
    out = np.zeros_like(v, dtype=float)
    w = fd_weights(tuple(range(-half, half + 1)), k)
    for j, wj in enumerate(w):
        out[half : n - half] += wj * v[j : n - width + 1 + j]
    for i in list(range(half)) + list(range(n - half, n)):
        start = min(max(i - half, 0), n - width)
        offs = tuple(range(start - i, start - i + width))
        wi = fd_weights(offs, k)
        out[i] = np.tensordot(wi, v[start : start + width], axes=(0, 0))
    return np.moveaxis(out / h**k, 0, axis)


@dataclass(frozen=True, eq=False)
class GridRep:
    """Grid samples of a map from a box in ``R^d`` to ``R^p``."""

    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray
    stencil_order: int = 4

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim != lower.size + 1:
            raise ValueError(f"values shape {values.shape} does not match a {lower.size}-d grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if self.stencil_order not in (2, 4):
            raise ValueError("stencil_order must be 2 or 4")
        values = np.array(values, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "values", values)

    # ------------------------------------------------------------------ shape
    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def codomain_dim(self) -> int:
        return self.values.shape[-1]

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape[:-1]

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.asarray(self.resolution) - 1)

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.resolution)]

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.reshape(int(np.prod(self.resolution)), self.codomain_dim)

    @classmethod
    def on_box(cls, lower, upper, resolution, fn, stencil_order: int = 4) -> GridRep:
        """Sample ``fn`` (points ``(n, d)`` -> ``(n, p)``) on a new grid."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if np.isscalar(resolution):
            resolution = (int(resolution),) * lower.size
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, resolution)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = np.asarray(fn(pts), dtype=float).reshape(tuple(resolution) + (-1,))
        return cls(lower, upper, vals, stencil_order)

    def with_values(self, values: np.ndarray) -> GridRep:
        values = np.asarray(values, dtype=float)
        p = values.shape[-1] if values.ndim == 2 else values.size // int(np.prod(self.resolution))
        values = values.reshape(self.resolution + (p,))
        return GridRep(self.lower, self.upper, values, self.stencil_order)

    def contains(self, pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lower - pad) & (pts <= self.upper + pad), axis=1)

    # ------------------------------------------------------- finite differences
    def node_derivative(self, alpha: tuple[int, ...]) -> np.ndarray:
        """Finite-difference ``d^alpha`` at every node, shape ``resolution + (p,)``."""
        out = self.values
        for axis, k in enumerate(alpha):
            if k:
                out = fd_apply(out, axis, self.spacing[axis], k, self.stencil_order)
        return out

    def node_tensor(self, m: int) -> np.ndarray:
        """``D^m`` at nodes as a dense tensor, shape ``(N, p) + (d,) * m``."""
        d, p = self.dim, self.codomain_dim
        n = int(np.prod(self.resolution))
        out = np.zeros((n, p) + (d,) * m)
        if m == 0:
            return self.flat_values.copy()
        for combo in itertools.combinations_with_replacement(range(d), m):
            alpha = tuple(combo.count(j) for j in range(d))
            val = self.node_derivative(alpha).reshape(n, p)
            for perm in set(itertools.permutations(combo)):
                out[(slice(None), slice(None)) + perm] = val
        return out

    # ----------------------------------------------------------- interpolation
    @cached_property
    def _interp(self):
        d, p = self.dim, self.codomain_dim
        res = self.resolution
        if p == 0:
            return None
        if d == 1 and res[0] >= 6:
            return ("spline1", make_interp_spline(self.axes[0], self.values, k=5))
        if d == 2 and min(res) >= 6:
            splines = [
                RectBivariateSpline(self.axes[0], self.axes[1], self.values[..., c], kx=5, ky=5, s=0)
                for c in range(p)
            ]
            return ("spline2", splines)
        return ("regular", {})

    @lru_cache(maxsize=16)
    def _spline1_derivative(self, nu: int):
        kind, spl = self._interp
        return spl if nu == 0 else spl.derivative(nu)

    def _regular(self, alpha: tuple[int, ...]):
        cache = self._interp[1]
        if alpha not in cache:
            vals = self.node_derivative(alpha) if any(alpha) else self.values
            method = "cubic" if min(self.resolution) >= 4 else "linear"
            cache[alpha] = RegularGridInterpolator(tuple(self.axes), vals, method=method, bounds_error=False, fill_value=0.0)
        return cache[alpha]

    def _eval_partial(self, pts: np.ndarray, alpha: tuple[int, ...]) -> np.ndarray:
        kind, obj = self._interp
        if kind == "spline1":
            return self._spline1_derivative(alpha[0])(pts[:, 0])
        if kind == "spline2":
            return np.stack([s.ev(pts[:, 0], pts[:, 1], dx=alpha[0], dy=alpha[1]) for s in obj], axis=-1)
        return self._regular(alpha)(pts)

    def partial_at(self, pts, alpha: tuple[int, ...]) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros((pts.shape[0], self.codomain_dim))
        if self.codomain_dim == 0:
            return out
        inside = self.contains(pts)
        if inside.any():
            out[inside] = self._eval_partial(pts[inside], alpha)
        return out

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        out = self.partial_at(np.atleast_2d(pts), (0,) * self.dim)
        return out[0] if single else out

    def derivative(self, pts, m: int) -> np.ndarray:
        """``D^m`` at arbitrary points, shape ``(n, p) + (d,) * m``; zero outside the box."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if m == 0:
            return self(pts)
        d, p = self.dim, self.codomain_dim
        out = np.zeros((pts.shape[0], p) + (d,) * m)
        for combo in itertools.combinations_with_replacement(range(d), m):
            alpha = tuple(combo.count(j) for j in range(d))
            val = self.partial_at(pts, alpha)
            for perm in set(itertools.permutations(combo)):
                out[(slice(None), slice(None)) + perm] = val
        return out

    def jet(self, pts, m: int) -> list[np.ndarray]:
        return [self.derivative(pts, k) for k in range(m + 1)]

    # ------------------------------------------------------------------ export
    def to_columns(self) -> str:
        """Columnar text: node coordinates then value components, one row per node."""
        data = np.hstack([self.nodes, self.flat_values])
        head = " ".join([f"x{j}" for j in range(self.dim)] + [f"v{c}" for c in range(self.codomain_dim)])
        rows = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in data)
        return f"# {head}\n{rows}\n"
