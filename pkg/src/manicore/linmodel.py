"""Problem definition: splitting of the linear part, cutoff, and the problem file.

All computations downstream happen in *block coordinates* ``z = B x`` in
which ``A`` is block diagonal with blocks ordered center, unstable, stable.
The norm on the ambient space is the max over blocks of the Euclidean norm
of each block.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigError, GapNotClosable, InvalidNonlinearity, NonCleanSpectrum, SingularBlock
from .funcspace import GridRep, SmoothMapRep, TaylorRep, ball_samples, tensor_opnorm

__all__ = [
    "SpaceSplitting",
    "OperatorNorms",
    "SplitLinearMap",
    "CutoffFunction",
    "ProblemInstance",
    "build_splitting",
    "rescale_norm",
    "localize",
    "block_opnorm",
    "parse_problem",
    "load_problem",
    "problem_from_dict",
    "DEFAULT_TOLERANCES",
]

DEFAULT_TOLERANCES = {
    "eigen": 1e-6,
    "solver": 1e-10,
    "picard": 1e-13,
    "cross_check": 1e-6,
    "membership": 1e-9,
    "condition": 1e12,
}


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SpaceSplitting:
    """Dimensions of ``X_c, X_u, X_s`` and the change to block coordinates."""

    dim_c: int
    dim_u: int
    dim_s: int
    basis_change: np.ndarray
    basis_change_inv: np.ndarray

    def __post_init__(self):
        if self.dim_c < 1 or self.dim_u < 0 or self.dim_s < 0:
            raise ValueError("need dim_c >= 1 and nonnegative hyperbolic dimensions")
        n = self.dim
        B = np.asarray(self.basis_change, dtype=float)
        Binv = np.asarray(self.basis_change_inv, dtype=float)
        if B.shape != (n, n) or Binv.shape != (n, n):
            raise ValueError("basis change has the wrong shape")
        if np.abs(B @ Binv - np.eye(n)).max() > 1e-10:
            raise SingularBlock("basis change is not invertible to 1e-10")

    @property
    def dim(self) -> int:
        return self.dim_c + self.dim_u + self.dim_s

    @property
    def sl_c(self) -> slice:
        return slice(0, self.dim_c)

    @property
    def sl_u(self) -> slice:
        return slice(self.dim_c, self.dim_c + self.dim_u)

    @property
    def sl_s(self) -> slice:
        return slice(self.dim_c + self.dim_u, self.dim)

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(k for k in (self.dim_c, self.dim_u, self.dim_s) if k)

    def to_block(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.basis_change.T

    def to_ambient(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.basis_change_inv.T

    def norm(self, z: np.ndarray) -> np.ndarray:
        """Max-block norm of block-coordinate vectors ``(n, dim)``."""
        z = np.atleast_2d(z)
        parts = [np.linalg.norm(z[:, s], axis=1) for s in (self.sl_c, self.sl_u, self.sl_s) if s.stop > s.start]
        return np.max(np.stack(parts), axis=0)

    def transformed(self, transforms) -> SpaceSplitting:
        """New block basis after per-block similarities ``P_c, P_u, P_s``."""
        P = scipy.linalg.block_diag(*[t for t in transforms if t.size])
        Binv = self.basis_change_inv @ P
        return SpaceSplitting(self.dim_c, self.dim_u, self.dim_s, np.linalg.inv(Binv), Binv)


@dataclass(frozen=True)
class OperatorNorms:
    A_c: float
    A_c_inv: float
    A_u: float
    A_u_inv: float
    A_s: float
    A: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def _opnorm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


@dataclass(frozen=True, eq=False)
class SplitLinearMap:
    A_c: np.ndarray
    A_u: np.ndarray
    A_s: np.ndarray
    A_c_inv: np.ndarray
    A_u_inv: np.ndarray
    transforms: tuple = ()

    @cached_property
    def op_norms(self) -> OperatorNorms:
        return OperatorNorms(
            A_c=_opnorm(self.A_c),
            A_c_inv=_opnorm(self.A_c_inv),
            A_u=_opnorm(self.A_u),
            A_u_inv=_opnorm(self.A_u_inv),
            A_s=_opnorm(self.A_s),
            A=max(_opnorm(self.A_c), _opnorm(self.A_u), _opnorm(self.A_s)),
        )

    @property
    def block_matrix(self) -> np.ndarray:
        return scipy.linalg.block_diag(*[b for b in (self.A_c, self.A_u, self.A_s) if b.size])

    def gap_condition(self, n: int) -> list[tuple[int, float, float]]:
        """``(n~, |A_c^-1|^n~ |A_s|, |A_u^-1| |A_c|^n~)`` for ``1 <= n~ <= n``; both must be < 1."""
        nm = self.op_norms
        return [(k, nm.A_c_inv**k * nm.A_s, nm.A_u_inv * nm.A_c**k) for k in range(1, n + 1)]

    def gap_holds(self, n: int) -> bool:
        return all(a < 1 and b < 1 for _, a, b in self.gap_condition(n))


def _invariant_basis(A: np.ndarray, select) -> np.ndarray:
    """Columns spanning the invariant subspace of the selected eigenvalues.

    Prefers the real Jordan basis (real eigenvectors, and real/imaginary
    parts of complex ones), in which a unimodular pair becomes a rotation.
    Falls back to ordered real Schur vectors for defective blocks.
    """
    lam, V = np.linalg.eig(A)
    idx = [i for i, l in enumerate(lam) if select(l)]
    k = len(idx)
    if k == 0:
        return np.zeros((A.shape[0], 0))
    cols = []
    for i in idx:
        l, v = lam[i], V[:, i]
        if abs(l.imag) <= 1e-12 * max(1.0, abs(l)):
            v = v.real if np.abs(v.real).max() >= np.abs(v.imag).max() else v.imag
            v = v / np.linalg.norm(v)
            cols.append(v * np.sign(v[np.argmax(np.abs(v))]))
        elif l.imag > 0:
            cols.extend([v.real, v.imag])
    if len(cols) == k:
        C = np.stack(cols, axis=1)
        if np.linalg.matrix_rank(C) == k and np.linalg.cond(C) < 1e8:
            return C
    T, Z, sdim = scipy.linalg.schur(A, output="real", sort=lambda re, im: select(complex(re, im)))
    return Z[:, :sdim]


def build_splitting(A, unit_circle_tolerance: float = 1e-6) -> tuple[SpaceSplitting, SplitLinearMap]:
    """Split ``A`` into center, unstable and stable blocks by eigenvalue modulus.

    Moduli within ``tol`` of 1 are center; moduli farther than ``2 tol`` are
    hyperbolic; anything in between raises :class:`NonCleanSpectrum`.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ConfigError("matrix_A must be square")
    tol = float(unit_circle_tolerance)
    lam = np.linalg.eigvals(A)
    gaps = np.abs(np.abs(lam) - 1.0)
    bad = (gaps > tol) & (gaps < 2 * tol)
    if bad.any():
        raise NonCleanSpectrum(f"eigenvalue moduli {np.abs(lam[bad])} fall in the band ({tol}, {2 * tol}) around 1")
    center = lambda l: abs(abs(l) - 1.0) <= tol
    unstable = lambda l: abs(l) > 1.0 + tol
    stable = lambda l: abs(l) < 1.0 - tol
    Vc, Vu, Vs = (_invariant_basis(A, s) for s in (center, unstable, stable))
    if Vc.shape[1] == 0:
        raise NonCleanSpectrum("no eigenvalue on the unit circle: the center space is empty")
    Binv = np.hstack([Vc, Vu, Vs])
    if Binv.shape[1] != A.shape[0]:
        raise NonCleanSpectrum("invariant subspaces do not span the space")
    B = np.linalg.inv(Binv)
    Ab = B @ A @ Binv
    dc, du, ds = Vc.shape[1], Vu.shape[1], Vs.shape[1]
    sl = [slice(0, dc), slice(dc, dc + du), slice(dc + du, dc + du + ds)]
    blocks = [Ab[s, s] for s in sl]
    off = Ab - scipy.linalg.block_diag(*[b for b in blocks if b.size])
    if np.abs(off).max(initial=0.0) > 1e-8 * max(1.0, np.abs(A).max()):
        raise NonCleanSpectrum("block coordinates do not decouple A")
    A_c, A_u, A_s = blocks
    for name, blk in (("A_c", A_c), ("A_u", A_u)):
        if blk.size and np.linalg.cond(blk) > 1e12:
            raise SingularBlock(f"{name} has condition number above 1e12")
    split = SpaceSplitting(dc, du, ds, B, Binv)
    lin = SplitLinearMap(
        A_c=A_c,
        A_u=A_u,
        A_s=A_s,
        A_c_inv=np.linalg.inv(A_c),
        A_u_inv=np.linalg.inv(A_u) if du else np.zeros((0, 0)),
    )
    return split, lin


def _schur_normal(M: np.ndarray):
    """Real Schur form with 2x2 blocks balanced to scaled rotations, plus block sizes."""
    T, Q = scipy.linalg.schur(M, output="real")
    k = M.shape[0]
    sizes = []
    i = 0
    N = np.eye(k)
    while i < k:
        if i + 1 < k and abs(T[i + 1, i]) > 1e-14:
            b, c = T[i, i + 1], T[i + 1, i]
            s = math.sqrt(abs(c / b)) if b != 0 else 1.0
            N[i + 1, i + 1] = s
            sizes.append(2)
            i += 2
        else:
            sizes.append(1)
            i += 1
    return Q @ N, sizes


def _graded(M: np.ndarray, eta: float):
    QN, sizes = _schur_normal(M)
    D = np.concatenate([[eta**j] * s for j, s in enumerate(sizes)])
    P = QN * D[None, :]
    return P, np.linalg.solve(P, M @ P)


def rescale_norm(split: SplitLinearMap, n: int, factor: float = 1.01, max_steps: int = 50) -> SplitLinearMap:
    """Shrink block operator norms toward spectral radii by block similarities.

    Each block goes to real Schur form, its 2x2 blocks are balanced and the
    off-diagonal part is damped by a graded diagonal ``diag(eta^j)``, halving
    ``eta`` until the block norm (and inverse norm for the center and
    unstable blocks) is within ``factor`` of the spectral value and the gap
    condition holds for ``n``.  Blocks that already satisfy the target are
    left untouched.
    """

    def ok(blk, which):
        if not blk.size:
            return True
        rho = max(abs(np.linalg.eigvals(blk)))
        good = _opnorm(blk) <= factor * rho + 1e-15
        if which in ("c", "u"):
            rho_inv = max(abs(np.linalg.eigvals(np.linalg.inv(blk))))
            good = good and _opnorm(np.linalg.inv(blk)) <= factor * rho_inv + 1e-15
        return good

    new_blocks, transforms = [], []
    for blk, which in ((split.A_c, "c"), (split.A_u, "u"), (split.A_s, "s")):
        if ok(blk, which):
            new_blocks.append(blk)
            transforms.append(np.eye(blk.shape[0]))
            continue
        eta = 1.0
        for _ in range(max_steps):
            eta *= 0.5
            P, nb = _graded(blk, eta)
            if ok(nb, which):
                break
        else:
            raise GapNotClosable(f"block {which} norm not within factor {factor} after {max_steps} steps")
        new_blocks.append(nb)
        transforms.append(P)
    A_c, A_u, A_s = new_blocks
    out = SplitLinearMap(
        A_c=A_c,
        A_u=A_u,
        A_s=A_s,
        A_c_inv=np.linalg.inv(A_c),
        A_u_inv=np.linalg.inv(A_u) if A_u.size else np.zeros((0, 0)),
        transforms=tuple(transforms),
    )
    if not out.gap_holds(n):
        raise GapNotClosable(f"spectral-gap condition fails for n={n} even after rescaling")
    return out


# --------------------------------------------------------------------------
# cutoff
# --------------------------------------------------------------------------
def _smoothstep(order: int) -> np.polynomial.Polynomial:
    """C^order smoothstep of degree 2 order + 1 on [0, 1]."""
    k = order
    coef = np.zeros(2 * k + 2)
    for j in range(k + 1):
        coef[k + 1 + j] = math.comb(k + j, j) * math.comb(2 * k + 1, k - j) * (-1) ** j
    return np.polynomial.Polynomial(coef)


def _abs_max_on_unit(p: np.polynomial.Polynomial) -> float:
    crit = [r.real for r in p.deriv().roots() if abs(r.imag) < 1e-12 and 0 <= r.real <= 1]
    pts = np.array([0.0, 1.0] + crit)
    return float(np.abs(p(pts)).max())


@dataclass(frozen=True)
class CutoffFunction:
    """Radial bump ``xi(y) = p((|y|^2 - a^2) / (b^2 - a^2))``.

    ``p = 1 - smoothstep`` has degree ``2 order + 1`` and is C^order at both
    junctions.  Using the squared radius keeps ``xi`` polynomial in ``y`` on
    the transition shell, so localized polynomials stay piecewise polynomial.
    """

    inner_radius: float
    outer_radius: float
    order: int = 2

    def __post_init__(self):
        if not (0 < self.inner_radius < self.outer_radius):
            raise ConfigError("cutoff radii must satisfy 0 < inner < outer")
        if self.order < 1:
            raise ConfigError("cutoff order must be at least 1")

    @cached_property
    def profile(self) -> np.polynomial.Polynomial:
        return 1 - _smoothstep(self.order)

    @property
    def _delta(self) -> float:
        return self.outer_radius**2 - self.inner_radius**2

    @cached_property
    def profile_bounds(self) -> tuple[float, float]:
        """``(max |p'|, max |p''|)`` on [0, 1]."""
        p1 = self.profile.deriv()
        return _abs_max_on_unit(p1), _abs_max_on_unit(p1.deriv())

    @cached_property
    def derivative_bounds(self) -> tuple[float, float]:
        """Closed-form Euclidean bounds on ``sup |D xi|`` and ``sup |D^2 xi|``."""
        m1, m2 = self.profile_bounds
        b, delta = self.outer_radius, self._delta
        return m1 * 2 * b / delta, m2 * 4 * b * b / delta**2 + m1 * 2 / delta

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        u = (np.sum(pts**2, axis=1) - self.inner_radius**2) / self._delta
        return np.where(u <= 0, 1.0, np.where(u >= 1, 0.0, self.profile(np.clip(u, 0, 1))))

    @lru_cache(maxsize=8)
    def transition_poly(self, dim: int) -> TaylorRep:
        """``xi`` on the transition shell as a scalar Taylor table in ``dim`` variables."""
        table = {}
        for j in range(dim):
            alpha = [0] * dim
            alpha[j] = 2
            table[tuple(alpha)] = [1.0 / self._delta]
        table[(0,) * dim] = [-self.inner_radius**2 / self._delta]
        u = TaylorRep.from_dict(table, dim, 1, cap=2)
        p = TaylorRep(np.asarray(self.profile.coef, dtype=float)[:, None])
        return p.compose(u)

    def as_smooth_map(self, dim: int) -> SmoothMapRep:
        one = TaylorRep.constant([1.0], dim)
        return SmoothMapRep(one, cutoff=self, label="xi")


def localize(g_raw: SmoothMapRep, cutoff: CutoffFunction) -> SmoothMapRep:
    """``g_raw * xi`` with product-rule bounds on ``|Dg|`` and ``|D^2 g|``.

    The bounds use coefficient majorants of ``g_raw`` on the outer ball and
    the closed-form cutoff bounds; they are stored in ``norm_cache`` under
    ``"bound_D1"`` and ``"bound_D2"`` (Euclidean norms).
    """
    b = cutoff.outer_radius
    t = g_raw.taylor
    g0, g1, g2 = (t.majorant(b, m) for m in range(3))
    x1, x2 = cutoff.derivative_bounds
    out = SmoothMapRep(t, None, cutoff, cutoff.inner_radius, {}, label=g_raw.label)
    out.norm_cache["bound_D1"] = g1 + g0 * x1
    out.norm_cache["bound_D2"] = g2 + 2 * g1 * x1 + g0 * x2
    return out


def block_opnorm(tensor: np.ndarray, out_blocks, in_blocks) -> np.ndarray:
    """Per-point operator norm bound in max-block norms.

    For ``D^m f`` of shape ``(n, p) + (d,)*m`` returns
    ``max_i sum_{j1..jm} |T[i-block; j-blocks]|`` (spectral norm for m = 1,
    Frobenius for m >= 2), which is exact when all blocks are 1-dimensional.
    """
    n = tensor.shape[0]
    m = tensor.ndim - 2
    if m == 0:
        return np.max(np.stack([np.linalg.norm(tensor[:, o], axis=1) for o in out_blocks]), axis=0)
    result = np.zeros(n)
    import itertools

    for o in out_blocks:
        acc = np.zeros(n)
        for combo in itertools.product(in_blocks, repeat=m):
            sub = tensor[(slice(None), o) + tuple(combo)]
            acc += tensor_opnorm(sub)
        result = np.maximum(result, acc)
    return result


# --------------------------------------------------------------------------
# problem instance
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A localized map ``F = A + g`` in block coordinates with a chosen ``k_c``.

    ``g`` and ``k_c`` are the localized maps; ``g_raw`` and ``kc_raw`` their
    polynomial Taylor tables (equal near 0).  Grid settings describe the
    center-coordinate box ``[-B, B]^dc`` with ``B = outer (1 + margin)``.
    """

    splitting: SpaceSplitting
    linear: SplitLinearMap
    g: SmoothMapRep
    k_c: SmoothMapRep
    cutoff: CutoffFunction
    n: int = 2
    resolution: int = 0
    margin: float = 0.1
    stencil_order: int = 4
    taylor_cap: int = 8
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    name: str = ""
    source_hash: str = ""

    def __post_init__(self):
        sp = self.splitting
        if self.n < 2:
            raise ConfigError("order_n must be at least 2")
        if self.g.domain_dim != sp.dim or self.g.codomain_dim != sp.dim:
            raise InvalidNonlinearity("g must map the ambient space to itself")
        if self.k_c.domain_dim != sp.dim_c or self.k_c.codomain_dim != sp.dim_c:
            raise InvalidNonlinearity("k_c must map X_c to X_c")
        for label, f in (("g", self.g), ("k_c", self.k_c)):
            _check_second_order(f.taylor, label)
        if self.resolution <= 0:
            object.__setattr__(self, "resolution", {1: 1101, 2: 121, 3: 31}.get(sp.dim_c, 15))

    # --------------------------------------------------------------- blocks
    @property
    def dim_c(self) -> int:
        return self.splitting.dim_c

    @property
    def dim_u(self) -> int:
        return self.splitting.dim_u

    @property
    def dim_s(self) -> int:
        return self.splitting.dim_s

    @property
    def g_raw(self) -> TaylorRep:
        return self.g.taylor

    @property
    def kc_raw(self) -> TaylorRep:
        return self.k_c.taylor

    def F(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return z @ self.linear.block_matrix.T + self.g(z)

    def F_jet(self, z: np.ndarray, m: int) -> list[np.ndarray]:
        """``[F, DF, ..., D^mF]`` at block-coordinate points."""
        jet = self.g.jet(z, m)
        jet[0] = jet[0] + np.atleast_2d(z) @ self.linear.block_matrix.T
        if m >= 1:
            jet[1] = jet[1] + self.linear.block_matrix[None]
        return jet

    # ----------------------------------------------------------------- grid
    @property
    def box_half_width(self) -> float:
        return self.cutoff.outer_radius * (1.0 + self.margin)

    def grid_template(self, resolution: int | None = None) -> GridRep:
        """An all-zero grid over the center box."""
        res = resolution or self.resolution
        B = self.box_half_width
        dc = self.dim_c
        vals = np.zeros((res,) * dc + (0,))
        return GridRep(-B * np.ones(dc), B * np.ones(dc), vals, self.stencil_order)

    # -------------------------------------------------------------- constants
    @cached_property
    def lipschitz(self) -> dict[str, float]:
        """Sampled ``L_g``, ``L_c``, ``eps = max(|D^2 g|, |D^2 k_c|)`` and closed-form bounds.

        ``L_g`` and ``|D^2 g|`` use the max-block operator norm over the
        ambient outer ball; ``k_c`` lives on the single block ``X_c``.
        """
        sp = self.splitting
        blocks = [s for s in (sp.sl_c, sp.sl_u, sp.sl_s) if s.stop > s.start]
        per_axis = {1: 4001, 2: 601, 3: 81}.get(sp.dim, 21)
        pts = ball_samples(sp.dim, self.cutoff.outer_radius, per_axis)
        d1 = block_opnorm(self.g.derivative(pts, 1), blocks, blocks).max(initial=0.0)
        d2 = block_opnorm(self.g.derivative(pts, 2), blocks, blocks).max(initial=0.0)
        per_c = {1: 4001, 2: 601, 3: 81}.get(sp.dim_c, 21)
        cpts = ball_samples(sp.dim_c, self.cutoff.outer_radius, per_c)
        c1 = tensor_opnorm(self.k_c.derivative(cpts, 1)).max(initial=0.0)
        c2 = tensor_opnorm(self.k_c.derivative(cpts, 2)).max(initial=0.0)
        nb = len(blocks)
        g_loc = localize(SmoothMapRep(self.g.taylor), self.cutoff)
        kc_loc = localize(SmoothMapRep(self.k_c.taylor), self.cutoff)
        return {
            "L_g": float(d1),
            "L_c": float(c1),
            "D2g": float(d2),
            "D2kc": float(c2),
            "eps": float(max(d2, c2)),
            "L_g_bound": float(math.sqrt(nb) * g_loc.norm_cache["bound_D1"]),
            "D2g_bound": float(nb * g_loc.norm_cache["bound_D2"]),
            "L_c_bound": float(kc_loc.norm_cache["bound_D1"]),
            "D2kc_bound": float(kc_loc.norm_cache["bound_D2"]),
        }

    def with_kc(self, kc_raw: TaylorRep) -> ProblemInstance:
        """Same map ``F`` with a different choice of ``k_c``."""
        k_c = SmoothMapRep(kc_raw, label="k_c").localized(self.cutoff) if kc_raw.degree() >= 0 else SmoothMapRep(kc_raw, label="k_c")
        return ProblemInstance(
            self.splitting, self.linear, self.g, k_c, self.cutoff, self.n, self.resolution, self.margin,
            self.stencil_order, self.taylor_cap, dict(self.tolerances), self.name, self.source_hash,
        )

    def with_settings(self, **kw) -> ProblemInstance:
        fields = dict(
            splitting=self.splitting, linear=self.linear, g=self.g, k_c=self.k_c, cutoff=self.cutoff,
            n=self.n, resolution=self.resolution, margin=self.margin, stencil_order=self.stencil_order,
            taylor_cap=self.taylor_cap, tolerances=dict(self.tolerances), name=self.name,
            source_hash=self.source_hash,
        )
        fields.update(kw)
        return ProblemInstance(**fields)


def _check_second_order(t: TaylorRep, label: str) -> None:
    for k in (0, 1):
        if np.abs(t.homogeneous(k).coeffs).max(initial=0.0) != 0.0:
            raise InvalidNonlinearity(f"{label} must vanish to second order at 0 (degree-{k} terms present)")
    # ray probe: |f(s v)| / s^2 stays bounded as s -> 0
    v = np.ones(t.domain_dim) / math.sqrt(max(t.domain_dim, 1))
    s = np.geomspace(1e-1, 1e-6, 6)
    ratios = np.linalg.norm(t(s[:, None] * v[None, :]), axis=1) / s**2
    if not np.all(np.isfinite(ratios)) or ratios[-1] > 10 * ratios[0] + 1e-12:
        raise InvalidNonlinearity(f"{label} does not vanish to second order along the ray probe")


# --------------------------------------------------------------------------
# problem files
# --------------------------------------------------------------------------
_REQUIRED = ("matrix_A", "g_coeffs", "cutoff_inner", "cutoff_outer", "order_n")


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _parse_table(raw, dim_in: int, dim_out: int, key: str, text: str) -> TaylorRep:
    """Coefficient table ``{component: {"i,j,...": value}}`` to a Taylor table."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{key} must be an object keyed by output component", _line_of(text, key))
    table: dict[tuple[int, ...], np.ndarray] = {}
    for comp, terms in raw.items():
        try:
            c = int(comp)
        except ValueError:
            raise ConfigError(f"{key}: component key {comp!r} is not an integer", _line_of(text, key)) from None
        if not 0 <= c < dim_out:
            raise ConfigError(f"{key}: component {c} out of range 0..{dim_out - 1}", _line_of(text, key))
        if not isinstance(terms, dict):
            raise ConfigError(f"{key}[{comp}] must map multi-indices to numbers", _line_of(text, key))
        for mi, val in terms.items():
            try:
                alpha = tuple(int(a) for a in str(mi).split(","))
            except ValueError:
                raise ConfigError(f"{key}: bad multi-index {mi!r}", _line_of(text, key)) from None
            if len(alpha) != dim_in or min(alpha) < 0:
                raise ConfigError(f"{key}: multi-index {mi!r} needs {dim_in} nonnegative entries", _line_of(text, key))
            if not isinstance(val, (int, float)):
                raise ConfigError(f"{key}: coefficient for {mi!r} is not a number", _line_of(text, key))
            vec = table.setdefault(alpha, np.zeros(dim_out))
            vec[c] += float(val)
    cap = max((sum(a) for a in table), default=2)
    return TaylorRep.from_dict(table, dim_in, dim_out, cap=max(cap, 2))


def problem_from_dict(cfg: dict, text: str = "") -> ProblemInstance:
    """Build a :class:`ProblemInstance` from the parsed problem-file object."""
    if not isinstance(cfg, dict):
        raise ConfigError("problem file must hold a JSON object", 1)
    for key in _REQUIRED:
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}", 1)
    try:
        A = np.asarray(cfg["matrix_A"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("matrix_A must be a list of numeric rows", _line_of(text, "matrix_A")) from None
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise ConfigError("matrix_A must be a nonempty square matrix (row-major)", _line_of(text, "matrix_A"))
    tols = dict(DEFAULT_TOLERANCES)
    user_tols = cfg.get("tolerances", {})
    if not isinstance(user_tols, dict):
        raise ConfigError("tolerances must be an object", _line_of(text, "tolerances"))
    for k, v in user_tols.items():
        if k not in tols or not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"bad tolerance entry {k!r}", _line_of(text, "tolerances"))
        tols[k] = float(v)
    for key in ("cutoff_inner", "cutoff_outer"):
        if not isinstance(cfg[key], (int, float)):
            raise ConfigError(f"{key} must be a number", _line_of(text, key))
    n = cfg["order_n"]
    if not isinstance(n, int) or n < 2:
        raise ConfigError("order_n must be an integer >= 2", _line_of(text, "order_n"))

    split, lin = build_splitting(A, tols["eigen"])
    if cfg.get("rescale", False):
        lin = rescale_norm(lin, n)
        split = split.transformed(lin.transforms)
    cutoff_order = cfg.get("cutoff_order", n)
    if not isinstance(cutoff_order, int) or cutoff_order < n:
        # the bump is C^cutoff_order, so a smaller order would cap the smoothness of g
        raise ConfigError(f"cutoff_order must be an integer >= order_n = {n}", _line_of(text, "cutoff_order"))
    try:
        cutoff = CutoffFunction(float(cfg["cutoff_inner"]), float(cfg["cutoff_outer"]), cutoff_order)
    except ConfigError as exc:
        raise ConfigError(str(exc), _line_of(text, "cutoff_inner")) from None

    d = A.shape[0]
    g_amb = _parse_table(cfg["g_coeffs"], d, d, "g_coeffs", text)
    # ambient -> block coordinates: g_b(z) = B g(B^{-1} z)
    g_blk = g_amb.compose(TaylorRep.linear(split.basis_change_inv, g_amb.degree_cap), g_amb.degree_cap).left_matmul(split.basis_change)
    kc = _parse_table(cfg.get("kc_coeffs", {}) or {}, split.dim_c, split.dim_c, "kc_coeffs", text)
    grid = cfg.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("grid must be an object", _line_of(text, "grid"))
    try:
        g_map = SmoothMapRep(g_blk, label="g").localized(cutoff)
        kc_map = SmoothMapRep(kc, label="k_c").localized(cutoff)
        return ProblemInstance(
            splitting=split,
            linear=lin,
            g=g_map,
            k_c=kc_map,
            cutoff=cutoff,
            n=n,
            resolution=int(grid.get("resolution", 0)),
            margin=float(grid.get("margin", 0.1)),
            stencil_order=int(grid.get("stencil_order", 4)),
            taylor_cap=int(cfg.get("taylor_cap", 8)),
            tolerances=tols,
            name=str(cfg.get("name", "")),
            source_hash=hashlib.sha256(text.encode()).hexdigest() if text else "",
        )
    except InvalidNonlinearity as exc:
        raise InvalidNonlinearity(f"{exc} (line {_line_of(text, 'g_coeffs')})") from None


def parse_problem(text: str) -> ProblemInstance:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return problem_from_dict(cfg, text)


def load_problem(path: str | Path) -> ProblemInstance:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read problem file {p}: {exc}") from None
    return parse_problem(text)
