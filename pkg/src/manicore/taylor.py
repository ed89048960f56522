"""Order-by-order Taylor solution of the conjugacy equation ``(A + g) o K = K o (A_c + r)``.

At degree ``d`` the order-``d`` parts of ``(r, k_u, k_s)`` are unknown and
everything else is known.  Writing ``E`` for the order-``d`` part of the
residual ``A K + g(K) - K(R)`` with those unknowns set to zero:

* the center block gives ``r_d = E_c`` directly;
* the hyperbolic blocks give ``A_h k_d - k_d o A_c = -E_h``, a linear
  system over degree-``d`` monomials (``h`` is ``u`` or ``s``).

Near the origin the cutoff is identically one, so the unlocalized Taylor
tables of ``g`` and ``k_c`` are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ResonantOrder
from .funcspace import SmoothMapRep, TaylorRep, ball_samples, multi_indices
from .linmodel import ProblemInstance
from .theta import ConjugacyTriple

__all__ = [
    "HomologicalSystem",
    "TaylorResult",
    "solve_order",
    "taylor_pipeline",
    "composition_matrix",
    "conjugacy_residual",
    "sampled_defect",
    "DEFAULT_DEFECT_RADII",
]

DEFAULT_DEFECT_RADII = (0.5, 0.25, 0.125)


def composition_matrix(A_c: np.ndarray, degree: int) -> np.ndarray:
    """Matrix ``S`` with ``m(A_c x) = S m(x)`` on degree-``degree`` monomials ``m``."""
    A_c = np.atleast_2d(A_c)
    dc = A_c.shape[0]
    basis = multi_indices(dc, degree)
    lin = TaylorRep.linear(A_c, 1)
    S = np.zeros((len(basis), len(basis)))
    for j, alpha in enumerate(basis):
        mono = TaylorRep.from_dict({alpha: [1.0]}, dc, 1, cap=degree)
        comp = mono.compose(lin, degree)
        for i, beta in enumerate(basis):
            S[j, i] = comp.coefficient(beta)[0]
    return S


@dataclass(frozen=True, eq=False)
class HomologicalSystem:
    """The order-``d`` linear problem for one hyperbolic block.

    ``matrix`` acts on the column-stacked coefficients ``vec(C)`` of
    ``k_d(x) = C m(x)``; ``rhs`` is ``vec(-E_h)``.
    """

    degree: int
    block: str
    basis: tuple[tuple[int, ...], ...]
    matrix: np.ndarray
    rhs: np.ndarray

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.matrix)) if self.matrix.size else 1.0

    def solve(self, cond_limit: float = 1e12) -> np.ndarray:
        if not self.matrix.size:
            return np.zeros_like(self.rhs)
        cond = self.condition
        if not cond < cond_limit:
            _, _, vt = np.linalg.svd(self.matrix)
            p = self.matrix.shape[0] // len(self.basis)
            worst = int(np.argmax(np.abs(vt[-1]).reshape(len(self.basis), p).sum(axis=1)))
            alpha = self.basis[worst]
            raise ResonantOrder(f"{self.block}-block system at degree {self.degree} has condition {cond:.3e}", alpha)
        return np.linalg.solve(self.matrix, self.rhs)


def _homological(A_h: np.ndarray, S: np.ndarray, E: np.ndarray, degree: int, block: str, basis) -> HomologicalSystem:
    # A_h C - C S = -E  with C of shape (p, N); vec stacks columns of C
    p, N = E.shape
    L = np.kron(np.eye(N), A_h) - np.kron(S.T, np.eye(p))
    return HomologicalSystem(degree, block, tuple(basis), L, (-E).T.reshape(-1))


def _stacked_K(problem: ProblemInstance, table: TaylorRep, cap: int) -> TaylorRep:
    dc = problem.dim_c
    kc = problem.kc_raw.with_cap(cap)
    head = TaylorRep.identity(dc, cap) + kc
    return head.stack(table.with_cap(cap).component(slice(dc, None)))


def conjugacy_residual(problem: ProblemInstance, table: TaylorRep, cap: int) -> TaylorRep:
    """Taylor table through ``cap`` of ``A K + g(K) - K(R)`` for the stacked ``(r, k_u, k_s)``."""
    dc = problem.dim_c
    table = table.with_cap(cap)
    K = _stacked_K(problem, table, cap)
    R = TaylorRep.linear(problem.linear.A_c, cap) + table.component(slice(0, dc))
    AK = K.left_matmul(problem.linear.block_matrix)
    return AK + problem.g_raw.compose(K, cap) - K.compose(R, cap)


def _split_hom(problem: ProblemInstance, hom: TaylorRep, degree: int, basis) -> np.ndarray:
    """Coefficient matrix ``(p, N)`` of a homogeneous table in the monomial basis."""
    return np.stack([hom.coefficient(a) for a in basis], axis=1)


def solve_order(problem: ProblemInstance, d: int, lower: TaylorRep | ConjugacyTriple | None = None) -> TaylorRep:
    """Add the degree-``d`` coefficients to a stacked ``(r, k_u, k_s)`` Taylor table.

    ``lower`` must solve every order below ``d`` exactly (a zero table for
    ``d = 2``).  Returns a table with cap ``d``.
    """
    if d < 2:
        raise ValueError("degree must be at least 2")
    dc = problem.dim_c
    dim = problem.splitting.dim
    if lower is None:
        lower = TaylorRep.zeros(dc, dim, d)
    elif isinstance(lower, ConjugacyTriple):
        lower = lower.taylor
    table = lower.with_cap(d)
    table = table - table.homogeneous(d)
    E_all = conjugacy_residual(problem, table, d).homogeneous(d)
    basis = multi_indices(dc, d)
    E = _split_hom(problem, E_all, d, basis)
    sp = problem.splitting
    S = composition_matrix(problem.linear.A_c, d)
    coeffs = np.zeros((dim, len(basis)))
    coeffs[sp.sl_c] = E[sp.sl_c]
    cond_limit = problem.tolerances.get("condition", 1e12)
    for name, sl, A_h in (("u", sp.sl_u, problem.linear.A_u), ("s", sp.sl_s, problem.linear.A_s)):
        if sl.stop > sl.start:
            system = _homological(A_h, S, E[sl], d, name, basis)
            coeffs[sl] = system.solve(cond_limit).reshape(len(basis), -1).T
    new = {a: coeffs[:, j] for j, a in enumerate(basis)}
    return TaylorRep(table.coeffs + TaylorRep.from_dict(new, dc, dim, cap=d).coeffs, exact=False)


def sampled_defect(problem: ProblemInstance, table: TaylorRep, radius: float, per_axis: int | None = None) -> float:
    """Sup over the center ball of ``|F(K0(x)) - K0(R0(x))|`` (max-block norm, localized ``F`` and ``k_c``)."""
    dc = problem.dim_c
    pts = ball_samples(dc, radius, per_axis)
    hyp = table.component(slice(dc, None))
    r = table.component(slice(0, dc))

    def K(x):
        return np.hstack([x + problem.k_c(x), hyp(x)])

    Rx = pts @ problem.linear.A_c.T + r(pts)
    diff = problem.F(K(pts)) - K(Rx)
    return float(problem.splitting.norm(diff).max(initial=0.0))


@dataclass(frozen=True, eq=False)
class TaylorResult:
    """Stacked Taylor table of ``(r, k_u, k_s)`` and its defect table."""

    table: TaylorRep
    triple: ConjugacyTriple
    radii: tuple[float, ...]
    defects: tuple[float, ...]
    conditions: dict = field(default_factory=dict)

    @property
    def slope(self) -> float:
        """Least-squares slope of log(defect) against log(radius)."""
        r = np.log(np.asarray(self.radii))
        d = np.asarray(self.defects)
        if np.any(d <= 0):
            return math.nan
        return float(np.polyfit(r, np.log(d), 1)[0])

    def defect_table(self) -> str:
        lines = ["# radius defect_C0"]
        lines += [f"{r:.6g} {d:.6e}" for r, d in zip(self.radii, self.defects)]
        lines.append(f"# fitted slope {self.slope:.4f}")
        return "\n".join(lines) + "\n"

    def coefficient_tables(self) -> dict[str, dict[str, dict[str, float]]]:
        """``{"r"|"k_u"|"k_s": {component: {"i,j": value}}}`` in the problem-file layout."""
        out = {}
        for name, comp in zip(("r", "k_u", "k_s"), self.triple.components):
            block: dict[str, dict[str, float]] = {}
            for alpha, vec in comp.taylor.to_dict().items():
                for c, v in enumerate(vec):
                    if v != 0.0:
                        block.setdefault(str(c), {})[",".join(map(str, alpha))] = float(v)
            out[name] = block
        return out


def taylor_pipeline(problem: ProblemInstance, max_degree: int, radii=None) -> TaylorResult:
    """Solve orders ``2..max_degree`` and sample the defect on shrinking balls.

    ``radii`` are absolute radii; the default is ``(0.5, 0.25, 0.125)``
    times the inner cutoff radius.  The defect of an order-``d`` pair
    should scale like ``radius^(d+1)``.
    """
    if max_degree < 2:
        raise ValueError("max_degree must be at least 2")
    dc, dim = problem.dim_c, problem.splitting.dim
    table = TaylorRep.zeros(dc, dim, max_degree)
    conds = {}
    for d in range(2, max_degree + 1):
        table = solve_order(problem, d, table)
        conds[d] = _condition_report(problem, d)
    table = table.with_cap(max_degree)
    if radii is None:
        radii = tuple(f * problem.cutoff.inner_radius for f in DEFAULT_DEFECT_RADII)
    defects = tuple(sampled_defect(problem, table, r) for r in radii)
    sp = problem.splitting
    comps = [
        SmoothMapRep(table.component(s), None, None, math.inf, {}, lab)
        for s, lab in ((sp.sl_c, "r"), (sp.sl_u, "k_u"), (sp.sl_s, "k_s"))
    ]
    triple = ConjugacyTriple(*comps, problem.k_c, problem.linear.A_c)
    return TaylorResult(table, triple, tuple(radii), defects, conds)


def _condition_report(problem: ProblemInstance, d: int) -> dict[str, float]:
    S = composition_matrix(problem.linear.A_c, d)
    N = S.shape[0]
    out = {}
    for name, A_h in (("u", problem.linear.A_u), ("s", problem.linear.A_s)):
        if A_h.size:
            p = A_h.shape[0]
            L = np.kron(np.eye(N), A_h) - np.kron(S.T, np.eye(p))
            out[name] = float(np.linalg.cond(L))
    return out
