"""A-posteriori bounds: defect of an approximate pair and the certified distance.

For an approximate conjugacy ``K0 = iota + (k_c, k0)`` and center map
``R0 = A_c + r0`` with defect ``eps_def = |F o K0 - K0 o R0|_m``, the true
fixed point ``Lambda`` satisfies ``|Lambda - (r0, k0)|_m <= C(M, m) eps_def``
where the constant follows the recursion

    C(M, 0) = C2(M, 0) / (1 - theta_0)
    C(M, m) = max{C(M, m-1), (C2(M, m) + C3(M, m) C(M, m-1)) / (1 - theta_m)}

with ``C2 = max{1, |A_u^-1|, C1}``.  ``C1`` bounds composition with
``(A_c + r0)^{-1}`` and is taken from complete Bell polynomials in bounds
on the derivatives of the inverse.  ``C3`` has no closed form; it is
estimated by sampling (see :func:`estimate_c3`), which makes the bound a
best-effort estimate rather than a rigorous enclosure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import ConstantsLedger, ledger_for_problem
from .errors import InfeasibleConstants, PreconditionFailed
from .funcspace import GridRep, SmoothMapRep, TaylorRep, ball_samples, fdb_from_jets, set_partitions, tensor_opnorm
from .linmodel import ProblemInstance, block_opnorm
from .theta import (
    ConjugacyTriple,
    DerivativeTriple,
    _apply_theta,
    theta2_apply,
    theta_m_apply,
)

__all__ = [
    "DefectReport",
    "PairMap",
    "defect_norm",
    "error_constant",
    "estimate_c3",
    "inverse_derivative_bounds",
    "bell_bound",
    "certify",
    "pair_triple",
]


# --------------------------------------------------------------------------
# approximate pairs
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PairMap:
    """``K`` or ``R`` of a triple, evaluated through the component jets."""

    triple: ConjugacyTriple
    which: str

    def jet(self, pts, m: int) -> list[np.ndarray]:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self.triple.K_jet(pts, m) if self.which == "K" else self.triple.R_jet(pts, m)

    def __call__(self, pts) -> np.ndarray:
        return self.jet(pts, 0)[0]


def _as_rep(obj, dim_in: int, dim_out: int, label: str) -> SmoothMapRep:
    if isinstance(obj, SmoothMapRep):
        return obj
    if isinstance(obj, TaylorRep):
        return SmoothMapRep(obj, label=label)
    if obj is None:
        return SmoothMapRep(TaylorRep.zeros(dim_in, dim_out, 2), label=label)
    raise TypeError(f"cannot use {type(obj).__name__} as a map")


def pair_triple(problem: ProblemInstance, k0, r0, *, localize: bool = True) -> ConjugacyTriple:
    """Triple ``(r0, k0_u, k0_s)`` with the problem's ``k_c``.

    ``k0`` maps into ``X_u + X_s`` (stacked); polynomial inputs are
    multiplied by the problem's cutoff when ``localize`` is set, which makes
    their ``C^{m+1}`` norms finite.
    """
    dc, du, ds = problem.dim_c, problem.dim_u, problem.dim_s
    k0 = _as_rep(k0, dc, du + ds, "k0")
    r0 = _as_rep(r0, dc, dc, "r0")
    if k0.codomain_dim != du + ds or r0.codomain_dim != dc:
        raise ValueError("k0 must map X_c into X_u + X_s and r0 into X_c")

    def loc(f: SmoothMapRep) -> SmoothMapRep:
        return f.localized(problem.cutoff) if (localize and f.is_polynomial) else f

    ku = SmoothMapRep(k0.taylor.component(slice(0, du)), label="k_u")
    ks = SmoothMapRep(k0.taylor.component(slice(du, du + ds)), label="k_s")
    if k0.grid is not None:
        ku = ku.with_grid(k0.grid.with_values(k0.grid.flat_values[:, :du]))
        ks = ks.with_grid(k0.grid.with_values(k0.grid.flat_values[:, du:]))
    return ConjugacyTriple(loc(r0), loc(ku), loc(ks), problem.k_c, problem.linear.A_c)


# --------------------------------------------------------------------------
# defect
# --------------------------------------------------------------------------
def _sample_points(problem: ProblemInstance, radius: float | None, per_axis: int | None) -> np.ndarray:
    radius = problem.cutoff.outer_radius if radius is None else radius
    return ball_samples(problem.dim_c, radius, per_axis)


def defect_norm(problem: ProblemInstance, K0, R0, m: int, *, radius: float | None = None, per_axis: int | None = None) -> float:
    """Sampled ``|F o K0 - K0 o R0|_m`` over the center ball (default: the outer cutoff radius).

    ``K0`` and ``R0`` need a ``jet(points, m)`` method (a :class:`SmoothMapRep`
    or :class:`PairMap`).  Derivatives of both compositions come from the
    partition form of Faa di Bruno on exact jets; norms are max-block
    operator norms (Frobenius within blocks for ``m >= 2``).
    """
    pts = _sample_points(problem, radius, per_axis)
    sp = problem.splitting
    out_blocks = [s for s in (sp.sl_c, sp.sl_u, sp.sl_s) if s.stop > s.start]
    in_blocks = [slice(0, problem.dim_c)]
    Kj = K0.jet(pts, m)
    Rj = R0.jet(pts, m)
    Fj = problem.F_jet(Kj[0], m)
    KRj = K0.jet(Rj[0], m)
    best = float(sp.norm(Fj[0] - KRj[0]).max(initial=0.0))
    for k in range(1, m + 1):
        diff = fdb_from_jets(Fj, Kj, k) - fdb_from_jets(KRj, Rj, k)
        best = max(best, float(block_opnorm(diff, out_blocks, in_blocks).max(initial=0.0)))
    return best


def polynomial_defect_bound(problem: ProblemInstance, table: TaylorRep, m: int, radius: float) -> float:
    """Coefficient-majorant bound on the defect of an unlocalized polynomial pair on a ball.

    Valid on balls where the cutoffs are identically one (``radius`` small
    enough that ``K0`` stays inside the inner ball).
    """
    from .taylor import conjugacy_residual

    cap = max(table.degree_cap, problem.g_raw.degree_cap) ** 2
    res = conjugacy_residual(problem, table, cap)
    return max(res.majorant(radius, k) for k in range(m + 1))


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------
def bell_bound(tau: list[float], j: int) -> float:
    """Complete Bell polynomial ``Y_j(tau_1, ..., tau_j)`` (``Y_0 = 1``)."""
    if j == 0:
        return 1.0
    return float(sum(math.prod(tau[len(b) - 1] for b in part) for part in set_partitions(j)))


def inverse_derivative_bounds(L_m1: float, M: float, m: int) -> list[float]:
    """Bounds ``tau_j >= |D^j (A_c + r0)^{-1}|`` for ``1 <= j <= m``.

    ``tau_1 = L_m1`` and, from ``D^jT = -DT[D^j r(T)(DT)^j + P_j(R, T)]``
    with ``|D^k r0| <= M``, ``tau_j = L_m1 M (tau_1^j + sum over partitions
    with 2..j-1 blocks of prod tau_|B|)``.
    """
    tau: list[float] = []
    for j in range(1, m + 1):
        if j == 1:
            tau.append(L_m1)
            continue
        mid = sum(math.prod(tau[len(b) - 1] for b in part) for part in set_partitions(j) if 2 <= len(part) <= j - 1)
        tau.append(L_m1 * M * (tau[0] ** j + mid))
    return tau


def error_constant(ledger: ConstantsLedger, M: float, m: int, gbound_estimate=0.0) -> tuple[float, dict]:
    """``C(M, m)`` by the recursion, with the per-level breakdown.

    ``gbound_estimate`` is ``C3`` as one number for all levels or a
    sequence indexed by level (entry 0 unused).
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    if m > ledger.theta.shape[0] - 1:
        raise InfeasibleConstants(f"ledger has no theta_{m}")
    thetas = [ledger.theta_max(k) for k in range(m + 1)]
    for k, th in enumerate(thetas):
        if not th < 1:
            raise InfeasibleConstants(f"theta_{k} < 1 violated ({th:.6g})")
    tau = inverse_derivative_bounds(ledger.L_m1, M, m)
    C1 = [max(bell_bound(tau, j) for j in range(k + 1)) for k in range(m + 1)]
    a_ui = ledger.norms["A_u_inv"]
    C2 = [max(1.0, a_ui, c) for c in C1]
    if np.isscalar(gbound_estimate):
        C3 = [float(gbound_estimate)] * (m + 1)
    else:
        C3 = [float(v) for v in gbound_estimate]
        C3 += [C3[-1]] * (m + 1 - len(C3))
    C = [C2[0] / (1 - thetas[0])]
    for k in range(1, m + 1):
        C.append(max(C[k - 1], (C2[k] + C3[k] * C[k - 1]) / (1 - thetas[k])))
    return C[m], {"theta": thetas, "tau": tau, "C1": C1, "C2": C2, "C3": C3, "C": C}


def _grid_triple_values(tr: ConjugacyTriple, grid: GridRep) -> list[np.ndarray]:
    return [f(grid.nodes) for f in tr.components]


def _blend(problem: ProblemInstance, grid: GridRep, a: list[np.ndarray], b: list[np.ndarray], s: float) -> ConjugacyTriple:
    comps = []
    for label, va, vb in zip(("r", "k_u", "k_s"), a, b):
        vals = (1 - s) * va + s * vb
        comps.append(SmoothMapRep(TaylorRep.zeros(problem.dim_c, vals.shape[1], 2), grid.with_values(vals), None, math.inf, {}, label))
    return ConjugacyTriple(*comps, problem.k_c, problem.linear.A_c)


def _exact_derivative_triple(tr: ConjugacyTriple, grid: GridRep, k: int) -> DerivativeTriple:
    arrays = [f.derivative(grid.nodes, k) for f in tr.components]
    return DerivativeTriple.from_node_tensors(grid, arrays, k)


def _cm_distance(grid: GridRep, a: list[np.ndarray], b: list[np.ndarray], m: int) -> float:
    """``max_{j <= m} sup |D^j (a - b)|`` from grid values (finite differences for ``j >= 1``)."""
    best = 0.0
    for va, vb in zip(a, b):
        if va.shape[1] == 0:
            continue
        d = grid.with_values(va - vb)
        for j in range(m + 1):
            best = max(best, float(tensor_opnorm(d.node_tensor(j)).max(initial=0.0)))
    return best


def estimate_c3(
    problem: ProblemInstance,
    approx: ConjugacyTriple,
    m: int,
    endpoint: ConjugacyTriple | None = None,
    grid: GridRep | None = None,
    steps: int = 10,
    safety: float = 2.0,
) -> float:
    """Sampled bound on the derivative of the order-``m`` operator along a segment.

    ``G(s)`` is the order-``m`` derivative operator applied to ``D^m approx``
    with the lower-order data taken from ``N(s) = (1 - s) approx + s endpoint``
    (``endpoint`` defaults to ``Theta(approx)``).  The estimate is
    ``safety * max_s |G(s+h) - G(s)|_0 / h / |endpoint - approx|_{m-1}``.
    """
    if m < 1:
        return 0.0
    grid = grid if grid is not None else problem.grid_template()
    if approx.grid is None:
        approx_g = approx.on_grid(grid)
    else:
        approx_g = approx
    if endpoint is None:
        endpoint = _apply_theta(approx_g, problem, grid, problem.tolerances["picard"])
    va = _grid_triple_values(approx, grid)
    vb = _grid_triple_values(endpoint, grid)
    denom = _cm_distance(grid, vb, va, m - 1)
    if denom == 0.0:
        return 0.0
    Dm = _exact_derivative_triple(approx, grid, m)
    values = []
    for i in range(steps + 1):
        s = i / steps
        lam = _blend(problem, grid, va, vb, s)
        G = theta2_apply(Dm, lam, problem) if m == 1 else theta_m_apply(Dm, lam, m, problem)
        values.append(G.node_tensors())
    h = 1.0 / steps
    worst = 0.0
    for a, b in zip(values[:-1], values[1:]):
        for ta, tb in zip(a, b):
            if ta.size:
                worst = max(worst, float(tensor_opnorm(tb - ta).max(initial=0.0)) / h)
    return safety * worst / denom


# --------------------------------------------------------------------------
# certification
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DefectReport:
    m: int
    M: float
    eps_def: float
    C_const: float
    bound: float
    C1: list
    C2: list
    C3: list
    theta: list
    preconditions_ok: bool
    measured: float | None = None
    contained: bool | None = None
    caveats: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.preconditions_ok and (self.contained is not False)

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "M": self.M,
            "eps_def": self.eps_def,
            "C_const": self.C_const,
            "bound": self.bound,
            "C1": list(self.C1),
            "C2": list(self.C2),
            "C3": list(self.C3),
            "theta": list(self.theta),
            "measured": self.measured,
            "contained": self.contained,
            "passed": self.passed,
            "caveats": list(self.caveats),
        }

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.as_dict().items() if k != "caveats"]
        lines.append("summary: " + ("PASS" if self.passed else "FAIL")
                     + f" (bound {self.bound:.6e}" + (f", measured {self.measured:.6e})" if self.measured is not None else ")"))
        lines += [f"caveat: {c}" for c in self.caveats]
        return "\n".join(lines) + "\n"


def _vanishes_at_zero(f: SmoothMapRep, dc: int, name: str) -> str | None:
    zero = np.zeros((1, dc))
    if np.abs(f(zero)).max(initial=0.0) > 1e-14:
        return f"{name}(0) = 0"
    if np.abs(f.derivative(zero, 1)).max(initial=0.0) > 1e-14:
        return f"D{name}(0) = 0"
    return None


def _cn_sup(f: SmoothMapRep, k: int, pts: np.ndarray) -> float:
    if f.codomain_dim == 0:
        return 0.0
    return max(float(tensor_opnorm(f.derivative(pts, j)).max(initial=0.0)) for j in range(k + 1))


def certify(
    problem: ProblemInstance,
    k0,
    r0,
    m: int,
    M: float | None = None,
    *,
    reference: ConjugacyTriple | None = None,
    ledger: ConstantsLedger | None = None,
    c3: float | None = None,
    per_axis: int | None = None,
) -> DefectReport:
    """Defect, error constant and bound for an approximate pair ``(k0, r0)``.

    Polynomial ``k0``/``r0`` are localized with the problem's cutoff.  With a
    ``reference`` fixed point the measured ``|Lambda - (r0, k0)|_m`` on its
    grid is compared with the bound.  ``M`` defaults to the sampled
    ``C^{m+1}`` norm of the pair.
    """
    ledger = ledger if ledger is not None else ledger_for_problem(problem)
    approx = pair_triple(problem, k0, r0)
    dc = problem.dim_c
    pts = _sample_points(problem, None, per_axis)
    caveats = ["norms are sampled on a finite point set, not enclosed"]
    for f, name in zip(approx.components, ("r0", "k0_u", "k0_s")):
        if f.codomain_dim == 0:
            continue
        msg = _vanishes_at_zero(f, dc, name)
        if msg:
            raise PreconditionFailed(f"{msg} violated")
    norms = [_cn_sup(f, m + 1, pts) for f in approx.components]
    if M is None:
        M = max(norms)
        caveats.append("M taken as the sampled C^{m+1} norm of the pair")
    for val, name in zip(norms, ("r0", "k0_u", "k0_s")):
        if val > M * (1 + 1e-9):
            raise PreconditionFailed(f"|{name}|_{m + 1} <= M violated ({val:.6g} > {M:.6g})")
    dr = float(tensor_opnorm(approx.r.derivative(pts, 1)).max(initial=0.0))
    if dr > ledger.L_r * (1 + 1e-9):
        raise PreconditionFailed(f"|Dr0|_0 <= L_r violated ({dr:.6g} > {ledger.L_r:.6g})")

    eps_def = defect_norm(problem, PairMap(approx, "K"), PairMap(approx, "R"), m, per_axis=per_axis)
    grid = reference.grid if reference is not None and reference.grid is not None else problem.grid_template()
    if c3 is None:
        c3_levels = [0.0] + [estimate_c3(problem, approx, k, reference, grid) for k in range(1, m + 1)]
        if m >= 1:
            caveats.append("C3 estimated by sampling the operator along a segment (safety factor 2)")
    else:
        c3_levels = [float(c3)] * (m + 1)
    C, parts = error_constant(ledger, M, m, c3_levels)
    bound = C * eps_def
    measured = contained = None
    if reference is not None:
        va = _grid_triple_values(approx, grid)
        vb = _grid_triple_values(reference, grid)
        measured = _cm_distance(grid, vb, va, m)
        contained = bool(measured <= bound)
        caveats.append("measured distance uses finite differences on the reference grid")
    return DefectReport(
        m=m, M=float(M), eps_def=eps_def, C_const=C, bound=bound,
        C1=parts["C1"], C2=parts["C2"], C3=parts["C3"], theta=parts["theta"],
        preconditions_ok=True, measured=measured, contained=contained, caveats=caveats,
    )
