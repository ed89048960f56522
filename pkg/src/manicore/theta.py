"""The fixed-point operators for the conjugacy triple and its derivatives.

``Theta`` acts on ``Lambda = (r, k_u, k_s)``:

    r   <- A_c k_c + g_c o K - k_c o R
    k_u <- A_u^{-1} (k_u o R - g_u o K)
    k_s <- A_s k_s o T + g_s o K o T

with ``K = iota + (k_c, k_u, k_s)``, ``R = A_c + r`` and ``T = R^{-1}``.
``theta2_apply`` is the operator whose fixed point is ``D Lambda`` and
``theta_m_apply`` the one whose fixed point is ``D^m Lambda`` for ``m >= 2``.

All operators are evaluated at the nodes of a grid over the center box.
Points that leave the box are evaluated with zero extension, which is the
exact value for a localized problem whose center block is an isometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import ConstantsLedger, derive_ledger, epsilon_threshold, ledger_for_problem
from .errors import (
    EpsilonTooLarge,
    InversionFailure,
    NoConvergence,
    NotAContraction,
    OutsideGamma0,
    SingularPRho,
)
from .funcspace import (
    GridRep,
    SmoothMapRep,
    TaylorRep,
    fdb_from_jets,
    fit_taylor,
    invert_center_map,
    inverse_jet,
    left_apply,
    pullback,
    tensor_opnorm,
)
from .linmodel import ProblemInstance

__all__ = [
    "ConjugacyTriple",
    "DerivativeTriple",
    "TraceRow",
    "FixedPointResult",
    "DerivativeResult",
    "theta_apply",
    "solve_fixed_point",
    "theta2_apply",
    "theta_m_apply",
    "solve_derivative_fixed_point",
    "membership",
    "zero_triple",
    "triple_from_taylor",
    "fd_derivative_triple",
]

_MARGIN = 1e-9


def _sup(rep: SmoothMapRep, m: int, nodes: np.ndarray) -> float:
    if rep.codomain_dim == 0:
        return 0.0
    if rep.grid is not None:
        return float(tensor_opnorm(rep.grid.node_tensor(m)).max(initial=0.0))
    return float(tensor_opnorm(rep.derivative(nodes, m)).max(initial=0.0))


# --------------------------------------------------------------------------
# conjugacy triple
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ConjugacyTriple:
    """``Lambda = (r, k_u, k_s)`` with the fixed ``k_c`` and ``A_c``.

    ``t`` is the inverse offset, ``T = A_c^{-1} + t``, when it has been
    computed for this ``r``.
    """

    r: SmoothMapRep
    k_u: SmoothMapRep
    k_s: SmoothMapRep
    k_c: SmoothMapRep
    A_c: np.ndarray
    t: SmoothMapRep | None = None

    @property
    def dim_c(self) -> int:
        return self.r.codomain_dim

    @property
    def dim_u(self) -> int:
        return self.k_u.codomain_dim

    @property
    def dim_s(self) -> int:
        return self.k_s.codomain_dim

    @property
    def components(self) -> tuple[SmoothMapRep, SmoothMapRep, SmoothMapRep]:
        return self.r, self.k_u, self.k_s

    @property
    def grid(self) -> GridRep | None:
        return self.r.grid

    @property
    def nodes(self) -> np.ndarray:
        if self.grid is None:
            raise ValueError("this triple carries no grid")
        return self.grid.nodes

    # ----------------------------------------------------------- evaluation
    def K(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.hstack([x + self.k_c(x), self.k_u(x), self.k_s(x)])

    def K_jet(self, x, m: int) -> list[np.ndarray]:
        """``[K, DK, ..., D^mK]`` at points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        jets = [f.jet(x, m) for f in (self.k_c, self.k_u, self.k_s)]
        out = [np.concatenate([j[k] for j in jets], axis=1) for k in range(m + 1)]
        out[0][:, : self.dim_c] += x
        if m >= 1:
            out[1][:, : self.dim_c] += np.eye(self.dim_c)[None]
        return out

    def R(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.A_c.T + self.r(x)

    def R_jet(self, x, m: int) -> list[np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self.r.jet(x, m)
        out[0] = out[0] + x @ self.A_c.T
        if m >= 1:
            out[1] = out[1] + self.A_c[None]
        return out

    def T(self, x) -> np.ndarray:
        if self.t is None:
            raise ValueError("inverse offset t has not been computed")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ np.linalg.inv(self.A_c).T + self.t(x)

    def T_jet(self, x, m: int) -> list[np.ndarray]:
        if self.t is None:
            raise ValueError("inverse offset t has not been computed")
        return inverse_jet(self.r, self.t, self.A_c, x, m)

    def with_inverse(self, tol: float = 1e-13, max_iter: int = 200) -> ConjugacyTriple:
        """Same triple with ``t`` computed by global inversion of ``R``."""
        try:
            t = invert_center_map(self.r, self.A_c, tol=tol, max_iter=max_iter, grid=self.grid)
        except (NotAContraction, NoConvergence) as exc:
            raise InversionFailure(str(exc)) from exc
        return ConjugacyTriple(self.r, self.k_u, self.k_s, self.k_c, self.A_c, t)

    # ---------------------------------------------------------------- views
    @property
    def taylor(self) -> TaylorRep:
        """Stacked Taylor table of ``(r, k_u, k_s)``."""
        return self.r.taylor.stack(self.k_u.taylor, self.k_s.taylor)

    def K_rep(self) -> SmoothMapRep:
        """``K`` as a map representation (Taylor table uses the unlocalized ``k_c``)."""
        dc = self.dim_c
        ident = TaylorRep.identity(dc, 1)
        table = (ident + self.k_c.taylor).stack(self.k_u.taylor, self.k_s.taylor)
        grid = self.grid.with_values(self.K(self.grid.nodes)) if self.grid is not None else None
        return SmoothMapRep(table, grid, None, self.r.trust_radius, {}, "K")

    def R_rep(self) -> SmoothMapRep:
        table = TaylorRep.linear(self.A_c, 1) + self.r.taylor
        grid = self.grid.with_values(self.R(self.grid.nodes)) if self.grid is not None else None
        return SmoothMapRep(table, grid, None, self.r.trust_radius, {}, "R")

    def values(self, pts=None) -> np.ndarray:
        """``(r, k_u, k_s)`` stacked at points (default: the grid nodes)."""
        pts = self.nodes if pts is None else np.atleast_2d(pts)
        return np.hstack([f(pts) for f in self.components])

    def on_grid(self, grid: GridRep) -> ConjugacyTriple:
        """Sample each component onto ``grid`` (keeps the Taylor tables)."""
        comps = [f.with_grid(grid.with_values(f(grid.nodes))) for f in self.components]
        return ConjugacyTriple(*comps, self.k_c, self.A_c, None)

    def with_taylor(self, degree: int, radius: float, cap: int | None = None) -> ConjugacyTriple:
        """Replace Taylor tables by least-squares fits of the grid values on a ball."""
        comps = []
        for f in self.components:
            table = fit_taylor(f.grid, degree, radius, lowest=2, cap=cap)
            comps.append(SmoothMapRep(table, f.grid, None, radius, {}, f.label))
        return ConjugacyTriple(*comps, self.k_c, self.A_c, self.t)


def zero_triple(problem: ProblemInstance, grid: GridRep | None = None) -> ConjugacyTriple:
    """``Lambda = 0`` sampled on the problem's center grid."""
    grid = grid if grid is not None else problem.grid_template()
    comps = []
    for label, p in (("r", problem.dim_c), ("k_u", problem.dim_u), ("k_s", problem.dim_s)):
        comps.append(SmoothMapRep(TaylorRep.zeros(problem.dim_c, p, 2), grid.with_values(np.zeros((grid.nodes.shape[0], p))), None, math.inf, {}, label))
    return ConjugacyTriple(*comps, problem.k_c, problem.linear.A_c)


def triple_from_taylor(problem: ProblemInstance, table: TaylorRep, grid: GridRep | None = None) -> ConjugacyTriple:
    """Triple whose components are the blocks of a stacked Taylor table ``(r, k_u, k_s)``.

    With ``grid`` the polynomial values are sampled onto it as well.
    """
    dc, du = problem.dim_c, problem.dim_u
    parts = [table.component(slice(0, dc)), table.component(slice(dc, dc + du)), table.component(slice(dc + du, None))]
    comps = []
    for label, t in zip(("r", "k_u", "k_s"), parts):
        g = grid.with_values(t(grid.nodes)) if grid is not None else None
        comps.append(SmoothMapRep(t, g, None, math.inf, {}, label))
    return ConjugacyTriple(*comps, problem.k_c, problem.linear.A_c)


# --------------------------------------------------------------------------
# membership
# --------------------------------------------------------------------------
def _taylor_vanishes(f: SmoothMapRep) -> str | None:
    t = f.taylor
    if np.any(t.homogeneous(0).coeffs != 0):
        return "Lambda(0) = 0"
    if np.any(t.homogeneous(1).coeffs != 0):
        return "DLambda(0) = 0"
    if f.grid is not None:
        nodes = f.grid.nodes
        at0 = np.all(np.isclose(nodes, 0.0, atol=1e-14), axis=1)
        if at0.any() and np.abs(f.grid.flat_values[at0]).max(initial=0.0) > 1e-12:
            return "Lambda(0) = 0"
    return None


def membership(obj, which: str, ledger: ConstantsLedger, *, delta: float | None = None, nodes=None) -> tuple[bool, str | None]:
    """Check membership in ``Gamma0``, ``Gamma1`` (needs ``delta``), ``Gamma2`` or ``Gamma_m+1``.

    ``obj`` is a :class:`ConjugacyTriple` for ``Gamma0``/``Gamma1`` and a
    :class:`DerivativeTriple` for ``Gamma2``/``Gamma_m+1``.  Norms are
    sampled at grid nodes (finite differences); each inequality allows a
    relative margin of 1e-9.  Returns ``(ok, first violated clause)``.
    """
    delta = ledger.delta if delta is None else delta
    bounds = (ledger.L_r, ledger.L_u, ledger.L_s)
    names = ("r", "k_u", "k_s")
    if which in ("Gamma0", "Gamma1"):
        if nodes is None:
            nodes = obj.nodes if obj.grid is not None else np.zeros((1, obj.dim_c))
        for f in obj.components:
            msg = _taylor_vanishes(f)
            if msg:
                return False, msg
        for f, name, bound in zip(obj.components, names, bounds):
            val = _sup(f, 1, nodes)
            if val > bound * (1 + _MARGIN) + _MARGIN:
                return False, f"|D{name}|_0 <= L_{name[-1]} violated ({val:.6g} > {bound:.6g})"
        if which == "Gamma1":
            val = max(_sup(f, 2, nodes) for f in obj.components)
            if val > delta * (1 + _MARGIN) + _MARGIN:
                return False, f"|D^2 Lambda|_0 <= delta violated ({val:.6g} > {delta:.6g})"
        return True, None
    if which in ("Gamma2", "Gamma_m+1"):
        comps = obj.components
        for f, name in zip(comps, ("rho", "kappa_u", "kappa_s")):
            g = f.grid
            if g is None or g.codomain_dim == 0:
                continue
            at0 = np.all(np.isclose(g.nodes, 0.0, atol=1e-14), axis=1)
            if which == "Gamma2" and at0.any() and np.abs(g.flat_values[at0]).max() > 1e-12:
                return False, "M(0) = 0"
        if which == "Gamma2":
            for f, name, bound in zip(comps, ("rho", "kappa_u", "kappa_s"), bounds):
                val = obj.sup_norm(f)
                if val > bound * (1 + _MARGIN) + _MARGIN:
                    return False, f"|{name}|_0 <= L_{name[-1] if name != 'rho' else 'r'} violated ({val:.6g} > {bound:.6g})"
            val = max(obj.sup_derivative_norm(f) for f in comps)
            if val > delta * (1 + _MARGIN) + _MARGIN:
                return False, f"|DM|_0 <= delta violated ({val:.6g} > {delta:.6g})"
        return True, None
    raise ValueError(f"unknown set {which!r}")


# --------------------------------------------------------------------------
# Theta
# --------------------------------------------------------------------------
def _split(problem: ProblemInstance, v: np.ndarray):
    sp = problem.splitting
    return v[:, sp.sl_c], v[:, sp.sl_u], v[:, sp.sl_s]


def _apply_theta(lam: ConjugacyTriple, problem: ProblemInstance, grid: GridRep, picard_tol: float) -> ConjugacyTriple:
    lin = problem.linear
    x = grid.nodes
    lam = lam.with_inverse(tol=picard_tol) if lam.t is None else lam
    kc = problem.k_c
    Kx = lam.K(x)
    gK_c, gK_u, _ = _split(problem, problem.g(Kx))
    Rx = lam.R(x)
    new_r = kc(x) @ lin.A_c.T + gK_c - kc(Rx)
    new_u = (lam.k_u(Rx) - gK_u) @ lin.A_u_inv.T if problem.dim_u else np.zeros((x.shape[0], 0))
    if problem.dim_s:
        Tx = lam.T(x)
        _, _, gKT_s = _split(problem, problem.g(lam.K(Tx)))
        new_s = lam.k_s(Tx) @ lin.A_s.T + gKT_s
    else:
        new_s = np.zeros((x.shape[0], 0))
    comps = []
    for label, vals in (("r", new_r), ("k_u", new_u), ("k_s", new_s)):
        p = vals.shape[1]
        comps.append(SmoothMapRep(TaylorRep.zeros(problem.dim_c, p, 2), grid.with_values(vals), None, math.inf, {}, label))
    return ConjugacyTriple(*comps, problem.k_c, lin.A_c)


def theta_apply(lam: ConjugacyTriple, problem: ProblemInstance, ledger: ConstantsLedger, *, check: bool = True) -> ConjugacyTriple:
    """One application of ``Theta``, evaluated on the triple's grid (or the problem's).

    The returned triple carries grid values with zero Taylor tables; call
    :meth:`ConjugacyTriple.with_taylor` for fitted coefficients.
    """
    grid = lam.grid if lam.grid is not None else problem.grid_template()
    if check:
        ok, msg = membership(lam, "Gamma0", ledger, nodes=grid.nodes)
        if not ok:
            raise OutsideGamma0(msg)
    out = _apply_theta(lam, problem, grid, problem.tolerances["picard"])
    if check:
        ok, msg = membership(out, "Gamma0", ledger)
        if not ok:
            raise OutsideGamma0(f"output left Gamma0: {msg}")
    return out


@dataclass(frozen=True)
class TraceRow:
    sweep: int
    diff_c0: float
    diff_c1: float
    ratio: float
    residual_r: float
    residual_u: float
    residual_s: float


def _trace_table(rows: list[TraceRow], header: str = "") -> str:
    lines = [header] if header else []
    lines.append("# sweep diff_C0 diff_C1 ratio res_r res_u res_s")
    for t in rows:
        lines.append(f"{t.sweep} {t.diff_c0:.6e} {t.diff_c1:.6e} {t.ratio:.6f} {t.residual_r:.6e} {t.residual_u:.6e} {t.residual_s:.6e}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    """Converged triple, per-sweep trace, and the ledger actually used.

    ``scale`` is the factor ``s`` of the scaling argument when the ledger
    was evaluated at ``s eps`` because ``eps`` exceeded the threshold.
    """

    triple: ConjugacyTriple
    trace: list[TraceRow]
    ledger: ConstantsLedger
    eps0: float
    scale: float = 1.0

    @property
    def sweeps(self) -> int:
        return len(self.trace)

    @property
    def max_ratio(self) -> float:
        vals = [t.ratio for t in self.trace if math.isfinite(t.ratio)]
        return max(vals) if vals else float("nan")

    def ratios(self) -> list[float]:
        return [t.ratio for t in self.trace if math.isfinite(t.ratio)]

    def trace_table(self) -> str:
        return _trace_table(self.trace)


def _diff_norms(a: ConjugacyTriple, b: ConjugacyTriple) -> tuple[float, float, list[float]]:
    per = []
    c1 = 0.0
    for fa, fb in zip(a.components, b.components):
        if fa.codomain_dim == 0:
            per.append(0.0)
            continue
        d = fa.grid.flat_values - fb.grid.flat_values
        per.append(float(np.linalg.norm(d, axis=1).max(initial=0.0)))
        dgrid = fa.grid.with_values(d)
        c1 = max(c1, float(tensor_opnorm(dgrid.node_tensor(1)).max(initial=0.0)))
    c0 = max(per)
    return c0, max(c0, c1), per


def solve_fixed_point(
    problem: ProblemInstance,
    ledger: ConstantsLedger | None = None,
    tol: float = 1e-11,
    max_iter: int = 500,
    *,
    start: ConjugacyTriple | None = None,
    autoscale: bool = True,
    check_constants: bool = True,
    fit_degree: int | None = None,
) -> FixedPointResult:
    """Iterate ``Lambda <- Theta(Lambda)`` from ``Lambda_0 = 0`` until the C^1 step is below ``tol``.

    The C^1 step is ``max(|dLambda|_0, |D dLambda|_0)`` on the grid with
    finite-difference derivatives.  When the sampled ``eps`` exceeds the
    threshold ``eps0`` of the C^1 stage, the scaling ``h -> h(s x)/s``
    brings it below; since that conjugation commutes with ``Theta``, the
    iteration runs in the original coordinates and only the ledger is
    evaluated at ``s eps`` (``autoscale=False`` raises instead).
    """
    if ledger is None:
        ledger = ledger_for_problem(problem)
    eps0 = math.nan
    scale = 1.0
    work = ledger
    if check_constants:
        ledger.require_feasible()
        fam = lambda e: derive_ledger(ledger.norms, ledger.L_g, ledger.L_c, e, ledger.n)
        eps0 = epsilon_threshold(fam, "C1")
        if ledger.eps > eps0:
            if not autoscale:
                raise EpsilonTooLarge(f"eps = {ledger.eps:.6g} exceeds eps0 = {eps0:.6g}")
            scale = 0.5 * eps0 / ledger.eps
            work = fam(ledger.eps * scale)
    grid = start.grid if start is not None and start.grid is not None else problem.grid_template()
    lam = start.on_grid(grid) if start is not None and start.grid is None else (start or zero_triple(problem, grid))
    if check_constants:
        ok, msg = membership(lam, "Gamma0", work)
        if not ok:
            raise OutsideGamma0(msg)
    picard = problem.tolerances["picard"]
    trace: list[TraceRow] = []
    prev_c0 = math.nan
    for sweep in range(1, max_iter + 1):
        new = _apply_theta(lam, problem, grid, picard)
        c0, c1, per = _diff_norms(new, lam)
        ratio = c0 / prev_c0 if prev_c0 > 1e-11 else math.nan
        trace.append(TraceRow(sweep, c0, c1, ratio, *per))
        prev_c0 = c0
        lam = new
        if c1 <= tol:
            break
    else:
        raise NoConvergence(f"C^1 step {trace[-1].diff_c1:.3e} above {tol:.1e} after {max_iter} sweeps")
    degree = fit_degree if fit_degree is not None else problem.taylor_cap
    lam = lam.with_taylor(degree, 0.5 * problem.cutoff.inner_radius).with_inverse(tol=picard)
    return FixedPointResult(lam, trace, work, eps0, scale)


# --------------------------------------------------------------------------
# derivative triples
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DerivativeTriple:
    """``M = (rho, kappa_u, kappa_s)``: fields of m-linear maps on ``X_c``.

    Each component is grid-backed with flattened values; ``tensor`` returns
    the field at points with shape ``(n, rows) + (dc,) * order``.
    """

    rho: SmoothMapRep
    kappa_u: SmoothMapRep
    kappa_s: SmoothMapRep
    order: int
    dims: tuple[int, int, int]

    @property
    def components(self) -> tuple[SmoothMapRep, SmoothMapRep, SmoothMapRep]:
        return self.rho, self.kappa_u, self.kappa_s

    @property
    def grid(self) -> GridRep:
        return self.rho.grid

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def _shape(self, i: int) -> tuple[int, ...]:
        return (self.dims[i],) + (self.dims[0],) * self.order

    def tensor(self, i: int, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vals = self.components[i](pts)
        return vals.reshape((pts.shape[0],) + self._shape(i))

    def node_tensors(self) -> list[np.ndarray]:
        n = self.nodes.shape[0]
        return [f.grid.flat_values.reshape((n,) + self._shape(i)) for i, f in enumerate(self.components)]

    def sup_norm(self, f: SmoothMapRep) -> float:
        i = self.components.index(f)
        if self.dims[i] == 0:
            return 0.0
        arr = self.node_tensors()[i]
        return float(tensor_opnorm(arr).max(initial=0.0))

    def sup_derivative_norm(self, f: SmoothMapRep) -> float:
        i = self.components.index(f)
        if self.dims[i] == 0:
            return 0.0
        d = f.grid.node_tensor(1)  # (n, flat, dc)
        n = d.shape[0]
        arr = d.reshape((n,) + self._shape(i) + (self.dims[0],))
        return float(tensor_opnorm(arr).max(initial=0.0))

    @classmethod
    def from_node_tensors(cls, grid: GridRep, arrays, order: int) -> DerivativeTriple:
        dims = (arrays[0].shape[1], arrays[1].shape[1], arrays[2].shape[1])
        comps = []
        for label, arr in zip(("rho", "kappa_u", "kappa_s"), arrays):
            flat = arr.reshape(arr.shape[0], -1)
            comps.append(SmoothMapRep(TaylorRep.zeros(grid.dim, flat.shape[1], 0), grid.with_values(flat), None, math.inf, {}, label))
        return cls(*comps, order, dims)

    def distance(self, other: DerivativeTriple) -> float:
        """Max over nodes and components of the entrywise gap."""
        gaps = [np.abs(a - b).max(initial=0.0) for a, b in zip(self.node_tensors(), other.node_tensors())]
        return float(max(gaps))


def fd_derivative_triple(lam: ConjugacyTriple, m: int) -> DerivativeTriple:
    """``D^m Lambda`` at the nodes by finite differences."""
    arrays = [f.grid.node_tensor(m) for f in lam.components]
    return DerivativeTriple.from_node_tensors(lam.grid, arrays, m)


def _prep(lam: ConjugacyTriple, problem: ProblemInstance, picard_tol: float) -> ConjugacyTriple:
    if lam.grid is None:
        lam = lam.on_grid(problem.grid_template())
    if lam.t is None:
        lam = lam.with_inverse(tol=picard_tol)
    return lam


def _blocks(problem: ProblemInstance, arr: np.ndarray):
    sp = problem.splitting
    return arr[:, sp.sl_c], arr[:, sp.sl_u], arr[:, sp.sl_s]


def theta2_apply(M: DerivativeTriple, lam: ConjugacyTriple, problem: ProblemInstance, ledger: ConstantsLedger | None = None) -> DerivativeTriple:
    """One application of the first-derivative operator.

    ``rho <- A_c Dk_c + Dg_c(K) kappa - Dk_c(R) P``,
    ``kappa_u <- A_u^{-1}(kappa_u(R) P - Dg_u(K) kappa)``,
    ``kappa_s <- (A_s kappa_s(T) + Dg_s(K(T)) kappa(T)) Q`` with
    ``P = A_c + rho``, ``Q = (A_c + rho(T))^{-1}`` and
    ``kappa = (Id + Dk_c, kappa_u, kappa_s)``.
    """
    if M.order != 1:
        raise ValueError("theta2_apply acts on first-derivative triples")
    lam = _prep(lam, problem, problem.tolerances["picard"])
    lin = problem.linear
    A_c = lin.A_c
    dc, du, ds = problem.dim_c, problem.dim_u, problem.dim_s
    grid = M.grid
    x = grid.nodes
    n = x.shape[0]
    eye = np.eye(dc)

    def kappa_at(pts):
        Dkc = problem.k_c.derivative(pts, 1)
        return np.concatenate([eye[None] + Dkc, M.tensor(1, pts), M.tensor(2, pts)], axis=1)

    rho = M.tensor(0, x)
    P = A_c[None] + rho
    Kx = lam.K(x)
    Rx = lam.R(x)
    Dg = problem.g.derivative(Kx, 1)
    Dg_c, Dg_u, _ = _blocks(problem, Dg)
    kap = kappa_at(x)
    new_rho = np.einsum("ij,zjk->zik", A_c, problem.k_c.derivative(x, 1)) + np.einsum("zij,zjk->zik", Dg_c, kap)
    new_rho -= np.einsum("zij,zjk->zik", problem.k_c.derivative(Rx, 1), P)
    if du:
        inner = np.einsum("zij,zjk->zik", M.tensor(1, Rx), P) - np.einsum("zij,zjk->zik", Dg_u, kap)
        new_u = np.einsum("ij,zjk->zik", lin.A_u_inv, inner)
    else:
        new_u = np.zeros((n, 0, dc))
    if ds:
        Tx = lam.T(x)
        PT = A_c[None] + M.tensor(0, Tx)
        cond = np.linalg.cond(PT)
        if not np.all(cond < 1e12):
            raise SingularPRho(f"P_rho(T(x)) has condition number {cond.max():.3e}")
        Q = np.linalg.inv(PT)
        DgT = problem.g.derivative(lam.K(Tx), 1)[:, problem.splitting.sl_s]
        inner = np.einsum("ij,zjk->zik", lin.A_s, M.tensor(2, Tx)) + np.einsum("zij,zjk->zik", DgT, kappa_at(Tx))
        new_s = np.einsum("zij,zjk->zik", inner, Q)
    else:
        new_s = np.zeros((n, 0, dc))
    return DerivativeTriple.from_node_tensors(grid, [new_rho, new_u, new_s], 1)


def _pad(jet: list[np.ndarray], m: int) -> list[np.ndarray]:
    """Extend a jet list with zero tensors so index ``m`` exists (unused by remainders)."""
    out = list(jet)
    while len(out) <= m:
        base = out[-1]
        out.append(np.zeros(base.shape + (base.shape[-1] if base.ndim > 2 else 1,)))
    return out


def _remainder(outer: list[np.ndarray], inner: list[np.ndarray], m: int) -> np.ndarray:
    """``P_m`` from jets: Faa di Bruno partitions with 2..m-1 blocks."""
    n, p = outer[0].shape[:2]
    d = inner[1].shape[-1]
    if m == 2:
        return np.zeros((n, p) + (d,) * m)
    return fdb_from_jets(_pad(outer, m), _pad(inner, m), m, min_blocks=2, max_blocks=m - 1)


def _full(outer: list[np.ndarray], inner: list[np.ndarray], m: int) -> list[np.ndarray]:
    """Derivatives ``D^k (f o h)`` for ``k <= m`` from jets."""
    return [outer[0]] + [fdb_from_jets(outer, inner, k) for k in range(1, m + 1)]


def _apply_lin(M: np.ndarray, T: np.ndarray) -> np.ndarray:
    return left_apply(M, T)


def _lower_jet(lam: ConjugacyTriple, pts, m: int, lower: dict[int, DerivativeTriple] | None):
    """Jets of ``(r, k_u, k_s)`` through order ``m`` at points, using supplied derivative triples when given."""
    jets = [f.jet(pts, m) for f in lam.components]
    if lower:
        for k, D in lower.items():
            if k <= m:
                for i in range(3):
                    jets[i][k] = D.tensor(i, pts)
    return jets


def theta_m_apply(
    M: DerivativeTriple,
    lam: ConjugacyTriple,
    m: int,
    problem: ProblemInstance,
    ledger: ConstantsLedger | None = None,
    lower: dict[int, DerivativeTriple] | None = None,
) -> DerivativeTriple:
    """One application of the order-``m`` derivative operator, ``m >= 2``.

    ``M`` holds candidate values of ``(D^m r, D^m k_u, D^m k_s)``.  The
    forcing terms use derivatives of ``Lambda`` of order below ``m``; those
    come from ``lower[k]`` when supplied and otherwise from the grid
    interpolant of ``Lambda``.
    """
    if m < 2 or M.order != m:
        raise ValueError("theta_m_apply needs m >= 2 and an order-m triple")
    lam = _prep(lam, problem, problem.tolerances["picard"])
    lin = problem.linear
    A_c = lin.A_c
    dc, du, ds = problem.dim_c, problem.dim_u, problem.dim_s
    sp = problem.splitting
    x = M.grid.nodes
    n = x.shape[0]
    mm = m - 1  # highest lower order used by the forcing terms
    kc, g = problem.k_c, problem.g

    def K_jet_at(pts):
        lj = _lower_jet(lam, pts, mm, lower)
        kcj = kc.jet(pts, m)
        jet = [np.concatenate([kcj[k], lj[1][k], lj[2][k]], axis=1) for k in range(mm + 1)]
        jet[0][:, :dc] += pts
        jet[1][:, :dc] += np.eye(dc)[None]
        return jet, kcj

    def R_jet_at(pts):
        rj = _lower_jet(lam, pts, mm, lower)[0]
        rj[0] = rj[0] + pts @ A_c.T
        rj[1] = rj[1] + A_c[None]
        return rj

    def kappa_at(pts):
        return np.concatenate([kc.derivative(pts, m), M.tensor(1, pts), M.tensor(2, pts)], axis=1)

    # ---- center component
    Kj, kcj = K_jet_at(x)
    Rj = R_jet_at(x)
    gK = g.jet(Kj[0], m)
    kcR = kc.jet(Rj[0], m)
    DK, DR = Kj[1], Rj[1]
    f1 = _apply_lin(A_c, kcj[m]) + pullback(gK[m][:, sp.sl_c], DK) + _remainder([j[:, sp.sl_c] for j in gK], Kj, m)
    f1 -= pullback(kcR[m], DR) + _remainder(kcR, Rj, m)
    rho = M.tensor(0, x)
    kap = kappa_at(x)
    new_rho = f1 + _apply_lin(gK[1][:, sp.sl_c], kap) - _apply_lin(kcR[1], rho)

    # ---- unstable component
    if du:
        lj = _lower_jet(lam, Rj[0], mm, lower)
        kuR = lj[1] + [np.zeros((n, du) + (dc,) * m)]
        inner = _remainder(kuR, Rj, m) - pullback(gK[m][:, sp.sl_u], DK) - _remainder([j[:, sp.sl_u] for j in gK], Kj, m)
        f2 = _apply_lin(lin.A_u_inv, inner)
        rest = pullback(M.tensor(1, Rj[0]), DR) + _apply_lin(kuR[1], rho) - _apply_lin(gK[1][:, sp.sl_u], kap)
        new_u = f2 + _apply_lin(lin.A_u_inv, rest)
    else:
        new_u = np.zeros((n, 0) + (dc,) * m)

    # ---- stable component
    if ds:
        Tj = inverse_jet(lam.r, lam.t, A_c, x, mm)
        Tx, DT = Tj[0], Tj[1]
        Tj_pad = Tj + [np.zeros((n, dc) + (dc,) * m)]
        RT = R_jet_at(Tx)
        P_RT = _remainder(RT, Tj_pad, m)
        ks_T = _lower_jet(lam, Tx, mm, lower)[2] + [np.zeros((n, ds) + (dc,) * m)]
        KjT, _ = K_jet_at(Tx)
        gKT = g.jet(KjT[0], m)
        gs_KT = [j[:, sp.sl_s] for j in gKT]
        DKT = KjT[1]
        # derivatives of g_s o K at T(x) through order m-1
        gsK_T = _full(gs_KT[: mm + 1], KjT, mm) + [np.zeros((n, ds) + (dc,) * m)]
        DT_P = _apply_lin(DT, P_RT)
        f3 = _apply_lin(lin.A_s, -_apply_lin(ks_T[1], DT_P) + _remainder(ks_T, Tj_pad, m))
        f3 -= _apply_lin(np.einsum("zij,zjk->zik", gs_KT[1], DKT), DT_P)
        f3 += pullback(pullback(gs_KT[m], DKT), DT)
        f3 += pullback(_remainder(gs_KT, KjT, m), DT)
        f3 += _remainder(gsK_T, Tj_pad, m)
        h = pullback(_apply_lin(DT, M.tensor(0, Tx)), DT)
        DgsDK = np.einsum("zij,zjk->zik", gs_KT[1], DKT)
        new_s = f3 - _apply_lin(lin.A_s, _apply_lin(ks_T[1], h)) + _apply_lin(lin.A_s, pullback(M.tensor(2, Tx), DT))
        new_s += -_apply_lin(DgsDK, h) + _apply_lin(gs_KT[1], pullback(kappa_at(Tx), DT))
    else:
        new_s = np.zeros((n, 0) + (dc,) * m)
    return DerivativeTriple.from_node_tensors(M.grid, [new_rho, new_u, new_s], m)


@dataclass(frozen=True, eq=False)
class DerivativeResult:
    triple: DerivativeTriple
    trace: list[float] = field(default_factory=list)

    @property
    def sweeps(self) -> int:
        return len(self.trace)


def solve_derivative_fixed_point(
    lam: ConjugacyTriple,
    problem: ProblemInstance,
    m: int = 1,
    *,
    start: DerivativeTriple | None = None,
    lower: dict[int, DerivativeTriple] | None = None,
    ledger: ConstantsLedger | None = None,
    tol: float = 1e-10,
    max_iter: int = 300,
) -> DerivativeResult:
    """Iterate the order-``m`` derivative operator from ``start`` (default: zero).

    The trace holds the max entrywise change per sweep.
    """
    lam = _prep(lam, problem, problem.tolerances["picard"])
    grid = lam.grid
    if start is None:
        n = grid.nodes.shape[0]
        zeros = [np.zeros((n, p) + (problem.dim_c,) * m) for p in (problem.dim_c, problem.dim_u, problem.dim_s)]
        start = DerivativeTriple.from_node_tensors(grid, zeros, m)
    M = start
    trace = []
    for _ in range(max_iter):
        new = theta2_apply(M, lam, problem, ledger) if m == 1 else theta_m_apply(M, lam, m, problem, ledger, lower)
        step = new.distance(M)
        trace.append(step)
        M = new
        if step <= tol:
            return DerivativeResult(M, trace)
    raise NoConvergence(f"derivative iteration step {trace[-1]:.3e} above {tol:.1e} after {max_iter} sweeps")
