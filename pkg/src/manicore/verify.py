"""Brute-force oracles that re-check solver output without using the solver internals.

Every check here works from evaluations of ``F``, ``K`` and ``R`` (or from
Taylor coefficients) and reports a measured quantity next to a threshold.
The image-distance checks project onto the center coordinate: a point
``y`` is compared with ``K(x')`` where ``x'`` solves ``x' + k_c(x') = y_c``,
which is well posed because ``Id + k_c`` is a small perturbation of the
identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSmoothness, ProjectionFailure, VerificationFailed
from .funcspace import GridRep, SmoothMapRep, TaylorRep, fd_weights, fdb_from_jets
from .funcspace.grid import MAX_FD_ORDER
from .linmodel import ProblemInstance
from .theta import ConjugacyTriple, solve_fixed_point

__all__ = [
    "CheckResult",
    "ComposedMap",
    "ScalingReport",
    "KcReport",
    "center_projection",
    "invariance_check",
    "tangency_check",
    "scaling_check",
    "kc_independence",
    "fd_derivative_check",
    "orbit_shadowing",
    "run_suite",
    "smooth_region",
    "derivative_agreement",
    "format_table",
]


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one oracle: measured value against a threshold."""

    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{verdict}  {self.name:<22} {self.value:.3e} <= {self.threshold:.3e}{extra}"

    @classmethod
    def compare(cls, name: str, value: float, threshold: float, detail: str = "") -> CheckResult:
        return cls(name, float(value), float(threshold), bool(value <= threshold), detail)


def format_table(results: list[CheckResult]) -> str:
    return "\n".join(r.line() for r in results) + "\n"


def _random_ball(rng: np.random.Generator, dim: int, radius: float, count: int) -> np.ndarray:
    """Uniform samples from the closed ball, plus the origin."""
    v = rng.normal(size=(count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / dim)
    return np.vstack([np.zeros((1, dim)), v * r])


# --------------------------------------------------------------------------
# invariance
# --------------------------------------------------------------------------
def center_projection(K, y_c: np.ndarray, dim_c: int, tol: float = 1e-14, max_iter: int = 200) -> np.ndarray:
    """Solve ``K_c(x') = y_c`` by Picard iteration on ``x' <- y_c - (K_c(x') - x')``."""
    y_c = np.atleast_2d(y_c)
    x = y_c.copy()
    scale = max(1.0, float(np.abs(y_c).max(initial=0.0)))
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            new = y_c - (K(x)[:, :dim_c] - x)
            step = float(np.abs(new - x).max(initial=0.0))
            x = new
            if not np.all(np.isfinite(x)):
                break
            if step <= tol * scale:
                return x
    raise ProjectionFailure(f"center-coordinate projection did not converge in {max_iter} steps")


def _K_R(K, R, problem: ProblemInstance | None = None):
    if isinstance(K, ConjugacyTriple):
        return K.K, (K.R if R is None else R)
    return K, R


def invariance_check(
    problem: ProblemInstance,
    K,
    samples: int = 200,
    radius: float | None = None,
    *,
    R=None,
    seed: int = 0,
) -> float:
    """Max over sampled ``x`` of the distance from ``F(K(x))`` to the image of ``K``.

    ``K`` is a map ``X_c -> X`` (a :class:`SmoothMapRep` or callable) or a
    :class:`ConjugacyTriple`; with ``R`` available the direct residual
    ``|F(K(x)) - K(R(x))|`` is included in the maximum.  ``radius`` defaults
    to half the inner cutoff radius and may not exceed the inner radius.
    """
    radius = 0.5 * problem.cutoff.inner_radius if radius is None else radius
    if radius > problem.cutoff.inner_radius * (1 + 1e-12):
        raise ValueError("invariance_check needs radius <= inner cutoff radius")
    Kf, Rf = _K_R(K, R)
    dc = problem.dim_c
    rng = np.random.default_rng(seed)
    x = _random_ball(rng, dc, radius, samples)
    y = problem.F(Kf(x))
    xp = center_projection(Kf, y[:, :dc], dc)
    dev = problem.splitting.norm(Kf(xp) - y)
    worst = float(dev.max(initial=0.0))
    if Rf is not None:
        worst = max(worst, float(problem.splitting.norm(y - Kf(Rf(x))).max(initial=0.0)))
    return worst


def tangency_check(K, dim_c: int | None = None, tol: float = 0.0) -> bool:
    """``DK(0)`` equals the inclusion ``[Id; 0]`` in the Taylor table (exactly by default)."""
    if isinstance(K, ConjugacyTriple):
        kc = K.k_c.taylor
        dc = kc.domain_dim
        rows = [TaylorRep.identity(dc, 1) + kc.with_cap(1), K.k_u.taylor.with_cap(1), K.k_s.taylor.with_cap(1)]
        table = rows[0].stack(rows[1]).stack(rows[2])
    else:
        table = K.taylor if isinstance(K, SmoothMapRep) else K
    dc = table.domain_dim if dim_c is None else dim_c
    expected = np.zeros((table.codomain_dim, dc))
    expected[:dc, :dc] = np.eye(dc)
    lin = np.stack([table.coefficient(tuple(int(i == j) for i in range(dc))) for j in range(dc)], axis=1)
    return bool(np.abs(lin - expected).max(initial=0.0) <= tol)


def orbit_shadowing(
    problem: ProblemInstance,
    triple: ConjugacyTriple,
    steps: int = 10,
    samples: int = 50,
    radius: float | None = None,
    seed: int = 0,
) -> float:
    """Max over samples and ``j <= steps`` of ``|F^j(K(x)) - K(R^j(x))|``.

    Points start in the half-inner ball; orbits that leave the inner ball
    are stopped there since the cutoff no longer matches the raw map.
    """
    radius = 0.5 * problem.cutoff.inner_radius if radius is None else radius
    rng = np.random.default_rng(seed)
    x = _random_ball(rng, problem.dim_c, radius, samples)
    y = triple.K(x)
    worst = 0.0
    alive = np.ones(x.shape[0], dtype=bool)
    for _ in range(steps):
        y = problem.F(y)
        x = triple.R(x)
        alive &= np.linalg.norm(x, axis=1) <= problem.cutoff.inner_radius
        if not alive.any():
            break
        dev = problem.splitting.norm(y - triple.K(x))[alive]
        worst = max(worst, float(dev.max(initial=0.0)))
    return worst


# --------------------------------------------------------------------------
# scaling
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ScalingReport:
    """Gaps for the three scaling clauses, on coefficients and on grids."""

    eps: float
    coeff_gaps: tuple[float, float, float]
    grid_gaps: tuple[float, float, float]
    grid_tol: float = 1e-8

    @property
    def exact(self) -> bool:
        return max(self.coeff_gaps) == 0.0

    @property
    def passed(self) -> bool:
        return max(self.coeff_gaps) <= 1e-14 and max(self.grid_gaps) <= self.grid_tol

    def lines(self) -> list[str]:
        names = ("|Dh^e|_0 = |Dh|_0", "|D2h^e|_0 = e|D2h|_0", "h1^e o h2^e = (h1 o h2)^e")
        return [f"{n}: coefficient gap {c:.3e}, grid gap {g:.3e}" for n, c, g in zip(names, self.coeff_gaps, self.grid_gaps)]


def _sup_tensor(grid: GridRep, m: int) -> float:
    t = grid.node_tensor(m)
    n = t.shape[0]
    return float(np.linalg.norm(t.reshape(n, -1), axis=1).max(initial=0.0))


def scaling_check(
    h,
    eps: float,
    h2=None,
    *,
    radius: float = 1.0,
    resolution: int | None = None,
    grid_tol: float = 1e-8,
) -> ScalingReport:
    """Check the three properties of ``h^eps(x) = h(eps x) / eps``.

    On coefficients: order-``d`` terms of ``h^eps`` are ``eps^(d-1)`` times
    those of ``h`` (so ``D h^eps(x) = D h(eps x)`` and
    ``D^2 h^eps(x) = eps D^2 h(eps x)``), and rescaling commutes with
    composition.  On grids: ``h^eps`` sampled on the box of half-width
    ``radius / eps`` and ``h`` on the box of half-width ``radius`` share
    node correspondences, so the sup norms of finite-difference
    derivatives are compared (Frobenius norms per node) together with the
    composition clause at the nodes.  ``h2`` defaults to ``h`` when its
    dimensions allow.
    """
    tab = h.taylor if isinstance(h, SmoothMapRep) else h
    h2tab = (h2.taylor if isinstance(h2, SmoothMapRep) else h2) if h2 is not None else tab
    if h2tab.codomain_dim != tab.domain_dim:
        raise ValueError("composition clause needs h2 to map into the domain of h")
    d = tab.domain_dim
    he = tab.rescaled(eps)
    # coefficient clauses
    deg = tab.degree_cap
    gaps = [0.0, 0.0, 0.0]
    for k in range(deg + 1):
        want = tab.homogeneous(k).coeffs * eps ** (k - 1)
        gap = float(np.abs(he.homogeneous(k).coeffs - want).max(initial=0.0))
        gaps[0 if k <= 1 else 1] = max(gaps[0 if k <= 1 else 1], gap)
    cap = max(tab.degree_cap * h2tab.degree_cap, 1)
    lhs = he.compose(h2tab.rescaled(eps), cap)
    rhs = tab.compose(h2tab, cap).rescaled(eps)
    gaps[2] = float(np.abs(lhs.coeffs - rhs.coeffs).max(initial=0.0))

    # grid clauses
    res = resolution or {1: 201, 2: 41}.get(d, 15)
    small = GridRep.on_box(-radius * np.ones(d), radius * np.ones(d), res, tab)
    big = GridRep.on_box(-(radius / eps) * np.ones(d), (radius / eps) * np.ones(d), res, he)
    g1 = abs(_sup_tensor(big, 1) - _sup_tensor(small, 1))
    g2 = abs(_sup_tensor(big, 2) - eps * _sup_tensor(small, 2))
    nodes = big.nodes
    g3 = float(np.abs(he(h2tab.rescaled(eps)(nodes)) - tab(h2tab(eps * nodes)) / eps).max(initial=0.0))
    return ScalingReport(float(eps), tuple(gaps), (g1, g2, g3), grid_tol)


# --------------------------------------------------------------------------
# k_c independence
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class KcReport:
    """Image distance between two choices of ``k_c`` and the reparameterization residual."""

    image_distance: float
    reparam_residual: float
    phi_sup: float
    Dphi_sup: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.image_distance <= 10 * self.tol and self.reparam_residual <= 10 * self.tol


def _kc_table(k_c) -> TaylorRep:
    return k_c.taylor if isinstance(k_c, SmoothMapRep) else k_c


def kc_independence(
    problem: ProblemInstance,
    k_c_a,
    k_c_b,
    samples: int = 200,
    *,
    tol: float = 1e-11,
    radius: float | None = None,
    seed: int = 0,
    order: int | None = 2,
    results: tuple | None = None,
) -> KcReport:
    """Solve with two choices of ``k_c`` and compare the images of the conjugacies.

    For sampled ``x`` the center projection of ``K_a(x)`` gives the point
    ``x + phi(x)`` with ``K_b(x + phi(x)) = K_a(x)`` on the center block;
    the hyperbolic mismatch is the image distance.  ``phi`` is then sampled
    on a grid, interpolated, and ``K_a = K_b o (Id + phi)`` is checked at
    fresh random points, which exercises the reparameterization as a map
    rather than pointwise.  ``results`` may carry two precomputed
    fixed-point results to skip the solves.

    Both solves use regularity order ``order`` (default 2, enough for the
    C^1 iteration): a nonzero ``k_c`` raises the high-order contraction
    constants, which can make the ledger infeasible at larger orders.
    ``None`` keeps the problem's order.
    """
    base = problem if order is None else problem.with_settings(n=order)
    pa = base.with_kc(_kc_table(k_c_a))
    pb = base.with_kc(_kc_table(k_c_b))
    if results is None:
        ra = solve_fixed_point(pa, tol=tol)
        rb = solve_fixed_point(pb, tol=tol)
    else:
        ra, rb = results
    Ka, Kb = ra.triple, rb.triple
    dc = problem.dim_c
    radius = 0.5 * problem.cutoff.inner_radius if radius is None else radius
    rng = np.random.default_rng(seed)
    x = _random_ball(rng, dc, radius, samples)
    ya = Ka.K(x)
    xp = center_projection(Kb.K, ya[:, :dc], dc)
    dist = float(problem.splitting.norm(Kb.K(xp) - ya).max(initial=0.0))

    # phi on a grid over the sampling ball, then used at fresh points
    res = {1: 401, 2: 61}.get(dc, 21)
    half = radius * 1.05

    def phi_fn(pts):
        return center_projection(Kb.K, Ka.K(pts)[:, :dc], dc) - pts

    phi = GridRep.on_box(-half * np.ones(dc), half * np.ones(dc), res, phi_fn)
    fresh = _random_ball(rng, dc, radius, samples)
    resid = float(problem.splitting.norm(Kb.K(fresh + phi(fresh)) - Ka.K(fresh)).max(initial=0.0))
    phi_sup = float(np.linalg.norm(phi.flat_values, axis=1).max(initial=0.0))
    dphi = phi.node_tensor(1)
    dphi_sup = float(np.linalg.norm(dphi.reshape(dphi.shape[0], -1), axis=1).max(initial=0.0))
    return KcReport(dist, resid, phi_sup, dphi_sup, tol)


# --------------------------------------------------------------------------
# finite-difference derivative oracle
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ComposedMap:
    """``outer o inner`` with analytic derivatives from the partition form of Faa di Bruno."""

    outer: SmoothMapRep
    inner: SmoothMapRep

    @property
    def domain_dim(self) -> int:
        return self.inner.domain_dim

    def __call__(self, pts) -> np.ndarray:
        return self.outer(self.inner(np.atleast_2d(pts)))

    def derivative(self, pts, m: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ij = self.inner.jet(pts, m)
        oj = self.outer.jet(ij[0], m)
        return oj[0] if m == 0 else fdb_from_jets(oj, ij, m)


def _directional(tensor: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = tensor
    while out.ndim > 2:
        out = np.einsum("np...i,ni->np...", out, v)
    return out


def fd_derivative_check(
    f,
    m: int,
    nodes: int = 50,
    *,
    radius: float = 0.5,
    h: float = 1e-2,
    half_width: int = 5,
    directions: int = 3,
    seed: int = 0,
) -> float:
    """Max relative error between analytic ``D^m f`` and central finite differences.

    Derivatives are compared along random unit directions ``v``:
    ``D^m f(x)[v, ..., v]`` against the ``m``-th derivative of
    ``t -> f(x + t v)`` from a central stencil with ``2 half_width + 1``
    points and step ``h`` (exact for polynomials of degree below
    ``2 half_width + 1``).  Errors are divided by ``max(1, |analytic|)``.
    """
    if m < 1 or m > MAX_FD_ORDER:
        raise InsufficientSmoothness(f"order {m} is outside the finite-difference support 1..{MAX_FD_ORDER}")
    if 2 * half_width + 1 <= m:
        raise InsufficientSmoothness("stencil too narrow for the requested order")
    d = f.domain_dim
    rng = np.random.default_rng(seed)
    x = _random_ball(rng, d, radius, nodes - 1)[:nodes]
    offsets = tuple(range(-half_width, half_width + 1))
    w = fd_weights(tuple(float(o) for o in offsets), m) / h**m
    analytic = f.derivative(x, m)
    worst = 0.0
    for _ in range(directions):
        v = rng.normal(size=(x.shape[0], d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        a = _directional(analytic, v)
        fd = sum(wk * f(x + (o * h) * v) for wk, o in zip(w, offsets))
        err = np.linalg.norm(a - fd, axis=1) / np.maximum(1.0, np.linalg.norm(a, axis=1))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


# --------------------------------------------------------------------------
# derivative fields against finite differences
# --------------------------------------------------------------------------
def smooth_region(problem: ProblemInstance, nodes: np.ndarray, band: float) -> np.ndarray:
    """Mask of nodes farther than ``band`` from the cutoff junction spheres.

    On the spheres ``|x| = inner`` and ``|x| = outer`` the localized data are
    only ``C^order`` of the cutoff, so finite differences straddling them
    lose their nominal accuracy.
    """
    rad = np.linalg.norm(nodes, axis=1)
    c = problem.cutoff
    return (np.abs(rad - c.inner_radius) > band) & (np.abs(rad - c.outer_radius) > band)


def derivative_agreement(problem: ProblemInstance, triple: ConjugacyTriple, field, band_nodes: int = 10) -> tuple[float, float]:
    """Gap between a derivative field and finite differences of the grid values, with the stencil error estimate.

    ``field`` holds candidate ``(D^m r, D^m k_u, D^m k_s)`` node tensors (a
    derivative triple from the derivative fixed-point iteration).  Both
    numbers are taken on every other node in the smooth region
    (``band_nodes`` grid spacings away from the cutoff spheres).  The
    stencil tolerance is the Richardson-type estimate
    ``max |FD_h - FD_2h|``, which bounds the truncation error of ``FD_h``
    for any stencil of order at least one.
    """
    m = field.order
    grid = triple.grid
    nodes = grid.nodes[::2] if grid.dim == 1 else None
    if grid.dim != 1:
        sub = tuple(slice(None, None, 2) for _ in range(grid.dim))
        mesh = np.stack([a[sub] for a in np.meshgrid(*grid.axes, indexing="ij")], axis=-1)
        nodes = mesh.reshape(-1, grid.dim)
    mask = smooth_region(problem, nodes, band_nodes * float(np.max(grid.spacing)))
    gap = est = 0.0
    for f, cand in zip(triple.components, field.node_tensors()):
        if f.codomain_dim == 0:
            continue
        g = f.grid
        sub = tuple(slice(None, None, 2) for _ in range(g.dim))
        coarse = GridRep(g.lower, g.upper, g.values[sub], g.stencil_order)
        if not np.allclose(coarse.upper, g.upper):
            raise ValueError("grid resolution must be odd along every axis for the coarse comparison")
        n = int(np.prod(g.resolution))
        fd_h = g.node_tensor(m).reshape(g.resolution + (-1,))[sub].reshape(-1, cand[0].size)
        fd_2h = coarse.node_tensor(m).reshape(-1, cand[0].size)
        c = cand.reshape((n,) + (-1,)).reshape(g.resolution + (-1,))[sub].reshape(-1, cand[0].size)
        gap = max(gap, float(np.abs(c - fd_h)[mask].max(initial=0.0)))
        est = max(est, float(np.abs(fd_h - fd_2h)[mask].max(initial=0.0)))
    return gap, est


# --------------------------------------------------------------------------
# suite
# --------------------------------------------------------------------------
@dataclass
class SuiteReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def table(self) -> str:
        return format_table(self.results)

    def raise_on_failure(self) -> None:
        if not self.passed:
            failed = ", ".join(r.name for r in self.results if not r.passed)
            raise VerificationFailed(f"checks failed: {failed}")


def run_suite(
    problem: ProblemInstance,
    triple: ConjugacyTriple,
    *,
    tol: float = 1e-11,
    samples: int = 200,
    seed: int = 0,
    steps: int = 10,
) -> SuiteReport:
    """Invariance, tangency, orbit shadowing and derivative cross-checks for a solved triple.

    Thresholds scale with the solver tolerance: the invariance residual and
    the 10-step orbit deviation must stay below ``10 tol`` times the
    hyperbolic growth ``max(1, |A_u|)^steps`` of an initial error.
    """
    report = SuiteReport()
    inv = invariance_check(problem, triple, samples, seed=seed)
    report.results.append(CheckResult.compare("invariance", inv, 10 * tol))
    fitted = triple if triple.k_u.taylor.degree() >= 0 or triple.k_s.taylor.degree() >= 0 or triple.r.taylor.degree() >= 0 else None
    if fitted is None:
        fitted = triple.with_taylor(degree=min(6, problem.taylor_cap), radius=0.5 * problem.cutoff.inner_radius)
    tang = tangency_check(fitted, tol=1e-9)
    report.results.append(CheckResult("tangency", 0.0 if tang else 1.0, 0.0, tang, "DK(0) = [Id; 0]"))
    growth = max(1.0, problem.linear.op_norms.A_u) ** steps if problem.dim_u else 1.0
    orbit = orbit_shadowing(problem, triple, steps, max(10, samples // 4), seed=seed)
    report.results.append(CheckResult.compare("orbit_shadowing", orbit, 10 * tol * growth, f"{steps} steps"))
    for name, comp in zip(("r", "k_u", "k_s"), triple.components):
        if comp.codomain_dim == 0 or comp.grid is None:
            continue
        sm = SmoothMapRep(comp.taylor, comp.grid.with_values(comp.grid.flat_values))
        err = fd_derivative_check(sm, 1, 50, radius=0.5 * problem.cutoff.inner_radius, h=1e-3, half_width=2, seed=seed)
        report.results.append(CheckResult.compare(f"fd_derivative[{name}]", err, 1e-5))
    return report
