"""Global inversion of ``R = A_c + r`` and derivatives of the inverse."""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientSmoothness, NoConvergence, NotAContraction
from .grid import GridRep
from .maps import SmoothMapRep
from .poly import TaylorRep
from .tensors import SymmetricTensor, fdb_from_jets, left_apply, pullback, tensor_opnorm

__all__ = ["invert_center_map", "inverse_jet", "inverse_derivative_tensor", "lipschitz_on_nodes"]


def lipschitz_on_nodes(r: SmoothMapRep, nodes: np.ndarray) -> float:
    """Sampled ``sup |Dr|``: finite differences on r's own grid, else exact jets at ``nodes``."""
    if r.grid is not None:
        return float(tensor_opnorm(r.grid.node_tensor(1)).max(initial=0.0))
    return float(tensor_opnorm(r.derivative(nodes, 1)).max(initial=0.0))


def _taylor_inverse(r: TaylorRep, A_c_inv: np.ndarray, cap: int) -> TaylorRep:
    """Order-by-order solution of ``t = -A_c^{-1} r o (A_c^{-1} + t)``.

    ``r`` starts at order two, so each pass fixes at least one more order.
    """
    dc = A_c_inv.shape[0]
    base = TaylorRep.linear(A_c_inv, cap)
    r = r.with_cap(cap)
    t = TaylorRep.zeros(dc, dc, cap)
    for _ in range(cap):
        t_new = r.compose(base + t, cap).left_matmul(-A_c_inv)
        if np.array_equal(t_new.coeffs, t.coeffs):
            break
        t = t_new
    return TaylorRep(t.coeffs, exact=False)


def invert_center_map(
    r: SmoothMapRep,
    A_c: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 200,
    grid: GridRep | None = None,
    taylor_cap: int | None = None,
) -> SmoothMapRep:
    """The offset ``t`` with ``(A_c + r)^{-1} = A_c^{-1} + t``.

    Grid values come from the Picard iteration ``phi -> -A_c^{-1} r(A_c^{-1} x + phi)``
    at the nodes of ``grid`` (default: r's grid), stopped on the C^0 residual
    ``|(A_c + r)(A_c^{-1} x + phi) - x|``.  The Taylor table solves the same
    identity order by order.  The derivative identity is checked after the
    fact and stored in ``norm_cache["derivative_residual"]``.
    """
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_inv = np.linalg.inv(A_c)
    template = grid if grid is not None else r.grid
    nodes = template.nodes if template is not None else np.zeros((1, A_c.shape[0]))
    lip = lipschitz_on_nodes(r, nodes)
    binv_norm = np.linalg.norm(B_inv, 2)
    if not lip * binv_norm < 1.0:
        raise NotAContraction(f"|Dr| = {lip:.6g} is not below 1/|A_c^-1| = {1 / binv_norm:.6g}")

    cap = taylor_cap if taylor_cap is not None else max(r.taylor.degree_cap, 2)
    t_table = _taylor_inverse(r.taylor, B_inv, cap)
    if template is None:
        return SmoothMapRep(t_table, trust_radius=r.trust_radius, label="t")

    base = nodes @ B_inv.T
    phi = np.zeros_like(nodes)
    residual = np.inf
    for it in range(1, max_iter + 1):
        phi = -r(base + phi) @ B_inv.T
        residual = float(np.abs((base + phi) @ A_c.T + r(base + phi) - nodes).max(initial=0.0))
        if residual <= tol:
            break
    else:
        raise NoConvergence(f"inversion residual {residual:.3e} above {tol:.1e} after {max_iter} sweeps")

    t_grid = template.with_values(phi)
    cache = {"residual": residual, "sweeps": it, "lipschitz_r": lip}
    out = SmoothMapRep(t_table, t_grid, None, r.trust_radius, cache, label="t")
    try:
        dT = B_inv[None] + t_grid.node_tensor(1)
        dR = A_c[None] + r.derivative(base + phi, 1)
        eye = np.eye(A_c.shape[0])
        cache["derivative_residual"] = float(np.abs(np.einsum("zij,zjk->zik", dR, dT) - eye).max())
    except InsufficientSmoothness:
        cache["derivative_residual"] = float("nan")
    return out


def inverse_jet(r: SmoothMapRep, t: SmoothMapRep, A_c: np.ndarray, pts, m: int) -> list[np.ndarray]:
    """``[T, DT, D^2T, ..., D^mT]`` at points via the inverse-function recursion.

    ``DT(x) = (A_c + Dr(T(x)))^{-1}`` and for ``j >= 2``
    ``D^jT = -DT [D^j r(T) (DT)^{(x)j} + P_j(R, T)]``.
    """
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    B_inv = np.linalg.inv(A_c)
    T = pts @ B_inv.T + t(pts)
    r_jet = r.jet(T, m)
    R_jet = [T @ A_c.T + r_jet[0], A_c[None] + r_jet[1]] + r_jet[2:]
    DT = np.linalg.inv(R_jet[1])
    jet = [T, DT]
    n, dc = pts.shape
    for j in range(2, m + 1):
        main = pullback(R_jet[j], DT)
        if j >= 3:
            placeholder = jet + [np.zeros((n, dc) + (dc,) * j)]
            main = main + fdb_from_jets(R_jet, placeholder, j, min_blocks=2, max_blocks=j - 1)
        jet.append(-left_apply(DT, main))
    return jet


def inverse_derivative_tensor(r: SmoothMapRep, t: SmoothMapRep, m: int, x, A_c: np.ndarray):
    """``D^mT(x)`` for ``T = (A_c + r)^{-1}``, ``m >= 2``."""
    if m < 2:
        raise ValueError("use the first derivative DT = (A_c + Dr(T))^{-1} for m < 2")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    arr = inverse_jet(r, t, A_c, np.atleast_2d(x), m)[m]
    return SymmetricTensor(arr[0]) if single else arr
