from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import EXAMPLE2_NORMS
from manicore.aposteriori import (
    PairMap,
    bell_bound,
    certify,
    defect_norm,
    error_constant,
    inverse_derivative_bounds,
    pair_triple,
    polynomial_defect_bound,
)
from manicore.constants import derive_ledger
from manicore.errors import InfeasibleConstants, PreconditionFailed
from manicore.funcspace import TaylorRep
from manicore.taylor import sampled_defect, taylor_pipeline

MU = 0.05


def _quad(c: float, p: int = 1) -> TaylorRep:
    return TaylorRep.from_dict({(2,): [c] * p}, 1, p, cap=2)


def _pair(problem, k0, r0):
    tr = pair_triple(problem, k0, r0)
    return PairMap(tr, "K"), PairMap(tr, "R")


class TestDefectNorm:
    def test_exact_pair(self, map_b):
        K, R = _pair(map_b, _quad(-MU), TaylorRep.zeros(1, 1, 2))
        for m in (0, 1, 2):
            assert defect_norm(map_b, K, R, m, radius=0.2) <= 1e-15

    @pytest.mark.parametrize("eta", [1e-3, 2e-3, 4e-3])
    def test_linear_response(self, map_b, eta):
        # k_u = (eta - mu) x^2 leaves the residual eta x^2 in the unstable row
        K, R = _pair(map_b, _quad(eta - MU), TaylorRep.zeros(1, 1, 2))
        assert defect_norm(map_b, K, R, 0, radius=0.2) == pytest.approx(eta * 0.04, rel=1e-12)
        assert defect_norm(map_b, K, R, 1, radius=0.2) == pytest.approx(eta * 0.4, rel=1e-12)
        assert defect_norm(map_b, K, R, 2, radius=0.2) == pytest.approx(eta * 2.0, rel=1e-12)

    def test_matches_direct_evaluation(self, map_a):
        res = taylor_pipeline(map_a, 2)
        dc = map_a.dim_c
        k0, r0 = res.table.component(slice(dc, None)), res.table.component(slice(0, dc))
        K, R = _pair(map_a, k0, r0)
        got = defect_norm(map_a, K, R, 0, radius=0.125, per_axis=4001)
        direct = sampled_defect(map_a, res.table, 0.125, per_axis=4001)
        assert got == pytest.approx(direct, rel=1e-12)

    def test_majorant_dominates_sample(self, map_a, map_a_taylor):
        dc = map_a.dim_c
        t = map_a_taylor.table
        K, R = _pair(map_a, t.component(slice(dc, None)), t.component(slice(0, dc)))
        for m in (0, 1):
            assert defect_norm(map_a, K, R, m, radius=0.1) <= polynomial_defect_bound(map_a, t, m, 0.1)


class TestErrorConstant:
    def test_level_zero(self):
        led = derive_ledger(EXAMPLE2_NORMS, 0.05, 0.0, 0.0, 2)
        C, parts = error_constant(led, 1.0, 0)
        assert C == pytest.approx(1 / (1 - led.theta0), rel=1e-15)
        assert parts["C2"] == [1.0]

    def test_monotone_in_level_and_bound(self):
        led = derive_ledger(EXAMPLE2_NORMS, 0.05, 0.0, 0.0, 3)
        by_m = [error_constant(led, 2.0, m, 0.1)[0] for m in range(4)]
        assert all(a <= b for a, b in zip(by_m, by_m[1:]))
        by_M = [error_constant(led, M, 3, 0.1)[0] for M in (0.5, 1.0, 2.0, 4.0)]
        assert all(a <= b for a, b in zip(by_M, by_M[1:]))

    def test_theta_at_one_is_infeasible(self):
        norms = dict(EXAMPLE2_NORMS, A_u_inv=1.0)
        led = derive_ledger(norms, 0.0, 0.0, 0.0, 2)
        assert led.theta0 >= 1.0
        with pytest.raises(InfeasibleConstants):
            error_constant(led, 1.0, 0)

    def test_bell_polynomials(self):
        t = [2.0, 3.0, 5.0]
        assert bell_bound(t, 0) == 1.0
        assert bell_bound(t, 1) == 2.0
        assert bell_bound(t, 2) == 2.0**2 + 3.0
        assert bell_bound(t, 3) == 2.0**3 + 3 * 2.0 * 3.0 + 5.0

    def test_inverse_bounds_dominate_cubic_inverse(self):
        # T = (x + 2 x^3)^{-1} on |x| <= 0.2: sampled |D^2 T| against tau_2
        xs = np.linspace(-0.2, 0.2, 201)
        T = np.array([brentq(lambda s: s + 2 * s**3 - x, -1, 1, xtol=1e-15) for x in xs])
        dT = 1 / (1 + 6 * T**2)
        d2T = -dT**3 * 12 * T
        L_m1 = dT.max()
        M = 12 * np.abs(T).max()
        tau = inverse_derivative_bounds(L_m1, M, 2)
        assert tau[0] >= np.abs(dT).max()
        assert tau[1] >= np.abs(d2T).max()


class TestCertify:
    def test_near_exact_pair(self, map_b, map_b_solved):
        rep = certify(map_b, _quad(-MU), TaylorRep.zeros(1, 1, 2), 0, reference=map_b_solved.triple)
        assert rep.passed and rep.contained
        assert rep.measured <= rep.bound
        assert "summary: PASS" in rep.to_text()
        assert rep.as_dict()["passed"] is True

    def test_order_one_bound_holds(self, map_a, map_a_taylor, map_a_solved):
        dc = map_a.dim_c
        t = map_a_taylor.table
        rep = certify(map_a, t.component(slice(dc, None)), t.component(slice(0, dc)), 1, reference=map_a_solved.triple)
        assert rep.contained
        assert rep.C3[1] > 0
        assert any("C3" in c for c in rep.caveats)

    def test_large_dr0(self, map_b):
        with pytest.raises(PreconditionFailed, match=r"\|Dr0\|_0 <= L_r violated"):
            certify(map_b, _quad(-MU), _quad(2.0), 0)

    def test_linear_term(self, map_b):
        r0 = TaylorRep.from_dict({(1,): [0.01]}, 1, 1, cap=2)
        with pytest.raises(PreconditionFailed, match=r"Dr0\(0\) = 0 violated"):
            certify(map_b, _quad(-MU), r0, 0)

    def test_m_bound(self, map_b):
        with pytest.raises(PreconditionFailed, match=r"<= M violated"):
            certify(map_b, _quad(-MU), TaylorRep.zeros(1, 1, 2), 0, M=1e-6, c3=0.0)
