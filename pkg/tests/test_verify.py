from __future__ import annotations

import numpy as np
import pytest

from manicore.errors import InsufficientSmoothness, ProjectionFailure, VerificationFailed
from manicore.funcspace import SmoothMapRep, TaylorRep
from manicore.theta import ConjugacyTriple, solve_derivative_fixed_point
from manicore.verify import (
    CheckResult,
    ComposedMap,
    SuiteReport,
    center_projection,
    derivative_agreement,
    fd_derivative_check,
    invariance_check,
    kc_independence,
    orbit_shadowing,
    run_suite,
    scaling_check,
    smooth_region,
    tangency_check,
)

MU = 0.05


def _shifted(triple: ConjugacyTriple, eta: float) -> ConjugacyTriple:
    """Same triple with ``eta x^2`` added to ``k_u``."""
    bump = SmoothMapRep(TaylorRep.from_dict({(2,): [eta]}, 1, 1, cap=2))
    k_u = SmoothMapRep(triple.k_u.taylor + bump.taylor, label="k_u")
    return ConjugacyTriple(triple.r, k_u, triple.k_s, triple.k_c, triple.A_c, triple.t)


class TestInvariance:
    def test_solved_triple(self, map_b, map_b_solved):
        assert invariance_check(map_b, map_b_solved.triple) <= 1e-10

    def test_detects_perturbation(self, map_b, map_b_solved):
        bad = _shifted(map_b_solved.triple, 1e-3)
        # the graph y = (eta - mu) x^2 is not invariant: F moves it by eta x^2 at least
        assert invariance_check(map_b, bad.K, radius=0.1) >= 1e-3 * 0.1**2 * 0.5

    def test_radius_limit(self, map_b, map_b_solved):
        with pytest.raises(ValueError):
            invariance_check(map_b, map_b_solved.triple, radius=0.3)

    def test_center_projection(self):
        K = lambda x: np.hstack([x + 0.1 * x**2, x**2])
        y = np.array([[0.05], [-0.2]])
        xp = center_projection(K, y, 1)
        np.testing.assert_allclose(K(xp)[:, :1], y, atol=1e-14)

    def test_projection_failure(self):
        K = lambda x: np.hstack([x + 2 * x**2, x])
        with pytest.raises(ProjectionFailure):
            center_projection(K, np.array([[10.0]]), 1)


class TestTangencyAndOrbits:
    def test_tangency(self, map_a_solved):
        assert tangency_check(map_a_solved.triple, tol=1e-9)

    def test_tangency_fails_with_linear_term(self):
        K = TaylorRep.from_dict({(1,): [1.0, 0.2]}, 1, 2, cap=2)
        assert not tangency_check(K)
        assert tangency_check(TaylorRep.from_dict({(1,): [1.0, 0.0], (2,): [0.0, 3.0]}, 1, 2, cap=2))

    def test_orbits(self, map_b, map_b_solved):
        assert orbit_shadowing(map_b, map_b_solved.triple) <= 1e-10 * 2**10

    def test_orbit_growth_for_wrong_graph(self, map_b, map_b_solved):
        bad = _shifted(map_b_solved.triple, 1e-4)
        assert orbit_shadowing(map_b, bad, steps=5) > 1e-4 * 1e-4


class TestScaling:
    def test_exact_on_integer_polynomials(self):
        h = TaylorRep.from_dict({(2,): [3.0], (3,): [-1.0]}, 1, 1, cap=3)
        rep = scaling_check(h, 0.5)
        assert rep.exact and rep.passed
        assert len(rep.lines()) == 3

    def test_two_dimensional(self):
        h = TaylorRep.from_dict({(2, 0): [1.0, 0.0], (1, 1): [0.0, 2.0]}, 2, 2, cap=2)
        assert scaling_check(h, 0.25).passed

    def test_dimension_mismatch(self):
        h = TaylorRep.from_dict({(2, 0): [1.0]}, 2, 1, cap=2)
        with pytest.raises(ValueError):
            scaling_check(h, 0.5)


class TestKcIndependence:
    def test_identical_choices(self, map_a, map_a_solved):
        rep = kc_independence(map_a, TaylorRep.zeros(1, 1, 2), TaylorRep.zeros(1, 1, 2), results=(map_a_solved, map_a_solved))
        assert rep.image_distance == 0.0
        assert rep.phi_sup == 0.0
        assert rep.passed


class TestFiniteDifferences:
    def test_polynomial(self):
        f = SmoothMapRep(TaylorRep.from_dict({(2, 0): [1.0], (1, 2): [0.5], (0, 3): [-2.0]}, 2, 1, cap=3))
        for m in (1, 2, 3):
            assert fd_derivative_check(f, m) <= 1e-6

    def test_order_limits(self):
        f = SmoothMapRep(TaylorRep.from_dict({(2,): [1.0]}, 1, 1, cap=2))
        for m in (0, 5):
            with pytest.raises(InsufficientSmoothness):
                fd_derivative_check(f, m)

    def test_composed_map(self):
        outer = SmoothMapRep(TaylorRep.from_dict({(2,): [1.0], (3,): [0.3]}, 1, 1, cap=3))
        inner = SmoothMapRep(TaylorRep.from_dict({(1,): [1.0], (2,): [-0.4]}, 1, 1, cap=2))
        comp = ComposedMap(outer, inner)
        assert fd_derivative_check(comp, 3, radius=0.3) <= 1e-6

    def test_smooth_region(self, map_a):
        nodes = np.array([[0.0], [0.25], [0.26], [0.5], [0.4]])
        mask = smooth_region(map_a, nodes, 0.02)
        assert mask.tolist() == [True, False, False, False, True]

    def test_derivative_agreement(self, map_b, map_b_solved):
        field = solve_derivative_fixed_point(map_b_solved.triple, map_b, 1).triple
        gap, est = derivative_agreement(map_b, map_b_solved.triple, field)
        assert gap <= est


class TestSuite:
    def test_map_b_passes(self, map_b, map_b_solved):
        report = run_suite(map_b, map_b_solved.triple)
        assert report.passed, report.table()
        names = [r.name for r in report.results]
        assert names[:3] == ["invariance", "tangency", "orbit_shadowing"]
        report.raise_on_failure()

    def test_failure_raises(self):
        report = SuiteReport([CheckResult.compare("demo", 2.0, 1.0)])
        assert not report.passed
        assert report.table().startswith("FAIL  demo")
        with pytest.raises(VerificationFailed, match="demo"):
            report.raise_on_failure()
