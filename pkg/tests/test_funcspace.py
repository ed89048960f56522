from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from manicore.errors import DomainEscape, InsufficientSmoothness, NotAContraction
from manicore.funcspace import (
    GridRep,
    SmoothMapRep,
    TaylorRep,
    cn_norm,
    compose,
    faa_di_bruno,
    fit_taylor,
    inverse_derivative_tensor,
    invert_center_map,
    multi_indices,
    partition_remainder,
    set_partitions,
    sup_derivative,
)


def poly1(coeffs: dict[int, float], cap: int | None = None) -> TaylorRep:
    """Scalar polynomial in one variable from ``{power: coefficient}``."""
    cap = max(coeffs, default=0) if cap is None else cap
    return TaylorRep.from_dict({(k,): [v] for k, v in coeffs.items()}, 1, 1, cap=cap)


def grid1(fn, lo=-1.0, hi=1.0, n=801) -> GridRep:
    return GridRep.on_box([lo], [hi], n, fn)


class TestTaylorRep:
    def test_multi_index_counts(self):
        assert len(multi_indices(2, 3)) == 4
        assert len(multi_indices(3, 2)) == 6

    def test_cap_respected(self):
        t = TaylorRep.from_dict({(1, 1): [1.0], (3, 0): [2.0]}, 2, 1, cap=3)
        prod = t.times_scalar(t, cap=3)
        assert prod.degree_cap == 3
        assert prod.degree() <= 3

    def test_compose_square(self):
        y2 = poly1({2: 1.0})
        inner = poly1({1: 1.0, 3: 1.0})
        out = y2.compose(inner, 4)
        assert out.to_dict(tol=0.0) == pytest.approx({(2,): [1.0], (4,): [2.0]})

    def test_low_order_entries_are_exactly_zero(self):
        x = sp.symbols("x")
        t = poly1({2: 0.3, 3: -1.2}).compose(poly1({1: 1.0, 2: 0.5}), 6)
        assert t.coefficient((0,))[0] == 0.0 and t.coefficient((1,))[0] == 0.0
        expected = sp.Poly(sp.expand(0.3 * (x + x**2 / 2) ** 2 - 1.2 * (x + x**2 / 2) ** 3), x)
        for (k,), c in zip(expected.monoms(), expected.coeffs()):
            assert t.coefficient((k,))[0] == pytest.approx(float(c), abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-5, 5), min_size=3, max_size=3), st.floats(-0.9, 0.9))
    def test_evaluation_matches_horner(self, c, x):
        t = poly1({2: float(c[0]), 3: float(c[1]), 4: float(c[2])})
        want = c[0] * x**2 + c[1] * x**3 + c[2] * x**4
        assert t(np.array([[x]]))[0, 0] == pytest.approx(want, abs=1e-12)

    def test_majorant_dominates_sup(self):
        t = poly1({2: 2.0, 4: -16.0})
        xs = np.linspace(-0.25, 0.25, 10_001)
        true_sup = np.abs(2 * xs**2 - 16 * xs**4).max()
        assert true_sup == pytest.approx(0.0625)
        assert t.majorant(0.25, 0) == pytest.approx(0.1875)
        assert t.majorant(0.25, 0) >= true_sup


class TestNorms:
    def test_zero_map(self):
        z = SmoothMapRep(TaylorRep.zeros(1, 1, 2), trust_radius=1.0)
        assert all(float(cn_norm(z, k)) == 0.0 for k in range(4))

    def test_quadratic_c1_norm(self):
        f = SmoothMapRep(poly1({2: 2.0}), trust_radius=1.0)
        est = cn_norm(f, 1)
        assert est.value == pytest.approx(4.0)
        assert est.kind == "upper-bound"

    def test_grid_route_matches_closed_form(self):
        f = SmoothMapRep(poly1({2: 2.0}), grid=grid1(lambda p: 2 * p**2))
        assert float(cn_norm(f, 1)) == pytest.approx(4.0, rel=1e-8)
        assert float(sup_derivative(f, 2)) == pytest.approx(4.0, rel=1e-6)

    def test_grid_order_limit(self):
        f = SmoothMapRep(poly1({2: 2.0}), grid=grid1(lambda p: 2 * p**2))
        with pytest.raises(InsufficientSmoothness):
            sup_derivative(f, 5)

    def test_cross_check(self):
        f = SmoothMapRep(poly1({2: 2.0, 3: 1.0}), grid=grid1(lambda p: 2 * p**2 + p**3), trust_radius=0.5)
        assert f.cross_check() <= 1e-12


class TestCompose:
    def test_identity_outer(self):
        ident = SmoothMapRep(TaylorRep.identity(1, 4))
        f2 = SmoothMapRep(poly1({2: 0.5, 3: -1.0}))
        out = compose(ident, f2, 4)
        np.testing.assert_array_equal(out.taylor.coeffs, f2.taylor.with_cap(4).coeffs)

    def test_square_of_cubic(self):
        out = compose(SmoothMapRep(poly1({2: 1.0})), SmoothMapRep(poly1({1: 1.0, 3: 1.0})), 4)
        assert out.taylor.coefficient((2,))[0] == 1.0
        assert out.taylor.coefficient((4,))[0] == 2.0
        assert out.taylor.coefficient((3,))[0] == 0.0

    def test_grid_values(self):
        g = grid1(lambda p: p + p**3, -0.5, 0.5, 101)
        out = compose(SmoothMapRep(poly1({2: 1.0})), SmoothMapRep(poly1({1: 1.0, 3: 1.0}), grid=g), 4)
        x = g.nodes[:, 0]
        np.testing.assert_allclose(out.grid.flat_values[:, 0], (x + x**3) ** 2, rtol=1e-14)

    def test_domain_escape(self):
        outer = SmoothMapRep(poly1({0: 1.0, 1: 1.0}), trust_radius=0.5)
        inner = SmoothMapRep(poly1({0: 1.0, 1: 1.0}))
        with pytest.raises(DomainEscape):
            compose(outer, inner, 3)


class TestFaaDiBruno:
    def test_identity_inner(self):
        f1 = SmoothMapRep(poly1({2: 1.0, 4: 3.0}))
        ident = SmoothMapRep(TaylorRep.identity(1, 4))
        x = np.array([0.3])
        for m in range(1, 5):
            got = np.asarray(faa_di_bruno(f1, ident, m, x, route="partition"))
            np.testing.assert_allclose(got, f1.taylor.derivative(x[None], m)[0], rtol=1e-14)

    def test_second_derivative_at_origin(self):
        val = faa_di_bruno(SmoothMapRep(poly1({2: 1.0})), SmoothMapRep(poly1({1: 1.0, 3: 1.0})), 2, np.array([0.0]))
        assert np.asarray(val).item() == pytest.approx(2.0)

    def test_third_derivative_against_finite_differences(self, rng):
        def cubic_map():
            table = {}
            for k in (1, 2, 3):
                for a in multi_indices(2, k):
                    table[a] = rng.normal(size=2) * 0.5
            return SmoothMapRep(TaylorRep.from_dict(table, 2, 2, cap=3))

        f1, f2 = cubic_map(), cubic_map()
        x0 = rng.uniform(-0.3, 0.3, size=2)
        T = np.asarray(faa_di_bruno(f1, f2, 3, x0, route="partition"))
        # directional third derivative by a 4th-order central stencil
        h = 1e-2
        w = np.array([1 / 8, -1, 13 / 8, 0, -13 / 8, 1, -1 / 8]) / h**3
        for _ in range(3):
            v = rng.normal(size=2)
            v /= np.linalg.norm(v)
            vals = np.stack([f1(f2((x0 + s * h * v)[None]))[0] for s in range(-3, 4)])
            fd = w @ vals
            exact = np.einsum("pijk,i,j,k->p", T, v, v, v)
            assert np.abs(fd - exact).max() <= 1e-5 * max(1.0, np.abs(exact).max())

    def test_routes_agree(self, rng):
        f1 = SmoothMapRep(poly1({2: 1.0, 3: -0.5}))
        f2 = SmoothMapRep(poly1({1: 1.0, 2: 0.7, 3: 0.1}))
        pts = rng.uniform(-0.5, 0.5, size=(20, 1))
        for m in range(1, 5):
            a = faa_di_bruno(f1, f2, m, pts, route="taylor")
            b = faa_di_bruno(f1, f2, m, pts, route="partition")
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


class TestPartitionRemainder:
    def test_bell_numbers(self):
        assert [len(set_partitions(m)) for m in range(1, 6)] == [1, 2, 5, 15, 52]

    def test_second_order_vanishes(self, rng):
        f1 = SmoothMapRep(poly1({2: 1.0, 3: 2.0}))
        f2 = SmoothMapRep(poly1({1: 1.0, 2: 3.0}))
        assert np.all(partition_remainder(f1, f2, 2, rng.uniform(-1, 1, (10, 1))) == 0.0)

    def test_cube_of_quadratic(self):
        f1 = SmoothMapRep(poly1({3: 1.0}))
        f2 = SmoothMapRep(poly1({1: 1.0, 2: 1.0}))
        # the only 2-block partitions pair one slot with the other two: 3 D^2 f1(f2)(Df2, D^2 f2)
        for x in (0.0, 0.1, -0.35):
            y, dy, d2y = x + x * x, 1 + 2 * x, 2.0
            want = 3 * (6 * y) * dy * d2y
            for route in ("taylor", "partition"):
                got = np.asarray(partition_remainder(f1, f2, 3, np.array([x]), route=route)).item()
                assert got == pytest.approx(want, abs=1e-13)

    def test_identity_inner_vanishes(self):
        f1 = SmoothMapRep(poly1({3: 1.0, 4: 1.0}))
        ident = SmoothMapRep(TaylorRep.identity(1, 4))
        assert np.asarray(partition_remainder(f1, ident, 3, np.array([0.4]))).item() == 0.0


class TestInversion:
    def test_zero(self):
        r = SmoothMapRep(TaylorRep.zeros(1, 1, 3), grid=grid1(lambda p: 0 * p))
        t = invert_center_map(r, np.eye(1))
        assert np.all(t.grid.values == 0.0)
        assert np.all(t.taylor.coeffs == 0.0)

    def test_cubic_reversion(self):
        x = sp.symbols("x")
        # order-matching oracle: T(x) = x + sum c_k x^k with T + 2 T^3 = x
        cs = sp.symbols("c3 c5 c7")
        T = x + cs[0] * x**3 + cs[1] * x**5 + cs[2] * x**7
        eq = sp.Poly(sp.expand(T + 2 * T**3 - x), x)
        sol = sp.solve([eq.coeff_monomial(x**k) for k in (3, 5, 7)], cs, dict=True)[0]
        c3, c5, c7 = (float(sol[c]) for c in cs)
        assert (c3, c5) == (-2.0, 12.0)

        r = SmoothMapRep(poly1({3: 2.0}, cap=7), grid=grid1(lambda p: 2 * p**3, -0.3, 0.3, 601))
        t = invert_center_map(r, np.eye(1), taylor_cap=7)
        assert t.taylor.coefficient((3,))[0] == pytest.approx(c3, abs=1e-13)
        assert t.taylor.coefficient((5,))[0] == pytest.approx(c5, abs=1e-12)
        assert t.taylor.coefficient((7,))[0] == pytest.approx(c7, abs=1e-11)
        xs = t.grid.nodes[:, 0]
        Tx = xs + t.grid.flat_values[:, 0]
        assert np.abs(Tx + 2 * Tx**3 - xs).max() <= 1e-12
        small = np.abs(xs) <= 0.1
        series = c3 * xs**3 + c5 * xs**5 + c7 * xs**7
        assert np.abs(t.grid.flat_values[small, 0] - series[small]).max() <= 1e-6

    def test_not_a_contraction(self):
        r = SmoothMapRep(poly1({2: 0.75}), grid=grid1(lambda p: 0.75 * p**2))
        with pytest.raises(NotAContraction):
            invert_center_map(r, np.eye(1))

    def test_second_derivative_formula(self):
        r = SmoothMapRep(poly1({3: 2.0}, cap=7), grid=grid1(lambda p: 2 * p**3, -0.3, 0.3, 601))
        t = invert_center_map(r, np.eye(1), taylor_cap=7)
        T = brentq(lambda s: s + 2 * s**3 - 0.1, -1, 1, xtol=1e-15)
        dT = 1 / (1 + 6 * T * T)
        want = -dT * (12 * T) * dT**2
        got = np.asarray(inverse_derivative_tensor(r, t, 2, np.array([0.1]), np.eye(1))).item()
        assert got == pytest.approx(want, rel=1e-8)

    def test_zero_tensor_for_zero_r(self):
        r = SmoothMapRep(TaylorRep.zeros(1, 1, 3), grid=grid1(lambda p: 0 * p))
        t = invert_center_map(r, np.eye(1))
        for m in (2, 3, 4):
            assert np.all(np.asarray(inverse_derivative_tensor(r, t, m, np.array([0.2]), np.eye(1))) == 0.0)


class TestFitTaylor:
    def test_recovers_polynomial_with_exact_zero_low_orders(self):
        g = grid1(lambda p: 0.2 * p**2 - 0.1 * p**3, -0.5, 0.5, 201)
        t = fit_taylor(g, 4, 0.4)
        assert t.coefficient((0,))[0] == 0.0 and t.coefficient((1,))[0] == 0.0
        assert t.coefficient((2,))[0] == pytest.approx(0.2, abs=1e-12)
        assert t.coefficient((3,))[0] == pytest.approx(-0.1, abs=1e-12)
        assert math.isclose(t.coefficient((4,))[0], 0.0, abs_tol=1e-11)
