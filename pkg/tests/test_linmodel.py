from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import make_problem, problem_text
from manicore.errors import ConfigError, GapNotClosable, InvalidNonlinearity, NonCleanSpectrum
from manicore.funcspace import SmoothMapRep, TaylorRep, ball_samples, tensor_opnorm
from manicore.linmodel import (
    CutoffFunction,
    SplitLinearMap,
    build_splitting,
    localize,
    parse_problem,
    rescale_norm,
)


def _split_map(A_c, A_u=None, A_s=None) -> SplitLinearMap:
    A_c = np.atleast_2d(A_c)
    A_u = np.zeros((0, 0)) if A_u is None else np.atleast_2d(A_u)
    A_s = np.zeros((0, 0)) if A_s is None else np.atleast_2d(A_s)
    return SplitLinearMap(A_c, A_u, A_s, np.linalg.inv(A_c), np.linalg.inv(A_u) if A_u.size else A_u)


class TestBuildSplitting:
    def test_diagonal_three_blocks(self):
        split, lin = build_splitting(np.diag([1.0, 2.0, 0.5]), 0.1)
        assert (split.dim_c, split.dim_u, split.dim_s) == (1, 1, 1)
        norms = lin.op_norms
        assert norms.A_s == pytest.approx(0.5)
        assert norms.A_u_inv == pytest.approx(0.5)

    def test_identity_is_pure_center(self):
        split, lin = build_splitting(np.eye(2), 0.1)
        assert (split.dim_c, split.dim_u, split.dim_s) == (2, 0, 0)
        assert lin.A_u.size == 0 and lin.A_s.size == 0

    def test_rotation_spectrum(self):
        A = np.array([[0.0, 1.0], [-1.0, 1.0]])
        lam = np.linalg.eigvals(A)
        np.testing.assert_allclose(np.abs(lam), 1.0, atol=1e-14)
        split, lin = build_splitting(A, 0.1)
        assert split.dim_c == 2
        # the block matrix is A in the new basis
        B, Binv = split.basis_change, split.basis_change_inv
        np.testing.assert_allclose(B @ A @ Binv, lin.A_c, atol=1e-12)
        np.testing.assert_allclose(lin.A_c @ lin.A_c_inv, np.eye(2), atol=1e-10)

    def test_boundary_band_rejected(self):
        with pytest.raises(NonCleanSpectrum):
            build_splitting(np.diag([1.0, 1.15]), 0.1)

    def test_no_center_rejected(self):
        with pytest.raises(NonCleanSpectrum):
            build_splitting(np.diag([2.0, 0.5]), 0.1)

    def test_non_square_rejected(self):
        with pytest.raises(ConfigError):
            build_splitting(np.ones((2, 3)))

    def test_coupled_blocks_decouple(self):
        A = np.array([[1.0, 0.3, 0.0], [0.0, 2.0, 0.4], [0.0, 0.0, 0.5]])
        split, lin = build_splitting(A, 0.1)
        full = split.basis_change @ A @ split.basis_change_inv
        np.testing.assert_allclose(full, lin.block_matrix, atol=1e-10)


class TestRescaleNorm:
    def test_normal_blocks_unchanged(self):
        lin = _split_map([[1.0]], [[2.0]], [[0.5]])
        out = rescale_norm(lin, 2)
        for a, b in ((lin.A_c, out.A_c), (lin.A_u, out.A_u), (lin.A_s, out.A_s)):
            np.testing.assert_array_equal(a, b)

    def test_jordan_like_stable_block(self):
        lin = _split_map([[1.0]], None, [[0.5, 100.0], [0.0, 0.5]])
        assert lin.op_norms.A_s > 100
        out = rescale_norm(lin, 2)
        assert np.linalg.svd(out.A_s, compute_uv=False)[0] <= 0.51
        P = out.transforms[2]
        np.testing.assert_allclose(np.linalg.inv(P) @ lin.A_s @ P, out.A_s, atol=1e-12)

    def test_rotation_center(self):
        c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
        lin = _split_map([[c, -s], [s, c]], None, [[0.5]])
        out = rescale_norm(lin, 2)
        assert out.op_norms.A_c == pytest.approx(1.0, abs=1e-14)
        assert out.op_norms.A_c_inv == pytest.approx(1.0, abs=1e-14)

    def test_gap_not_closable(self):
        # the Jordan center block only reaches norm 1 + O(eta), too slowly for this weak gap
        lin = _split_map([[1.0, 1.0], [0.0, 1.0]], [[1.005]], None)
        with pytest.raises(GapNotClosable):
            rescale_norm(lin, 2)


class TestCutoff:
    cutoff = CutoffFunction(0.25, 0.5, 2)

    def test_range_and_plateaus(self):
        pts = np.linspace(-0.7, 0.7, 2001)[:, None]
        xi = self.cutoff(pts)
        assert xi.min() >= 0.0 and xi.max() <= 1.0
        r = np.abs(pts[:, 0])
        assert np.all(xi[r <= 0.25] == 1.0)
        assert np.all(xi[r >= 0.5] == 0.0)

    def test_bounds_dominate_finite_differences(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.55, 0.55, size=(1000, 2))
        h = 1e-5
        d1, d2 = self.cutoff.derivative_bounds
        e = np.eye(2)
        grads = np.stack([(self.cutoff(pts + h * e[j]) - self.cutoff(pts - h * e[j])) / (2 * h) for j in range(2)], 1)
        assert np.linalg.norm(grads, axis=1).max() <= d1
        hess = np.empty((len(pts), 2, 2))
        for i in range(2):
            for j in range(2):
                hess[:, i, j] = (
                    self.cutoff(pts + h * (e[i] + e[j]))
                    - self.cutoff(pts + h * (e[i] - e[j]))
                    - self.cutoff(pts - h * (e[i] - e[j]))
                    + self.cutoff(pts - h * (e[i] + e[j]))
                ) / (4 * h * h)
        assert np.linalg.norm(hess, ord=2, axis=(1, 2)).max() <= d2

    def test_bad_radii(self):
        with pytest.raises(ConfigError):
            CutoffFunction(0.5, 0.25)


class TestLocalize:
    def test_zero_map(self):
        zero = SmoothMapRep(TaylorRep.zeros(2, 2, 2))
        loc = localize(zero, CutoffFunction(1.0, 2.0))
        assert loc.norm_cache["bound_D1"] == 0.0
        assert np.all(loc(ball_samples(2, 2.0, 21)) == 0.0)

    def test_sampled_derivative_below_bound(self):
        mu = 0.05
        g = SmoothMapRep(TaylorRep.from_dict({(1, 1): [mu, 0.0], (2, 0): [0.0, mu]}, 2, 2, cap=2))
        loc = localize(g, CutoffFunction(1.0, 2.0))
        ax = np.linspace(-2.1, 2.1, 100)
        pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
        assert len(pts) == 10_000
        assert tensor_opnorm(loc.derivative(pts, 1)).max() <= loc.norm_cache["bound_D1"]
        assert tensor_opnorm(loc.derivative(pts, 2)).max() <= loc.norm_cache["bound_D2"]

    def test_linear_term_rejected_by_problem(self):
        with pytest.raises(InvalidNonlinearity):
            make_problem(g_coeffs={"0": {"1,0": 0.1}})


class TestProblemFile:
    def test_map_a_fields(self, map_a):
        assert map_a.dim_c == 1 and map_a.dim_u == 0 and map_a.dim_s == 1
        assert map_a.cutoff.order == map_a.n == 2
        assert len(map_a.source_hash) == 64

    def test_lipschitz_below_closed_form_bounds(self, map_a):
        lip = map_a.lipschitz
        assert 0 < lip["L_g"] <= lip["L_g_bound"]
        assert 0 < lip["D2g"] <= lip["D2g_bound"]
        assert lip["L_c"] == 0.0

    def test_missing_key_reports_line(self):
        cfg = json.loads(problem_text())
        del cfg["order_n"]
        with pytest.raises(ConfigError) as info:
            parse_problem(json.dumps(cfg))
        assert info.value.line == 1

    def test_bad_json_reports_line(self):
        with pytest.raises(ConfigError) as info:
            parse_problem('{\n  "matrix_A": [[1.0]],\n  oops\n}')
        assert info.value.line == 3

    def test_cutoff_order_below_n_rejected(self):
        with pytest.raises(ConfigError):
            make_problem(order_n=3, cutoff_order=2)

    def test_rescale_flag(self):
        p = make_problem(matrix_A=[[1.0, 0.0], [0.0, 0.5]], rescale=True)
        assert p.linear.op_norms.A_s == pytest.approx(0.5)
