from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import EXAMPLE2_NORMS
from manicore.constants import derive_ledger, epsilon_threshold, ledger_family, ledger_for_problem
from manicore.errors import InfeasibleConstants, NoThreshold

NORMS_HALF = {"A_c": 1.0, "A_c_inv": 1.0, "A_u": 2.0, "A_u_inv": 0.5, "A_s": 0.5}


def example2(eps: float = 0.0, n: int = 1):
    return derive_ledger(EXAMPLE2_NORMS, 0.05, 0.0, eps, n)


class TestDeriveLedger:
    def test_zero_nonlinearity_reduces_to_gap(self):
        norms = {"A_c": 1.1, "A_c_inv": 1.0, "A_u": 4.0, "A_u_inv": 0.25, "A_s": 0.3}
        led = derive_ledger(norms, 0.0, 0.0, 0.0, 3)
        assert (led.L_r, led.L_t, led.L_u, led.L_s) == (0.0, 0.0, 0.0, 0.0)
        for k in range(4):
            assert led.theta[k, 0] == 0.0
            assert led.theta[k, 1] == pytest.approx(0.25 * 1.1**k, rel=1e-15)
            assert led.theta[k, 2] == pytest.approx(0.3, rel=1e-15)
        assert led.feasible

    def test_example_values(self):
        led = example2()
        assert led.L_r == pytest.approx(0.05, rel=1e-14)
        assert led.L_t == pytest.approx(1 / 19, rel=1e-14)
        assert led.L_u == pytest.approx(1 / 19, rel=1e-14)
        assert led.L_s == pytest.approx(1 / 9, rel=1e-14)
        assert led.L_m1 == pytest.approx(20 / 19, rel=1e-14)
        assert led.theta[1, 0] == pytest.approx(0.05)
        assert led.theta[1, 1] == pytest.approx(0.5763, abs=5e-5)
        assert led.theta[1, 2] == pytest.approx(0.6959, abs=5e-5)
        assert led.feasible

    def test_theta_table_runs_two_orders_past_n(self):
        assert example2(n=2).theta.shape == (5, 3)

    def test_unit_l_c_is_infeasible(self):
        led = derive_ledger(NORMS_HALF, 0.05, 1.0, 0.0, 2)
        assert not led.feasible
        assert led.violations[0] == "1 - L_c > 0 violated"
        err = led.infeasibility
        assert isinstance(err, InfeasibleConstants)
        assert err.violated == "1 - L_c > 0 violated"
        with pytest.raises(InfeasibleConstants):
            led.require_feasible()

    def test_feasible_means_all_thetas_below_one(self):
        for L_g in np.linspace(0.0, 0.2, 9):
            led = derive_ledger(NORMS_HALF, float(L_g), 0.01, 0.0, 2)
            if led.feasible:
                assert np.all(led.theta[: led.n + 1] < 1)
            else:
                assert any("violated" in v for v in led.violations)

    def test_delta_monotone_to_zero(self):
        eps = [0.1 / 2**k for k in range(12)] + [0.0]
        deltas = [example2(e).delta for e in eps]
        assert all(a > b for a, b in zip(deltas[:-2], deltas[1:-1]))
        assert deltas[-1] == 0.0

    def test_delta_closes_the_identities(self):
        for e in (1e-3, 1e-2, 0.05):
            assert min(example2(e, 2).delta_identity_gaps()) >= -1e-15

    def test_rejects_negative_inputs(self):
        with pytest.raises(ValueError):
            derive_ledger(NORMS_HALF, -0.1, 0.0, 0.0, 2)

    def test_text_and_json_exports(self):
        led = example2(1e-3)
        text = led.to_text()
        assert "L_r = 0.05" in text
        assert text.rstrip().endswith("feasible: all inequalities hold")
        data = json.loads(led.to_json())
        assert data["violations"] == []
        assert data["theta0"] == pytest.approx(led.theta0)


class TestEpsilonThreshold:
    def test_exists_for_zero_nonlinearity(self):
        fam = lambda e: derive_ledger(NORMS_HALF, 0.0, 0.0, e, 2)
        assert fam(0.0).lambda_stage(1) < 1
        assert epsilon_threshold(fam, "C1") > 0

    def test_bisection_bracket(self):
        fam = lambda e: example2(e)
        e0 = epsilon_threshold(fam, "C1")
        assert math.isfinite(e0) and e0 > 0
        assert fam(0.99 * e0).lambda1 < 1 <= fam(1.01 * e0).lambda1

    def test_higher_stages(self):
        fam = lambda e: derive_ledger(NORMS_HALF, 0.05, 0.0, e, 3)
        e1, e2, e3 = (epsilon_threshold(fam, s) for s in ("C1", "C2", ("Cm", 2)))
        for e0, k in ((e1, 1), (e2, 2), (e3, 3)):
            assert fam(0.99 * e0).lambda_stage(k) < 1 <= fam(1.01 * e0).lambda_stage(k)

    def test_no_threshold(self):
        norms = {"A_c": 1.2, "A_c_inv": 1 / 1.2, "A_u": 1.0, "A_u_inv": 1.0, "A_s": 0.5}
        fam = lambda e: derive_ledger(norms, 0.0, 0.0, e, 2)
        with pytest.raises(NoThreshold):
            epsilon_threshold(fam, "C1")

    def test_unknown_stage(self):
        with pytest.raises(ValueError):
            epsilon_threshold(lambda e: example2(e), "C7x")


def test_problem_ledger(map_a):
    led = ledger_for_problem(map_a)
    assert led.feasible
    assert led.L_g == pytest.approx(map_a.lipschitz["L_g"])
    assert ledger_family(map_a)(led.eps).theta0 == led.theta0
