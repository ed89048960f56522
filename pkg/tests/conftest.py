from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from manicore.linmodel import load_problem, parse_problem
from manicore.taylor import taylor_pipeline
from manicore.theta import solve_fixed_point

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

EXAMPLE2_NORMS = {"A_c": 1.0, "A_c_inv": 1.0, "A_u": 2.0, "A_u_inv": 0.5, "A_s": 0.5}
ACCEPTANCE_LINES: list[str] = []


def problem_text(**overrides) -> str:
    """MAP-A style config with overrides, as JSON text."""
    cfg = json.loads((CONFIGS / "map_a.json").read_text())
    cfg.update(overrides)
    return json.dumps(cfg, indent=2)


def make_problem(**overrides):
    return parse_problem(problem_text(**overrides))


@pytest.fixture(scope="session")
def map_a():
    return load_problem(CONFIGS / "map_a.json")


@pytest.fixture(scope="session")
def map_b():
    return load_problem(CONFIGS / "map_b.json")


@pytest.fixture(scope="session")
def map_a_solved(map_a):
    return solve_fixed_point(map_a)


@pytest.fixture(scope="session")
def map_b_solved(map_b):
    return solve_fixed_point(map_b)


@pytest.fixture(scope="session")
def map_a_taylor(map_a):
    return taylor_pipeline(map_a, 4)


@pytest.fixture(scope="session")
def zero_problem():
    return make_problem(g_coeffs={}, name="zero")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
