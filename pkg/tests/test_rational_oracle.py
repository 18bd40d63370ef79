import importlib.util
from fractions import Fraction
from pathlib import Path

import pytest

from delaymix.delay_model import ConstantHistory
from delaymix.polyexact import WeightedDelays, solve_exact

ORACLE_PATH = Path(__file__).resolve().parent.parent / "utilities" / "rational_oracle.py"


@pytest.fixture(scope="module")
def oracle():
    spec = importlib.util.spec_from_file_location("rational_oracle", ORACLE_PATH)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


F = Fraction
CANONICAL = [(F(1), F(1, 2)), (F(3), F(1, 2))]


def test_single_delay_constants(oracle):
    sol = oracle.solve(F(1), [(F(1), F(1))], F(1), F(3))
    assert oracle.value_at(sol, F(1)) == 2
    assert oracle.value_at(sol, F(2)) == F(7, 2)
    assert oracle.value_at(sol, F(3)) == F(37, 6)


def test_canonical_constants(oracle):
    assert oracle.mixture_value(F(1), CANONICAL, F(1), F(3)) == F(61, 12)
    assert oracle.distributed_value(F(1), CANONICAL, F(1), F(3)) == F(121, 24)


def test_close_delays_agree_at_window_end(oracle):
    atoms = [(F(1), F(1, 2)), (F(3, 2), F(1, 2))]
    assert oracle.mixture_value(F(1), atoms, F(1), F(2)) == F(53, 16)
    assert oracle.distributed_value(F(1), atoms, F(1), F(2)) == F(53, 16)


@pytest.mark.parametrize("t", [F(1, 2), F(3, 2), F(5, 2), F(4), F(11, 2)])
def test_float_solver_matches_rationals(oracle, t):
    atoms = [(F(1), F(1, 4)), (F(5, 2), F(3, 4))]
    exact = oracle.distributed_value(F(-1, 2), atoms, F(2), t)
    prob = WeightedDelays(-0.5, ((1.0, 0.25), (2.5, 0.75)))
    sol = solve_exact(prob, ConstantHistory(2.0), float(t))
    assert sol(float(t)) == pytest.approx(float(exact), abs=1e-12)


def test_shift_expands_binomially(oracle):
    # (t - 2)^2 = t^2 - 4t + 4
    assert oracle.poly_shift([F(0), F(0), F(1)], F(2)) == [4, -4, 1]
