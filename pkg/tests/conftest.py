"""Shared fixtures and reference values."""

from fractions import Fraction

import numpy as np
import pytest

from delaymix.delay_model import ConstantHistory, DiscreteDelay, UniformDelay

# Hand-derived values of the canonical instance: alpha = 1, delays {1, 3} with
# probability 1/2 each, history 1, t0 = 0
U1_AT_1 = 2.0
U1_AT_2 = 3.5
U1_AT_3 = float(Fraction(37, 6))
V_R_AT_3 = float(Fraction(61, 12))
V_D_AT_3 = float(Fraction(121, 24))


@pytest.fixture
def canonical_spec() -> DiscreteDelay:
    return DiscreteDelay(((1.0, 0.5), (3.0, 0.5)))


@pytest.fixture
def point_mass() -> DiscreteDelay:
    return DiscreteDelay(((2.0, 1.0),))


@pytest.fixture
def uniform_spec() -> UniformDelay:
    return UniformDelay(1.0, 3.0)


@pytest.fixture
def unit_history() -> ConstantHistory:
    return ConstantHistory(1.0)


@pytest.fixture
def grid_0_3() -> np.ndarray:
    return np.linspace(0.0, 3.0, 301)
