"""Shared budgets and systems for the test suite."""

import pytest

from core.sets import ball, origin
from core.verdict import Budget
from dynamics.systems import builtin


@pytest.fixture
def small_budget() -> Budget:
    return Budget(samples=16, signals=4, horizon=10.0, tol=1e-8, seed=7)


@pytest.fixture
def tiny_budget() -> Budget:
    return Budget(samples=8, signals=2, horizon=4.0, tol=1e-7, seed=3)


@pytest.fixture
def stable():
    return builtin("scalar_stable")


@pytest.fixture
def unstable():
    return builtin("scalar_unstable")


@pytest.fixture
def origin1():
    return origin(1)


@pytest.fixture
def unit_ball2():
    return ball([0.0, 0.0], 1.0)
