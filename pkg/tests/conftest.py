import numpy as np
import pytest

from nrwe.core import DataMatrix


def linear_data(n=2000, seed=0, beta=2.0, pi=3.0):
    """Y = beta T + X + e, T = pi X + v with X ~ N(0, 1)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    t = pi * x + rng.normal(size=n)
    y = beta * t + x + rng.normal(size=n)
    return DataMatrix.from_columns(y, t, x, names=("x",))


def nonlinear_data(n=5000, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 3, size=n)
    t = np.exp(x) + rng.normal(size=n)
    y = np.sin(t) + x ** 2 + rng.normal(size=n)
    return DataMatrix.from_columns(y, t, x, names=("x",))


@pytest.fixture
def lin():
    return linear_data()


@pytest.fixture
def nonlin():
    return nonlinear_data()


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES = []


def record(criterion, ok, detail=""):
    """Store a PASS/FAIL line for the terminal summary and return ``ok``."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {criterion}  {detail}".rstrip())
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
