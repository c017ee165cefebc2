import numpy as np
import pytest

from inverse_stopping.model import Affine, Constant, Monomial, TimeToGoProduct, make_problem

ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def static_problem():
    return make_problem(f=Affine(0.0, -1.0), name="static")


@pytest.fixture
def bm_square():
    def make(sigma=1.0):
        return make_problem(sigma=Constant(sigma), terminal=Monomial(1.0, 2), name="bm_square")
    return make


@pytest.fixture
def product_problem():
    return make_problem(sigma=Constant(1.0), terminal=TimeToGoProduct(1.0, 1.0), name="product")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
