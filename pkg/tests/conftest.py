import os
import sys
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from flowlab.polyvec import Polynomial, PolyVectorField  # noqa: E402

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("FLOWLAB_HYPOTHESIS_EXAMPLES", "40")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def polynomials(d: int, max_degree: int, max_terms: int = 5):
    """Random exact polynomials with small rational coefficients."""
    exps = st.lists(st.integers(0, max_degree), min_size=d, max_size=d).filter(
        lambda e: sum(e) <= max_degree
    )
    coeff = st.fractions(min_value=-5, max_value=5, max_denominator=4)
    return st.dictionaries(st.builds(tuple, exps), coeff, max_size=max_terms).map(
        lambda t: Polynomial(d, t)
    )


def fields(d: int, max_degree: int, max_terms: int = 4):
    return st.lists(polynomials(d, max_degree, max_terms), min_size=d, max_size=d).map(PolyVectorField)


@pytest.fixture
def x1():
    return Polynomial.variable(0, 2)


@pytest.fixture
def x2():
    return Polynomial.variable(1, 2)


def F(v):
    return Fraction(v)


# acceptance criteria record one line each; printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
