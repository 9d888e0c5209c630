import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from abreu_lab.grid import build_grid
from abreu_lab.polytope import standard_simplex, unit_square

settings.register_profile(
    "lab", deadline=None, derandomize=True, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def square():
    return unit_square()


@pytest.fixture(scope="session")
def simplex():
    return standard_simplex()


@pytest.fixture(scope="session")
def square_grid(square):
    return build_grid(square, 1 / 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion; the line is printed at the end."""

    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
