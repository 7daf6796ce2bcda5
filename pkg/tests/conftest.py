import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def pytest_addoption(parser):
    parser.addoption("--run-extended", action="store_true", default=False,
                     help="run extended tests (full-scale runs needing external data)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_gradient(fun, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def central_laplacian(fun, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    total = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        total += (fun(x + e) - 2 * f0 + fun(x - e)) / h**2
    return total


def rel_err(a, b):
    """Scale-aware relative error: max |a - b| over max |b|."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


# PASS/FAIL lines from the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
