import numpy as np
import pytest

from todlab.nnet import NetworkSnapshot, NetworkSpec


def central_diff(fun, params, h=1e-5):
    """Finite-difference gradient of ``fun(params) -> float`` (or array) over every parameter."""
    params = np.asarray(params, dtype=np.float64)
    cols = []
    for i in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[i] += h
        dn[i] -= h
        cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (2 * h))
    return np.stack(cols, axis=-1)


def max_rel_err(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den))


def reparam(s, params):
    return NetworkSnapshot(s.spec, params, s.step_count)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear_scalar():
    """f(x; w) = w . x, one layer, no bias."""
    return NetworkSpec((1, 1), head="scalar_regression", use_bias=False)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    """Print and keep one pass/fail line; the terminal summary repeats them."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
