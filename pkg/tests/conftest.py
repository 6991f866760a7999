import numpy as np
import pytest

from sblr.types import Dataset, ModelParams


def random_dataset(rng, n, s, t, low=-1.0, high=1.0):
    X = rng.uniform(low, high, (n, s, t))
    y = rng.choice([-1.0, 1.0], n)
    y[0], y[-1] = 1.0, -1.0
    return Dataset(X, y)


def random_params(rng, s, t, r, low=-1.0, high=1.0):
    return ModelParams(rng.uniform(low, high, (s, r)), rng.uniform(low, high, (t, r)),
                       float(rng.uniform(low, high)))


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], outcome, props.get("summary", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, outcome, summary in sorted(lines):
            terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'} "
                                        f"criterion {num}: {summary}")
