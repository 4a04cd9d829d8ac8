import numpy as np
import pytest


def numeric_grad(f, x, step=1e-6):
    """Central-difference gradient of scalar f at 1-D point x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def assert_close(actual, expected, rel=1e-9, abs_=0.0, msg=""):
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    tol = abs_ + rel * (1.0 + np.abs(expected))
    err = np.abs(actual - expected)
    assert np.all(err <= tol), (
        f"{msg} max err {err.max():.3e} tol {np.min(tol):.3e}\n"
        f"actual={actual}\nexpected={expected}"
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
