"""Shared test helpers: the central finite-difference gradient oracle.

The oracle is deliberately independent of the autodiff engine: it only ever
calls a loss function of a plain float64 numpy array and perturbs one entry
at a time (central differences, h=1e-5).
"""

import numpy as np
import pytest


def finite_difference_grad(f, x, h=1e-5):
    """d f / d x by central differences. ``f`` maps an ndarray to a float."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a, b, floor=1e-8):
    """Max absolute difference over the max magnitude (0 when both vanish)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def assert_grad_matches_fd(f, x, analytic, tol=1e-4, h=1e-5):
    fd = finite_difference_grad(f, x, h=h)
    err = rel_error(analytic, fd)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
