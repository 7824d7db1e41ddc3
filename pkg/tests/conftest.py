"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


def finite_diff_grad(f, x, step=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (f(hi) - f(lo)) / (2 * step)
    return g


def random_spd(rng, n, jitter=0.5):
    """Random symmetric positive definite matrix with eigenvalues >= jitter."""
    a = rng.standard_normal((n, n))
    return a @ a.T + jitter * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
