import itertools

import numpy as np
import pytest

from hopmkit.tensor_core import as_factors, as_tensor


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_instance(rng, dims):
    T = as_tensor(rng.standard_normal(dims))
    x = as_factors([rng.standard_normal(n) for n in dims])
    return T, x


def brute_form(T, x):
    """Entrywise sum of T[i] * x^1_{i1} ... x^d_{id}."""
    total = 0.0
    for idx in itertools.product(*(range(n) for n in T.shape)):
        term = T[idx]
        for mu, i in enumerate(idx):
            term *= x[mu][i]
        total += term
    return total


def unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
