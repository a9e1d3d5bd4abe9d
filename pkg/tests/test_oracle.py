import itertools
import math

import numpy as np
import pytest

from hopmkit.errors import BadTensor, DimsTooLarge, NotMatrix
from hopmkit.oracle import (
    exact_rank_one,
    make_test_tensor,
    matrix_svd_check,
    spectral_norm_grid,
    spectral_norm_multistart,
)
from hopmkit.tensor_core import frobenius_norm, multilinear_form, outer_rank_one

from conftest import unit


def sampled_lower_bound(T, rng, samples=20000):
    """max of F(x)/prod||x|| over random sphere points."""
    best = 0.0
    for _ in range(samples // 1000):
        xs = [rng.standard_normal((1000, n)) for n in T.shape]
        xs = [x / np.linalg.norm(x, axis=1, keepdims=True) for x in xs]
        sub = "abcde"[: T.ndim]
        expr = sub + "," + ",".join("z" + c for c in sub) + "->z"
        best = max(best, float(np.max(np.abs(np.einsum(expr, T, *xs)))))
    return best


def test_multistart_diagonal():
    T = make_test_tensor("diagonal", (2, 2, 2), values=[3, 1])
    res = spectral_norm_multistart(T, starts=100, seed=1)
    assert res.lambda_star == pytest.approx(3.0, abs=1e-10)
    for v in res.argmax:
        assert abs(abs(v[0]) - 1) < 1e-8
    assert res.accepted
    assert spectral_norm_grid(T).lambda_star == pytest.approx(res.lambda_star, abs=1e-6)


def test_multistart_rank_one(rng):
    x = [rng.standard_normal(n) for n in (3, 2, 4)]
    res = spectral_norm_multistart(outer_rank_one(x), starts=8)
    assert res.lambda_star == pytest.approx(np.prod([np.linalg.norm(v) for v in x]), rel=1e-12)
    assert exact_rank_one(x).lambda_star == pytest.approx(res.lambda_star, rel=1e-12)
    assert exact_rank_one(x).accepted


def test_all_ones():
    T = np.ones((2, 2, 2))
    ms = spectral_norm_multistart(T, starts=16)
    gr = spectral_norm_grid(T)
    assert ms.lambda_star == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    assert gr.lambda_star == pytest.approx(2 * math.sqrt(2), abs=1e-6)
    for v in ms.argmax:
        np.testing.assert_allclose(np.abs(v), [2**-0.5] * 2, atol=1e-8)


def test_grid_identity_matrix():
    assert spectral_norm_grid(np.eye(2)).lambda_star == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("seed", range(6))
def test_grid_agrees_with_multistart(seed):
    T = make_test_tensor("random", (2, 2, 2), seed=seed)
    gr = spectral_norm_grid(T, resolution=512)
    ms = spectral_norm_multistart(T)
    assert gr.lambda_star == pytest.approx(ms.lambda_star, abs=1e-4)
    # independent lower bound from sphere sampling
    assert gr.lambda_star >= sampled_lower_bound(T, np.random.default_rng(seed)) - 1e-12
    assert abs(multilinear_form(T, gr.argmax) - gr.lambda_star) < 1e-12


def test_grid_three_dims():
    T = make_test_tensor("random", (3, 2, 3), seed=11)
    gr = spectral_norm_grid(T, resolution=128)
    ms = spectral_norm_multistart(T)
    assert gr.lambda_star == pytest.approx(ms.lambda_star, abs=1e-4)


def test_grid_errors():
    with pytest.raises(DimsTooLarge):
        spectral_norm_grid(np.ones((4, 2)))
    with pytest.raises(ValueError):
        spectral_norm_grid(np.ones((2, 2)), resolution=10)
    with pytest.raises(BadTensor):
        spectral_norm_multistart(np.zeros((2, 2, 2)))


def test_svd_examples(rng):
    res = matrix_svd_check(np.diag([2.0, 1.0]))
    assert res.lambda_star == 2.0
    np.testing.assert_allclose(np.abs(res.argmax[0]), unit(2, 0))
    a, b = rng.standard_normal(4), rng.standard_normal(3)
    assert matrix_svd_check(np.outer(a, b)).lambda_star == pytest.approx(
        np.linalg.norm(a) * np.linalg.norm(b), rel=1e-12
    )
    with pytest.raises(NotMatrix):
        matrix_svd_check(np.ones((2, 2, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_svd_matches_multistart(seed):
    M = np.random.default_rng(seed).standard_normal((4, 3))
    svd = matrix_svd_check(M)
    assert svd.accepted
    ms = spectral_norm_multistart(M, starts=8, seed=seed)
    assert ms.lambda_star == pytest.approx(svd.lambda_star, abs=1e-8)


def test_odeco_weight():
    T = make_test_tensor("odeco", (3, 3, 3), seed=4, weights=[2.0, 1.5, 0.5])
    assert frobenius_norm(T) == pytest.approx(math.sqrt(4 + 2.25 + 0.25), rel=1e-12)
    assert spectral_norm_multistart(T, starts=32).lambda_star == pytest.approx(2.0, abs=1e-10)


def test_make_test_tensor_examples():
    D = make_test_tensor("diagonal", (2, 2, 2), values=[3, 1])
    assert D[0, 0, 0] == 3 and D[1, 1, 1] == 1 and np.count_nonzero(D) == 2
    R = make_test_tensor("rank_one", (2, 2, 2), factors=[(1, 0), (0, 1), (1, 0)])
    assert R[0, 1, 0] == 1 and np.count_nonzero(R) == 1
    a = make_test_tensor("rank1", (2, 3, 2), seed=5)
    b = make_test_tensor("rank1plusnoise", (2, 3, 2), seed=5, eps=0.0)
    np.testing.assert_array_equal(a, b)
    c = make_test_tensor("rank1plusnoise", (2, 3, 2), seed=5, eps=0.1)
    assert 0 < frobenius_norm(c - a) < 1
    np.testing.assert_array_equal(make_test_tensor("random", (3, 3), seed=9), make_test_tensor("random", (3, 3), seed=9))


@pytest.mark.parametrize(
    "kind, kwargs",
    [
        ("diagonal", {"dims": (2, 3), "values": [1]}),
        ("diagonal", {"dims": (2, 2), "values": [1, 2, 3]}),
        ("odeco", {"dims": (2, 2), "weights": [1, 1, 1]}),
        ("rank_one_plus_noise", {"dims": (2, 2), "eps": -1}),
        ("nonsense", {"dims": (2, 2)}),
        ("random", {"dims": (2, 0)}),
    ],
)
def test_make_test_tensor_rejects(kind, kwargs):
    dims = kwargs.pop("dims")
    with pytest.raises(ValueError):
        make_test_tensor(kind, dims, **kwargs)


def test_grid_is_exhaustive_on_tiny_case():
    # brute product grid over full circles agrees with the half-sphere grid
    T = make_test_tensor("random", (2, 2), seed=3)
    ts = np.linspace(0, 2 * np.pi, 721)
    brute = max(abs(np.cos(a) * (T[0] @ [np.cos(b), np.sin(b)]) + np.sin(a) * (T[1] @ [np.cos(b), np.sin(b)]))
                for a, b in itertools.product(ts, ts))
    assert spectral_norm_grid(T).lambda_star >= brute - 1e-12
    assert spectral_norm_grid(T).lambda_star == pytest.approx(np.linalg.norm(T, 2), abs=1e-6)
