"""Dense tensors, factor tuples and the multilinear primitives built on them.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order
(last index fastest). A factor tuple is a tuple of 1-d float64 arrays, one
per mode. Both are validated and frozen (``writeable=False``) by
:func:`as_tensor` and :func:`as_factors`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimsMismatch

FactorTuple = tuple[np.ndarray, ...]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_tensor(data, dims: Sequence[int] | None = None) -> np.ndarray:
    """Return a validated, read-only float64 copy of ``data``.

    If ``dims`` is given, ``data`` may be flat (lexicographic order) and is
    reshaped; its length must equal the product of ``dims``.
    """
    arr = np.array(data, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(n) for n in dims)
        if len(dims) < 1 or any(n < 1 for n in dims):
            raise DimsMismatch(f"dims must be positive integers, got {dims}")
        if arr.size != int(np.prod(dims)):
            raise DimsMismatch(
                f"{arr.size} entries do not fill dims {dims} "
                f"(expected {int(np.prod(dims))})"
            )
        arr = arr.reshape(dims)
    if arr.ndim < 1 or 0 in arr.shape:
        raise DimsMismatch(f"tensor needs d >= 1 and positive dims, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor entries must be finite")
    return _freeze(np.ascontiguousarray(arr))


def as_factors(vectors, dims: Sequence[int] | None = None) -> FactorTuple:
    """Validate a sequence of mode vectors and return it as a frozen tuple."""
    out = []
    for v in vectors:
        a = np.array(v, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ValueError("factor entries must be finite")
        out.append(_freeze(a))
    if not out:
        raise DimsMismatch("a factor tuple needs at least one mode")
    if dims is not None:
        check_dims(dims, out)
    return tuple(out)


def check_dims(dims: Sequence[int], x: Sequence[np.ndarray]) -> None:
    dims = tuple(dims)
    got = tuple(len(v) for v in x)
    if got != dims:
        raise DimsMismatch(f"factor lengths {got} do not match tensor dims {dims}")


def outer_rank_one(x: Sequence[np.ndarray]) -> np.ndarray:
    """Rank-one tensor x^1 o x^2 o ... o x^d."""
    if len(x) == 0:
        raise DimsMismatch("outer product of zero vectors")
    out = np.asarray(x[0], dtype=np.float64)
    for v in x[1:]:
        out = np.multiply.outer(out, np.asarray(v, dtype=np.float64))
    return out


def frobenius_inner(T: np.ndarray, S: np.ndarray) -> float:
    if T.shape != S.shape:
        raise DimsMismatch(f"shapes {T.shape} and {S.shape} differ")
    return float(np.dot(T.ravel(), S.ravel()))


def frobenius_norm(T: np.ndarray) -> float:
    return float(np.linalg.norm(T.ravel()))


def partial_contraction(T: np.ndarray, x: Sequence[np.ndarray], mu: int) -> np.ndarray:
    """Contract ``T`` with every mode vector except ``x[mu]`` (0-based ``mu``).

    The result v satisfies <v, x[mu]> = F(x) for every choice of x[mu]; the
    mu-th vector is never read.
    """
    d = T.ndim
    if len(x) != d:
        raise DimsMismatch(f"tensor has {d} modes, factor tuple has {len(x)}")
    if not 0 <= mu < d:
        raise IndexError(f"mode {mu} out of range for d = {d}")
    for nu in range(d):
        if nu != mu and len(x[nu]) != T.shape[nu]:
            raise DimsMismatch(
                f"mode {nu}: vector length {len(x[nu])} != dim {T.shape[nu]}"
            )
    out = T
    # trailing modes first, then leading ones; mode mu ends up alone
    for nu in range(d - 1, mu, -1):
        out = out @ x[nu]
    for nu in range(mu):
        out = np.tensordot(x[nu], out, axes=(0, 0))
    return np.asarray(out, dtype=np.float64)


def multilinear_form(T: np.ndarray, x: Sequence[np.ndarray]) -> float:
    """F(x) = <T, tau_1(x)>, by successive mode contractions."""
    check_dims(T.shape, x)
    return float(partial_contraction(T, x, 0) @ x[0])


def tuple_norm(x: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.dot(v, v)) for v in map(np.asarray, x))))


def tuple_diff_norm(x: Sequence[np.ndarray], y: Sequence[np.ndarray]) -> float:
    return tuple_norm([a - b for a, b in zip(x, y)])


def spherical_residual(T: np.ndarray, y: Sequence[np.ndarray]) -> float:
    """max over modes of ||F^mu(y) - lambda y^mu|| with lambda = F(y)."""
    lam = multilinear_form(T, y)
    return max(
        float(np.linalg.norm(partial_contraction(T, y, mu) - lam * y[mu]))
        for mu in range(T.ndim)
    )


def normalized(x: Sequence[np.ndarray]) -> FactorTuple:
    return tuple(v / np.linalg.norm(v) for v in x)
