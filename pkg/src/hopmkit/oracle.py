"""Ground truth for small instances.

Spectral norms come from multistart HOPM or an exhaustive angular grid (dense
SVD for matrices); structured test tensors have known answers."""
from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np

from .errors import BadTensor, DimsTooLarge, NotMatrix
from .hopm import StoppingRule, random_start, run_hopm
from .tensor_core import (
    FactorTuple,
    as_factors,
    as_tensor,
    outer_rank_one,
    partial_contraction,
    spherical_residual,
)

CERTIFICATE_TOL = 1e-8
DEFAULT_STARTS = 64
MULTISTART_RULE = StoppingRule(max_sweeps=5000, grad_tol=1e-12, step_tol=0.0)


@dataclass
class OracleResult:
    lambda_star: float
    argmax: FactorTuple
    method: str
    certificate: float

    @property
    def accepted(self):
        return self.certificate < CERTIFICATE_TOL


def _orient(lam, y):
    if lam < 0:
        y = (-y[0],) + tuple(y[1:])
    return abs(lam), as_factors(y)


def spectral_norm_multistart(T, starts=DEFAULT_STARTS, seed=0, rule=MULTISTART_RULE) -> OracleResult:
    """Best lambda over ``starts`` seeded HOPM runs (a lower bound on lambda*)."""
    if starts < 1:
        raise ValueError("starts must be >= 1")
    if not np.any(T):
        raise BadTensor("zero tensor has no dominant singular vectors")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(starts):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            state, _, _ = run_hopm(T, random_start(T, rng), rule)
        if best is None or state.lam > best.lam:
            best = state
    lam, y = _orient(best.lam, best.y)
    return OracleResult(lam, y, "Multistart", spherical_residual(T, y))


def _angles_to_vectors(n, angles):
    if n == 1:
        return np.ones((angles.shape[0], 1))
    if n == 2:
        t = angles[:, 0]
        return np.column_stack([np.cos(t), np.sin(t)])
    th, ph = angles[:, 0], angles[:, 1]
    return np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def _angle_grid(n, bounds, resolution, endpoint):
    if n == 1:
        return np.zeros((1, 0))
    axes = [np.linspace(a, b, resolution, endpoint=endpoint) for a, b in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _best_on_grid(T, grids, chunk=1 << 22):
    """Maximize ||F^d(x^1..x^{d-1})|| over the product of vector grids."""
    d = T.ndim
    vecs = [_angles_to_vectors(T.shape[mu], g) for mu, g in enumerate(grids)]
    best_val, best_idx = -np.inf, None
    first = vecs[0]
    rest_size = int(np.prod([len(v) for v in vecs[1:]])) * T.shape[-1]
    step = max(1, chunk // max(rest_size, 1))
    for start in range(0, len(first), step):
        W = np.tensordot(first[start:start + step], T, axes=(1, 0))
        for mu in range(1, d - 1):
            # contract axis 1 (next original mode) with its grid
            W = np.moveaxis(np.tensordot(W, vecs[mu], axes=(mu, 1)), -1, mu)
        vals = np.linalg.norm(W, axis=-1)
        i = int(np.argmax(vals))
        if vals.flat[i] > best_val:
            best_val = float(vals.flat[i])
            idx = np.unravel_index(i, vals.shape)
            best_idx = (idx[0] + start,) + tuple(idx[1:])
    return best_val, best_idx


def spectral_norm_grid(T, resolution=256) -> OracleResult:
    """Exhaustive angular grid over the first d-1 spheres, refined once.

    The last factor is optimized in closed form (F^d / ||F^d||), so the grid
    covers d-1 spheres; sign symmetry restricts each to a half-sphere.
    """
    if any(n > 3 for n in T.shape):
        raise DimsTooLarge(f"grid oracle needs every n_mu <= 3, got {T.shape}")
    if resolution < 64:
        raise ValueError("resolution must be >= 64")
    if not np.any(T):
        raise BadTensor("zero tensor")
    if T.ndim == 1:
        y = (T / np.linalg.norm(T),)
        return OracleResult(float(np.linalg.norm(T)), as_factors(y), "GridSearch", 0.0)
    head = T.shape[:-1]

    def half_sphere(n):
        return [(0.0, np.pi)] if n == 2 else [(0.0, np.pi), (0.0, np.pi)]

    bounds = [half_sphere(n) if n > 1 else [] for n in head]
    grids = [_angle_grid(n, b, resolution, endpoint=(n == 3)) for n, b in zip(head, bounds)]
    _, idx = _best_on_grid(T, grids)
    centers = [g[i] for g, i in zip(grids, idx)]
    spacing = [[(hi - lo) / (resolution - 1) for lo, hi in b] for b in bounds]
    fine = [
        _angle_grid(n, [(c - h, c + h) for c, h in zip(cen, sp)], resolution, endpoint=True)
        for n, cen, sp in zip(head, centers, spacing)
    ]
    lam, idx = _best_on_grid(T, fine)
    y = [_angles_to_vectors(n, g[i:i + 1])[0] for n, g, i in zip(head, fine, idx)]
    last = partial_contraction(T, y + [np.ones(T.shape[-1])], T.ndim - 1)
    y.append(last / np.linalg.norm(last))
    lam2, y = _orient(float(lam), y)
    return OracleResult(lam2, y, "GridSearch", spherical_residual(T, y))


def matrix_svd_check(T) -> OracleResult:
    if T.ndim != 2:
        raise NotMatrix(f"expected a 2-way tensor, got d = {T.ndim}")
    U, s, Vt = np.linalg.svd(T)
    y = as_factors((U[:, 0], Vt[0]))
    return OracleResult(float(s[0]), y, "MatrixSvd", spherical_residual(T, y))


def exact_rank_one(x) -> OracleResult:
    """lambda* of tau_1(x) is the product of the factor norms."""
    x = as_factors(x)
    norms = [np.linalg.norm(v) for v in x]
    y = as_factors([v / n for v, n in zip(x, norms)])
    T = outer_rank_one(x)
    return OracleResult(float(np.prod(norms)), y, "Exact", spherical_residual(T, y))


KINDS = ("random_gaussian", "diagonal", "rank_one", "rank_one_plus_noise", "odeco")
ALIASES = {"random": "random_gaussian", "rank1": "rank_one", "rank1plusnoise": "rank_one_plus_noise"}


def make_test_tensor(kind, dims, seed=None, *, values=None, factors=None, eps=0.0, weights=None):
    """Deterministic test tensors.

    random_gaussian: i.i.d. standard normal entries.
    diagonal: ``values`` on the superdiagonal T[i, i, ..., i]; all dims equal.
    rank_one: tau_1(``factors``), or Gaussian factors drawn from ``seed``.
    rank_one_plus_noise: rank_one plus ``eps`` times a Gaussian tensor; the
        factors are drawn before the noise, so eps = 0 reproduces rank_one.
    odeco: sum_i weights[i] tau_1(q_i^1, ..., q_i^d) with orthonormal q_i^mu.
    """
    kind = ALIASES.get(kind, kind)
    dims = tuple(int(n) for n in dims)
    if not dims or any(n < 1 for n in dims):
        raise ValueError(f"invalid dims {dims}")
    rng = np.random.default_rng(seed)
    if kind == "random_gaussian":
        return as_tensor(rng.standard_normal(dims))
    if kind == "diagonal":
        if len(set(dims)) != 1:
            raise ValueError("diagonal tensors need equal dims")
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or len(values) > dims[0]:
            raise ValueError(f"need at most {dims[0]} diagonal values")
        T = np.zeros(dims)
        for i, v in enumerate(values):
            T[(i,) * len(dims)] = v
        return as_tensor(T)
    if kind in ("rank_one", "rank_one_plus_noise"):
        if factors is None:
            factors = [rng.standard_normal(n) for n in dims]
        x = as_factors(factors, dims)
        T = outer_rank_one(x)
        if kind == "rank_one_plus_noise":
            if eps < 0:
                raise ValueError("eps must be >= 0")
            T = T + eps * rng.standard_normal(dims)
        return as_tensor(T)
    if kind == "odeco":
        weights = np.asarray(weights if weights is not None else [1.0], dtype=float)
        m = len(weights)
        if m > min(dims):
            raise ValueError(f"odeco with {m} terms needs every dim >= {m}")
        Qs = [np.linalg.qr(rng.standard_normal((n, n)))[0][:, :m] for n in dims]
        T = np.zeros(dims)
        for i, w in enumerate(weights):
            T += w * outer_rank_one([Q[:, i] for Q in Qs])
        return as_tensor(T)
    raise ValueError(f"unknown tensor kind {kind!r}; choose from {KINDS}")
