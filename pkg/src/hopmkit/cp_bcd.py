"""Cyclic block coordinate descent for J(tau_r(x)) + sigma*/2 sum ||x^mu||^2
over rank-r CP factor matrices.

Factor matrix mu has shape (n_mu, r). Block vectors follow the column-major
vec convention: entry (i, c) of X^mu sits at position i + n_mu * c.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .diagnostics import BlockRecord, IterationTrace, SweepRecord, Terminal
from .errors import BadStart, DegenerateBlock, DimsMismatch
from .hopm import StoppingRule
from .tensor_core import as_tensor

DECREASE_SLACK = 1e-9
MONOTONE_SLACK = 1e-10
DEFAULT_STABILITY_THRESHOLD = 1e-8
SYMMETRY_TOL = 1e-10

CpFactors = tuple  # tuple of (n_mu, r) float64 arrays


def as_cp(factors) -> CpFactors:
    mats = []
    for m in factors:
        a = np.array(m, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise DimsMismatch("CP factors must be matrices")
        if not np.all(np.isfinite(a)):
            raise ValueError("CP factor entries must be finite")
        a.flags.writeable = False
        mats.append(a)
    if not mats:
        raise DimsMismatch("CP factors need at least one mode")
    ranks = {m.shape[1] for m in mats}
    if len(ranks) != 1 or 0 in ranks:
        raise DimsMismatch(f"inconsistent CP ranks {sorted(ranks)}")
    return tuple(mats)


def cp_rank(factors) -> int:
    return factors[0].shape[1]


def cp_dims(factors) -> tuple:
    return tuple(m.shape[0] for m in factors)


def cp_map(factors) -> np.ndarray:
    """tau_r: sum over columns i of the outer products of column i of each factor."""
    factors = as_cp(factors)
    out = factors[0]
    for m in factors[1:]:
        out = out[..., None, :] * m.reshape((1,) * (out.ndim - 1) + m.shape)
    return out.sum(axis=-1)


def _other_product(factors, mu) -> np.ndarray:
    """W[i_1..i_d without mu, c] = prod_{nu != mu} A^nu[i_nu, c]."""
    others = [m for nu, m in enumerate(factors) if nu != mu]
    r = cp_rank(factors)
    if not others:
        return np.ones((r,))
    out = others[0]
    for m in others[1:]:
        out = out[..., None, :] * m.reshape((1,) * (out.ndim - 1) + m.shape)
    return out


def restricted_map_matrix(factors, mu) -> np.ndarray:
    """Matrix M (N x n_mu r) with M vec(X) = vec(tau_r(..., X, ...))."""
    factors = as_cp(factors)
    dims = cp_dims(factors)
    n, r = dims[mu], cp_rank(factors)
    W = _other_product(factors, mu)
    # M[i_1..i_d, j, c] = delta(i_mu, j) W[..., c]
    W = np.expand_dims(W, axis=mu)  # size-1 axis where mode mu goes
    eye = np.eye(n).reshape((1,) * mu + (n,) + (1,) * (len(dims) - mu - 1) + (n, 1))
    M = eye * W[..., None, :]
    N = int(np.prod(dims))
    return M.reshape(N, n, r).transpose(0, 2, 1).reshape(N, r * n)


def sigma_k_mu(factors, mu) -> float:
    """Squared smallest singular value of the restricted map (0 if rank-deficient)."""
    M = restricted_map_matrix(factors, mu)
    s = np.linalg.svd(M, compute_uv=False)
    if M.shape[0] < M.shape[1]:
        return 0.0
    return float(s[-1] ** 2)


def mttkrp(G, factors, mu) -> np.ndarray:
    """Matrix with entries sum over i_{nu != mu} of G[i] prod_{nu != mu} A^nu[i_nu, c]."""
    W = _other_product(factors, mu)
    d = G.ndim
    Gm = np.moveaxis(G, mu, 0).reshape(G.shape[mu], -1)
    return Gm @ W.reshape(-1, cp_rank(factors)) if d > 1 else G[:, None] * W[None, :]


@dataclass
class Objective:
    """f(x) = J(tau_r(x)) + sigma_star / 2 * sum_mu ||x^mu||^2.

    ``kind`` is ``"ls"`` with J(X) = ||target - X||^2 / 2, or ``"energy"`` with
    J(X) = <A vec X, vec X> / 2 - <B, X> for an SPD matrix A.
    """

    kind: str
    sigma_star: float = 0.0
    target: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    _chol: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.sigma_star < 0:
            raise ValueError("sigma_star must be >= 0")
        if self.kind == "ls":
            if self.target is None:
                raise ValueError("least-squares objective needs a target tensor")
            self.target = as_tensor(self.target)
        elif self.kind == "energy":
            if self.A is None or self.B is None:
                raise ValueError("energy objective needs A and B")
            self.B = as_tensor(self.B)
            A = np.array(self.A, dtype=np.float64)
            N = self.B.size
            if A.shape != (N, N):
                raise DimsMismatch(f"operator shape {A.shape} does not match N = {N}")
            if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(A))):
                raise ValueError("operator A is not symmetric")
            A = 0.5 * (A + A.T)
            try:
                self._chol = scipy.linalg.cho_factor(A)
            except np.linalg.LinAlgError:
                raise ValueError("operator A is not positive definite") from None
            if np.linalg.eigvalsh(A)[0] <= 0:
                raise ValueError("operator A is not positive definite")
            A.flags.writeable = False
            self.A = A
        else:
            raise ValueError(f"unknown objective kind {self.kind!r}")

    @classmethod
    def least_squares(cls, target, sigma_star=0.0):
        return cls("ls", sigma_star, target=target)

    @classmethod
    def energy(cls, A, B, sigma_star=0.0):
        return cls("energy", sigma_star, A=A, B=B)

    @property
    def dims(self):
        return (self.target if self.kind == "ls" else self.B).shape

    def J(self, X) -> float:
        if self.kind == "ls":
            r = (self.target - X).ravel()
            return 0.5 * float(r @ r)
        v = X.ravel()
        return 0.5 * float(v @ (self.A @ v)) - float(self.B.ravel() @ v)

    def grad_J(self, X) -> np.ndarray:
        if self.kind == "ls":
            return X - self.target
        return (self.A @ X.ravel() - self.B.ravel()).reshape(X.shape)

    def J_min(self) -> float:
        """Global minimum of J over all tensors."""
        if self.kind == "ls":
            return 0.0
        b = self.B.ravel()
        return -0.5 * float(b @ scipy.linalg.cho_solve(self._chol, b))

    def value(self, factors) -> float:
        reg = 0.5 * self.sigma_star * sum(float(np.sum(m * m)) for m in factors)
        return self.J(cp_map(factors)) + reg


def gamma_lower_bound(obj: Objective, x0=None) -> float:
    """Lower spectral bound of the Hessian of J (constant for both objectives)."""
    if obj.kind == "ls":
        return 1.0
    return float(np.linalg.eigvalsh(obj.A)[0])


def grad_f(obj: Objective, factors) -> tuple:
    G = obj.grad_J(cp_map(factors))
    return tuple(mttkrp(G, factors, mu) + obj.sigma_star * factors[mu] for mu in range(len(factors)))


def grad_norm(obj: Objective, factors) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grad_f(obj, factors))))


def _solve_spd(H, rhs, strict, mu):
    try:
        c = scipy.linalg.cho_factor(H, check_finite=True)
    except np.linalg.LinAlgError:
        if strict:
            raise DegenerateBlock(
                f"block {mu + 1}: system matrix is singular to working precision"
            ) from None
        return np.linalg.lstsq(H, rhs, rcond=None)[0]
    return scipy.linalg.cho_solve(c, rhs)


def bcd_block_update(obj: Objective, factors, mu, strict=True) -> np.ndarray:
    """Exact minimizer of f over block ``mu`` with the other blocks fixed.

    Solves (M^T M + sigma* I) v = M^T vec(target) or
    (M^T A M + sigma* I) v = M^T vec(B) and reshapes v to (n_mu, r).
    """
    factors = as_cp(factors)
    n, r = factors[mu].shape
    if obj.kind == "ls":
        # M^T M = (Hadamard product of the other Gram matrices) kron I_n
        gram = np.ones((r, r))
        for nu, m in enumerate(factors):
            if nu != mu:
                gram *= m.T @ m
        H = gram + obj.sigma_star * np.eye(r)
        rhs = mttkrp(obj.target, factors, mu)  # n x r
        X = _solve_spd(H, rhs.T, strict, mu).T
        return np.ascontiguousarray(X)
    M = restricted_map_matrix(factors, mu)
    H = M.T @ obj.A @ M + obj.sigma_star * np.eye(n * r)
    v = _solve_spd(H, M.T @ obj.B.ravel(), strict, mu)
    return v.reshape(r, n).T.copy()


def random_cp_start(dims, rank, rng: np.random.Generator) -> CpFactors:
    """Standard normal factors with unit-norm columns."""
    mats = []
    for n in dims:
        m = rng.standard_normal((n, rank))
        mats.append(m / np.linalg.norm(m, axis=0))
    return as_cp(mats)


@dataclass
class BcdAudit:
    decrease: int = 0
    monotone: int = 0
    bounded: int = 0
    messages: list = field(default_factory=list)

    @property
    def passed(self):
        return self.decrease == 0 and self.monotone == 0 and self.bounded == 0


def run_bcd(obj: Objective, x0, rule: StoppingRule = StoppingRule(), *,
            stability_threshold=DEFAULT_STABILITY_THRESHOLD, sigma_every=1,
            strict=True, timings=False):
    """Run cyclic BCD; returns ``(factors, trace, audit)``.

    sigma_k^mu is computed by a dense SVD every ``sigma_every``-th block.
    When sigma* = 0 and the running minimum of sigma_k^mu drops below
    ``stability_threshold``, a :class:`StabilityWarning` is issued once (before
    the offending block is solved) and ``trace.meta["stability_warning"]`` is
    set. The run continues unless a block system is singular and ``strict``
    is set, in which case DegenerateBlock is raised; without ``strict`` a
    minimum-norm least-squares solve is used instead.
    """
    from .errors import StabilityWarning

    x = list(as_cp(x0))
    if cp_dims(x) != tuple(obj.dims):
        raise DimsMismatch(f"factor dims {cp_dims(x)} do not match objective dims {obj.dims}")
    if obj.kind == "ls" and not np.any(mttkrp(obj.target, x, 0)):
        raise BadStart("first block right-hand side vanishes; pick another start")
    gamma0 = gamma_lower_bound(obj)
    r = cp_rank(x)
    trace = IterationTrace(
        method="cp_bcd",
        meta={"dims": list(obj.dims), "rank": r, "sigma_star": obj.sigma_star,
              "objective": obj.kind, "gamma0": gamma0,
              "stability_threshold": stability_threshold, "stability_warning": False,
              "sigma_min": None},
    )
    audit = BcdAudit()
    f_cur = obj.value(x)
    f0 = f_cur
    bound = None
    if obj.sigma_star > 0:
        bound = 2.0 / obj.sigma_star * (f0 - obj.J_min())
    g = grad_norm(obj, x)
    sigma_min = np.inf
    block_count = 0
    floor = 64 * np.finfo(float).eps * max(abs(f0), 1.0)
    t0 = time.perf_counter()
    stop = "max_sweeps"
    k = 0
    while k < rule.max_sweeps:
        prev = tuple(x)
        f_prev = f_cur
        for mu in range(len(x)):
            sig = None
            if block_count % sigma_every == 0:
                sig = sigma_k_mu(x, mu)
                sigma_min = min(sigma_min, sig)
            block_count += 1
            if (obj.sigma_star == 0 and sigma_min < stability_threshold
                    and not trace.meta["stability_warning"]):
                trace.meta["stability_warning"] = True
                trace.meta["stability_warning_at"] = [k + 1, mu + 1]
                warnings.warn(
                    f"min sigma_k^mu = {sigma_min:.3e} below {stability_threshold:.1e} "
                    f"(sweep {k + 1}, mode {mu + 1})", StabilityWarning, stacklevel=2,
                )
            old = x[mu]
            new = bcd_block_update(obj, x, mu, strict=strict)
            new.flags.writeable = False
            x[mu] = new
            f_new = obj.value(x)
            step = float(np.linalg.norm(new - old))
            checks = {"monotone": bool(f_new <= f_cur + MONOTONE_SLACK + floor)}
            if sig is not None:
                need = 0.5 * (gamma0 * sig + obj.sigma_star) * step**2
                checks["decrease"] = bool(f_cur - f_new >= need - DECREASE_SLACK)
            if bound is not None:
                sq = sum(float(np.sum(m * m)) for m in x)
                checks["bounded"] = bool(sq <= bound + MONOTONE_SLACK * max(1.0, bound))
            for key, ok in checks.items():
                if not ok:
                    setattr(audit, key, getattr(audit, key) + 1)
                    if len(audit.messages) < 50:
                        audit.messages.append(f"{key}: sweep {k + 1} mode {mu + 1}")
            trace.blocks.append(BlockRecord(
                sweep=k + 1, mode=mu + 1, f=f_new, step_norm=step, sigma_block=sig,
                gamma=gamma0, checks=checks,
            ))
            f_cur = f_new
        k += 1
        if k == 1:
            trace.meta["sigma0"] = obj.sigma_star + gamma0 * sigma_min if np.isfinite(sigma_min) else None
        step = float(np.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(x, prev))))
        trace.sweeps.append(SweepRecord(
            sweep=k - 1, f=f_prev, step_norm=step, grad_norm=g,
            elapsed=time.perf_counter() - t0 if timings else None,
        ))
        new_g = grad_norm(obj, x)
        if rule.grad_tol > 0 and g < rule.grad_tol:
            stop = "grad_tol"
        elif rule.step_tol > 0 and step < rule.step_tol:
            stop = "step_tol"
        g = new_g
        if stop != "max_sweeps":
            break
    trace.meta["sigma_min"] = float(sigma_min) if np.isfinite(sigma_min) else None
    trace.terminal = Terminal(sweep=k, f=f_cur, grad_norm=g, stop_reason=stop)
    return as_cp(x), trace, audit
