"""Rank-one alternating least squares without normalization, plus the audit of
its monotonicity and boundedness properties and the HOPM equivalence check.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import BlockRecord, IterationTrace, SweepRecord, Terminal
from .errors import BadStart, DegenerateBlock
from .hopm import HopmState, StoppingRule, hopm_sweep, initial_state
from .tensor_core import (
    FactorTuple,
    as_factors,
    check_dims,
    frobenius_norm,
    multilinear_form,
    outer_rank_one,
    partial_contraction,
    tuple_diff_norm,
    tuple_norm,
)

SLACK = 1e-10
IDENTITY_RTOL = 1e-9
PYTHAGORAS_RTOL = 1e-10
KAPPA_FLOOR = 1e-12
EQUIVALENCE_TOL = 1e-8
CHECK_KEYS = ("pythagoras", "rank_one_monotone", "factor_norm_monotone", "factor_norm_bounds", "decrease_identity", "sweep_decrease")


def f_value(T, x) -> float:
    """f(x) = ||T - tau_1(x)||_F^2 / 2, evaluated on the materialized residual."""
    r = T - outer_rank_one(x)
    return 0.5 * float(r.ravel() @ r.ravel())


def _sq_norms(x):
    return np.array([float(v @ v) for v in x])


def grad_f(T, x) -> FactorTuple:
    """Block gradients (prod_{nu != mu} ||x^nu||^2) x^mu - F^mu(x)."""
    check_dims(T.shape, x)
    sq = _sq_norms(x)
    out = []
    for mu in range(T.ndim):
        sigma = float(np.prod(np.delete(sq, mu)))
        out.append(sigma * x[mu] - partial_contraction(T, x, mu))
    return tuple(out)


def grad_norm(T, x) -> float:
    return tuple_norm(grad_f(T, x))


def block_sigma(x, mu) -> float:
    """prod_{nu != mu} ||x^nu||^2, the curvature of the mu-th block problem."""
    return float(np.prod(np.delete(_sq_norms(x), mu)))


def als_update(T, x, mu) -> np.ndarray:
    """Exact minimizer F^mu(x) / prod_{nu != mu} ||x^nu||^2 of the mu-th block."""
    check_dims(T.shape, x)
    sigma = block_sigma(x, mu)
    if sigma == 0.0:
        raise DegenerateBlock(f"a factor other than mode {mu + 1} is zero")
    return partial_contraction(T, x, mu) / sigma


@dataclass(frozen=True)
class AlsState:
    x: FactorTuple
    sweep: int
    f_value: float


@dataclass
class BlockUpdate:
    sweep: int
    mode: int
    old: np.ndarray
    new: np.ndarray
    sigma: float
    f_before: float
    f_after: float
    x: FactorTuple

    @property
    def step_norm(self):
        return float(np.linalg.norm(self.new - self.old))


def als_sweep(T, state: AlsState):
    """One pass mu = 1..d of exact block minimization; returns (state, updates)."""
    x = list(state.x)
    f_before = state.f_value
    updates = []
    for mu in range(T.ndim):
        sigma = block_sigma(x, mu)
        old = x[mu]
        new = als_update(T, x, mu)
        x[mu] = new
        f_after = f_value(T, x)
        updates.append(
            BlockUpdate(state.sweep + 1, mu + 1, old, new, sigma, f_before, f_after, tuple(x))
        )
        f_before = f_after
    return AlsState(x=tuple(x), sweep=state.sweep + 1, f_value=f_before), updates


@dataclass
class AuditReport:
    """Per-block invariant checks collected during an audited ALS run."""

    fnorm: float
    x0_norms: np.ndarray
    records: list = field(default_factory=list)
    sweep_checks: list = field(default_factory=list)
    failures: dict = field(default_factory=lambda: {k: 0 for k in CHECK_KEYS})
    kappa_hat: float = np.inf
    sigma0: float = np.nan
    sum_sq_steps: float = 0.0
    messages: list = field(default_factory=list)

    @property
    def passed(self):
        return all(v == 0 for v in self.failures.values()) and self.kappa_ok

    @property
    def kappa_ok(self):
        return self.kappa_hat > KAPPA_FLOOR

    def fail(self, key, msg):
        self.failures[key] += 1
        if len(self.messages) < 50:
            self.messages.append(f"{key}: {msg}")


class _Auditor:
    def __init__(self, T, x0):
        self.fnorm = frobenius_norm(T)
        self.fnorm2 = self.fnorm**2
        norms0 = np.array([np.linalg.norm(v) for v in x0])
        self.report = AuditReport(fnorm=self.fnorm, x0_norms=norms0)
        self.upper = np.array(
            [self.fnorm / np.prod(np.delete(norms0, mu)) for mu in range(len(x0))]
        )
        self.last_rank1 = float(np.prod(norms0))
        self.last_norms = norms0.copy()
        # rounding floor of evaluating f on the materialized residual
        self.f_floor = 64 * np.finfo(float).eps * max(self.fnorm2, 1.0)
        self.g_floor = 1024 * np.finfo(float).eps * max(self.fnorm2, 1.0)

    def block(self, T, u: BlockUpdate):
        rep, mu = self.report, u.mode - 1
        tau = outer_rank_one(u.x)
        rank1 = frobenius_norm(tau)
        resid = frobenius_norm(T - tau)
        nrm = float(np.linalg.norm(u.new))
        checks = {}

        checks["pythagoras"] = abs(self.fnorm2 - rank1**2 - resid**2) <= PYTHAGORAS_RTOL * max(self.fnorm2, 1.0)
        checks["rank_one_monotone"] = rank1 >= self.last_rank1 - SLACK * max(1.0, self.last_rank1)
        checks["factor_norm_monotone"] = nrm >= self.last_norms[mu] - SLACK * max(1.0, self.last_norms[mu])
        lo, hi = rep.x0_norms[mu], self.upper[mu]
        checks["factor_norm_bounds"] = lo - SLACK * max(1.0, lo) <= nrm <= hi + SLACK * max(1.0, hi)
        lhs = u.f_before - u.f_after
        rhs = 0.5 * u.sigma * float(np.sum((u.new - u.old) ** 2))
        checks["decrease_identity"] = abs(lhs - rhs) <= IDENTITY_RTOL * max(abs(lhs), abs(rhs)) + self.f_floor
        checks = {key: bool(ok) for key, ok in checks.items()}
        for key, ok in checks.items():
            if not ok:
                rep.fail(key, f"sweep {u.sweep} mode {u.mode}")
        self.last_rank1 = max(self.last_rank1, rank1)
        self.last_norms[mu] = nrm
        rec = {"sweep": u.sweep, "mode": u.mode, "pythagoras": self.fnorm2 - rank1**2 - resid**2,
               "rank1_norm": rank1, "factor_norm": nrm, "factor_upper": hi, "sigma": u.sigma,
               "decrease_residual": lhs - rhs, "checks": checks}
        rep.records.append(rec)
        return checks, rank1

    def sweep(self, k, f_prev, f_new, step, grad_prev):
        rep = self.report
        ok = bool(f_prev - f_new >= 0.5 * rep.sigma0 * step**2 - SLACK - self.f_floor)
        if not ok:
            rep.fail("sweep_decrease", f"sweep {k}")
        rep.sweep_checks.append({"sweep": k, "sweep_decrease": ok})
        rep.sum_sq_steps += step**2
        # ratios below the rounding floor of the gradient carry no information
        if grad_prev > self.g_floor:
            rep.kappa_hat = min(rep.kappa_hat, step / grad_prev)
        return ok


def convention_start(T, x0) -> FactorTuple:
    """Replace x0^1 by x1^1 so the first block update is a no-op."""
    x0 = as_factors(x0)
    check_dims(T.shape, x0)
    if not np.any(partial_contraction(T, x0, 0)):
        raise BadStart("F^1(x0) = 0; pick another starting guess")
    return as_factors((als_update(T, x0, 0),) + tuple(x0[1:]))


def run_als(T, x0, rule: StoppingRule = StoppingRule(), audit=False, timings=False):
    """Run ALS from ``x0``; returns ``(state, trace, audit_report_or_None)``.

    The trace starts at the convention-adjusted x0 (first factor replaced by
    its first update). Sweep record k carries f(x_k), ||grad f(x_k)|| and
    ||x_{k+1} - x_k||; the gradient and step tests use that record once
    sweep k + 1 is done, so an exact rank-one input stops after sweep 2.
    """
    if T.ndim < 3:
        warnings.warn("ALS is stated for d >= 3; running the matrix case", stacklevel=2)
    x = convention_start(T, x0)
    state = AlsState(x=x, sweep=0, f_value=f_value(T, x))
    auditor = _Auditor(T, x) if audit else None
    trace = IterationTrace(method="als", meta={"dims": list(T.shape)})
    g = grad_norm(T, x)
    t0 = time.perf_counter()
    stop = "max_sweeps"
    sigma0 = np.inf
    while state.sweep < rule.max_sweeps:
        prev = state
        state, updates = als_sweep(T, prev)
        if state.sweep == 1:
            sigma0 = min(u.sigma for u in updates)
            trace.meta["sigma0"] = sigma0
            if auditor:
                auditor.report.sigma0 = sigma0
        step = tuple_diff_norm(state.x, prev.x)
        new_g = grad_norm(T, state.x)
        recs = []
        for u in updates:
            checks, rank1 = auditor.block(T, u) if auditor else ({}, float(np.prod([np.linalg.norm(v) for v in u.x])))
            recs.append(BlockRecord(
                sweep=u.sweep, mode=u.mode, f=u.f_after, step_norm=u.step_norm, lam=rank1,
                grad_norm=grad_norm(T, u.x) if auditor else None, sigma_block=u.sigma,
                checks=checks,
            ))
        if auditor:
            ok = auditor.sweep(state.sweep, prev.f_value, state.f_value, step, g)
            for r in recs:
                r.checks["sweep_decrease"] = ok
        trace.blocks.extend(recs)
        trace.sweeps.append(SweepRecord(
            sweep=prev.sweep, f=prev.f_value, step_norm=step, grad_norm=g,
            lam=float(np.prod([np.linalg.norm(v) for v in prev.x])),
            elapsed=time.perf_counter() - t0 if timings else None,
        ))
        if rule.grad_tol > 0 and g < rule.grad_tol:
            stop = "grad_tol"
        elif rule.step_tol > 0 and step < rule.step_tol:
            stop = "step_tol"
        g = new_g
        if stop != "max_sweeps":
            break
    trace.terminal = Terminal(
        sweep=state.sweep, f=state.f_value, grad_norm=g,
        lam=float(np.prod([np.linalg.norm(v) for v in state.x])), stop_reason=stop,
    )
    return state, trace, (auditor.report if auditor else None)


@dataclass
class EquivalenceReport:
    factor_dev: list
    lambda_dev: list
    tol: float = EQUIVALENCE_TOL

    @property
    def max_factor_dev(self):
        return max(self.factor_dev, default=0.0)

    @property
    def max_lambda_dev(self):
        return max(self.lambda_dev, default=0.0)

    @property
    def max_deviation(self):
        return max(self.max_factor_dev, self.max_lambda_dev)

    @property
    def passed(self):
        return self.max_deviation < self.tol


def verify_equivalence(T, x0, sweeps: int) -> EquivalenceReport:
    """Run HOPM and ALS side by side from the same start and compare iterates.

    Per sweep k >= 1 records max_mu ||y_k^mu - x_k^mu / ||x_k^mu|| || and
    |lambda_k - ||tau_1(x_k)|| |.
    """
    hs = initial_state(T, x0)
    x = as_factors(x0)
    als = AlsState(x=x, sweep=0, f_value=f_value(T, x))
    fdev, ldev = [], []
    for _ in range(sweeps):
        hs = hopm_sweep(T, hs)
        als, _ = als_sweep(T, als)
        dev = max(
            float(np.linalg.norm(y - v / np.linalg.norm(v))) for y, v in zip(hs.y, als.x)
        )
        fdev.append(dev)
        rank1 = float(np.prod([np.linalg.norm(v) for v in als.x]))
        ldev.append(abs(hs.lam - rank1))
    return EquivalenceReport(factor_dev=fdev, lambda_dev=ldev)


def critical_lambda(T, x) -> tuple[float, float]:
    """lambda = ||tau_1(x)|| and the spherical residual of the normalized factors."""
    y = tuple(v / np.linalg.norm(v) for v in x)
    lam = multilinear_form(T, y)
    res = max(
        float(np.linalg.norm(partial_contraction(T, y, mu) - lam * y[mu]))
        for mu in range(T.ndim)
    )
    return float(np.prod([np.linalg.norm(v) for v in x])), res
