"""Higher-order power method: cyclic normalized updates y^mu <- F^mu / ||F^mu||."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import BlockRecord, IterationTrace, SweepRecord, Terminal
from .errors import BadStart, ZeroContraction
from .tensor_core import (
    FactorTuple,
    as_factors,
    check_dims,
    frobenius_norm,
    multilinear_form,
    partial_contraction,
    tuple_diff_norm,
)

LAMBDA_SLACK = 1e-10
UNIT_TOL = 1e-12
MAX_RESAMPLES = 16


@dataclass(frozen=True)
class StoppingRule:
    """When to stop a sweep loop. A tolerance of 0 disables that test."""

    max_sweeps: int = 500
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    lambda_tol: float = 0.0

    def __post_init__(self):
        if int(self.max_sweeps) < 1:
            raise ValueError("max_sweeps must be a positive integer")
        for name in ("grad_tol", "step_tol", "lambda_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class HopmState:
    y: FactorTuple
    lam: float
    sweep: int = 0


@dataclass
class HopmAudit:
    monotone: bool = True
    unit: bool = True
    positive: bool = True
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return self.monotone and self.unit and self.positive


def check_start(T, y0) -> None:
    if not np.any(partial_contraction(T, y0, 0)):
        raise BadStart("F^1(y0) = 0; pick another starting guess")


def random_start(T, rng: np.random.Generator) -> FactorTuple:
    """Gaussian unit-norm start, redrawn while F^1(y0) = 0."""
    for _ in range(MAX_RESAMPLES + 1):
        y0 = tuple(v / np.linalg.norm(v) for v in (rng.standard_normal(n) for n in T.shape))
        if np.any(partial_contraction(T, y0, 0)):
            return as_factors(y0)
    raise BadStart(f"F^1(y0) = 0 for {MAX_RESAMPLES + 1} random starts (zero tensor?)")


def initial_state(T, y0) -> HopmState:
    y0 = as_factors(y0)
    check_dims(T.shape, y0)
    check_start(T, y0)
    scale = float(np.prod([np.linalg.norm(v) for v in y0]))
    return HopmState(y=y0, lam=multilinear_form(T, y0) / scale, sweep=0)


def hopm_sweep(T, state: HopmState, on_block=None) -> HopmState:
    """One pass mu = 1..d of y^mu <- F^mu(y) / ||F^mu(y)|| with fresh blocks.

    ``on_block(mu, y, lam_block)`` is called after every block update, where
    ``lam_block = ||F^mu||`` equals F at the updated tuple.
    """
    y = list(state.y)
    for mu in range(T.ndim):
        g = partial_contraction(T, y, mu)
        nrm = float(np.linalg.norm(g))
        if nrm == 0.0:
            raise ZeroContraction(f"F^{mu + 1} vanished in sweep {state.sweep + 1}")
        y[mu] = g / nrm
        if on_block is not None:
            on_block(mu, tuple(y), nrm)
    y = tuple(y)
    return HopmState(y=y, lam=multilinear_form(T, y), sweep=state.sweep + 1)


def _residual(T, y, lam):
    return max(
        float(np.linalg.norm(partial_contraction(T, y, mu) - lam * y[mu]))
        for mu in range(T.ndim)
    )


def run_hopm(T, y0, rule: StoppingRule = StoppingRule(), audit=False, timings=False):
    """Run HOPM from ``y0`` until ``rule`` fires.

    Sweep record k describes y_k: lambda_k, the spherical residual at y_k
    (``grad_norm``) and the step ||y_{k+1} - y_k||. The residual and lambda
    tests are evaluated once y_{k+1} is known, so a rank-one input stops
    after the second sweep. ``f`` holds the equivalent least-squares value
    (||T||^2 - lambda^2) / 2.

    Returns ``(state, trace, audit_report)``; the report is None unless
    ``audit`` is set.
    """
    if T.ndim < 3:
        warnings.warn("HOPM is stated for d >= 3; running the matrix case", stacklevel=2)
    state = initial_state(T, y0)
    norm2 = frobenius_norm(T) ** 2
    trace = IterationTrace(method="hopm", meta={"dims": list(T.shape), "fnorm2": norm2})
    report = HopmAudit() if audit else None

    def fval(lam):
        return 0.5 * (norm2 - lam * lam)

    res = _residual(T, state.y, state.lam)
    t0 = time.perf_counter()
    stop = "max_sweeps"
    while state.sweep < rule.max_sweeps:
        prev = state
        block_lams = []

        def on_block(mu, y, lam_b, _k=prev.sweep + 1):
            block_lams.append(lam_b)
            trace.blocks.append(
                BlockRecord(
                    sweep=_k, mode=mu + 1, f=fval(lam_b),
                    step_norm=float(np.linalg.norm(y[mu] - prev.y[mu])), lam=lam_b,
                )
            )

        state = hopm_sweep(T, prev, on_block)
        step = tuple_diff_norm(state.y, prev.y)
        trace.sweeps.append(
            SweepRecord(
                sweep=prev.sweep, f=fval(prev.lam), step_norm=step, grad_norm=res,
                lam=prev.lam, elapsed=time.perf_counter() - t0 if timings else None,
            )
        )
        if report is not None:
            _audit_sweep(report, prev, state, block_lams)
        new_res = _residual(T, state.y, state.lam)
        if rule.grad_tol > 0 and res < rule.grad_tol:
            stop = "grad_tol"
        elif rule.lambda_tol > 0 and state.lam - prev.lam < rule.lambda_tol:
            stop = "lambda_tol"
        elif rule.step_tol > 0 and step < rule.step_tol:
            stop = "step_tol"
        res = new_res
        if stop != "max_sweeps":
            break
    trace.terminal = Terminal(
        sweep=state.sweep, f=fval(state.lam), grad_norm=res, lam=state.lam, stop_reason=stop
    )
    return state, trace, report


def _audit_sweep(report: HopmAudit, prev: HopmState, state: HopmState, block_lams):
    k = state.sweep
    seq = [prev.lam] + list(block_lams)
    if prev.sweep == 0 and any(abs(np.linalg.norm(v) - 1.0) > UNIT_TOL for v in prev.y):
        # block values of the first sweep still carry the start's scale
        seq = seq[-1:]
    for a, b in zip(seq, seq[1:]):
        if b < a - LAMBDA_SLACK:
            report.monotone = False
            report.violations.append(f"sweep {k}: lambda decreased {a!r} -> {b!r}")
    if state.lam < block_lams[-1] - LAMBDA_SLACK:
        report.monotone = False
        report.violations.append(f"sweep {k}: final lambda below last block value")
    for mu, v in enumerate(state.y):
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            report.unit = False
            report.violations.append(f"sweep {k} mode {mu + 1}: factor not unit norm")
    if not state.lam > 0:
        report.positive = False
        report.violations.append(f"sweep {k}: lambda = {state.lam!r} is not positive")


def multistart_hopm(T, starts, rng, rule: StoppingRule):
    """Run HOPM from ``starts`` random starts; return all terminal states in draw order."""
    return [run_hopm(T, random_start(T, rng), rule)[0] for _ in range(starts)]
