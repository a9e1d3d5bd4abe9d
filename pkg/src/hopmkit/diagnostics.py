"""Iteration traces and post-hoc convergence analysis.

A trace holds one :class:`SweepRecord` per iterate x_k (k = 0, 1, ...),
carrying f(x_k), ||grad f(x_k)|| and the outgoing step ||x_{k+1} - x_k||,
plus one :class:`BlockRecord` per block update. The terminal iterate is
summarized separately in :attr:`IterationTrace.terminal`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InsufficientData, NotConverged

MIN_SWEEPS = 20
REGIME_MARGIN = 0.10
CONVERGED_REASONS = ("grad_tol", "step_tol", "lambda_tol")


@dataclass
class BlockRecord:
    sweep: int
    mode: int
    f: float
    step_norm: float
    lam: Optional[float] = None
    grad_norm: Optional[float] = None
    sigma_block: Optional[float] = None
    gamma: Optional[float] = None
    checks: dict = field(default_factory=dict)


@dataclass
class SweepRecord:
    sweep: int
    f: float
    step_norm: float
    grad_norm: float
    lam: Optional[float] = None
    elapsed: Optional[float] = None


@dataclass
class Terminal:
    sweep: int
    f: float
    grad_norm: float
    lam: Optional[float] = None
    stop_reason: str = "max_sweeps"


@dataclass
class IterationTrace:
    method: str = ""
    sweeps: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    terminal: Optional[Terminal] = None
    meta: dict = field(default_factory=dict)

    @property
    def stop_reason(self):
        return self.terminal.stop_reason if self.terminal else None

    @property
    def sigma0(self):
        return self.meta.get("sigma0")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.sweeps], dtype=float)


@dataclass
class RateFit:
    regime: str
    q: Optional[float]
    theta: Optional[float]
    lambda_coef: Optional[float]
    fit_window: tuple
    residual: float
    residual_linear: float = math.nan
    residual_sublinear: float = math.nan
    slope_linear: float = math.nan
    slope_loglog: float = math.nan


@dataclass
class LojasiewiczFit:
    theta: float
    lambda_coef: float
    residual: float
    slope: float
    clamped: bool
    n_points: int


def _lstsq_line(x, y):
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


def theta_from_slope(slope: float) -> float:
    """Invert slope = -theta / (1 - 2 theta) for the sublinear regime."""
    p = -slope
    return p / (1.0 + 2.0 * p)


def error_proxy(step_norms) -> np.ndarray:
    """Tail sums e_k = sum_{j >= k} step_j."""
    s = np.asarray(step_norms, dtype=float)
    return np.cumsum(s[::-1])[::-1]


def fit_rate_sequence(ks, e, window=None) -> RateFit:
    """Classify the decay of an error sequence ``e`` indexed by sweeps ``ks``.

    ``window`` is a ``(start, stop)`` slice into the positive part of the
    sequence; by default its last half.
    """
    ks = np.asarray(ks, dtype=float)
    e = np.asarray(e, dtype=float)
    keep = (e > 0) & np.isfinite(e) & (ks > 0)
    ks, e = ks[keep], e[keep]
    if len(e) < MIN_SWEEPS:
        raise InsufficientData(
            f"need at least {MIN_SWEEPS} sweeps with positive error proxy, got {len(e)}"
        )
    if window is None:
        window = (len(e) // 2, len(e))
    lo, hi = window
    kw, ew = ks[lo:hi], e[lo:hi]
    if len(ew) < 3:
        raise InsufficientData("fit window holds fewer than 3 points")
    loge = np.log(ew)
    s_lin, _, r_lin = _lstsq_line(kw, loge)
    s_log, b_log, r_log = _lstsq_line(np.log(kw), loge)

    regime = "Undetermined"
    if r_lin < (1 - REGIME_MARGIN) * r_log and s_lin < 0:
        regime = "Linear"
    elif r_log < (1 - REGIME_MARGIN) * r_lin and s_log < 0:
        regime = "Sublinear"

    q = math.exp(s_lin) if s_lin < 0 else None
    if regime == "Linear":
        theta, lam, resid = 0.5, None, r_lin
    else:
        theta = theta_from_slope(s_log) if s_log < 0 else None
        lam = math.exp(b_log)
        resid = r_log if regime == "Sublinear" else min(r_lin, r_log)
    return RateFit(
        regime=regime,
        q=q if regime != "Sublinear" else None,
        theta=theta,
        lambda_coef=lam,
        fit_window=(int(kw[0]), int(kw[-1])),
        residual=resid,
        residual_linear=r_lin,
        residual_sublinear=r_log,
        slope_linear=s_lin,
        slope_loglog=s_log,
    )


def fit_rate(trace: IterationTrace, window=None) -> RateFit:
    """Fit q^k and k^(-theta/(1-2 theta)) models to the tail-sum error proxy."""
    ks = np.array([r.sweep for r in trace.sweeps], dtype=float)
    e = error_proxy([r.step_norm for r in trace.sweeps])
    return fit_rate_sequence(ks, e, window)


def estimate_lojasiewicz_sequence(f, grad, f_star, window=None) -> LojasiewiczFit:
    """Regress log ||grad f|| on log (f - f_star).

    The slope estimates 1 - theta; Lambda comes from the intercept. theta is
    clamped to (0, 1/2] and ``clamped`` flags when that happened.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(grad, dtype=float)
    gap = f - f_star
    floor = 10 * np.finfo(float).eps * abs(f_star)
    keep = (gap > floor) & (g > 0)
    gap, g = gap[keep], g[keep]
    if len(gap) < MIN_SWEEPS:
        raise InsufficientData(
            f"need at least {MIN_SWEEPS} sweeps with f_k - f_* above rounding, got {len(gap)}"
        )
    if window is None:
        window = (len(gap) // 2, len(gap))
    lo, hi = window
    x, y = np.log(gap[lo:hi]), np.log(g[lo:hi])
    if len(x) < 3:
        raise InsufficientData("fit window holds fewer than 3 points")
    slope, intercept, resid = _lstsq_line(x, y)
    theta = 1.0 - slope
    clamped = not (0.0 < theta <= 0.5)
    theta = min(max(theta, np.finfo(float).eps), 0.5)
    return LojasiewiczFit(
        theta=float(theta),
        lambda_coef=float(math.exp(-intercept)),
        residual=resid,
        slope=slope,
        clamped=clamped,
        n_points=len(x),
    )


def estimate_lojasiewicz(trace: IterationTrace, grad_tol=1e-8, window=None) -> LojasiewiczFit:
    term = trace.terminal
    if term is None:
        raise InsufficientData("trace has no terminal record")
    if not term.grad_norm < grad_tol:
        raise NotConverged(
            f"terminal gradient norm {term.grad_norm:.3e} is not below {grad_tol:.1e}"
        )
    return estimate_lojasiewicz_sequence(
        trace.column("f"), trace.column("grad_norm"), term.f, window
    )


def check_summability(trace: IterationTrace, sigma0=None, step_tol=None, slack=1e-8) -> dict:
    """Check sum ||x_{k+1} - x_k||^2 <= (2 / sigma0) (f_0 - f_*) and decay of steps."""
    sigma0 = trace.sigma0 if sigma0 is None else sigma0
    steps = trace.column("step_norm")
    sum_sq = float(np.sum(steps**2))
    report = {"sum_sq": sum_sq, "bound": None, "decay": True, "pass": False}
    if len(steps) <= 1:
        # one step: the bound is the single-block decrease itself, nothing to sum
        report["pass"] = True
        return report
    f0 = trace.sweeps[0].f
    f_star = trace.terminal.f if trace.terminal else trace.sweeps[-1].f
    if sigma0 is None or not sigma0 > 0:
        report["reason"] = "sigma0 unavailable"
        return report
    bound = 2.0 / sigma0 * (f0 - f_star)
    report["bound"] = bound
    decay = True
    if len(steps) > 1:
        decay = bool(steps[-1] < steps[0])
        if step_tol is not None and trace.stop_reason in CONVERGED_REASONS:
            decay = decay and bool(steps[-1] < step_tol)
    report["decay"] = decay
    report["pass"] = bool(sum_sq <= bound + slack and decay)
    return report


def iterate_diameter_ok(points, step_tol) -> bool:
    """Last-quarter iterate diameter below 10 * step_tol."""
    pts = [np.concatenate([np.ravel(v) for v in p]) for p in points]
    tail = pts[-max(1, len(pts) // 4):]
    diam = max(
        (float(np.linalg.norm(a - b)) for a in tail for b in tail), default=0.0
    )
    return diam < 10 * step_tol


def write_csv(trace: IterationTrace, path) -> None:
    """Columns k, e_k, f_k - f_*, grad_norm for external plotting."""
    e = error_proxy([r.step_norm for r in trace.sweeps])
    f_star = trace.terminal.f if trace.terminal else trace.sweeps[-1].f
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "e_k", "f_gap", "grad_norm"])
        for r, ek in zip(trace.sweeps, e):
            w.writerow([r.sweep, repr(float(ek)), repr(r.f - f_star), repr(r.grad_norm)])


def report(trace: IterationTrace, window=None, grad_tol=1e-8) -> dict:
    """Full JSON-ready diagnosis; raises InsufficientData if rates cannot be fit."""
    fit = fit_rate(trace, window)
    out = {
        "regime": fit.regime,
        "q": fit.q,
        "theta": fit.theta,
        "lambda_coef": fit.lambda_coef,
        "residual": fit.residual,
        "fit_window": list(fit.fit_window),
    }
    try:
        lj = estimate_lojasiewicz(trace, grad_tol=grad_tol)
        out["lojasiewicz"] = {
            "theta": lj.theta,
            "lambda_coef": lj.lambda_coef,
            "residual": lj.residual,
            "clamped": lj.clamped,
        }
    except (InsufficientData, NotConverged) as exc:
        out["lojasiewicz"] = {"error": str(exc)}
    out["summability"] = check_summability(trace)
    return out
