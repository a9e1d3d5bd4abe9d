"""Command-line front end: ``hopmkit gen|approx|cp|diagnose``.

stdout carries machine-readable JSON only; causes of failure go to stderr.
Exit codes: 0 ok, 1 I/O or parse failure, 2 bad arguments, 3 bad start or
degenerate block, 4 audit violation under --strict, 5 insufficient data.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings

import numpy as np

from . import io as tio
from .als import critical_lambda, run_als, verify_equivalence
from .cp_bcd import DEFAULT_STABILITY_THRESHOLD, Objective, random_cp_start, run_bcd
from .diagnostics import report as diagnose_report, write_csv
from .errors import (
    BadStart,
    DegenerateBlock,
    DimsMismatch,
    InsufficientData,
    ParseError,
    SchemaError,
    StabilityWarning,
    ZeroContraction,
)
from .hopm import StoppingRule, random_start, run_hopm
from .oracle import make_test_tensor
from .tensor_core import frobenius_norm

EXIT_IO = 1
EXIT_USAGE = 2
EXIT_START = 3
EXIT_AUDIT = 4
EXIT_DATA = 5


class CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("dims must be positive integers")
    return vals


def _factor_list(text):
    """'1,0;0,1;1,0' -> three vectors."""
    return [_floats(part) for part in text.split(";")]


def _nonneg(text):
    v = float(text)
    if not v >= 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError("expected a finite number >= 0")
    return v


def _posint(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _add_rule_flags(p):
    p.add_argument("--max-sweeps", type=_posint, default=500)
    p.add_argument("--grad-tol", type=_nonneg, default=1e-10)
    p.add_argument("--step-tol", type=_nonneg, default=1e-12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write the JSON-lines trace here")
    p.add_argument("--timings", action="store_true",
                   help="record wall-clock per sweep in the trace (breaks byte-identity)")
    p.add_argument("--strict", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="hopmkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a test tensor file")
    g.add_argument("--kind", required=True,
                   choices=["random", "diagonal", "rank1", "rank1plusnoise", "odeco"])
    g.add_argument("--dims", type=_ints, required=True)
    g.add_argument("--values", type=_floats, help="diagonal values")
    g.add_argument("--factors", type=_factor_list, help="rank-one factors, e.g. '1,0;0,1;1,0'")
    g.add_argument("--eps", type=_nonneg, default=0.0)
    g.add_argument("--weights", type=_floats, help="odeco weights")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)

    a = sub.add_parser("approx", help="rank-one approximation by HOPM or ALS")
    a.add_argument("tensor")
    a.add_argument("--method", choices=["hopm", "als"], default="als")
    a.add_argument("--lambda-tol", type=_nonneg, default=0.0)
    a.add_argument("--audit", action="store_true")
    a.add_argument("--verify-equivalence", action="store_true")
    a.add_argument("--sweeps", type=_posint, default=50, help="sweeps for --verify-equivalence")
    _add_rule_flags(a)

    c = sub.add_parser("cp", help="cyclic BCD over the rank-r CP format")
    c.add_argument("--objective", choices=["ls", "energy"], default="ls")
    c.add_argument("--tensor", help="target tensor (ls)")
    c.add_argument("--operator", help="SPD operator file (energy)")
    c.add_argument("--rhs", help="right-hand side tensor (energy)")
    c.add_argument("--rank", type=_posint, required=True)
    c.add_argument("--sigma-star", type=_nonneg, default=0.0)
    c.add_argument("--stability-threshold", type=_nonneg, default=DEFAULT_STABILITY_THRESHOLD)
    c.add_argument("--sigma-every", type=_posint, default=1)
    c.add_argument("--init", help="starting CP factors file")
    c.add_argument("--factors-out", help="write terminal CP factors here")
    _add_rule_flags(c)

    d = sub.add_parser("diagnose", help="rate fit and summability report for a trace")
    d.add_argument("trace")
    d.add_argument("--csv", help="write k, e_k, f_k - f_*, grad_norm here")
    d.add_argument("--window", type=_ints, help="fit window as start,stop indices")
    d.add_argument("--grad-tol", type=_nonneg, default=1e-8,
                   help="terminal gradient required for the Lojasiewicz fit")
    return parser


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def cmd_gen(args):
    kind = {"random": "random_gaussian", "rank1": "rank_one",
            "rank1plusnoise": "rank_one_plus_noise"}.get(args.kind, args.kind)
    if kind == "diagonal" and not args.values:
        raise CliError(EXIT_USAGE, "--kind diagonal needs --values")
    try:
        T = make_test_tensor(kind, args.dims, args.seed, values=args.values,
                             factors=args.factors, eps=args.eps, weights=args.weights)
    except (ValueError, DimsMismatch) as exc:
        raise CliError(EXIT_USAGE, str(exc))
    tio.write_tensor(T, args.output)
    _emit({"dims": list(T.shape), "fnorm": frobenius_norm(T), "path": args.output,
           "seed": args.seed})
    return 0


def _rule(args, lambda_tol=0.0):
    return StoppingRule(max_sweeps=args.max_sweeps, grad_tol=args.grad_tol,
                        step_tol=args.step_tol, lambda_tol=lambda_tol)


def cmd_approx(args):
    T = tio.read_tensor(args.tensor)
    rng = np.random.default_rng(args.seed)
    x0 = random_start(T, rng)
    if args.verify_equivalence:
        rep = verify_equivalence(T, x0, args.sweeps)
        _emit({"command": "verify-equivalence", "seed": args.seed, "sweeps": args.sweeps,
               "max_factor_dev": rep.max_factor_dev, "max_lambda_dev": rep.max_lambda_dev,
               "max_deviation": rep.max_deviation, "pass": rep.passed})
        return EXIT_AUDIT if (args.strict and not rep.passed) else 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if args.method == "hopm":
            state, trace, audit = run_hopm(T, x0, _rule(args, args.lambda_tol),
                                           audit=args.audit, timings=args.timings)
            lam = state.lam
        else:
            state, trace, audit = run_als(T, x0, _rule(args), audit=args.audit,
                                          timings=args.timings)
            lam = critical_lambda(T, state.x)[0]
    trace.meta["seed"] = args.seed
    if args.trace:
        tio.write_trace(trace, args.trace)
    summary = {
        "method": args.method, "seed": args.seed, "lambda_star": lam,
        "f_star": trace.terminal.f, "grad_norm": trace.terminal.grad_norm,
        "sweeps": trace.terminal.sweep, "stop_reason": trace.stop_reason,
        "audit_pass": audit.passed if audit is not None else None,
    }
    if audit is not None and not audit.passed:
        for msg in getattr(audit, "messages", None) or audit.violations:
            print(f"audit: {msg}", file=sys.stderr)
    _emit({k: _clean(v) for k, v in summary.items()})
    if args.strict and audit is not None and not audit.passed:
        return EXIT_AUDIT
    return 0


def cmd_cp(args):
    if args.objective == "ls":
        if not args.tensor:
            raise CliError(EXIT_USAGE, "--objective ls needs --tensor")
        obj = Objective.least_squares(tio.read_tensor(args.tensor), args.sigma_star)
    else:
        if not (args.operator and args.rhs):
            raise CliError(EXIT_USAGE, "--objective energy needs --operator and --rhs")
        B = tio.read_tensor(args.rhs)
        A = tio.read_operator(args.operator, B.shape)
        try:
            obj = Objective.energy(A, B, args.sigma_star)
        except ValueError as exc:
            raise CliError(EXIT_IO, f"{args.operator}: {exc}")
    if args.init:
        x0 = tio.read_cp(args.init)
        if x0[0].shape[1] != args.rank:
            raise CliError(EXIT_USAGE, f"--init has rank {x0[0].shape[1]}, --rank is {args.rank}")
    else:
        x0 = random_cp_start(obj.dims, args.rank, np.random.default_rng(args.seed))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StabilityWarning)
        try:
            factors, trace, audit = run_bcd(
                obj, x0, _rule(args), stability_threshold=args.stability_threshold,
                sigma_every=args.sigma_every, strict=args.strict, timings=args.timings,
            )
        finally:
            for w in caught:
                print(f"{w.category.__name__}: {w.message}", file=sys.stderr)
    trace.meta["seed"] = args.seed
    if args.trace:
        tio.write_trace(trace, args.trace)
    if args.factors_out:
        tio.write_cp(factors, args.factors_out)
    summary = {
        "objective": args.objective, "rank": args.rank, "sigma_star": args.sigma_star,
        "seed": args.seed, "f_star": trace.terminal.f, "grad_norm": trace.terminal.grad_norm,
        "step_norm": trace.sweeps[-1].step_norm if trace.sweeps else None,
        "sweeps": trace.terminal.sweep, "stop_reason": trace.stop_reason,
        "sigma_min": trace.meta.get("sigma_min"),
        "stability_warning": bool(trace.meta.get("stability_warning")),
        "audit_pass": audit.passed,
    }
    _emit({k: _clean(v) for k, v in summary.items()})
    if args.strict and not audit.passed:
        return EXIT_AUDIT
    return 0


def cmd_diagnose(args):
    trace = tio.read_trace(args.trace)
    window = tuple(args.window) if args.window else None
    if window is not None and len(window) != 2:
        raise CliError(EXIT_USAGE, "--window takes start,stop")
    out = diagnose_report(trace, window=window, grad_tol=args.grad_tol)
    if args.csv:
        write_csv(trace, args.csv)
    _emit(_deep_clean(out))
    return 0


def _deep_clean(obj):
    if isinstance(obj, dict):
        return {k: _deep_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_deep_clean(v) for v in obj]
    return _clean(obj)


COMMANDS = {"gen": cmd_gen, "approx": cmd_approx, "cp": cmd_cp, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (BadStart, ZeroContraction, DegenerateBlock) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_START
    except InsufficientData as exc:
        print(f"InsufficientData: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ParseError, SchemaError, DimsMismatch) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
