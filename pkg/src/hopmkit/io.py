"""Readers and writers for the tensor, CP factor, operator and trace formats.

Numbers are written with 17 significant digits so every finite double
round-trips exactly.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from pathlib import Path

import numpy as np

from .diagnostics import BlockRecord, IterationTrace, SweepRecord, Terminal
from .errors import DimsMismatch, ParseError, SchemaError

SYMMETRY_TOL = 1e-10


def fmt(v: float) -> str:
    return "%.17g" % v


# -- numeric text files ------------------------------------------------------

def _tokens(lines, start_line):
    """Yield (value, line, column) for numeric tokens; blank lines give None."""
    for ln, text in enumerate(lines, start=start_line):
        stripped = text.strip()
        if not stripped or stripped.startswith("#"):
            yield None, ln, 0
            continue
        col = 0
        for tok in text.split():
            col = text.index(tok, col) + 1
            try:
                val = float(tok)
            except ValueError:
                raise ParseError(f"not a number: {tok!r}", ln, col) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {tok!r}", ln, col)
            yield val, ln, col
            col += len(tok) - 1


def _header(line, key, lineno, path):
    text = line.strip()
    if not text.startswith(key + ":"):
        raise ParseError(f"expected '{key}: ...' header", lineno, 1, path)
    parts = text[len(key) + 1:].split()
    out = []
    for p in parts:
        try:
            n = int(p)
        except ValueError:
            raise ParseError(f"bad integer {p!r} in {key} header", lineno, text.index(p) + 1, path) from None
        if n < 1:
            raise ParseError(f"{key} values must be positive", lineno, None, path)
        out.append(n)
    if not out:
        raise ParseError(f"empty {key} header", lineno, None, path)
    return out


def _read_lines(path):
    with open(path, "r") as fh:
        return fh.read().splitlines()


def read_tensor(path) -> np.ndarray:
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file", 1, None, path)
    dims = _header(lines[0], "dims", 1, path)
    expected = int(np.prod(dims))
    vals = []
    try:
        for v, ln, col in _tokens(lines[1:], 2):
            if v is None:
                continue
            if len(vals) == expected:
                raise ParseError(f"extra entry beyond the expected {expected}", ln, col, path)
            vals.append(v)
    except ParseError as exc:
        exc.path = path
        raise
    if len(vals) != expected:
        raise ParseError(
            f"expected {expected} entries for dims {dims}, found {len(vals)}",
            len(lines), None, path,
        )
    from .tensor_core import as_tensor

    return as_tensor(vals, dims)


def write_tensor(T, path) -> None:
    T = np.asarray(T, dtype=np.float64)
    rows = T.reshape(-1, T.shape[-1]) if T.ndim > 0 else T.reshape(1, 1)
    out = ["dims: " + " ".join(str(n) for n in T.shape)]
    out.extend(" ".join(fmt(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(out) + "\n")


def read_cp(path):
    """CP factors: ``cp: d r``, ``dims: n1 ... nd``, then blank-line separated matrices."""
    from .cp_bcd import as_cp

    lines = _read_lines(path)
    if len(lines) < 2:
        raise ParseError("missing cp/dims headers", len(lines) + 1, None, path)
    d, r = (_header(lines[0], "cp", 1, path) + [0, 0])[:2]
    if r == 0:
        raise ParseError("cp header needs 'cp: d r'", 1, None, path)
    dims = _header(lines[1], "dims", 2, path)
    if len(dims) != d:
        raise ParseError(f"cp header says d = {d} but dims lists {len(dims)} modes", 2, None, path)
    mats, rows, row, row_line = [], [], [], None
    for v, ln, col in _tokens(lines[2:], 3):
        if v is None:
            if row:
                rows.append((row, row_line))
                row = []
            if rows:
                mats.append(rows)
                rows = []
            continue
        if row and ln != row_line:
            rows.append((row, row_line))
            row = []
        row_line = ln
        row.append(v)
    if row:
        rows.append((row, row_line))
    if rows:
        mats.append(rows)
    if len(mats) != d:
        raise ParseError(f"expected {d} factor matrices, found {len(mats)}", len(lines), None, path)
    out = []
    for mu, (m, n) in enumerate(zip(mats, dims)):
        if len(m) != n:
            raise ParseError(f"factor {mu + 1}: expected {n} rows, found {len(m)}", m[0][1], None, path)
        for vals, ln in m:
            if len(vals) != r:
                raise ParseError(f"factor {mu + 1}: expected {r} columns, found {len(vals)}", ln, None, path)
        out.append(np.array([vals for vals, _ in m]))
    return as_cp(out)


def write_cp(factors, path) -> None:
    d, r = len(factors), factors[0].shape[1]
    out = [f"cp: {d} {r}", "dims: " + " ".join(str(m.shape[0]) for m in factors)]
    for m in factors:
        out.append("")
        out.extend(" ".join(fmt(v) for v in row) for row in m)
    _atomic_write(path, "\n".join(out) + "\n")


def read_operator(path, dims=None) -> np.ndarray:
    """Dense symmetric operator: ``operator: N`` then N rows of N entries."""
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file", 1, None, path)
    hdr = _header(lines[0], "operator", 1, path)
    if len(hdr) != 1:
        raise ParseError("operator header needs exactly one size", 1, None, path)
    N = hdr[0]
    vals = [v for v, _, _ in _tokens(lines[1:], 2) if v is not None]
    if len(vals) != N * N:
        raise ParseError(f"expected {N * N} entries for N = {N}, found {len(vals)}", len(lines), None, path)
    A = np.array(vals).reshape(N, N)
    if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(A)))):
        raise ParseError("operator is not symmetric", None, None, path)
    if dims is not None and int(np.prod(dims)) != N:
        raise DimsMismatch(f"operator size {N} does not match dims {tuple(dims)}")
    return A


def write_operator(A, path) -> None:
    A = np.asarray(A, dtype=np.float64)
    out = [f"operator: {A.shape[0]}"]
    out.extend(" ".join(fmt(v) for v in row) for row in A)
    _atomic_write(path, "\n".join(out) + "\n")


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- JSON-lines traces -------------------------------------------------------

_BLOCK_KEYS = {"record", "sweep", "mode", "f", "lambda", "step_norm", "grad_norm",
               "sigma_block", "gamma", "checks"}
_SWEEP_KEYS = {"record", "sweep", "f", "lambda", "step_norm", "grad_norm", "elapsed"}
_TERMINAL_KEYS = {"record", "sweep", "f", "lambda", "grad_norm", "stop_reason"}


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def block_to_dict(b: BlockRecord) -> dict:
    return _drop_none({
        "record": "block", "sweep": b.sweep, "mode": b.mode, "f": b.f, "lambda": b.lam,
        "step_norm": b.step_norm, "grad_norm": b.grad_norm, "sigma_block": b.sigma_block,
        "gamma": b.gamma,
        "checks": {k: bool(v) for k, v in b.checks.items()} if b.checks else None,
    })


def sweep_to_dict(s: SweepRecord) -> dict:
    return _drop_none({
        "record": "sweep", "sweep": s.sweep, "f": s.f, "lambda": s.lam,
        "step_norm": s.step_norm, "grad_norm": s.grad_norm, "elapsed": s.elapsed,
    })


def trace_lines(trace: IterationTrace):
    """Serialize a trace; sweep record k is followed by the blocks of sweep k + 1."""
    def dump(obj):
        return json.dumps(obj, allow_nan=False, sort_keys=False)

    yield dump({"record": "header", "method": trace.method, **_jsonable(trace.meta)})
    blocks = {}
    for b in trace.blocks:
        blocks.setdefault(b.sweep, []).append(b)
    for s in trace.sweeps:
        yield dump(sweep_to_dict(s))
        for b in blocks.pop(s.sweep + 1, []):
            yield dump(block_to_dict(b))
    for k in sorted(blocks):
        for b in blocks[k]:
            yield dump(block_to_dict(b))
    if trace.terminal is not None:
        t = trace.terminal
        yield dump(_drop_none({"record": "terminal", "sweep": t.sweep, "f": t.f,
                               "lambda": t.lam, "grad_norm": t.grad_norm,
                               "stop_reason": t.stop_reason}))


def _jsonable(meta):
    out = {}
    for k, v in meta.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


def write_trace(trace: IterationTrace, path) -> None:
    _atomic_write(path, "".join(line + "\n" for line in trace_lines(trace)))


def append_trace_record(path, record: dict) -> None:
    """Append one JSON object as a line (single writer assumed)."""
    with open(path, "a") as fh:
        fh.write(json.dumps(record, allow_nan=False) + "\n")


def _num(obj, key, ln, required=True, kind=float):
    if key not in obj or obj[key] is None:
        if required:
            raise SchemaError(f"missing key {key!r}", ln)
        return None
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"key {key!r} must be numeric", ln)
    if kind is int:
        if float(v) != int(v):
            raise SchemaError(f"key {key!r} must be an integer", ln)
        return int(v)
    if not math.isfinite(v):
        raise SchemaError(f"key {key!r} must be finite", ln)
    return float(v)


def read_trace(path) -> IterationTrace:
    """Parse a JSON-lines trace. Unknown keys are ignored with a warning."""
    trace = IterationTrace()
    warned = set()
    last_sweep = None
    last_block = None
    with open(path, "r") as fh:
        for ln, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", ln) from None
            if not isinstance(obj, dict):
                raise SchemaError("record is not a JSON object", ln)
            kind = obj.get("record") or ("block" if "mode" in obj else "sweep")
            if kind == "header":
                trace.method = obj.get("method", "")
                trace.meta = {k: v for k, v in obj.items() if k not in ("record", "method")}
                continue
            allowed = {"block": _BLOCK_KEYS, "sweep": _SWEEP_KEYS, "terminal": _TERMINAL_KEYS}.get(kind)
            if allowed is None:
                raise SchemaError(f"unknown record type {kind!r}", ln)
            for key in set(obj) - allowed:
                if (kind, key) not in warned:
                    warned.add((kind, key))
                    warnings.warn(f"{path}:{ln}: ignoring unknown key {key!r} in {kind} record")
            sweep = _num(obj, "sweep", ln, kind=int)
            if kind == "sweep":
                if last_sweep is not None and sweep <= last_sweep:
                    raise SchemaError(f"sweep {sweep} does not increase (previous {last_sweep})", ln)
                last_sweep = sweep
                trace.sweeps.append(SweepRecord(
                    sweep=sweep, f=_num(obj, "f", ln), step_norm=_num(obj, "step_norm", ln),
                    grad_norm=_num(obj, "grad_norm", ln), lam=_num(obj, "lambda", ln, False),
                    elapsed=_num(obj, "elapsed", ln, False),
                ))
            elif kind == "block":
                mode = _num(obj, "mode", ln, kind=int)
                if last_block is not None and (sweep, mode) <= last_block:
                    raise SchemaError(
                        f"block (sweep {sweep}, mode {mode}) out of order after {last_block}", ln)
                last_block = (sweep, mode)
                checks = obj.get("checks") or {}
                if not isinstance(checks, dict) or not all(isinstance(v, bool) for v in checks.values()):
                    raise SchemaError("checks must map names to booleans", ln)
                trace.blocks.append(BlockRecord(
                    sweep=sweep, mode=mode, f=_num(obj, "f", ln),
                    step_norm=_num(obj, "step_norm", ln), lam=_num(obj, "lambda", ln, False),
                    grad_norm=_num(obj, "grad_norm", ln, False),
                    sigma_block=_num(obj, "sigma_block", ln, False),
                    gamma=_num(obj, "gamma", ln, False), checks=checks,
                ))
            else:
                trace.terminal = Terminal(
                    sweep=sweep, f=_num(obj, "f", ln), grad_norm=_num(obj, "grad_norm", ln),
                    lam=_num(obj, "lambda", ln, False),
                    stop_reason=str(obj.get("stop_reason", "max_sweeps")),
                )
    return trace
