import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hopmkit.cli import main
from hopmkit.diagnostics import IterationTrace, SweepRecord, Terminal
from hopmkit.io import read_tensor, read_trace, write_tensor, write_trace, write_operator


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    payload = json.loads(out) if out.strip() else None
    return code, payload, err


def gen(capsys, path, *extra):
    code, out, _ = run(capsys, "gen", "-o", path, *extra)
    assert code == 0
    return out


def test_gen_diagonal(tmp_path, capsys):
    out = gen(capsys, tmp_path / "t.tns", "--kind", "diagonal", "--values", "3,1", "--dims", "2,2,2")
    assert out["fnorm"] == pytest.approx(math.sqrt(10), rel=1e-15)
    assert out["dims"] == [2, 2, 2]


def test_gen_noise_free_matches_rank1(tmp_path, capsys):
    gen(capsys, tmp_path / "a.tns", "--kind", "rank1", "--dims", "2,3,2", "--seed", 4)
    gen(capsys, tmp_path / "b.tns", "--kind", "rank1plusnoise", "--eps", 0, "--dims", "2,3,2", "--seed", 4)
    assert (tmp_path / "a.tns").read_bytes() == (tmp_path / "b.tns").read_bytes()


def test_gen_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        gen(capsys, tmp_path / f"{name}.tns", "--kind", "random", "--dims", "3,3,3", "--seed", 7)
    assert (tmp_path / "a.tns").read_bytes() == (tmp_path / "b.tns").read_bytes()


def test_gen_explicit_factors(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "rank1", "--dims", "2,2,2", "--factors", "1,0;0,1;1,0")
    T = read_tensor(tmp_path / "t.tns")
    assert T[0, 1, 0] == 1 and np.count_nonzero(T) == 1


def test_approx_rank_one(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "rank1", "--dims", "3,3,3", "--seed", 2)
    code, out, _ = run(capsys, "approx", tmp_path / "t.tns", "--method", "als")
    assert code == 0
    assert out["f_star"] < 1e-20
    assert out["sweeps"] == 2
    T = read_tensor(tmp_path / "t.tns")
    assert out["lambda_star"] == pytest.approx(np.linalg.norm(T), rel=1e-12)


def test_verify_equivalence(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "random", "--dims", "3,3,3", "--seed", 3)
    code, out, _ = run(capsys, "approx", tmp_path / "t.tns", "--verify-equivalence", "--sweeps", 50)
    assert code == 0
    assert out["pass"] and out["max_deviation"] < 1e-8


def test_hopm_audit(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "random", "--dims", "4,4,4", "--seed", 5)
    code, out, _ = run(capsys, "approx", tmp_path / "t.tns", "--method", "hopm", "--audit", "--strict",
                       "--trace", tmp_path / "h.jsonl")
    assert code == 0 and out["audit_pass"] is True
    tr = read_trace(tmp_path / "h.jsonl")
    assert tr.method == "hopm" and tr.meta["seed"] == 0
    assert tr.terminal.sweep == out["sweeps"]


def test_cp_rank_one_matches_als(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "random", "--dims", "3,3,3", "--seed", 8)
    common = ["--seed", 11, "--max-sweeps", 60, "--grad-tol", 0, "--step-tol", 0]
    run(capsys, "approx", tmp_path / "t.tns", "--method", "als", "--trace", tmp_path / "a.jsonl", *common)
    code, out, _ = run(capsys, "cp", "--tensor", tmp_path / "t.tns", "--rank", 1, "--sigma-star", 0,
                       "--trace", tmp_path / "b.jsonl", *common)
    assert code == 0
    a, b = read_trace(tmp_path / "a.jsonl"), read_trace(tmp_path / "b.jsonl")
    assert len(a.blocks) == len(b.blocks) == 180
    np.testing.assert_allclose([x.f for x in b.blocks], [x.f for x in a.blocks], rtol=0, atol=1e-12)


def test_cp_regularized(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "random", "--dims", "3,3,3", "--seed", 1)
    code, out, _ = run(capsys, "cp", "--tensor", tmp_path / "t.tns", "--rank", 2, "--sigma-star", 0.1,
                       "--seed", 1, "--max-sweeps", 3000, "--factors-out", tmp_path / "f.cp")
    assert code == 0
    assert out["step_norm"] < 1e-10
    assert out["stability_warning"] is False
    assert (tmp_path / "f.cp").read_text().startswith("cp: 3 2\ndims: 3 3 3\n")


def test_cp_stability_warning(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "rank1", "--dims", "3,3,3", "--seed", 1)
    code, out, err = run(capsys, "cp", "--tensor", tmp_path / "t.tns", "--rank", 2, "--sigma-star", 0)
    assert code == 0
    assert out["stability_warning"] is True and out["sigma_min"] < 1e-8
    assert "StabilityWarning" in err
    code, out, err = run(capsys, "cp", "--tensor", tmp_path / "t.tns", "--rank", 2, "--strict")
    assert code == 3 and out is None
    assert "StabilityWarning" in err and "DegenerateBlock" in err


def test_cp_energy(tmp_path, capsys, rng):
    Q = rng.standard_normal((8, 8))
    write_operator(Q @ Q.T / 8 + np.eye(8), tmp_path / "a.op")
    write_tensor(rng.standard_normal((2, 2, 2)), tmp_path / "b.tns")
    code, out, _ = run(capsys, "cp", "--objective", "energy", "--operator", tmp_path / "a.op",
                       "--rhs", tmp_path / "b.tns", "--rank", 2, "--sigma-star", 0.05, "--strict")
    assert code == 0 and out["audit_pass"]
    code, _, err = run(capsys, "cp", "--objective", "energy", "--rank", 2)
    assert code == 2 and "--operator" in err


def als_trace_file(tmp_path, capsys, seed=12):
    gen(capsys, tmp_path / "t.tns", "--kind", "random", "--dims", "3,3,3", "--seed", seed)
    run(capsys, "approx", tmp_path / "t.tns", "--method", "als", "--grad-tol", 1e-12, "--step-tol", 0,
        "--max-sweeps", 200, "--seed", seed, "--trace", tmp_path / "a.jsonl")
    return tmp_path / "a.jsonl"


def test_diagnose_als(tmp_path, capsys):
    path = als_trace_file(tmp_path, capsys)
    code, out, _ = run(capsys, "diagnose", path, "--csv", tmp_path / "d.csv")
    assert code == 0
    assert out["regime"] in ("Linear", "Sublinear", "Undetermined")
    assert out["summability"]["pass"] is True
    assert (tmp_path / "d.csv").read_text().startswith("k,e_k,f_gap,grad_norm")


def test_diagnose_synthetic(tmp_path, capsys):
    e = 0.9 ** np.arange(60)
    steps = np.append(e[:-1] - e[1:], e[-1])
    tr = IterationTrace("synthetic", [SweepRecord(k, 1.0, float(s), 1.0) for k, s in enumerate(steps)],
                        [], Terminal(60, 1.0, 1.0))
    write_trace(tr, tmp_path / "s.jsonl")
    code, out, _ = run(capsys, "diagnose", tmp_path / "s.jsonl")
    assert code == 0 and out["regime"] == "Linear"
    assert out["q"] == pytest.approx(0.9, abs=0.01)
    assert "error" in out["lojasiewicz"]


def test_diagnose_short_trace(tmp_path, capsys):
    tr = IterationTrace("synthetic", [SweepRecord(k, 1.0, 0.5**k, 1.0) for k in range(5)], [], Terminal(5, 1.0, 1.0))
    write_trace(tr, tmp_path / "s.jsonl")
    code, out, err = run(capsys, "diagnose", tmp_path / "s.jsonl")
    assert code == 5 and out is None and "InsufficientData" in err


def test_traces_byte_identical(tmp_path, capsys):
    gen(capsys, tmp_path / "t.tns", "--kind", "random", "--dims", "3,3,3", "--seed", 7)
    for name in ("a", "b"):
        run(capsys, "approx", tmp_path / "t.tns", "--audit", "--seed", 9, "--trace", tmp_path / f"{name}.jsonl")
        run(capsys, "cp", "--tensor", tmp_path / "t.tns", "--rank", 2, "--sigma-star", 0.1, "--seed", 9,
            "--trace", tmp_path / f"{name}.cp.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.cp.jsonl").read_bytes() == (tmp_path / "b.cp.jsonl").read_bytes()


def test_exit_codes(tmp_path, capsys):
    code, out, err = run(capsys, "approx", tmp_path / "missing.tns")
    assert code == 1 and out is None and err
    (tmp_path / "bad.tns").write_text("dims: 2 2\n1 2 3\n")
    code, _, err = run(capsys, "approx", tmp_path / "bad.tns")
    assert code == 1 and "expected 4 entries" in err
    write_tensor(np.zeros((2, 2, 2)), tmp_path / "z.tns")
    code, _, err = run(capsys, "approx", tmp_path / "z.tns")
    assert code == 3 and "BadStart" in err
    code, _, err = run(capsys, "gen", "--kind", "diagonal", "--dims", "2,3", "--values", "1", "-o", tmp_path / "x")
    assert code == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["approx", "t.tns", "--bogus"],
        ["approx", "t.tns", "--grad-tol", "-1"],
        ["approx", "t.tns", "--max-sweeps", "0"],
        ["gen", "--kind", "random", "--dims", "2,x", "-o", "t"],
        ["cp", "--tensor", "t.tns"],
        ["nonsense"],
    ],
)
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
    assert capsys.readouterr().out == ""


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hopmkit", "gen", "--kind", "diagonal", "--values", "3,1",
         "--dims", "2,2", "-o", str(tmp_path / "t.tns")],
        capture_output=True, text=True, check=True,
    )
    assert json.loads(proc.stdout)["fnorm"] == pytest.approx(math.sqrt(10))
