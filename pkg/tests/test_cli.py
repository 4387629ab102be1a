import csv
import io
import json

import numpy as np
import pytest

from cica import cli
from cica.evalsynth import amari_error, random_mixing, sample_sources
from cica.experiments import phase_transition
from cica.pipeline import write_data
from cica.sketch import make_operator, read_sketch, sketch_tensor, write_sketch

from conftest import random_member


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def parse_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# schema: cica.")
    return lines[0].split(": ")[1], list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


@pytest.fixture
def data_file(tmp_path):
    X = sample_sources("laplace", 8, 3000, 0) @ random_mixing(8, 8, 0).T
    path = tmp_path / "x.bin"
    write_data(path, X)
    return path, X


@pytest.fixture
def truth_sketch(tmp_path):
    rng = np.random.default_rng(4)
    Z, _, Q = random_member(4, rng)
    op = make_operator("gaussian", 40, 4, 17)
    path = tmp_path / "s.cic"
    write_sketch(path, sketch_tensor(op, Z))
    return path, Q


def test_parse_range():
    assert cli._parse_range("2:5") == [2, 3, 4, 5]
    assert cli._parse_range("4:20:8") == [4, 12, 20]
    assert cli._parse_range("3, 6,12") == [3, 6, 12]
    with pytest.raises(ValueError):
        cli._parse_range("5:2")


def test_sketch_reports_compression(data_file, tmp_path, capsys):
    path, _ = data_file
    code, out, _ = run(capsys, "sketch", path, "--m", 144, "--out", tmp_path / "s.cic")
    assert code == 0
    fields = dict(kv.split("=") for kv in out.split())
    assert fields["n"] == "8" and fields["m"] == "144" and fields["p"] == "330" and fields["N"] == "3000"
    assert float(fields["ratio"]) == pytest.approx(330 / 144, rel=1e-3)
    sv = read_sketch(tmp_path / "s.cic")
    assert sv.m == 144 and sv.n == 8 and sv.sample_count == 3000


def test_merge_matches_single_pass(tmp_path, capsys):
    X = sample_sources("uniform", 3, 2000, 1)
    # the command centers each file on its own mean, so make both halves zero-mean
    X[:800] -= X[:800].mean(axis=0)
    X[800:] -= X[800:].mean(axis=0)
    write_data(tmp_path / "a.bin", X[:800])
    write_data(tmp_path / "b.bin", X[800:])
    write_data(tmp_path / "all.bin", X)
    for name in ("a", "b", "all"):
        code = run(capsys, "sketch", tmp_path / f"{name}.bin", "--mode", "unwhitened", "--m", 20, "--seed", 3,
                   "--out", tmp_path / f"{name}.cic")[0]
        assert code == 0
    assert run(capsys, "merge", tmp_path / "a.cic", tmp_path / "b.cic", "--out", tmp_path / "ab.cic")[0] == 0
    ab, full = read_sketch(tmp_path / "ab.cic"), read_sketch(tmp_path / "all.cic")
    assert ab.sample_count == full.sample_count == 2000
    assert np.allclose(ab.y, full.y, atol=1e-10)
    assert np.allclose(ab.cov, full.cov, atol=1e-12)


def test_merge_fingerprint_mismatch(data_file, tmp_path, capsys):
    path, _ = data_file
    run(capsys, "sketch", path, "--m", 50, "--seed", 1, "--out", tmp_path / "a.cic")
    run(capsys, "sketch", path, "--m", 50, "--seed", 2, "--out", tmp_path / "b.cic")
    code, _, err = run(capsys, "merge", tmp_path / "a.cic", tmp_path / "b.cic", "--out", tmp_path / "c.cic")
    assert code == 4 and "fingerprint" in err


def test_solve_recovers_truth(truth_sketch, tmp_path, capsys):
    path, Q = truth_sketch
    errs = {}
    for solver in ("ipg", "asd"):
        out = tmp_path / f"{solver}.json"
        assert run(capsys, "solve", path, "--solver", solver, "--out", out)[0] == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == "cica.estimate/1"
        assert set(doc) >= {"M", "Q", "S", "residuals", "converged", "wall_time", "timestamp", "version"}
        assert doc["converged"] is True
        errs[solver] = amari_error(Q, np.array(doc["M"]))
    assert errs["ipg"] <= 1e-6
    assert abs(errs["ipg"] - errs["asd"]) <= 1e-5


def test_solve_corrupt_magic(truth_sketch, capsys):
    path, _ = truth_sketch
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    assert run(capsys, "solve", path)[0] == 2


def test_strict_non_convergence(tmp_path, capsys):
    rng = np.random.default_rng(0)
    op = make_operator("gaussian", 3, 3, 0)
    write_sketch(tmp_path / "s.cic", sketch_tensor(op, random_member(3, rng)[0]))
    assert run(capsys, "solve", tmp_path / "s.cic", "--out", tmp_path / "o.json")[0] == 0
    assert run(capsys, "solve", tmp_path / "s.cic", "--strict", "--out", tmp_path / "o.json")[0] == 5
    assert run(capsys, "--strict", "solve", tmp_path / "s.cic", "--out", tmp_path / "o.json")[0] == 5


def test_dimension_error_exit(tmp_path, capsys):
    write_data(tmp_path / "x.bin", np.random.default_rng(0).standard_normal((3, 4)))
    assert run(capsys, "sketch", tmp_path / "x.bin", "--out", tmp_path / "s.cic")[0] == 3
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    assert run(capsys, "fit", tmp_path / "bad.csv", "--n", 2)[0] == 2


@pytest.mark.parametrize("mode", ["whitened", "unwhitened"])
def test_fit_writes_estimate_and_components(mode, tmp_path, capsys):
    M = random_mixing(3, 3, 5)
    S = sample_sources("laplace", 3, 20_000, 5)
    write_data(tmp_path / "x.bin", S @ M.T)
    code, _, _ = run(capsys, "fit", tmp_path / "x.bin", "--n", 3, "--mode", mode, "--seed", 5,
                     "--out", tmp_path / "e.json", "--components", tmp_path / "c.csv")
    assert code == 0
    doc = json.loads((tmp_path / "e.json").read_text())
    assert np.array(doc["M"]).shape == (3, 3)
    assert np.loadtxt(tmp_path / "c.csv", delimiter=",").shape == (20_000, 3)
    if mode == "whitened":
        assert amari_error(M, np.array(doc["M"])) <= 0.1


def test_amari_command(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("1,0\n0,1\n")
    (tmp_path / "b.csv").write_text("1,1\n0,1\n")
    code, out, _ = run(capsys, "amari", tmp_path / "a.csv", tmp_path / "b.csv")
    assert code == 0 and float(out) == pytest.approx(0.5)


def test_phase_transition_smoke_and_schema(capsys):
    code, out, _ = run(capsys, "phase-transition", "--n-range", "2:3", "--trials", 1)
    assert code == 0
    schema, rows = parse_csv(out)
    assert schema == "cica.phase_transition/1"
    assert list(rows[0]) == cli.PHASE_COLUMNS
    assert [(int(r["n"]), int(r["m"])) for r in rows] == [(2, 3), (2, 6), (2, 12), (3, 6), (3, 12), (3, 24)]
    for r in rows:
        n = int(r["n"])
        assert int(r["dim"]) == n * (n + 1) // 2 and int(r["dim4"]) == 2 * n * (n + 1)
        assert 0.0 <= float(r["prob"]) <= 1.0


def test_phase_transition_json_is_deterministic(capsys):
    args = ("--format", "json", "phase-transition", "--n-range", "3", "--m-range", "6,24", "--trials", 3,
            "--seed", 11)
    a = json.loads(run(capsys, *args)[1])
    b = json.loads(run(capsys, *args)[1])
    assert a == b and a["schema"] == "cica.phase_transition/1"
    assert [r["m"] for r in a["rows"]] == [6, 24]


def test_phase_transition_threads_match_serial(capsys):
    base = ("phase-transition", "--n-range", "3", "--m-range", "8,24", "--trials", 4, "--seed", 2)
    assert run(capsys, *base)[1] == run(capsys, *base, "--threads", 2)[1]


def test_phase_transition_n8():
    rows = phase_transition([8], [36, 144], trials=10, seed=0)
    assert rows[0]["prob"] <= 0.1 and rows[1]["prob"] >= 0.9


def test_phase_transition_n2_completes_by_twice_model_dimension():
    rows = phase_transition([2], [12], trials=50, seed=0)
    assert rows[0]["prob"] >= 0.9


def test_efficiency_smoke(capsys):
    code, out, _ = run(capsys, "efficiency", "--n", 3, "--N", 500, "--m-list", "12,24", "--trials", 4)
    assert code == 0
    schema, rows = parse_csv(out)
    assert schema == "cica.efficiency/1"
    assert [int(r["m"]) for r in rows] == [12, 24]
    assert all(float(r["e"]) > 0 for r in rows)
