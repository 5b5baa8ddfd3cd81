import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from approxinv.cli import SUMMARY_HEADER, main
from approxinv.iteration import CSV_HEADER
from approxinv.mmio import read_matrix_market
from approxinv.problems import laplacian_1d
from approxinv.report import RATES_HEADER, TIMESTAMP_KEY


def manifest(tmp_path, doc, name="m.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def diag_doc(out, eigs=tuple(range(1, 11)), **run):
    return {
        "schema_version": 1,
        "generator": {"kind": "diagonal", "params": {"eigenvalues": list(eigs)}},
        "run": run or {"solver_mode": "exact"},
        "output_dir": str(out),
    }


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- generate --------------------------------------------------------------------

def test_generate_diagonal(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["generate", "--manifest", manifest(tmp_path, diag_doc(out, [1, 2, 3]))]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["lambda1"] == 1.0 and meta["lambda2"] == 2.0 and meta["multiplicity"] == 1
    assert meta["schema_version"] == 1
    assert "lambda1=1.0" in capsys.readouterr().out


def test_generate_laplacian_roundtrip(tmp_path):
    doc = {"generator": {"kind": "laplacian1d", "params": {"n": 3}}, "run": {}, "output_dir": str(tmp_path)}
    assert main(["generate", "--manifest", manifest(tmp_path, doc)]) == 0
    A = read_matrix_market(tmp_path / "A.mtx").toarray()
    np.testing.assert_array_equal(A, laplacian_1d(3).A.to_dense())


def test_generate_fem_residual(tmp_path):
    doc = {"generator": {"kind": "fem1d", "params": {"n": 10}}, "run": {}, "output_dir": str(tmp_path)}
    assert main(["generate", "--manifest", manifest(tmp_path, doc)]) == 0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["max_residual"] <= 1e-10


# --- run -------------------------------------------------------------------------

def test_run_exact_diagonal(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--manifest", manifest(tmp_path, diag_doc(out)), "--no-figures"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["all_pass"] is True and report["first_failure"] is None
    rows = read_csv(out / "rates.csv")
    assert tuple(rows[0]) == RATES_HEADER
    assert tuple(read_csv(out / "trajectory.csv")[0]) == CSV_HEADER
    traj = json.loads((out / "trajectory.json").read_text())
    assert traj["stop_reason"] == "tol_reached"
    assert not (out / "rates.png").exists()


def test_run_writes_figure(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--manifest", manifest(tmp_path, diag_doc(out))]) == 0
    assert (out / "rates.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_run_invalid_eta_writes_nothing(tmp_path):
    out = tmp_path / "bad"
    doc = diag_doc(out, solver_mode="perturbed", eta=1.5)
    assert main(["run", "--manifest", manifest(tmp_path, doc)]) == 2
    assert not out.exists()


def test_run_override_validation(tmp_path):
    out = tmp_path / "bad"
    path = manifest(tmp_path, diag_doc(out))
    assert main(["run", "--manifest", path, "--override", "run.eta=1.5"]) == 2
    assert not out.exists()


def test_run_fixed_point_start(tmp_path):
    out = tmp_path / "fp"
    doc = {**diag_doc(out), "start": {"kind": "eigenvector"}}
    assert main(["run", "--manifest", manifest(tmp_path, doc), "--no-figures"]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 2
    assert json.loads((out / "trajectory.json").read_text())["stop_reason"] == "eigenvector_fixed_point"


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["verify", "--trajectory", "x"]])
def test_usage_errors(argv):
    assert main(argv) == 2


def test_missing_manifest_file(tmp_path):
    assert main(["run", "--manifest", str(tmp_path / "nope.json")]) == 2


def test_run_is_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        doc = diag_doc(out, solver_mode="perturbed", eta=0.9, policy={"kind": "random", "seed": 5})
        assert main(["run", "--manifest", manifest(tmp_path, doc, f"{name}.json")]) == 0
        outs.append(out)
    for f in ("trajectory.csv", "report.json", "rates.csv", "metadata.json", "rates.png"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    a, b = (json.loads((o / "trajectory.json").read_text()) for o in outs)
    a.pop(TIMESTAMP_KEY), b.pop(TIMESTAMP_KEY)
    assert a == b


def test_console_entry_point(tmp_path):
    out = tmp_path / "m"
    proc = subprocess.run(
        [sys.executable, "-m", "approxinv", "run", "--manifest", manifest(tmp_path, diag_doc(out)),
         "--no-figures"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "all_pass: yes" in proc.stdout


# --- sweep -----------------------------------------------------------------------

def sweep_doc(out, seeds=2):
    doc = diag_doc(out, solver_mode="perturbed", eta=0.5, policy={"kind": "worst-of-N", "n_candidates": 8})
    doc["sweep"] = {"eta": [0.1, 0.5, 0.9], "gap_fraction": [0.1, 0.9], "seeds": seeds}
    return doc


def test_sweep(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--manifest", manifest(tmp_path, sweep_doc(out))]) == 0
    rows = read_csv(out / "summary.csv")
    assert tuple(rows[0]) == SUMMARY_HEADER
    assert len(rows) == 1 + 3 * 2 * 2
    assert all(r[4] == "true" for r in rows[1:])
    assert (out / "summary.png").exists()
    assert (out / "cells" / "eta=0.5_gap=0.9_seed=1" / "report.json").exists()


def test_sweep_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "serial", tmp_path / "parallel"
    assert main(["sweep", "--manifest", manifest(tmp_path, sweep_doc(a), "a.json"), "--no-figures"]) == 0
    assert main(["sweep", "--manifest", manifest(tmp_path, sweep_doc(b), "b.json"), "--no-figures",
                 "--workers", "3"]) == 0
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_sweep_empty_lists(tmp_path):
    doc = sweep_doc(tmp_path / "s")
    doc["sweep"]["eta"] = []
    assert main(["sweep", "--manifest", manifest(tmp_path, doc)]) == 2


def test_sweep_needs_block(tmp_path):
    assert main(["sweep", "--manifest", manifest(tmp_path, diag_doc(tmp_path / "s"))]) == 2


# --- verify ----------------------------------------------------------------------

@pytest.fixture
def run_dir(tmp_path):
    out = tmp_path / "r"
    doc = diag_doc(out, solver_mode="perturbed", eta=0.5, policy={"kind": "worst-of-N", "seed": 2})
    assert main(["run", "--manifest", manifest(tmp_path, doc), "--no-figures"]) == 0
    return out


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_verify_roundtrip(run_dir, fmt):
    rc = main(["verify", "--trajectory", str(run_dir / f"trajectory.{fmt}"),
               "--metadata", str(run_dir / "metadata.json")])
    assert rc == 0
    orig = json.loads((run_dir / "report.json").read_text())
    again = json.loads((run_dir / "verify_report.json").read_text())
    assert again["all_pass"] is True
    for s1, s2 in zip(orig["steps"], again["steps"]):
        for c1, c2 in zip(s1["checks"], s2["checks"]):
            assert c1["id"] == c2["id"]
            if c1["margin"] is not None:
                assert abs(c1["margin"] - c2["margin"]) <= 1e-12


def test_verify_corrupted_lambda(run_dir, tmp_path):
    rows = read_csv(run_dir / "trajectory.csv")
    col = rows[0].index("lambda_next")
    rows[4][col] = repr(float(rows[4][col]) + 0.5)
    bad = tmp_path / "bad.csv"
    with open(bad, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    out = tmp_path / "v.json"
    rc = main(["verify", "--trajectory", str(bad), "--metadata", str(run_dir / "metadata.json"),
               "--out", str(out)])
    assert rc == 1
    ff = json.loads(out.read_text())["first_failure"]
    assert ff["step"] == 3


def test_verify_without_subspace_column(run_dir, tmp_path):
    rows = read_csv(run_dir / "trajectory.csv")
    col = rows[0].index("subspace_dist")
    trimmed = tmp_path / "t.csv"
    with open(trimmed, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([r[:col] + r[col + 1:] for r in rows])
    out = tmp_path / "v"
    rc = main(["verify", "--trajectory", str(trimmed), "--metadata", str(run_dir / "metadata.json"),
               "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "verify_report.json").read_text())
    t32 = [c for s in rep["steps"] for c in s["checks"] if c["id"] == "T3.2"]
    assert t32 and all(c["applicable"] is False for c in t32)
    assert all(c["pass"] for s in rep["steps"] for c in s["checks"])


def test_verify_bad_inputs(run_dir, tmp_path):
    meta = str(run_dir / "metadata.json")
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    assert main(["verify", "--trajectory", str(junk), "--metadata", meta]) == 2
    assert main(["verify", "--trajectory", str(run_dir / "trajectory.csv"), "--metadata", meta,
                 "--eta", "1.0"]) == 2


def test_verify_lambda_above_lambda2(run_dir, tmp_path):
    meta = json.loads((run_dir / "metadata.json").read_text())
    meta["lambda2"] = 1.2
    path = tmp_path / "meta.json"
    path.write_text(json.dumps(meta))
    rc = main(["verify", "--trajectory", str(run_dir / "trajectory.csv"), "--metadata", str(path)])
    assert rc == 1
