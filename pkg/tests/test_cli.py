import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from torus_ma.cli import EXIT_ERROR, EXIT_NONCONVERGED, EXIT_OK, main
from torus_ma.fields import read_dump

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# Reproduction tolerances for committed reports. Iteration counts and exit
# status must match exactly; residual-level numbers sit at round-off so only
# their order of magnitude is compared.
REPRO_ABS = 1e-10
REPRO_SMALL = 1e-9


def run_cli(args, tmp_path, name="report.json"):
    out = tmp_path / name
    code = main(list(args) + ["--out", str(out)])
    report = json.loads(out.read_text()) if out.exists() else None
    return code, report


def write_config(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("suite", ["algebra", "fields", "hodge", "linearize"])
def test_selftest_exits_zero(suite, tmp_path):
    code, rep = run_cli(["selftest", suite], tmp_path)
    assert code == EXIT_OK
    checks = rep["results"]["checks"]
    assert checks and all(c["passed"] for c in checks)
    assert rep["exit_status"] == 0 and rep["version"]


def test_selftest_unknown_suite(tmp_path, capsys):
    assert main(["selftest", "nope"]) == EXIT_ERROR
    assert "unknown selftest suite" in capsys.readouterr().err


def test_zero_rhs_solve(tmp_path):
    code, rep = run_cli(["solve", "--config", str(CONFIGS / "zero_n2.json")], tmp_path)
    assert code == EXIT_OK
    s = rep["results"]["solver"]
    assert s["converged"] and s["c"] == 0 and s["newton_iterations"] <= 1
    assert s["phi_sup"] == 0 and s["phi_min"] == 0


def test_report_contents(tmp_path):
    code, rep = run_cli(["solve", "--config", str(CONFIGS / "mms_n2.json"),
                         "--dump-fields", str(tmp_path / "dumps")], tmp_path)
    assert code == EXIT_OK
    for key in ("config", "version", "seeds", "timings", "results", "numpy", "python", "threads"):
        assert key in rep
    assert rep["seeds"] == {"metric": 0, "mms": 7}
    assert rep["results"]["mms"]["recovery_error_inf"] < 1e-7
    assert rep["config"] == json.loads((CONFIGS / "mms_n2.json").read_text())
    names = sorted(Path(p).name for p in rep["dumps"])
    assert names == ["f.field", "phi.field", "phi_star.field"]
    phi = read_dump(tmp_path / "dumps" / "phi.field")
    assert phi.bidegree == (0, 0) and np.max(phi.values.real) == 0
    # CSV slice: two free axes, one row per point of the plane
    with open(rep["csv_slice"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i_x1", "i_y1", "x1", "y1", "phi", "f", "phi_star"]
    assert len(rows) == 1 + 16 * 16


def test_reproduces_committed_report(tmp_path):
    ref = json.loads((CONFIGS / "mms_n2.report.json").read_text())
    code, rep = run_cli(["solve", "--config", str(CONFIGS / "mms_n2.json")], tmp_path)
    assert code == ref["exit_status"] == EXIT_OK
    assert rep["config"] == ref["config"] and rep["seeds"] == ref["seeds"]
    a, b = rep["results"]["solver"], ref["results"]["solver"]
    for key in ("converged", "status", "gauge", "newton_iterations", "krylov_iterations", "continuity"):
        assert a[key] == b[key], key
    for key in ("phi_min", "phi_sup"):
        assert abs(a[key] - b[key]) < REPRO_ABS, key
    np.testing.assert_allclose(a["min_eigenvalues"], b["min_eigenvalues"], atol=REPRO_ABS)
    assert len(a["residuals"]) == len(b["residuals"])
    for x, y in zip(a["residuals"], b["residuals"]):
        assert abs(x - y) < max(REPRO_SMALL, 1e-6 * y)
    for key in ("recovery_error_inf", "c_error"):
        assert rep["results"]["mms"][key] < 1e-7
        assert abs(rep["results"]["mms"][key] - ref["results"]["mms"][key]) < REPRO_SMALL
    # committed slice reproduces too
    with open(rep["csv_slice"]) as fh:
        new = np.array([[float(x) for x in r] for r in list(csv.reader(fh))[1:]])
    with open(ROOT / ref["csv_slice"]) as fh:
        old = np.array([[float(x) for x in r] for r in list(csv.reader(fh))[1:]])
    np.testing.assert_allclose(new, old, atol=REPRO_ABS)


def test_deterministic_reports(tmp_path):
    args = ["solve", "--config", str(CONFIGS / "mms_n2.json")]
    _, r1 = run_cli(args, tmp_path, "a.json")
    _, r2 = run_cli(args, tmp_path, "b.json")
    # everything except wall-clock timings is reproducible
    for r in (r1, r2):
        r["results"]["solver"].pop("wall_time")
    assert r1["results"] == r2["results"]


def test_bad_config_reports_line(tmp_path, capsys):
    text = '{\n  "n": 2,\n  "N": 8,\n  "metric": {"kind": "constant"},\n  "bogus": 1\n}\n'
    cfg = write_config(tmp_path, text)
    assert main(["solve", "--config", str(cfg)]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert f"{cfg}:5:" in err and "bogus" in err


def test_bad_json_reports_line(tmp_path, capsys):
    cfg = write_config(tmp_path, '{\n  "n": 2,\n  "N": 8\n  "metric": {}\n}\n')
    assert main(["solve", "--config", str(cfg)]) == EXIT_ERROR
    assert f"{cfg}:4:" in capsys.readouterr().err


def test_odd_grid_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, '{\n  "n": 2,\n  "N": 7,\n  "metric": {"kind": "constant"}\n}\n')
    assert main(["solve", "--config", str(cfg)]) == EXIT_ERROR
    assert f"{cfg}:3:" in capsys.readouterr().err


def test_missing_config_and_threads(capsys):
    assert main(["solve"]) == EXIT_ERROR
    assert main(["selftest", "algebra", "--threads", "0"]) == EXIT_ERROR


def test_nonconvergence_exit_status(tmp_path):
    cfg = json.loads((CONFIGS / "mms_n2.json").read_text())
    cfg["solver"]["max_newton"] = 1
    cfg.pop("outputs")
    p = write_config(tmp_path, json.dumps(cfg, indent=2))
    code, rep = run_cli(["solve", "--config", str(p)], tmp_path)
    assert code == EXIT_NONCONVERGED
    assert not rep["results"]["solver"]["converged"] and rep["results"]["solver"]["message"]


def test_other_commands(tmp_path):
    code, rep = run_cli(["mms", "--config", str(CONFIGS / "mms_n2.json")], tmp_path, "m.json")
    assert code == EXIT_OK
    assert rep["results"]["gauge_invariance"] < 1e-13
    assert rep["results"]["classical_operator_defect"] < 1e-12
    code, rep = run_cli(["hodge-decompose", "--config", str(CONFIGS / "hodge_n2.json")], tmp_path, "h.json")
    assert code == EXIT_OK
    assert rep["results"]["orthogonality"] < 1e-9 and rep["results"]["reassembly"] < 1e-9
    code, rep = run_cli(["gauduchon-normalize", "--config", str(CONFIGS / "cone_n3.json")], tmp_path, "g.json")
    assert code == EXIT_OK and rep["results"]["residual"] < 1e-8 and rep["results"]["psi_min"] > 0
    code, rep = run_cli(["cone-check", "--config", str(CONFIGS / "cone_n3.json")], tmp_path, "c.json")
    assert code == EXIT_OK and rep["results"]["checks_passed"]


def test_module_entry_point(tmp_path):
    out = tmp_path / "r.json"
    proc = subprocess.run([sys.executable, "-m", "torus_ma", "selftest", "algebra", "--out", str(out)],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["command"] == "selftest"
