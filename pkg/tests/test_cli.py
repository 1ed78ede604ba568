import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from toriclab.affine import AffineMap
from toriclab.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip()
    return code, json.loads(out) if out else None


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_eval_square(tmp_path, capsys):
    code, _ = run(capsys, "eval", "--config", CONFIGS / "eval_square.ini", "--out", tmp_path)
    assert code == 0
    rows = np.loadtxt(tmp_path / "curvature.csv", delimiter=",", skiprows=1)
    assert rows.shape == (20, 3)
    assert np.allclose(rows[:, 2], 4.0, atol=1e-10)
    assert (tmp_path / "invariants.csv").exists()


def test_validate_non_delzant(tmp_path, capsys):
    code, err = run(capsys, "validate", "--polytope", CONFIGS / "nondelzant.txt", "--out", tmp_path)
    assert code == 2
    assert err["error"] == "NotDelzant"
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "NotDelzant"


def test_validate_square(tmp_path, capsys):
    cfg = write(tmp_path, "v.ini", "[polytope]\nbuiltin = square\n")
    code, rep = run(capsys, "validate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    assert rep["valid"] and rep["area"] == pytest.approx(1.0)


def test_missing_config(tmp_path, capsys):
    code, err = run(capsys, "eval", "--config", tmp_path / "nope.ini", "--out", tmp_path)
    assert code == 2
    assert err["error"] == "IoError"


def test_command_mismatch(tmp_path, capsys):
    code, err = run(capsys, "solve", "--config", CONFIGS / "eval_square.ini", "--out", tmp_path)
    assert code == 2
    assert err["error"] == "ConfigError"


def test_bad_seed(tmp_path, capsys):
    code, err = run(capsys, "eval", "--config", CONFIGS / "eval_square.ini", "--out", tmp_path, "--seed", "-1")
    assert code == 2


def test_stale_error_removed(tmp_path, capsys):
    (tmp_path / "error.json").write_text("{}")
    code, _ = run(capsys, "eval", "--config", CONFIGS / "eval_square.ini", "--out", tmp_path)
    assert code == 0
    assert not (tmp_path / "error.json").exists()


def test_normalize_rectangle(tmp_path, capsys):
    code, _ = run(capsys, "normalize", "--config", CONFIGS / "normalize_rectangle.ini", "--out", tmp_path)
    assert code == 0
    m = AffineMap.from_json((tmp_path / "affine_map.json").read_text())
    r = 2 ** -0.5
    assert np.allclose(m.A, np.diag([r, 2 * r]), atol=1e-9)
    assert np.allclose(m.a0, [-r, -r], atol=1e-9)


def test_geodesic_distance(tmp_path, capsys):
    code, rep = run(capsys, "geodesic", "--config", CONFIGS / "geodesic_square.ini", "--out", tmp_path)
    assert code == 0
    assert rep["distance"] > 0
    path = np.loadtxt(tmp_path / "path.csv", delimiter=",", skiprows=1)
    # columns s, x1, x2, v1, v2
    assert np.allclose(path[-1, 1:3], [0.6, 0.5], atol=1e-6)
    assert path[-1, 0] == pytest.approx(rep["distance"], rel=1e-9)


def test_export_plot(tmp_path, capsys):
    code, rep = run(capsys, "export-plot", "--config", CONFIGS / "plot_simplex.ini", "--out", tmp_path)
    assert code == 0
    rows = [line.split(",") for line in (tmp_path / "S.csv").read_text().splitlines()]
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    finite = vals[np.isfinite(vals)]
    assert finite.size == rep["finite"] > 0
    assert np.allclose(finite, 6.0, atol=1e-8)


def test_verify_square(tmp_path, capsys):
    code, rep = run(capsys, "verify", "--config", CONFIGS / "verify_square.ini", "--out", tmp_path)
    assert code == 0
    assert rep["verdicts"] == {"inequality_I": "pass", "inequality_II": "pass", "theta_d2": "monitor"}
    detail = json.loads((tmp_path / "inequality_I.json").read_text())
    assert detail["values"] == "inequality_I.csv"


def test_verify_failure_exits_3(tmp_path, capsys):
    cfg = write(tmp_path, "b.ini", "[polytope]\nbuiltin = square\n[verify]\nchecks = bernstein\npoints = 20\n")
    code, rep = run(capsys, "verify", "--config", cfg, "--out", tmp_path / "o")
    assert code == 3
    assert rep["verdicts"]["bernstein"] == "fail"


def test_solve_exact_start(tmp_path, capsys):
    cfg = write(tmp_path, "s.ini", "[polytope]\nbuiltin = square\n[curvature]\nK = 4\n"
                                   "[numeric]\nn = 32\nmax_iter = 0\n")
    code, rep = run(capsys, "solve", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    assert rep["converged"] and rep["iterations"] == 0
    report = json.loads((tmp_path / "o" / "solve_report.json").read_text())
    assert report["affine_deviation"] < 1e-12


def test_solve_snapshot_round_trip(tmp_path, capsys):
    cfg = write(tmp_path, "s.ini", "[polytope]\nbuiltin = square\n[curvature]\nK = 4\n"
                                   "[numeric]\nn = 16\nmax_iter = 3\ntol = 1e-12\n"
                                   "[solve]\npsi0 = 0.05*sin(pi*xi1)*sin(pi*xi2)\ncertify = false\n")
    code, _ = run(capsys, "solve", "--config", cfg, "--out", tmp_path / "a")
    first = json.loads((tmp_path / "a" / "solve_report.json").read_text())
    assert code == 3  # three steps cannot reach 1e-12
    cfg2 = write(tmp_path, "r.ini", "[polytope]\nbuiltin = square\n[curvature]\nK = 4\n"
                                    "[numeric]\nn = 16\nmax_iter = 0\ntol = 1e-12\n"
                                    "[solve]\npsi0_file = a/psi.csv\ncertify = false\n")
    run(capsys, "solve", "--config", cfg2, "--out", tmp_path / "b")
    second = json.loads((tmp_path / "b" / "solve_report.json").read_text())
    assert second["residual_linf"][-1] == first["residual_linf"][-1]


def test_outputs_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        run(capsys, "verify", "--config", CONFIGS / "verify_square.ini", "--out", tmp_path / d)
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "timings.json")
    assert names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


@pytest.mark.skipif(shutil.which("toriclab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["toriclab", "eval", "--config", str(CONFIGS / "eval_square.ini"), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["points"] == 20
