import json
import subprocess
import sys

import numpy as np
import pytest

from poolscreen.cli import main
from poolscreen.design import catalog_bibd, format_design, load_design

TABLE_ROW = (0.043, 0.047, 0.001, 0.011)


def _csv_column(text, col=1):
    rows = [l for l in text.splitlines() if l and not l.startswith("#")]
    return np.array([float(r.split(",")[col]) for r in rows[1:]])


@pytest.fixture
def small_design(tmp_path):
    p = tmp_path / "small.txt"
    p.write_text("4 3\n0 1\n0 2\n1 2 3\n")
    return str(p)


@pytest.fixture
def blocks_file(tmp_path):
    blocks, _ = catalog_bibd("9-4-12-3-1")
    p = tmp_path / "blocks.txt"
    p.write_text(format_design(blocks))
    return str(p)


def test_design_verify(blocks_file, capsys):
    assert main(["design", "verify", "--blocks", blocks_file, "--params", "9,4,12,3,1"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["design", "verify", "--catalog", "7-3-7-3-1"]) == 0
    assert main(["design", "verify", "--blocks", blocks_file, "--params", "13,4,13,4,1"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_design_dualize_replicate_profile(blocks_file, tmp_path, capsys):
    out = tmp_path / "dual.txt"
    assert main(["design", "dualize", "--blocks", blocks_file, "--out", str(out)]) == 0
    d = load_design(out.read_text())
    assert (d.n, d.m) == (12, 9)
    assert main(["design", "replicate", "--blocks", blocks_file, "--t", "2", "--seed", "1"]) == 0
    d = load_design(capsys.readouterr().out)
    assert (d.n, d.m) == (24, 9)
    assert main(["design", "profile", "--design", "benchmark:24"]) == 0
    text = capsys.readouterr().out
    assert "n=24 m=9 lambda_max=2" in text and "8:9" in text


def test_simulate(small_design, capsys):
    assert main(["simulate", "--design", small_design, "--k", "1", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    x = [int(v) for v in lines[0].split()[1:]]
    s = [int(v) for v in lines[1].split()[1:]]
    assert sum(x) == 1 and len(x) == 4 and len(s) == 3 and all(0 <= v <= 3 for v in s)
    main(["simulate", "--design", small_design, "--k", "1", "--seed", "3"])
    assert capsys.readouterr().out.splitlines() == lines


def test_infer_engines(small_design, capsys):
    assert main(["infer", "exact", "--design", small_design, "--prior", "0.1", "--s", "3 0 0"]) == 0
    q = _csv_column(capsys.readouterr().out)
    np.testing.assert_allclose(q, TABLE_ROW, atol=5e-4)
    assert main(["infer", "bp", "--design", small_design, "--prior", "0.1", "--s", "3,0,0"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# converged=True")
    assert np.max(np.abs(_csv_column(text) - q)) < 0.02
    assert main(["infer", "mcmc", "--design", small_design, "--prior", "0.1", "--s", "3 0 0",
                 "--sweeps", "20000", "--seed", "2"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "clone,q,stderr"
    qm, se = _csv_column(text, 1), _csv_column(text, 2)
    assert np.all(np.abs(qm - q) < 4 * se + 5e-4)


def test_bias_correct_and_bound(tmp_path, capsys):
    state = tmp_path / "state.json"
    s = "2 0 0 3 2 0 2 0 1"
    assert main(["infer", "bp", "--design", "benchmark:24", "--prior", "0.1", "--s", s,
                 "--state-out", str(state)]) == 0
    bp = _csv_column(capsys.readouterr().out)
    doc = json.loads(state.read_text())
    assert doc["converged"] and len(doc["theta"]) == 24
    assert main(["bias", "correct", "--design", "benchmark:24", "--state", str(state)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "clone,bp,delta,corrected_raw,corrected_clamped"
    np.testing.assert_allclose(_csv_column(text, 1), bp, rtol=1e-12)
    delta, raw = _csv_column(text, 2), _csv_column(text, 3)
    np.testing.assert_allclose(raw, bp + delta, atol=1e-15)
    assert np.any(delta != 0)
    assert main(["bias", "bound", "--design", "benchmark:24", "--C", "1", "--delta", "0.9"]) == 0
    assert float(capsys.readouterr().out) > 0


def test_bias_correct_refuses_nonconverged(tmp_path, capsys):
    state = tmp_path / "state.json"
    main(["infer", "bp", "--design", "benchmark:24", "--prior", "0.1",
          "--s", "2 0 0 3 2 0 2 0 1", "--max-iter", "1", "--state-out", str(state)])
    capsys.readouterr()
    assert main(["bias", "correct", "--design", "benchmark:24", "--state", str(state)]) == 2
    assert "converge" in capsys.readouterr().err


def test_experiment_run(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("design = benchmark:24\nks = 1\ntrials = 3\noutput = results\n")
    assert main(["experiment", "run", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "reference=exact" in out
    assert (tmp_path / "results" / "trials.csv").exists()


def test_errors_are_reported(small_design, capsys):
    assert main(["infer", "exact", "--design", small_design, "--prior", "0.1", "--s", "3 0"]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["design", "profile", "--design", "/nonexistent/file"]) == 2
    assert main(["bias", "bound", "--design", "benchmark:24", "--C", "1", "--delta", "1.5"]) == 2


def test_module_entry_point(small_design):
    res = subprocess.run([sys.executable, "-m", "poolscreen", "infer", "exact", "--design",
                          small_design, "--prior", "0.1", "--s", "0 0 3"],
                         capture_output=True, text=True, check=True)
    np.testing.assert_allclose(_csv_column(res.stdout), (0.001, 0.027, 0.027, 0.429), atol=5e-4)
