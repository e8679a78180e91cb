import csv
import io
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from fracop.atoms import AtomSpec, build_atom
from fracop.oplab.cli import run_cli
from fracop.oplab.config import ExperimentConfig
from fracop.oplab.experiments import (Report, atom_checks, far_decay_experiment,
                                      reproduce_example, suite_atoms)

SINGULAR_CFG = "A1 = 1,0; 0,0\nA2 = 1,0; 0,0\n"


# -- reports ------------------------------------------------------------------------

def test_report_csv_columns_and_pass_logic():
    rep = Report("demo")
    assert not rep.passed
    rep.add(seed=1, case=0, quantity="x", value=0.5, params={"r": "1/2", "center": np.zeros(2)})
    rep.add(seed=1, case=1, quantity="x", value=0.25, flag=True, params={"r": "1/2"})
    rep.checks["ok"] = True
    assert rep.passed
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0][:4] == ["experiment", "seed", "case", "quantity"]
    assert rows[0][-3:] == ["value", "error", "flag"]
    assert rows[1][rows[0].index("value")] == "0.5"
    assert rows[2][-1] == "1"
    rep.checks["bad"] = False
    assert not rep.passed
    assert "[FAIL] bad" in rep.summary_text()


def test_far_decay_csv_is_deterministic(tmp_path):
    cfg = ExperimentConfig()
    a = far_decay_experiment(cfg)
    b = far_decay_experiment(cfg)
    assert a.passed, a.summary_text()
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_far_decay_negative_control_separates():
    rep = far_decay_experiment(ExperimentConfig())
    assert rep.summary["slope_projected"] == pytest.approx(-2.0, abs=0.1)
    assert rep.summary["slope_unprojected"] == pytest.approx(-1.0, abs=0.1)


# -- atoms ---------------------------------------------------------------------------

def test_atom_checks_pass_and_negative_control_fails():
    spec = AtomSpec(2, Fraction(3, 4), (0.5, -0.5), 0.3, seed=2)
    assert atom_checks(build_atom(spec), samples=20_000).passed
    bad = atom_checks(build_atom(spec, enforce_moments=False), samples=20_000)
    assert not bad.checks["moments_vanish"]
    assert bad.checks["sup_certificate"]


def test_suite_atoms_cover_radii_and_are_seeded():
    cfg = ExperimentConfig(atoms=9)
    atoms = suite_atoms(cfg, Fraction(1))
    assert sorted({a.radius for a in atoms}) == [2.0 ** k for k in range(-4, 3)]
    again = suite_atoms(cfg, Fraction(1))
    assert all(np.array_equal(x.coefficients, y.coefficients) for x, y in zip(atoms, again))


def test_reproduce_example_passes():
    rep = reproduce_example()
    assert rep.passed, rep.summary_text()


# -- command line -----------------------------------------------------------------------

def test_cli_reproduce_example(capsys):
    assert run_cli(["reproduce-example"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_check_names_failing_invariant(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(SINGULAR_CFG)
    assert run_cli(["check", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "failing invariant: sum_invertible" in out


def test_cli_check_and_normalize_good_families():
    assert run_cli(["check", "--family", "worked-example"]) == 0
    assert run_cli(["normalize", "--family", "random", "--n", "3", "--partition", "2,1"]) == 0
    assert run_cli(["check", "--matrix", "1,0; 0,0", "--matrix", "0,0; 0,1"]) == 0


def test_cli_malformed_config_reports_line_and_field(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 2\nr = 2\n")
    assert run_cli(["experiment", "uniform", "--config", str(cfg)]) == 2
    assert f"{cfg}:2: field 'r'" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert run_cli(["check", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_atom_writes_csv(tmp_path):
    out = tmp_path / "atom.csv"
    assert run_cli(["atom", "--dim", "3", "--p", "3/4", "--samples", "5000",
                    "--output", str(out)]) == 0
    assert out.read_text().startswith("experiment,")
    assert run_cli(["atom", "--dim", "2", "--no-moments", "--samples", "1000"]) == 1


def test_cli_apply(capsys):
    code = run_cli(["apply", "--family", "worked-example", "--r", "1/2", "--bump",
                    "--radius", "0.5", "--x", "0.3,-0.2,0.45; 5,5,5", "--tol", "1e-6"])
    assert code == 0
    assert capsys.readouterr().out.count("T_r f(") == 2


def test_cli_apply_bad_target():
    assert run_cli(["apply", "--r", "1/2", "--x", "1,2,3"]) == 2


def test_cli_scaling_slope_row(tmp_path):
    out = tmp_path / "scaling.csv"
    code = run_cli(["experiment", "scaling", "--n", "2", "--r", "0.5", "--p", "1",
                    "--dilations", "1,2", "--tol", "1e-2", "--output", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    slope = [r for r in rows if r["quantity"] == "slope"]
    assert len(slope) == 1
    assert float(slope[0]["value"]) == pytest.approx(-2.0, rel=0.01)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fracop", "check", "--family", "canonical"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert "result: PASS" in res.stdout
