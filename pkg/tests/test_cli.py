import json
import subprocess
import sys
from pathlib import Path

import pytest

from kinetic_homog.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_study_isotropic_passes_all_criteria(tmp_path, capsys):
    assert main(["study", "--config", str(CONFIGS / "isotropic.toml"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["criteria"] and all(c["passed"] for c in report["criteria"].values())
    assert len(report["points"]) == 3
    assert "FAIL" not in capsys.readouterr().out


def test_check_drift_fails_at_named_no_drift_moment(tmp_path, capsys):
    assert main(["check", "--config", str(CONFIGS / "drift.toml"), "--out", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "no-drift" in out and "int v psi psi* dnu" in out
    assert json.loads((tmp_path / "check.json").read_text())["moment"] == "int v psi psi* dnu"


def test_check_generic_passes(tmp_path):
    assert main(["check", "--config", str(CONFIGS / "generic.toml"), "--out", str(tmp_path)]) == 0


def test_cell_then_macro_reuses_bundle_bit_for_bit(tmp_path):
    cfg = str(CONFIGS / "generic.toml")
    assert main(["cell", "--config", cfg, "--out", str(tmp_path)]) == 0
    first = (tmp_path / "tensors.json").read_bytes()
    assert main(["macro", "--config", cfg, "--out", str(tmp_path), "--format", "csv"]) == 0
    assert (tmp_path / "tensors.json").read_bytes() == first
    assert (tmp_path / "densities.csv").exists() and not (tmp_path / "densities.json").exists()


def test_transport_subcommand(tmp_path):
    assert main(["transport", "--config", str(CONFIGS / "generic.toml"), "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "transport.json").read_text())
    assert payload["residual"] < 1e-10
    assert (tmp_path / "transport.csv").exists()


def test_empty_study_exits_zero(tmp_path):
    assert main(["study", "--config", str(CONFIGS / "empty.toml"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["points"] == []


@pytest.mark.parametrize("body", ["[sweep]\npoints = [[0.5, 0.2]]\n", "nonsense = 1\n", "[kernel]\nfamily = 'x'\n"])
def test_configuration_errors_exit_two(tmp_path, body):
    path = tmp_path / "bad.toml"
    path.write_text(body)
    assert main(["cell", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_missing_transport_table_exits_two(tmp_path):
    assert main(["transport", "--config", str(CONFIGS / "empty.toml"), "--out", str(tmp_path)]) == 2


def test_console_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kinetic_homog.cli", "check", "--config",
                           str(CONFIGS / "drift.toml"), "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1
