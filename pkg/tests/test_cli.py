import json
from pathlib import Path

import numpy as np
import pytest

from competlab import pipeline
from competlab.cli import main
from competlab.io import read_csv, save_state

from conftest import probe_state

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def minimal_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("minimal")
    assert main(["sweep", "--config", str(ROOT / "configs/minimal.yaml"), "--out", str(out)]) == 0
    return out


def test_minimal_bundle_contents(minimal_bundle):
    profiles = sorted(minimal_bundle.glob("almgren_2d_beta*.csv"))
    assert len(profiles) == 1
    head, data = read_csv(profiles[0])
    assert "N" in head and len(data) > 10
    for name in ("summary.json", "manifest.json", "timings.json", "solve.csv", "config.yaml", "almgren.svg"):
        assert (minimal_bundle / name).exists(), name
    man = json.loads((minimal_bundle / "manifest.json").read_text())
    assert set(man) >= {"package", "numpy", "scipy", "config_sha256", "seed"}


def test_report(minimal_bundle, capsys):
    assert main(["report", "--bundle", str(minimal_bundle)]) == 0
    assert "criterion" in capsys.readouterr().out


def test_emit_plots_on_empty_bundle(tmp_path):
    assert pipeline.emit_plots(tmp_path) == []


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("spec:\n  dim: 2\n  matrix_family: identity\n  colour: red\nsolve:\n  beta_schedule: [-1]\n")
    assert main(["solve", "--config", str(bad)]) == 2
    assert "line 4" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_geometry_error_exit_code(tmp_path):
    save_state(probe_state(lambda X: np.stack([1 + X[..., 0], 1 - X[..., 0]]), h=1 / 8), tmp_path / "s")
    assert main(["blowup", "--state", str(tmp_path / "s"), "--center", "0.9,0"]) == 3


def test_convergence_error_exit_code(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("spec:\n  dim: 2\n  matrix_family: identity\n"
                   "solve:\n  beta_schedule: [-1e6]\n  h: 1/16\n  max_outer: 1\n  max_substeps: 0\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_solve_then_analyse(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("spec:\n  dim: 2\n  matrix_family: identity\nsolve:\n  beta_schedule: [-10]\n  h: 1/16\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    state = next((tmp_path / "states").glob("*.bin"))
    assert main(["almgren", "--state", str(state), "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "almgren.csv").exists()
    assert main(["blowup", "--state", str(state)]) == 0
    assert main(["fh-check", "--caps", "8"]) == 0
    out = capsys.readouterr().out
    assert '"origin_sum"' in out
