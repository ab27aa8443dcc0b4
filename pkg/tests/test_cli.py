import csv
import json

import numpy as np
import pytest
import yaml
from scipy.integrate import trapezoid

from vml_lab import cli
from vml_lab.config import bundled_config
from vml_lab.io import read_density_csv


def write(tmp_path, raw, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def test_solve_bundled_bimodal(tmp_path):
    assert cli.main(["solve", "--config", str(bundled_config("bimodal_inpaint")), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "bimodal_inpaint_0_summary.json").read_text())
    assert summary["oracle_distance"] < 0.05
    with open(tmp_path / "bimodal_inpaint_0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20 and "x_1" in rows[0] and "total_simplified" in rows[0]
    traj = json.loads((tmp_path / "bimodal_inpaint_0.json").read_text())
    assert traj["final_x"] == summary["final_x"]


def test_echoed_config_reproduces_run_bitwise(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["solve", "--config", str(bundled_config("bimodal_inpaint")), "--out", str(a), "--seed", "4"]) == 0
    assert cli.main(["solve", "--config", str(a / "bimodal_inpaint_4_config.yaml"), "--out", str(b)]) == 0
    for name in ("bimodal_inpaint_4.csv", "bimodal_inpaint_4.json", "bimodal_inpaint_4_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sigma_y_zero_floor_noted(tmp_path):
    raw = yaml.safe_load(bundled_config("bimodal_inpaint").read_text())
    raw["solver"]["sigma_y"] = 0.0
    raw["oracle"] = {"enabled": False}
    raw["schedule"]["num_steps"] = 4
    raw["solver"]["num_inner"] = 2
    assert cli.main(["solve", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "bimodal_inpaint_0_summary.json").read_text())
    assert summary["sigma_y"] == 1e-9
    assert any("floored" in n for n in summary["notes"])


def test_invalid_config_exit_1(tmp_path, capsys):
    raw = yaml.safe_load(bundled_config("bimodal_inpaint").read_text())
    raw["operator"]["keep"] = [0, 5]
    assert cli.main(["solve", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 1
    assert "operator.keep" in capsys.readouterr().err


def test_divergence_exit_2(tmp_path):
    raw = yaml.safe_load(bundled_config("bimodal_inpaint").read_text())
    raw["solver"]["gamma0"] = 1e200
    with np.errstate(all="ignore"):
        assert cli.main(["solve", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 2


def test_seed_sweep_with_workers(tmp_path, monkeypatch):
    raw = yaml.safe_load(bundled_config("bimodal_inpaint").read_text())
    raw["solver"].pop("seed")
    raw["solver"]["seeds"] = [0, 1, 2]
    monkeypatch.setenv("VML_LAB_OUT", str(tmp_path / "env"))
    assert cli.main(["solve", "--config", str(write(tmp_path, raw)), "--workers", "2"]) == 0
    assert sorted(p.name for p in (tmp_path / "env").glob("*_summary.json")) == [
        f"bimodal_inpaint_{s}_summary.json" for s in range(3)
    ]


def test_latent_affine_solve(tmp_path):
    raw = {
        "schema_version": 1,
        "run_id": "lat",
        "prior": {"weights": [1.0], "means": [[0.3, -0.2]], "covariances": [[[1.0, 0.3], [0.3, 0.6]]]},
        "decoder": {"kind": "affine", "matrix": [[1.5, 0.3], [-0.4, 0.8]], "offset": [0.5, -1.0]},
        "operator": {"kind": "identity", "dims": 2},
        "measurement": {"y": [1.2, -0.4]},
        "solver": {"sigma_y": 0.4, "variant": "latent", "gamma0": 0.5},
    }
    assert cli.main(["solve", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "lat_0_summary.json").read_text())
    assert summary["oracle_distance"] < 1e-2


def test_densities_outputs(tmp_path):
    raw = yaml.safe_load(bundled_config("concentration_densities").read_text())
    raw["densities"]["grid"]["points"] = 20001
    raw["densities"]["sigmas"] = [140.0, 1.0, 0.01]
    assert cli.main(["densities", "--config", str(write(tmp_path, raw)), "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "concentration_densities.json").read_text())
    for rec in meta["densities"]:
        x, d = read_density_csv(tmp_path / rec["file"])
        assert trapezoid(d, x) == pytest.approx(1.0, abs=1e-6)


def test_densities_rejects_multivariate_prior(tmp_path):
    assert cli.main(["densities", "--config", str(bundled_config("bimodal_inpaint")), "--out", str(tmp_path)]) == 1


def test_schedule_prints_grid(capsys):
    assert cli.main(["schedule"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "i,sigma" and lines[1] == "0,140" and lines[-1] == "20,0"


def test_check_limits_writes_csv(tmp_path):
    assert cli.main(["check", "--suite", "limits", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "check_limits.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["passed"] == "1" for r in rows)


def test_check_failure_exit_3(tmp_path, monkeypatch):
    from vml_lab import checks

    bad = lambda: [checks.CheckResult("always_fails", 1.0, 0.0, False)]
    monkeypatch.setitem(checks.SUITES, "limits", [bad])
    assert cli.main(["check", "--suite", "limits", "--out", str(tmp_path)]) == 3
