"""Command-line front end: artifact schema, exit codes, and the
independent re-validation path."""

import csv
import json
import math
import os

import numpy as np
import pytest
from click.testing import CliRunner

from wip.cli import CSV_COLUMNS, main
from wip.integrator import IntegratorConfig, NodeState, rollout
from wip.model import WipModel, default_params, save_params
from wip import se2

RUNNER = CliRunner()


@pytest.fixture()
def params_file(tmp_path):
    path = tmp_path / "params.txt"
    save_params(default_params(), str(path))
    return str(path)


def write_initial(tmp_path, **kv):
    defaults = dict(x=0.0, y=0.0, theta_deg=0.0, alpha_deg=0.0,
                    v_alpha=0.0, v_phi1=0.0, v_phi2=0.0)
    defaults.update(kv)
    path = tmp_path / "initial.txt"
    path.write_text("".join(f"{k} = {v}\n" for k, v in defaults.items()))
    return str(path)


def write_maneuver(tmp_path, x1, duration, h=0.05, name="test"):
    wp = ("waypoint\nx = {x}\ny = 0\ntheta_deg = 0\nalpha_deg = 0\n"
          "v_alpha = 0\nv_phi1 = 0\nv_phi2 = 0\n")
    path = tmp_path / "maneuver.txt"
    path.write_text(f"name = {name}\nh = {h}\nduration_s = {duration}\n"
                    + wp.format(x=0.0) + wp.format(x=x1))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == list(CSV_COLUMNS)
        return [{k: float(v) for k, v in row.items()} for row in reader]


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_trajectory(tmp_path, params_file):
    initial = write_initial(tmp_path, v_phi1=2.0, v_phi2=2.0)
    out = tmp_path / "out"
    res = RUNNER.invoke(main, ["simulate", "--params", params_file,
                               "--initial", initial, "--steps", "10",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 11
    # re-integrate independently and compare the written states
    model = WipModel(default_params())
    x0 = NodeState(g=se2.identity, s=np.zeros(3),
                   v=np.array([0.0, 2.0, 2.0]))
    traj = rollout(x0, np.zeros((10, 2)), IntegratorConfig(h=0.05), model)
    for row, x in zip(rows, traj):
        assert row["x"] == pytest.approx(x.g.x, abs=1e-15)
        assert row["v_phi1"] == pytest.approx(x.v[1], abs=1e-15)
    meta = json.loads((out / "report.json").read_text())
    assert meta["type"] == "simulate"
    assert (out / "plot.py").exists()
    assert (out / "params.txt").exists()


def test_simulate_with_torque_file(tmp_path, params_file):
    initial = write_initial(tmp_path)
    torques = tmp_path / "torques.txt"
    torques.write_text("1e-3, -1e-3\n2e-3 0.5e-3\n0 0\n")
    out = tmp_path / "out"
    res = RUNNER.invoke(main, ["simulate", "--params", params_file,
                               "--initial", initial, "--steps", "2",
                               "--torques", str(torques), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = read_csv(out / "trajectory.csv")
    assert rows[0]["tau1"] == pytest.approx(1e-3)
    assert rows[1]["tau2"] == pytest.approx(0.5e-3)


def test_simulate_rejects_missing_param(tmp_path):
    broken = tmp_path / "params.txt"
    save_params(default_params(), str(broken))
    lines = [ln for ln in broken.read_text().splitlines()
             if not ln.startswith("r_w")]
    broken.write_text("\n".join(lines) + "\n")
    initial = write_initial(tmp_path)
    res = RUNNER.invoke(main, ["simulate", "--params", str(broken),
                               "--initial", initial, "--steps", "2",
                               "--out", str(tmp_path / "out")])
    assert res.exit_code == 2
    assert "r_w" in res.output


def test_simulate_rejects_short_torque_file(tmp_path, params_file):
    initial = write_initial(tmp_path)
    torques = tmp_path / "torques.txt"
    torques.write_text("0 0\n")
    res = RUNNER.invoke(main, ["simulate", "--params", params_file,
                               "--initial", initial, "--steps", "5",
                               "--torques", str(torques),
                               "--out", str(tmp_path / "out")])
    assert res.exit_code == 2


def test_simulate_integrator_failure_exit_code(tmp_path, params_file):
    # tilt rate far outside the solvable region: the implicit solve breaks
    initial = write_initial(tmp_path, alpha_deg=6.0, v_alpha=60.0)
    res = RUNNER.invoke(main, ["simulate", "--params", params_file,
                               "--initial", initial, "--steps", "10000",
                               "--out", str(tmp_path / "out")])
    assert res.exit_code == 3
    assert "integrator failed" in res.output


# ---------------------------------------------------------------------------
# optimize + check


def test_optimize_requires_one_source(tmp_path, params_file):
    res = RUNNER.invoke(main, ["optimize", "--params", params_file,
                               "--out", str(tmp_path / "out")])
    assert res.exit_code == 2
    res = RUNNER.invoke(main, ["optimize", "--params", params_file,
                               "--builtin", "M1", "--maneuver", "x",
                               "--out", str(tmp_path / "out")])
    assert res.exit_code == 2


def test_optimize_degenerate_maneuver_and_check(tmp_path, params_file):
    # a stay-put maneuver costs nothing and must re-validate cleanly
    maneuver = write_maneuver(tmp_path, x1=0.0, duration=0.2)
    out = tmp_path / "out"
    res = RUNNER.invoke(main, ["optimize", "--params", params_file,
                               "--maneuver", maneuver, "--out", str(out)])
    assert res.exit_code == 0, res.output
    meta = json.loads((out / "report.json").read_text())
    assert meta["legs"][0]["converged"] is True
    assert meta["legs"][0]["cost"] == pytest.approx(0.0, abs=1e-20)
    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 5  # N + 1 nodes
    assert (out / "summary.txt").exists()
    assert (out / "kkt.txt").exists()

    res = RUNNER.invoke(main, ["check", "--report", str(out)])
    assert res.exit_code == 0, res.output
    assert "no violations" in res.output


def test_check_flags_tampered_torque(tmp_path, params_file):
    maneuver = write_maneuver(tmp_path, x1=0.0, duration=0.2)
    out = tmp_path / "out"
    res = RUNNER.invoke(main, ["optimize", "--params", params_file,
                               "--maneuver", maneuver, "--out", str(out)])
    assert res.exit_code == 0, res.output
    path = out / "trajectory.csv"
    lines = path.read_text().splitlines()
    cols = lines[0].split(",")
    row = lines[2].split(",")
    row[cols.index("tau1")] = "0.1"          # far outside the torque box
    lines[2] = ",".join(row)
    path.write_text("\n".join(lines) + "\n")
    res = RUNNER.invoke(main, ["check", "--report", str(out)])
    assert res.exit_code == 1
    assert "VIOLATION" in res.output


def test_optimize_nonconvergent_exit_code(tmp_path, params_file):
    # one meter in a tenth of a second: infeasible, must exit with code 4
    # but still write the best-effort artifacts
    maneuver = write_maneuver(tmp_path, x1=1.0, duration=0.1)
    out = tmp_path / "out"
    res = RUNNER.invoke(main, ["optimize", "--params", params_file,
                               "--maneuver", maneuver, "--out", str(out)])
    assert res.exit_code == 4
    assert (out / "report.json").exists()


def test_check_simulate_roundtrip_and_tamper(tmp_path, params_file):
    initial = write_initial(tmp_path, v_phi1=1.0, v_phi2=1.0)
    out = tmp_path / "out"
    res = RUNNER.invoke(main, ["simulate", "--params", params_file,
                               "--initial", initial, "--steps", "5",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    res = RUNNER.invoke(main, ["check", "--report", str(out)])
    assert res.exit_code == 0, res.output

    path = out / "trajectory.csv"
    lines = path.read_text().splitlines()
    cols = lines[0].split(",")
    row = lines[3].split(",")
    row[cols.index("x")] = "0.25"
    lines[3] = ",".join(row)
    path.write_text("\n".join(lines) + "\n")
    res = RUNNER.invoke(main, ["check", "--report", str(out)])
    assert res.exit_code == 1
