"""Command-line front end.

Three subcommands:

  wip simulate  -- roll a torque sequence (or zero torque) through the
                   structure-preserving integrator and write the trajectory.
  wip optimize  -- solve the energy-optimal transfer for a maneuver (file or
                   built-in M1/M2), leg by leg, and write trajectory,
                   costates, multipliers, a summary and a plot script.
  wip check     -- independently re-validate a written report directory.

All artifacts go to --out DIR: trajectory.csv (one row per node, full state
+ costate + multiplier schema, 17 significant digits), report.json
(machine-readable run metadata), summary.txt, and plot.py (a self-contained
matplotlib script).  Files are written atomically (temp + rename).

Exit codes: 0 success, 2 config/file parse error, 3 integrator failure,
4 optimization leg failed to converge.  Set WIP_LOG=debug for iteration
logs.
"""

from __future__ import annotations

import json
import logging
import math
import os
import sys
import tempfile

import click
import numpy as np

from . import se2
from .integrator import IntegratorConfig, IntegratorFailure, NodeState, \
    rollout
from .maneuvers import (BUILTIN_NAMES, ManeuverFileError, ManeuverSpec,
                        builtin_maneuver, legs, load_maneuver, save_maneuver)
from .model import (BaseState, BaseVelocity, ParamsFileError, WipModel,
                    load_params, save_params)
from .pmp import Bounds, Multipliers, NodeCostate, kkt_residual
from .shooting import (OcProblem, ShootingConfig, SolveReport, solve,
                       validate_report)

CSV_COLUMNS = ("k", "t", "x", "y", "theta", "alpha", "phi1", "phi2",
               "v_alpha", "v_phi1", "v_phi2", "tau1", "tau2",
               "zeta1", "zeta2", "zeta3", "psi1", "psi2", "psi3",
               "lambda1", "lambda2", "lambda3", "sigma",
               "beta1", "beta2", "beta3")

log = logging.getLogger("wip.cli")

EXIT_PARSE = 2
EXIT_INTEGRATOR = 3
EXIT_NO_CONVERGENCE = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _atomic_write(path: str, text: str) -> None:
    """Write text to path via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def _csv_text(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join([str(int(row[0]))] + [_fmt(v)
                                                    for v in row[1:]]))
    return "\n".join(lines) + "\n"


def _node_row(k, t, x: NodeState, tau, cost: NodeCostate | None,
              mult: Multipliers | None):
    zeros3 = (0.0, 0.0, 0.0)
    zeta = tuple(cost.zeta) if cost else zeros3
    psi = tuple(cost.psi) if cost else zeros3
    lam = tuple(cost.lam) if cost else zeros3
    sigma = mult.sigma if mult else 0.0
    beta = tuple(mult.beta) if mult else zeros3
    return (k, t, x.g.x, x.g.y, x.g.theta, x.s[0], x.s[1], x.s[2],
            x.v[0], x.v[1], x.v[2], tau[0], tau[1], *zeta, *psi, *lam,
            sigma, *beta)


# ---------------------------------------------------------------------------
# Config-file parsing helpers (flat key = value, '#' comments, degrees at
# the file boundary).


def _read_kv(path: str, required: tuple, optional: tuple = ()) -> dict:
    values: dict = {}
    allowed = set(required) | set(optional)
    try:
        fh = open(path)
    except OSError as err:
        raise ParamsFileError(f"{path}: {err}") from err
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParamsFileError(
                    f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in allowed:
                raise ParamsFileError(f"{path}:{lineno}: unknown key "
                                      f"{key!r}")
            try:
                values[key] = float(text.strip())
            except ValueError as err:
                raise ParamsFileError(
                    f"{path}:{lineno}: bad value for {key!r}") from err
    missing = [k for k in required if k not in values]
    if missing:
        raise ParamsFileError(
            f"{path}: missing key(s): {', '.join(missing)}")
    return values


_INITIAL_KEYS = ("x", "y", "theta_deg", "alpha_deg", "v_alpha", "v_phi1",
                 "v_phi2")


def _read_initial(path: str) -> NodeState:
    kv = _read_kv(path, _INITIAL_KEYS, optional=("phi1_deg", "phi2_deg"))
    return NodeState(
        g=se2.GroupElement(kv["x"], kv["y"], math.radians(kv["theta_deg"])),
        s=np.array([math.radians(kv["alpha_deg"]),
                    math.radians(kv.get("phi1_deg", 0.0)),
                    math.radians(kv.get("phi2_deg", 0.0))]),
        v=np.array([kv["v_alpha"], kv["v_phi1"], kv["v_phi2"]]),
    )


def _read_torques(path: str) -> np.ndarray:
    rows = []
    try:
        fh = open(path)
    except OSError as err:
        raise ParamsFileError(f"{path}: {err}") from err
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip().replace(",", " ")
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParamsFileError(
                    f"{path}:{lineno}: expected two torque values per line")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError as err:
                raise ParamsFileError(
                    f"{path}:{lineno}: bad torque value") from err
    return np.array(rows).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Plot script emission


_PLOT_TEMPLATE = '''\
#!/usr/bin/env python3
"""Render the run in this directory: torques, position, angles, rates and
the planar path.  Needs numpy + matplotlib."""
import csv
import os

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
MU = {mu!r}

data = {{}}
with open(os.path.join(HERE, "trajectory.csv")) as fh:
    reader = csv.DictReader(fh)
    cols = reader.fieldnames or []
    rows = list(reader)
for c in cols:
    data[c] = np.array([float(r[c]) for r in rows])
empty = not rows

fig, axes = plt.subplots(3, 2, figsize=(11, 12))
ax = axes[0, 0]
if not empty:
    ax.step(data["t"], data["tau1"], where="post", label="tau1")
    ax.step(data["t"], data["tau2"], where="post", label="tau2")
ax.axhline(MU, color="k", lw=0.8, ls="--")
ax.axhline(-MU, color="k", lw=0.8, ls="--")
ax.set_title("wheel torques [N m s]")
ax.legend()

ax = axes[0, 1]
if not empty:
    ax.plot(data["t"], data["x"], label="x")
    ax.plot(data["t"], data["y"], label="y")
ax.set_title("position [m]")
ax.legend()

ax = axes[1, 0]
if not empty:
    ax.plot(data["t"], np.degrees(data["alpha"]), label="tilt")
    ax.plot(data["t"], np.degrees(data["theta"]), label="heading")
ax.set_title("tilt and heading [deg]")
ax.legend()

ax = axes[1, 1]
if not empty:
    for name in ("v_alpha", "v_phi1", "v_phi2"):
        ax.plot(data["t"], data[name], label=name)
ax.set_title("angular velocities [rad/s]")
ax.legend()

ax = axes[2, 0]
if not empty:
    ax.plot(data["x"], data["y"])
    ax.plot(data["x"][:1], data["y"][:1], "go")
    ax.plot(data["x"][-1:], data["y"][-1:], "rx")
ax.set_title("planar path")
ax.set_aspect("equal", adjustable="datalim")

axes[2, 1].axis("off")
for a in axes.flat:
    a.grid(True, alpha=0.3)
fig.tight_layout()
out = os.path.join(HERE, "plots.png")
fig.savefig(out, dpi=150)
print(out)
'''


def emit_plots(out_dir: str, mu: float) -> str:
    """Write a self-contained plot script next to the CSVs."""
    path = os.path.join(out_dir, "plot.py")
    _atomic_write(path, _PLOT_TEMPLATE.format(mu=mu))
    return path


# ---------------------------------------------------------------------------
# CLI


@click.group()
def main():
    """Structure-preserving simulation and energy-optimal trajectory
    synthesis for the wheeled inverted pendulum."""
    if os.environ.get("WIP_LOG", "").lower() == "debug":
        logging.basicConfig(level=logging.DEBUG,
                            format="%(name)s %(message)s")


@main.command()
@click.option("--params", "params_file", required=True,
              type=click.Path(), help="Physical parameter file.")
@click.option("--initial", "initial_file", required=True,
              type=click.Path(), help="Initial state file.")
@click.option("--torques", "torque_file", default=None,
              type=click.Path(), help="Torque sequence (two values per "
              "line); zero torque if omitted.")
@click.option("--steps", "n_steps", required=True, type=int,
              help="Number of integrator steps.")
@click.option("--h", "h", default=0.05, show_default=True, type=float,
              help="Step length [s].")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory.")
def simulate(params_file, initial_file, torque_file, n_steps, h, out_dir):
    """Roll a torque sequence through the variational integrator."""
    try:
        params = load_params(params_file)
        x0 = _read_initial(initial_file)
        if torque_file is not None:
            torques = _read_torques(torque_file)
            if len(torques) < n_steps:
                raise ParamsFileError(
                    f"{torque_file}: {len(torques)} torque rows < "
                    f"{n_steps} steps")
            torques = torques[:n_steps]
        else:
            torques = np.zeros((n_steps, 2))
    except (ParamsFileError, ManeuverFileError) as err:
        _fail(EXIT_PARSE, str(err))
    if n_steps < 1:
        _fail(EXIT_PARSE, "--steps must be >= 1")

    model = WipModel(params)
    try:
        traj = rollout(x0, torques, IntegratorConfig(h=h), model)
    except IntegratorFailure as err:
        _fail(EXIT_INTEGRATOR, f"integrator failed at step {err.index}: "
              f"{err.cause}")

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for k, x in enumerate(traj):
        tau = torques[k] if k < n_steps else (0.0, 0.0)
        rows.append(_node_row(k, k * h, x, tau, None, None))
    _atomic_write(os.path.join(out_dir, "trajectory.csv"), _csv_text(rows))
    save_params(params, os.path.join(out_dir, "params.txt"))
    meta = {"type": "simulate", "h": h, "steps": n_steps}
    _atomic_write(os.path.join(out_dir, "report.json"),
                  json.dumps(meta, indent=2) + "\n")
    emit_plots(out_dir, mu=8e-3)
    click.echo(f"wrote {n_steps}-step trajectory to {out_dir}")


def _problem_to_json(p: OcProblem) -> dict:
    g0, s0, v0 = p.initial
    return {
        "initial_g": [g0.x, g0.y, g0.theta],
        "initial_s": list(s0.as_array()),
        "initial_v": list(v0.as_array()),
        "final_g": [p.final_g.x, p.final_g.y, p.final_g.theta],
        "final_alpha": p.final_alpha,
        "final_v": list(p.final_v.as_array()),
        "N": p.N,
        "h": p.h,
        "bounds": [p.bounds.mu, p.bounds.nu, p.bounds.a],
    }


def _problem_from_json(d: dict) -> OcProblem:
    return OcProblem(
        initial=(se2.GroupElement(*d["initial_g"]),
                 BaseState(*d["initial_s"]), BaseVelocity(*d["initial_v"])),
        final_g=se2.GroupElement(*d["final_g"]),
        final_alpha=d["final_alpha"],
        final_v=BaseVelocity(*d["final_v"]),
        N=d["N"],
        h=d["h"],
        bounds=Bounds(*d["bounds"]),
    )


@main.command()
@click.option("--params", "params_file", required=True, type=click.Path(),
              help="Physical parameter file.")
@click.option("--maneuver", "maneuver_file", default=None,
              type=click.Path(), help="Maneuver waypoint file.")
@click.option("--builtin", "builtin_name", default=None,
              type=click.Choice(BUILTIN_NAMES),
              help="Shipped benchmark maneuver.")
@click.option("--segments", "segments", default=None, type=int,
              help="Shooting segments per leg (default: one per two steps).")
@click.option("--tol", "tol", default=1e-9, show_default=True, type=float,
              help="Residual tolerance (infinity norm).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory.")
def optimize(params_file, maneuver_file, builtin_name, segments, tol,
             out_dir):
    """Solve the energy-optimal transfer for each leg of a maneuver."""
    if (maneuver_file is None) == (builtin_name is None):
        _fail(EXIT_PARSE, "give exactly one of --maneuver or --builtin")
    try:
        params = load_params(params_file)
        spec = (builtin_maneuver(builtin_name) if builtin_name
                else load_maneuver(maneuver_file))
    except (ParamsFileError, ManeuverFileError, ValueError) as err:
        _fail(EXIT_PARSE, str(err))

    model = WipModel(params)
    cfg = ShootingConfig(segments=segments, tol_residual=tol)
    os.makedirs(out_dir, exist_ok=True)

    reports: list[SolveReport] = []
    problems: list[OcProblem] = []
    phi = (0.0, 0.0)
    n_legs = len(spec.waypoints) - 1
    for i in range(n_legs):
        problem = legs(spec, initial_shapes=[phi] * n_legs)[i]
        problems.append(problem)
        click.echo(f"leg {i}: solving {problem.N} steps ...")
        report = solve(problem, cfg, model)
        reports.append(report)
        if not report.converged:
            _write_optimize_artifacts(out_dir, params, spec, problems,
                                      reports, tol)
            _fail(EXIT_NO_CONVERGENCE,
                  f"leg {i} did not converge (best residual "
                  f"{report.final_residual:.3e}): {report.message}")
        click.echo(f"leg {i}: cost {report.cost:.6e}, residual "
                   f"{report.final_residual:.2e}, "
                   f"{report.iterations} iterations")
        xN = report.trajectory[-1]
        phi = (xN.s[1], xN.s[2])

    _write_optimize_artifacts(out_dir, params, spec, problems, reports, tol)
    total = sum(r.cost for r in reports)
    click.echo(f"total cost {total:.6e}; artifacts in {out_dir}")


def _write_optimize_artifacts(out_dir, params, spec: ManeuverSpec,
                              problems, reports, tol) -> None:
    model = WipModel(params)
    rows = []
    leg_meta = []
    offset_row = 0
    t_offset = 0.0
    kkt_lines = []
    for i, (problem, report) in enumerate(zip(problems, reports)):
        n_steps = problem.N
        if not report.trajectory:
            break
        for k, x in enumerate(report.trajectory):
            tau = report.torques[k] if k < n_steps else (0.0, 0.0)
            cost = report.costates[k] if report.costates else None
            mult = (report.multipliers[k - 1]
                    if 1 <= k <= n_steps - 1 and report.multipliers
                    else None)
            rows.append(_node_row(offset_row + k, t_offset + k * problem.h,
                                  x, tau, cost, mult))
        kkt = math.nan
        if report.converged:
            kkt = kkt_residual(report.trajectory, report.costates,
                               report.multipliers, report.torques, problem,
                               model)
        kkt_lines.append(
            f"leg {i}: converged={report.converged} "
            f"residual={report.final_residual:.3e} kkt={kkt:.3e} "
            f"cost={report.cost:.6e} iterations={report.iterations}")
        leg_meta.append({
            "row_offset": offset_row,
            "problem": _problem_to_json(problem),
            "segment_starts": list(report.segment_starts),
            "converged": report.converged,
            "cost": report.cost,
            "final_residual": report.final_residual,
            "iterations": report.iterations,
        })
        offset_row += n_steps + 1
        t_offset += n_steps * problem.h

    _atomic_write(os.path.join(out_dir, "trajectory.csv"), _csv_text(rows))
    _atomic_write(os.path.join(out_dir, "kkt.txt"),
                  "\n".join(kkt_lines) + "\n")
    save_params(params, os.path.join(out_dir, "params.txt"))
    save_maneuver(spec, os.path.join(out_dir, "maneuver.txt"))
    meta = {"type": "optimize", "tol": tol, "maneuver": spec.name,
            "legs": leg_meta}
    _atomic_write(os.path.join(out_dir, "report.json"),
                  json.dumps(meta, indent=2) + "\n")
    emit_plots(out_dir, mu=spec.bounds.mu)
    summary = "\n".join(kkt_lines + [
        f"total cost = {sum(r.cost for r in reports):.6e}"])
    _atomic_write(os.path.join(out_dir, "summary.txt"), summary + "\n")


def _rows_from_csv(path: str) -> list[dict]:
    import csv as _csv
    with open(path) as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames != list(CSV_COLUMNS):
            raise ParamsFileError(f"{path}: unexpected column header")
        return [{k: float(v) for k, v in row.items()}
                for row in reader]


def _report_from_rows(rows, problem: OcProblem, meta: dict) -> SolveReport:
    trajectory, costates, torques, multipliers = [], [], [], []
    for k, r in enumerate(rows):
        trajectory.append(NodeState(
            g=se2.GroupElement(r["x"], r["y"], r["theta"]),
            s=np.array([r["alpha"], r["phi1"], r["phi2"]]),
            v=np.array([r["v_alpha"], r["v_phi1"], r["v_phi2"]])))
        costates.append(NodeCostate(
            zeta=np.array([r["zeta1"], r["zeta2"], r["zeta3"]]),
            psi=np.array([r["psi1"], r["psi2"], r["psi3"]]),
            lam=np.array([r["lambda1"], r["lambda2"], r["lambda3"]])))
        if k < problem.N:
            torques.append((r["tau1"], r["tau2"]))
        if 1 <= k <= problem.N - 1:
            multipliers.append(Multipliers(
                sigma=r["sigma"],
                beta=np.array([r["beta1"], r["beta2"], r["beta3"]])))
    return SolveReport(
        converged=meta["converged"],
        iterations=meta["iterations"],
        final_residual=meta["final_residual"],
        cost=meta["cost"],
        trajectory=trajectory,
        costates=costates,
        torques=np.array(torques).reshape(-1, 2),
        multipliers=multipliers,
        active_sets={},
        segment_starts=tuple(meta["segment_starts"]),
        tol_residual=meta.get("tol", 1e-9),
    )


@main.command()
@click.option("--report", "report_dir", required=True, type=click.Path(),
              help="Directory written by optimize or simulate.")
def check(report_dir):
    """Re-validate a report directory independently of the solver."""
    try:
        with open(os.path.join(report_dir, "report.json")) as fh:
            meta = json.load(fh)
        params = load_params(os.path.join(report_dir, "params.txt"))
        rows = _rows_from_csv(os.path.join(report_dir, "trajectory.csv"))
    except (OSError, ValueError) as err:
        _fail(EXIT_PARSE, f"cannot read report: {err}")

    model = WipModel(params)
    violations = []
    if meta.get("type") == "simulate":
        h = meta["h"]
        x0 = NodeState(
            g=se2.GroupElement(rows[0]["x"], rows[0]["y"],
                               rows[0]["theta"]),
            s=np.array([rows[0]["alpha"], rows[0]["phi1"], rows[0]["phi2"]]),
            v=np.array([rows[0]["v_alpha"], rows[0]["v_phi1"],
                        rows[0]["v_phi2"]]))
        torques = np.array([[r["tau1"], r["tau2"]] for r in rows[:-1]])
        traj = rollout(x0, torques, IntegratorConfig(h=h), model)
        for k, (x, r) in enumerate(zip(traj, rows)):
            dev = max(abs(x.g.x - r["x"]), abs(x.g.y - r["y"]),
                      abs(x.g.theta - r["theta"]),
                      abs(x.s[0] - r["alpha"]), abs(x.v[0] - r["v_alpha"]),
                      abs(x.v[1] - r["v_phi1"]), abs(x.v[2] - r["v_phi2"]))
            if dev > 1e-10:
                violations.append(
                    f"row {k} deviates from re-simulation by {dev:.2e}")
                break
    else:
        for i, leg_meta in enumerate(meta.get("legs", [])):
            problem = _problem_from_json(leg_meta["problem"])
            lo = leg_meta["row_offset"]
            leg_rows = rows[lo:lo + problem.N + 1]
            if len(leg_rows) != problem.N + 1:
                violations.append(f"leg {i}: trajectory rows missing")
                continue
            leg_meta = dict(leg_meta, tol=meta.get("tol", 1e-9))
            report = _report_from_rows(leg_rows, problem, leg_meta)
            for v in validate_report(report, problem, model):
                violations.append(f"leg {i}: {v}")

    if violations:
        for v in violations:
            click.echo(f"VIOLATION: {v}")
        sys.exit(1)
    click.echo("report checks out: no violations")


if __name__ == "__main__":
    main()
