"""Maneuver definitions: waypoint sequences turned into per-leg transfer
problems.

A maneuver is an ordered list of waypoints (planar pose, tilt, shape rates)
visited at fixed time intervals.  Each consecutive pair becomes one
fixed-time optimal transfer problem; the solver handles legs independently
and the CLI concatenates the results.

Two benchmark maneuvers ship as built-ins: M1 is a four-leg loop through
the poses (0,0,0deg) -> (1,1,135deg) -> (0,2,135deg) -> (-1,1,360deg) ->
(0,0,360deg) with small tilt and slow wheels at the intermediate points, so
the heading winds through a full revolution; M2 shuttles straight out and
back between (0,0) and (0,2) with fast wheel rates (5 rad/s) at both ends,
which forces the torque bound to saturate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import se2
from .model import BaseState, BaseVelocity
from .pmp import Bounds
from .shooting import OcProblem

__all__ = [
    "Waypoint",
    "ManeuverSpec",
    "ManeuverFileError",
    "builtin_maneuver",
    "BUILTIN_NAMES",
    "legs",
    "load_maneuver",
    "save_maneuver",
]

# Default bounds: the torque box is the prototype's 8 mNms drive limit; the
# tilt box (45 deg) and rate box (20 rad/s) are generous envelopes that stay
# clear of the benchmark trajectories unless the problem forces them.
DEFAULT_BOUNDS = Bounds(mu=8e-3, nu=20.0, a=math.pi / 4.0)

BUILTIN_NAMES = ("M1", "M2")


class ManeuverFileError(ValueError):
    """Malformed maneuver file; message names the offending key/line."""


@dataclass(frozen=True)
class Waypoint:
    """Target configuration: pose (theta on the cover, radians), tilt
    [rad], shape rates [rad/s]."""

    g: se2.GroupElement
    alpha: float
    v: BaseVelocity


@dataclass(frozen=True)
class ManeuverSpec:
    """Waypoint list plus shared timing and bounds; legs all last
    leg_duration seconds sampled at step h."""

    name: str
    waypoints: tuple
    leg_duration: float
    bounds: Bounds
    h: float = 0.05

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        steps = self.leg_duration / self.h
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(
                f"leg duration {self.leg_duration} not an integer multiple "
                f"of h={self.h}")

    @property
    def steps_per_leg(self) -> int:
        return round(self.leg_duration / self.h)


def _wp(x, y, theta_deg, alpha_deg, v):
    return Waypoint(g=se2.GroupElement(x, y, math.radians(theta_deg)),
                    alpha=math.radians(alpha_deg),
                    v=BaseVelocity(*v))


def builtin_maneuver(name: str) -> ManeuverSpec:
    """Return one of the shipped benchmark maneuvers (M1 or M2).

    M1's published headings are 0/135/135/0/0 degrees; the two trailing
    zeros are realized as 360 on the heading cover so the loop winds one
    full counter-clockwise revolution instead of unwinding.
    """
    if name == "M1":
        return ManeuverSpec(
            name="M1",
            waypoints=(
                _wp(0.0, 0.0, 0.0, 0.0, (0.0, 0.0, 0.0)),
                _wp(1.0, 1.0, 135.0, 5.0, (0.0, 1.0, 1.0)),
                _wp(0.0, 2.0, 135.0, 5.0, (0.0, 0.5, 0.5)),
                _wp(-1.0, 1.0, 360.0, 5.0, (0.0, 0.5, 0.5)),
                _wp(0.0, 0.0, 360.0, 0.0, (0.0, 0.0, 0.0)),
            ),
            leg_duration=5.0,
            bounds=DEFAULT_BOUNDS,
        )
    if name == "M2":
        return ManeuverSpec(
            name="M2",
            waypoints=(
                _wp(0.0, 0.0, 0.0, 0.0, (0.0, 5.0, 5.0)),
                _wp(0.0, 2.0, 0.0, 0.0, (0.0, 5.0, 5.0)),
                _wp(0.0, 0.0, 0.0, 0.0, (0.0, 5.0, 5.0)),
            ),
            leg_duration=5.0,
            bounds=DEFAULT_BOUNDS,
        )
    raise ValueError(f"unknown built-in maneuver {name!r}; "
                     f"choose from {BUILTIN_NAMES}")


def legs(spec: ManeuverSpec, initial_shapes=None) -> list:
    """One OcProblem per consecutive waypoint pair.

    initial_shapes optionally gives the wheel angles (phi1, phi2) at each
    leg start (default zero); they only shift the bookkeeping, never the
    dynamics.
    """
    problems = []
    n_steps = spec.steps_per_leg
    for i in range(len(spec.waypoints) - 1):
        src, dst = spec.waypoints[i], spec.waypoints[i + 1]
        phi1, phi2 = (0.0, 0.0) if initial_shapes is None \
            else initial_shapes[i]
        problems.append(OcProblem(
            initial=(src.g, BaseState(src.alpha, phi1, phi2), src.v),
            final_g=dst.g,
            final_alpha=dst.alpha,
            final_v=dst.v,
            N=n_steps,
            h=spec.h,
            bounds=spec.bounds,
        ))
    return problems


_WAYPOINT_KEYS = ("x", "y", "theta_deg", "alpha_deg", "v_alpha", "v_phi1",
                  "v_phi2")
_GLOBAL_KEYS = ("name", "h", "duration_s", "mu", "nu", "a_deg")


def load_maneuver(path: str) -> ManeuverSpec:
    """Parse a flat key = value maneuver file.

    Global keys: name, h, duration_s, mu, nu, a_deg (bounds optional,
    defaulting to the benchmark bounds).  Each bare line 'waypoint' starts a
    block with keys x, y, theta_deg, alpha_deg, v_alpha, v_phi1, v_phi2.
    Angles are degrees in the file and radians in memory.

    Raises:
        ManeuverFileError: naming the offending line or missing key.
    """
    globals_: dict = {}
    blocks: list[dict] = []
    current: dict | None = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line == "waypoint":
                current = {}
                blocks.append(current)
                continue
            if "=" not in line:
                raise ManeuverFileError(
                    f"{path}:{lineno}: expected 'key = value' or "
                    f"'waypoint', got {raw!r}")
            key, _, text = line.partition("=")
            key, text = key.strip(), text.strip()
            target = current if current is not None else globals_
            allowed = _WAYPOINT_KEYS if current is not None else _GLOBAL_KEYS
            if key not in allowed:
                raise ManeuverFileError(
                    f"{path}:{lineno}: unknown key {key!r}")
            if key == "name":
                target[key] = text
                continue
            try:
                target[key] = float(text)
            except ValueError as err:
                raise ManeuverFileError(
                    f"{path}:{lineno}: bad value for {key!r}: "
                    f"{text!r}") from err

    if len(blocks) < 2:
        raise ManeuverFileError(f"{path}: need at least two waypoint blocks")
    for i, block in enumerate(blocks):
        missing = [k for k in _WAYPOINT_KEYS if k not in block]
        if missing:
            raise ManeuverFileError(
                f"{path}: waypoint {i} missing key(s): {', '.join(missing)}")
    for key in ("h", "duration_s"):
        if key not in globals_:
            raise ManeuverFileError(f"{path}: missing global key {key!r}")

    bounds = Bounds(
        mu=globals_.get("mu", DEFAULT_BOUNDS.mu),
        nu=globals_.get("nu", DEFAULT_BOUNDS.nu),
        a=math.radians(globals_["a_deg"]) if "a_deg" in globals_
        else DEFAULT_BOUNDS.a,
    )
    waypoints = tuple(
        _wp(b["x"], b["y"], b["theta_deg"], b["alpha_deg"],
            (b["v_alpha"], b["v_phi1"], b["v_phi2"])) for b in blocks)
    try:
        return ManeuverSpec(
            name=str(globals_.get("name", "maneuver")),
            waypoints=waypoints,
            leg_duration=globals_["duration_s"],
            bounds=bounds,
            h=globals_["h"],
        )
    except ValueError as err:
        raise ManeuverFileError(f"{path}: {err}") from err


def save_maneuver(spec: ManeuverSpec, path: str) -> None:
    """Write a maneuver file readable by load_maneuver."""
    with open(path, "w") as fh:
        fh.write(f"name = {spec.name}\n")
        fh.write(f"h = {spec.h!r}\n")
        fh.write(f"duration_s = {spec.leg_duration!r}\n")
        fh.write(f"mu = {spec.bounds.mu!r}\n")
        fh.write(f"nu = {spec.bounds.nu!r}\n")
        fh.write(f"a_deg = {math.degrees(spec.bounds.a)!r}\n")
        for wp in spec.waypoints:
            fh.write("\nwaypoint\n")
            fh.write(f"x = {wp.g.x!r}\n")
            fh.write(f"y = {wp.g.y!r}\n")
            fh.write(f"theta_deg = {math.degrees(wp.g.theta)!r}\n")
            fh.write(f"alpha_deg = {math.degrees(wp.alpha)!r}\n")
            fh.write(f"v_alpha = {wp.v.v_alpha!r}\n")
            fh.write(f"v_phi1 = {wp.v.v_phi1!r}\n")
            fh.write(f"v_phi2 = {wp.v.v_phi2!r}\n")
