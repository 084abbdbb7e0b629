"""Physical model of the wheeled inverted pendulum (WIP).

A WIP is a vertical body of mass ``m_b`` whose center of mass sits a distance
``b`` above the axis of two independently driven coaxial wheels (radius
``r_w``, half separation ``d_w``).  The configuration splits into a pose on
SE(2) and the shape variables s = (alpha, phi1, phi2): body tilt and the two
wheel angles.  No-slip rolling ties the pose rate to the shape rate through a
constant connection matrix A, so the dynamics close on the shape space with a
tilt-dependent mass matrix M(alpha) and a Coriolis/gravity vector C(alpha, v).

This module holds the parameter set, the aggregated Lagrangian coefficients,
the M / C displays and their analytic derivatives, the connection, and the
diagnostics (reduced Lagrangian, total energy, body momentum map).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .se2 import AlgebraElement, CoAlgebraElement

__all__ = [
    "WipParams",
    "ModelCoefficients",
    "BaseState",
    "BaseVelocity",
    "Torque",
    "WipModel",
    "LinearizedWipModel",
    "ParamsFileError",
    "coefficients_from_params",
    "i_theta",
    "d_i_theta_d_alpha",
    "mass_matrix",
    "coriolis",
    "d_mass_d_alpha",
    "d_coriolis_d_alpha",
    "d_coriolis_d_v",
    "connection",
    "reduced_lagrangian",
    "body_momentum",
    "total_energy",
    "default_params",
    "load_params",
    "save_params",
]


class ParamsFileError(ValueError):
    """Parameter file missing a key or containing an unparsable value."""


@dataclass(frozen=True)
class WipParams:
    """Physical constants of the WIP prototype (SI units).

    m_b: body mass [kg]; b: wheel-axis-to-COM distance [m];
    grav: gravitational acceleration [m/s^2]; m_w: single wheel mass [kg];
    r_w: wheel radius [m]; d_w: half wheel separation [m];
    I_B**: body inertia about its principal axes [kg m^2];
    I_W**: wheel inertia about spin (yy) and vertical (zz) axes [kg m^2].
    """

    m_b: float
    b: float
    grav: float
    m_w: float
    r_w: float
    d_w: float
    I_Bxx: float
    I_Byy: float
    I_Bzz: float
    I_Wyy: float
    I_Wzz: float

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not (val > 0.0 and math.isfinite(val)):
                raise ValueError(f"parameter {f.name} must be strictly "
                                 f"positive and finite, got {val!r}")


@dataclass(frozen=True)
class ModelCoefficients:
    """Aggregated Lagrangian coefficients induced by a parameter set.

    c_aa: tilt inertia [kg m^2]; c_ax: tilt-translation coupling [kg m];
    c_x: aggregate translational mass [kg]; c_p: wheel-spin inertia [kg m^2].
    """

    c_aa: float
    c_ax: float
    c_x: float
    c_p: float

    def __post_init__(self):
        if not (self.c_aa > 0 and self.c_x > 0 and self.c_p > 0
                and self.c_ax > 0):
            raise ValueError("model coefficients must be strictly positive")


@dataclass(frozen=True)
class BaseState:
    """Shape variables: tilt angle and the two wheel angles [rad]."""

    alpha: float
    phi1: float
    phi2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.phi1, self.phi2])


@dataclass(frozen=True)
class BaseVelocity:
    """Shape rates: tilt rate and the two wheel rates [rad/s]."""

    v_alpha: float
    v_phi1: float
    v_phi2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_alpha, self.v_phi1, self.v_phi2])


@dataclass(frozen=True)
class Torque:
    """Wheel drive torques; embedded as (0, tau1, tau2) in the dynamics."""

    tau1: float
    tau2: float

    def embedded(self) -> np.ndarray:
        return np.array([0.0, self.tau1, self.tau2])


def coefficients_from_params(p: WipParams) -> ModelCoefficients:
    """Aggregate a parameter set into the Lagrangian coefficients.

    The closed forms come from expanding the kinetic-minus-potential energy
    of body plus wheels and reading off the velocity-quadratic coefficients;
    the symbolic derivation is replayed in the test suite.  In particular the
    coupling c_ax = m_b * b is pinned by the gravity torque m_b*b*g*sin(alpha).
    """
    return ModelCoefficients(
        c_aa=p.I_Byy + p.m_b * p.b**2,
        c_ax=p.m_b * p.b,
        c_x=p.m_b + 2.0 * p.m_w,
        c_p=p.I_Wyy,
    )


def i_theta(alpha: float, p: WipParams) -> float:
    """Tilt-dependent yaw inertia aggregate [kg m^2]."""
    sa = math.sin(alpha)
    ca = math.cos(alpha)
    return (2.0 * p.I_Wzz + p.I_Bzz * ca * ca + 2.0 * p.m_w * p.d_w**2
            + (p.I_Bxx + p.m_b * p.b**2) * sa * sa)


def d_i_theta_d_alpha(alpha: float, p: WipParams) -> float:
    """Derivative of i_theta with respect to the tilt angle."""
    return (p.I_Bxx + p.m_b * p.b**2 - p.I_Bzz) * math.sin(2.0 * alpha)


def mass_matrix(alpha: float, c: ModelCoefficients, p: WipParams) -> np.ndarray:
    """Symmetric 3x3 mass matrix M(alpha) on the shape space."""
    r2 = p.r_w * p.r_w
    ct = i_theta(alpha, p)
    hh = r2 * (c.c_x + ct / (2.0 * p.d_w**2))
    kk = r2 * (c.c_x - ct / (2.0 * p.d_w**2))
    cpl = c.c_ax * p.r_w * math.cos(alpha)
    return np.array([
        [c.c_aa, cpl, cpl],
        [cpl, hh + c.c_p, kk],
        [cpl, kk, hh + c.c_p],
    ])


def coriolis(alpha: float, v: np.ndarray, c: ModelCoefficients,
             p: WipParams) -> np.ndarray:
    """Coriolis/gravity vector C(alpha, v); only the tilt row is nonzero."""
    va, v1, v2 = v
    sa = math.sin(alpha)
    quad = (p.r_w**2 / (2.0 * p.d_w**2)) * (p.I_Bxx - p.I_Bzz + p.m_b * p.b**2)
    c1 = (quad * math.sin(2.0 * alpha) * (v1 - v2)**2
          - c.c_ax * p.r_w * sa * va * (v2 + v1)
          + c.c_ax * p.grav * sa)
    return np.array([c1, 0.0, 0.0])


def d_mass_d_alpha(alpha: float, c: ModelCoefficients,
                   p: WipParams) -> np.ndarray:
    """Analytic derivative dM/dalpha."""
    r2 = p.r_w * p.r_w
    dct = d_i_theta_d_alpha(alpha, p)
    dhh = r2 * dct / (2.0 * p.d_w**2)
    dcpl = -c.c_ax * p.r_w * math.sin(alpha)
    return np.array([
        [0.0, dcpl, dcpl],
        [dcpl, dhh, -dhh],
        [dcpl, -dhh, dhh],
    ])


def d_coriolis_d_alpha(alpha: float, v: np.ndarray, c: ModelCoefficients,
                       p: WipParams) -> np.ndarray:
    """Analytic derivative dC/dalpha (3-vector)."""
    va, v1, v2 = v
    quad = (p.r_w**2 / (2.0 * p.d_w**2)) * (p.I_Bxx - p.I_Bzz + p.m_b * p.b**2)
    ca = math.cos(alpha)
    d1 = (2.0 * quad * math.cos(2.0 * alpha) * (v1 - v2)**2
          - c.c_ax * p.r_w * ca * va * (v2 + v1)
          + c.c_ax * p.grav * ca)
    return np.array([d1, 0.0, 0.0])


def d_coriolis_d_v(alpha: float, v: np.ndarray, c: ModelCoefficients,
                   p: WipParams) -> np.ndarray:
    """Analytic Jacobian dC/dv (3x3; only the first row is nonzero)."""
    va, v1, v2 = v
    sa = math.sin(alpha)
    quad = (p.r_w**2 / (2.0 * p.d_w**2)) * (p.I_Bxx - p.I_Bzz + p.m_b * p.b**2)
    s2a = math.sin(2.0 * alpha)
    out = np.zeros((3, 3))
    out[0, 0] = -c.c_ax * p.r_w * sa * (v2 + v1)
    out[0, 1] = 2.0 * quad * s2a * (v1 - v2) - c.c_ax * p.r_w * sa * va
    out[0, 2] = -2.0 * quad * s2a * (v1 - v2) - c.c_ax * p.r_w * sa * va
    return out


def connection(p: WipParams) -> np.ndarray:
    """Local form A of the nonholonomic connection; xi = -A v."""
    r, d = p.r_w, p.d_w
    return np.array([
        [0.0, -r, -r],
        [0.0, 0.0, 0.0],
        [0.0, r / d, -r / d],
    ])


def reduced_lagrangian(s: BaseState, v: BaseVelocity, xi: AlgebraElement,
                       c: ModelCoefficients, p: WipParams) -> float:
    """Reduced Lagrangian l(s, v, xi): kinetic minus potential energy.

    Independent of the wheel angles; equals the configuration-space
    Lagrangian pushed to the identity by the group action.
    """
    a = s.alpha
    sa, ca = math.sin(a), math.cos(a)
    ke = (0.5 * c.c_x * (xi.xi1**2 + xi.xi2**2)
          + 0.5 * i_theta(a, p) * xi.xi3**2
          + 0.5 * c.c_aa * v.v_alpha**2
          + 0.5 * c.c_p * (v.v_phi1**2 + v.v_phi2**2)
          + c.c_ax * sa * xi.xi2 * xi.xi3
          + c.c_ax * ca * xi.xi1 * v.v_alpha)
    return ke - c.c_ax * p.grav * ca


def body_momentum(s: BaseState, v: BaseVelocity, xi: AlgebraElement,
                  c: ModelCoefficients, p: WipParams) -> CoAlgebraElement:
    """Body-frame momentum map; diagnostic only for this (purely kinematic)
    system, where no momentum equation survives the reduction."""
    a = s.alpha
    sa, ca = math.sin(a), math.cos(a)
    return CoAlgebraElement(
        c.c_x * xi.xi1 + c.c_ax * ca * v.v_alpha,
        c.c_x * xi.xi2 + c.c_ax * sa * xi.xi3,
        i_theta(a, p) * xi.xi3 + c.c_ax * sa * xi.xi2,
    )


def total_energy(s: BaseState, v: BaseVelocity, xi: AlgebraElement,
                 c: ModelCoefficients, p: WipParams) -> float:
    """Kinetic plus potential energy; drift diagnostic for rollouts."""
    pot = c.c_ax * p.grav * math.cos(s.alpha)
    return reduced_lagrangian(s, v, xi, c, p) + 2.0 * pot


class WipModel:
    """Parameter set, coefficients and connection bundled for the dynamics.

    Wraps the module-level displays with the parameter arguments bound, which
    is the shape the integrator and the optimal-control layers consume.
    """

    def __init__(self, params: WipParams):
        self.params = params
        self.coeffs = coefficients_from_params(params)
        self.a_matrix = connection(params)
        self._neg_a = -self.a_matrix

    def xi_from_v(self, v: np.ndarray) -> np.ndarray:
        """Body velocity xi = -A v reconstructed from the shape rate."""
        return self._neg_a @ v

    def mass_matrix(self, alpha: float) -> np.ndarray:
        return mass_matrix(alpha, self.coeffs, self.params)

    def coriolis(self, alpha: float, v: np.ndarray) -> np.ndarray:
        return coriolis(alpha, v, self.coeffs, self.params)

    def d_mass_d_alpha(self, alpha: float) -> np.ndarray:
        return d_mass_d_alpha(alpha, self.coeffs, self.params)

    def d_coriolis_d_alpha(self, alpha: float, v: np.ndarray) -> np.ndarray:
        return d_coriolis_d_alpha(alpha, v, self.coeffs, self.params)

    def d_coriolis_d_v(self, alpha: float, v: np.ndarray) -> np.ndarray:
        return d_coriolis_d_v(alpha, v, self.coeffs, self.params)

    def energy(self, s: BaseState, v: BaseVelocity) -> float:
        xi_arr = self.xi_from_v(v.as_array())
        xi = AlgebraElement(*xi_arr)
        return total_energy(s, v, xi, self.coeffs, self.params)


class LinearizedWipModel(WipModel):
    """Upright-linearized variant: constant mass matrix, gravity linear in
    the tilt angle, all other velocity couplings dropped.

    Shares the model interface so the integrator and the shooting solver run
    on it unchanged; used to cross-check against closed-form linear-quadratic
    solutions.
    """

    def __init__(self, params: WipParams):
        super().__init__(params)
        self._m0 = mass_matrix(0.0, self.coeffs, self.params)
        self._dm0 = np.zeros((3, 3))
        self._g_lin = self.coeffs.c_ax * params.grav

    def mass_matrix(self, alpha: float) -> np.ndarray:
        return self._m0

    def coriolis(self, alpha: float, v: np.ndarray) -> np.ndarray:
        return np.array([self._g_lin * alpha, 0.0, 0.0])

    def d_mass_d_alpha(self, alpha: float) -> np.ndarray:
        return self._dm0

    def d_coriolis_d_alpha(self, alpha: float, v: np.ndarray) -> np.ndarray:
        return np.array([self._g_lin, 0.0, 0.0])

    def d_coriolis_d_v(self, alpha: float, v: np.ndarray) -> np.ndarray:
        return np.zeros((3, 3))


_PARAM_KEYS = [f.name for f in fields(WipParams)]


def default_params() -> WipParams:
    """Parameters of the desk-scale prototype used throughout."""
    return WipParams(
        m_b=0.277,
        b=48.67e-3,
        grav=9.81,
        m_w=0.028,
        r_w=33.1e-3,
        d_w=49e-3,
        I_Bxx=543.108e-6,
        I_Byy=481.457e-6,
        I_Bzz=153.951e-6,
        I_Wyy=7.411e-6,
        I_Wzz=4.957e-6,
    )


def load_params(path: str) -> WipParams:
    """Read a flat key = value parameter file (SI units, '#' comments).

    Raises:
        ParamsFileError: naming the offending or missing key.
    """
    values: dict[str, float] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParamsFileError(
                    f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in _PARAM_KEYS:
                raise ParamsFileError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = float(text.strip())
            except ValueError as err:
                raise ParamsFileError(
                    f"{path}:{lineno}: bad value for {key!r}: {text.strip()!r}"
                ) from err
    missing = [k for k in _PARAM_KEYS if k not in values]
    if missing:
        raise ParamsFileError(
            f"{path}: missing parameter(s): {', '.join(missing)}")
    try:
        return WipParams(**values)
    except ValueError as err:
        raise ParamsFileError(f"{path}: {err}") from err


def save_params(p: WipParams, path: str) -> None:
    """Write a parameter file readable by load_params."""
    with open(path, "w") as fh:
        fh.write("# WIP physical parameters (SI units)\n")
        for key in _PARAM_KEYS:
            fh.write(f"{key} = {getattr(p, key)!r}\n")
