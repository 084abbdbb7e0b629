"""Discrete first-order optimality conditions for the WIP transfer problem.

The energy-optimal point-to-point problem minimizes the summed squared wheel
torques subject to the discrete dynamics, hard bounds on tilt, shape rates
and torques, and boundary conditions with the final wheel angles left free.
Its stationarity system couples

  * a pose costate zeta in se(2)* transported by the coadjoint action,
  * shape and momentum costates (psi, lambda) propagated by a 6x6
    block-linear solve per step,
  * a pointwise torque law: the Hamiltonian maximizer over the torque box
    is the componentwise saturation of the momentum costate,
  * sign-constrained multipliers (sigma, beta) tied to the state bounds by
    complementary slackness, handled here through a smoothed
    Fischer-Burmeister reformulation,
  * transversality on the wheel-angle costates at the final node.

Everything in this module is a pure function; the shooting solver assembles
these pieces into a two-point boundary value problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import se2
from .integrator import IntegratorConfig, NodeState, step
from .model import WipModel

__all__ = [
    "NodeCostate",
    "Multipliers",
    "Bounds",
    "SingularAdjointSystem",
    "NORMAL",
    "ABNORMAL",
    "hamiltonian",
    "optimal_torque",
    "smooth_torque",
    "costate_transport_zeta",
    "adjoint_step",
    "transversality_residual",
    "fischer_burmeister",
    "complementarity_residual",
    "kkt_residual",
]

# Cost-multiplier values: the sign convention is fixed so that maximizing the
# Hamiltonian over the torque box yields the saturation law for NORMAL.
NORMAL = -1
ABNORMAL = 0


class SingularAdjointSystem(RuntimeError):
    """The 6x6 adjoint block system is numerically singular."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"adjoint block system singular (cond ~ {cond:.3e})")


@dataclass(frozen=True)
class NodeCostate:
    """Adjoint variables per node: pose costate zeta in se(2)*, shape
    costate psi and momentum costate lam, each a 3-vector."""

    zeta: np.ndarray
    psi: np.ndarray
    lam: np.ndarray

    @staticmethod
    def zeros() -> "NodeCostate":
        return NodeCostate(np.zeros(3), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class Multipliers:
    """Inequality multipliers at one node: sigma for the tilt bound, beta
    (3-vector) for the shape-rate bounds; both non-positive at a solution."""

    sigma: float
    beta: np.ndarray

    @staticmethod
    def zeros() -> "Multipliers":
        return Multipliers(0.0, np.zeros(3))


@dataclass(frozen=True)
class Bounds:
    """Hard bounds: torque box mu [N m s], shape-rate box nu [rad/s], tilt
    box a [rad]."""

    mu: float
    nu: float
    a: float

    def __post_init__(self):
        if not (self.mu > 0 and self.nu > 0 and self.a > 0):
            raise ValueError("bounds must be strictly positive")


def hamiltonian(cost: NodeCostate, x: NodeState, tau: np.ndarray, eta: int,
                h: float, model: WipModel) -> float:
    """Control Hamiltonian at one node.

    H = (eta h / 2) <tau, tau> - <zeta, h A v> + <psi, s + h v>
        + <lam, M(alpha) v + h tau_embedded>.
    """
    t1, t2 = tau
    av = model.a_matrix @ x.v
    mv = model.mass_matrix(x.s[0]) @ x.v
    return (0.5 * eta * h * (t1 * t1 + t2 * t2)
            - h * float(cost.zeta @ av)
            + float(cost.psi @ (x.s + h * x.v))
            + float(cost.lam @ mv) + h * (cost.lam[1] * t1 + cost.lam[2] * t2))


def optimal_torque(lam: np.ndarray, mu: float, eta: int = NORMAL) -> np.ndarray:
    """Pointwise Hamiltonian maximizer over the torque box.

    Normal extremals saturate the momentum costate componentwise; abnormal
    extremals are bang-bang with the symmetric choice 0 at the switching
    value (the set-valued law admits any point of the box there).
    """
    if mu <= 0:
        raise ValueError("torque bound must be positive")
    lam2, lam3 = float(lam[1]), float(lam[2])
    if eta == NORMAL:
        return np.array([min(max(lam2, -mu), mu), min(max(lam3, -mu), mu)])
    if eta == ABNORMAL:
        return np.array([math.copysign(mu, lam2) if lam2 != 0.0 else 0.0,
                         math.copysign(mu, lam3) if lam3 != 0.0 else 0.0])
    raise ValueError(f"eta must be NORMAL (-1) or ABNORMAL (0), got {eta!r}")


def smooth_torque(lam: np.ndarray, mu: float, eps: float) -> np.ndarray:
    """Softened saturation law: smooth approximation of optimal_torque that
    sharpens to the exact clamp as eps -> 0 (pointwise error at most eps/2).

    Replacing max(x, 0) in the clamp with (x + sqrt(x^2 + eps^2))/2 keeps the
    torque map differentiable, which the shooting solver needs while bound
    activity is still being resolved.
    """
    out = np.empty(2)
    for i, p in enumerate((lam[1], lam[2])):
        hi = p - mu
        lo = -mu - p
        out[i] = (p - 0.5 * (hi + math.hypot(hi, eps))
                  + 0.5 * (lo + math.hypot(lo, eps)))
    return out


def costate_transport_zeta(zeta_prev: np.ndarray, v: np.ndarray, h: float,
                           model: WipModel) -> np.ndarray:
    """Transport the pose costate forward across one step.

    The backward relation is zeta^{k-1} = Ad*_{exp(h A v_k)} zeta^k; the
    forward form inverts it, zeta^k = Ad*_{exp(-h A v_k)} zeta^{k-1}.
    """
    xi = se2.AlgebraElement(*(model.a_matrix @ v))
    g_inv = se2.exp(xi, -h)
    m = np.array(se2.coadjoint_matrix(g_inv))
    return m @ zeta_prev


def _ds_mv_t(model: WipModel, alpha: float, v: np.ndarray) -> np.ndarray:
    """Transpose of the shape-Jacobian of M(alpha) v (first row only)."""
    out = np.zeros((3, 3))
    out[0, :] = model.d_mass_d_alpha(alpha) @ v
    return out


def adjoint_step(cost_prev: NodeCostate, x: NodeState, mult: Multipliers,
                 h: float, model: WipModel) -> NodeCostate:
    """One forward transition of the adjoint system into the node of x.

    Solves the 6x6 block-linear stationarity system for (psi, lam) at the
    new index, after transporting zeta by the coadjoint action; x and mult
    belong to the index being produced.

    Raises:
        SingularAdjointSystem: if the block matrix is not invertible.
    """
    alpha = x.s[0]
    mm = model.mass_matrix(alpha)
    dmv = _ds_mv_t(model, alpha, x.v)

    zeta = costate_transport_zeta(cost_prev.zeta, x.v, h, model)

    lhs = np.zeros((6, 6))
    lhs[:3, :3] = np.eye(3)
    lhs[:3, 3:] = dmv
    lhs[3:, :3] = h * np.eye(3)
    lhs[3:, 3:] = mm.T

    dmc = dmv.copy()
    dmc[0, :] -= h * model.d_coriolis_d_alpha(alpha, x.v)
    dvc = (mm - h * model.d_coriolis_d_v(alpha, x.v)).T

    rhs = np.zeros(6)
    rhs[:3] = cost_prev.psi + dmc @ cost_prev.lam
    rhs[3:] = dvc @ cost_prev.lam
    rhs[0] -= mult.sigma * alpha
    rhs[3:] += h * (model.a_matrix.T @ zeta) - mult.beta * x.v

    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as err:
        raise SingularAdjointSystem(np.linalg.cond(lhs)) from err
    return NodeCostate(zeta=zeta, psi=sol[:3], lam=sol[3:])


def transversality_residual(cost_n: NodeCostate) -> np.ndarray:
    """Wheel-angle costate components that must vanish at the final node."""
    return np.array([cost_n.psi[1], cost_n.psi[2]])


def fischer_burmeister(p: float, q: float, eps: float = 0.0) -> float:
    """Smoothed Fischer-Burmeister function phi(p, q) = p + q
    - sqrt(p^2 + q^2 + eps^2); at eps = 0 its zeros are exactly
    {p >= 0, q >= 0, p q = 0}."""
    root = math.sqrt(p * p + q * q + eps * eps)
    denom = p + q + root
    if denom > 0.0:
        # Conjugate form: identical algebraically, but immune to the
        # catastrophic cancellation of p + q - root when |p| << q (the
        # naive form rounds to zero for any |p| below ulp(q), silently
        # freeing the multiplier).
        return (2.0 * p * q - eps * eps) / denom
    return p + q - root


def complementarity_residual(x: NodeState, mult: Multipliers, bounds: Bounds,
                             eps: float = 0.0) -> np.ndarray:
    """Slackness/sign residuals for the tilt and shape-rate bounds at one
    node: 4-vector of Fischer-Burmeister values, smoothed at level eps."""
    alpha = x.s[0]
    out = np.empty(4)
    out[0] = fischer_burmeister(-mult.sigma, bounds.a**2 - alpha * alpha, eps)
    for j in range(3):
        out[1 + j] = fischer_burmeister(
            -mult.beta[j], bounds.nu**2 - x.v[j] * x.v[j], eps)
    return out


def _pose_defect(g_pred: se2.GroupElement, g_target: se2.GroupElement
                 ) -> np.ndarray:
    """Pose mismatch as a 3-vector: position error expressed in the
    predicted body frame plus the heading error on the cover.  Vanishes
    exactly when the poses coincide (headings compared unwrapped) and is
    smooth for arbitrarily large heading discrepancies, unlike the group
    logarithm of the relative pose.
    """
    c, s = math.cos(g_pred.theta), math.sin(g_pred.theta)
    dx = g_target.x - g_pred.x
    dy = g_target.y - g_pred.y
    return np.array([c * dx + s * dy,
                     -s * dx + c * dy,
                     g_target.theta - g_pred.theta])


def kkt_residual(trajectory, costates, multipliers, torques, problem,
                 model: WipModel) -> float:
    """Infinity norm over every first-order condition, recomputed from
    scratch: dynamics, adjoint transitions, transversality, exact (eps = 0)
    complementarity with multiplier signs, boundary conditions and torque
    stationarity.  Zero iff the tuple is a stationary point.

    ``problem`` needs fields h, N, bounds and the boundary data of the
    shooting problem (see shooting.OcProblem).
    """
    h, n_steps = problem.h, problem.N
    if not (len(trajectory) == n_steps + 1 and len(costates) == n_steps + 1
            and len(torques) == n_steps and len(multipliers) == n_steps - 1):
        raise ValueError("inconsistent sequence lengths")
    cfg = IntegratorConfig(h=h)
    worst = 0.0

    # Dynamics: re-step every node.
    for k in range(n_steps):
        pred = step(trajectory[k], torques[k], cfg, model)
        worst = max(worst,
                    np.max(np.abs(_pose_defect(pred.g, trajectory[k + 1].g))),
                    np.max(np.abs(pred.s - trajectory[k + 1].s)),
                    np.max(np.abs(pred.v - trajectory[k + 1].v)))

    # Adjoint transitions into k = 1..N (no multipliers at the final node).
    for k in range(1, n_steps + 1):
        mult = (multipliers[k - 1] if k <= n_steps - 1 else
                Multipliers.zeros())
        pred = adjoint_step(costates[k - 1], trajectory[k], mult, h, model)
        worst = max(worst,
                    np.max(np.abs(pred.zeta - costates[k].zeta)),
                    np.max(np.abs(pred.psi - costates[k].psi)),
                    np.max(np.abs(pred.lam - costates[k].lam)))

    worst = max(worst, np.max(np.abs(transversality_residual(costates[-1]))))

    for k in range(1, n_steps):
        comp = complementarity_residual(trajectory[k], multipliers[k - 1],
                                        problem.bounds, eps=0.0)
        worst = max(worst, np.max(np.abs(comp)))

    # Boundary conditions: full initial state; final pose, tilt and rate.
    g0, s0, v0 = problem.initial
    worst = max(worst,
                np.max(np.abs(_pose_defect(trajectory[0].g, g0))),
                np.max(np.abs(trajectory[0].s - s0.as_array())),
                np.max(np.abs(trajectory[0].v - v0.as_array())),
                np.max(np.abs(_pose_defect(trajectory[-1].g,
                                           problem.final_g))),
                abs(trajectory[-1].s[0] - problem.final_alpha),
                np.max(np.abs(trajectory[-1].v - problem.final_v.as_array())))

    # Hamiltonian stationarity: torques must equal the saturation law.
    for k in range(n_steps):
        law = optimal_torque(costates[k].lam, problem.bounds.mu, NORMAL)
        worst = max(worst, np.max(np.abs(np.asarray(torques[k]) - law)))

    return float(worst)
