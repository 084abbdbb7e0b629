"""Structure-preserving discrete-time update for the WIP.

One step advances (g, s, v) by
  1. an exact group update g' = g * exp(-h A v) that moves the pose along
     the nonholonomic connection, so the rolling constraints hold to
     round-off at every step;
  2. the explicit shape update s' = s + h v;
  3. an implicit momentum balance M(alpha') v' - h C(alpha', v')
     = M(alpha) v + h tau, solved for v' by Newton's method (alpha' is
     already known from step 2).

The update derives from a discrete variational principle, so unforced
trajectories show bounded energy oscillation instead of the secular drift of
one-sided schemes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import se2
from .model import BaseState, BaseVelocity, WipModel

__all__ = [
    "NodeState",
    "IntegratorConfig",
    "NewtonDivergence",
    "SingularJacobian",
    "IntegratorFailure",
    "newton_solve_velocity",
    "step",
    "rollout",
    "energy_drift",
]


class NewtonDivergence(RuntimeError):
    """Implicit velocity solve failed to reach tolerance."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Newton solve stalled at residual {residual:.3e} "
            f"after {iterations} iterations")


class SingularJacobian(RuntimeError):
    """Velocity-solve Jacobian is singular; tilt is likely outside the
    positive-definite range of the mass matrix."""


class IntegratorFailure(RuntimeError):
    """A rollout step failed; carries the failing step index."""

    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"step {index} failed: {cause}")


@dataclass(frozen=True)
class NodeState:
    """Per-node primal state: pose g, shape s = (alpha, phi1, phi2) and
    shape rate v = (v_alpha, v_phi1, v_phi2)."""

    g: se2.GroupElement
    s: np.ndarray
    v: np.ndarray

    @property
    def base_state(self) -> BaseState:
        return BaseState(*self.s)

    @property
    def base_velocity(self) -> BaseVelocity:
        return BaseVelocity(*self.v)


@dataclass(frozen=True)
class IntegratorConfig:
    """Step length and implicit-solve controls.

    newton_tol is absolute, on the infinity norm of the 3-component momentum
    residual (momentum units).
    """

    h: float = 0.05
    newton_tol: float = 1e-14
    newton_max_iters: int = 25

    def __post_init__(self):
        if not (self.h > 0 and self.newton_tol > 0
                and self.newton_max_iters >= 1):
            raise ValueError("invalid integrator configuration")


def newton_solve_velocity(alpha_next: float, rhs: np.ndarray,
                          v_guess: np.ndarray, cfg: IntegratorConfig,
                          model: WipModel) -> np.ndarray:
    """Solve M(alpha')v - h C(alpha', v) = rhs for v.

    Newton iteration from v_guess with up to 10 step-halvings per iteration
    when the full step fails to reduce the residual.

    Raises:
        NewtonDivergence: tolerance not reached within newton_max_iters.
        SingularJacobian: the iteration matrix is numerically singular.
    """
    h = cfg.h
    mm = model.mass_matrix(alpha_next)
    v = np.asarray(v_guess, dtype=float).copy()
    res = mm @ v - h * model.coriolis(alpha_next, v) - rhs
    norm = np.max(np.abs(res))
    for it in range(cfg.newton_max_iters):
        if norm <= cfg.newton_tol:
            return v
        jac = mm - h * model.d_coriolis_d_v(alpha_next, v)
        try:
            delta = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as err:
            raise SingularJacobian(str(err)) from err
        scale = 1.0
        for _ in range(10):
            v_new = v + scale * delta
            res_new = (mm @ v_new - h * model.coriolis(alpha_next, v_new)
                       - rhs)
            norm_new = np.max(np.abs(res_new))
            if norm_new < norm or norm_new <= cfg.newton_tol:
                break
            scale *= 0.5
        else:
            raise NewtonDivergence(norm, it + 1)
        v, res, norm = v_new, res_new, norm_new
    if norm <= cfg.newton_tol:
        return v
    raise NewtonDivergence(norm, cfg.newton_max_iters)


def step(x: NodeState, tau: np.ndarray, cfg: IntegratorConfig,
         model: WipModel) -> NodeState:
    """Advance one node: group update, shape update, implicit velocity solve.

    tau is the wheel torque pair (tau1, tau2).
    """
    h = cfg.h
    xi = model.xi_from_v(x.v)
    g_next = se2.compose(x.g, se2.exp(se2.AlgebraElement(*xi), h))
    s_next = x.s + h * x.v
    rhs = model.mass_matrix(x.s[0]) @ x.v
    rhs = rhs + np.array([0.0, h * tau[0], h * tau[1]])
    v_next = newton_solve_velocity(s_next[0], rhs, x.v, cfg, model)
    return NodeState(g=g_next, s=s_next, v=v_next)


def rollout(x0: NodeState, torques, cfg: IntegratorConfig,
            model: WipModel) -> list[NodeState]:
    """Apply step repeatedly; returns len(torques)+1 nodes starting at x0.

    Raises:
        IntegratorFailure: wrapping the failing step index.
    """
    traj = [x0]
    x = x0
    for k, tau in enumerate(torques):
        try:
            x = step(x, np.asarray(tau, dtype=float), cfg, model)
        except (NewtonDivergence, SingularJacobian) as err:
            raise IntegratorFailure(k, err) from err
        traj.append(x)
    return traj


def energy_drift(traj, model: WipModel) -> np.ndarray:
    """Total energy per node minus the initial energy (zero-torque rollouts)."""
    energies = np.array([
        model.energy(node.base_state, node.base_velocity) for node in traj
    ])
    return energies - energies[0]
