"""Structure-preserving modeling and energy-optimal trajectory synthesis
for the wheeled inverted pendulum.

Submodules:
  se2         planar rigid-body group, exp/log, coadjoint action
  model       physical parameters, mass matrix, gravity/Coriolis terms
  integrator  variational discrete-time update on SE(2) x shape space
  pmp         discrete first-order optimality conditions
  shooting    multiple-shooting boundary value solver
  maneuvers   waypoint sequences and benchmark maneuvers M1/M2
  cli         `wip` command-line entry points
"""

from .model import WipModel, WipParams, default_params

__all__ = ["WipModel", "WipParams", "default_params"]
__version__ = "0.1.0"
