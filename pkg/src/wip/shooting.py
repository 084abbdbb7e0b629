"""Multiple-shooting solver for the energy-optimal WIP transfer problem.

The first-order optimality system (state recursion, adjoint recursion,
torque saturation law, smoothed complementarity, boundary and transversality
conditions) is posed as one square root-finding problem.  The horizon is
split into shooting segments; the unknowns are the state and costate at each
segment start plus the bound multipliers at every interior node, and the
residual stacks segment matching defects, boundary/transversality rows and
complementarity rows.  Torques are not unknowns: inside each propagation
they are generated from the momentum costate by the saturation law, so
Hamiltonian maximization holds exactly at every iterate.

The root is found by damped Newton iteration on the row-equilibrated system
with a sparse LU solve; the forward-difference Jacobian exploits segment
locality (perturbing an unknown only touches residual rows of its own and
the adjacent segment).  Two continuation loops wrap the core iteration: a
boundary homotopy that morphs a trivially solvable rest-to-rest problem into
the requested one, and a decreasing schedule for the smoothing parameter
shared by the complementarity rows and the torque saturation law.
"""

from __future__ import annotations

import bisect
import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

import scipy.linalg

from . import se2
from .integrator import (IntegratorConfig, IntegratorFailure, NewtonDivergence,
                         NodeState, SingularJacobian, rollout, step)
from .model import BaseState, BaseVelocity, WipModel
from .pmp import (Bounds, Multipliers, NodeCostate, _pose_defect, adjoint_step,
                  complementarity_residual, kkt_residual, optimal_torque,
                  smooth_torque, transversality_residual)

__all__ = [
    "OcProblem",
    "ShootingConfig",
    "SolveReport",
    "Layout",
    "assemble_unknowns",
    "residual",
    "solve",
    "validate_report",
]

log = logging.getLogger("wip.shooting")

_DEFAULT_EPS_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9,
                         1e-10)


@dataclass(frozen=True)
class OcProblem:
    """Fixed-time point-to-point problem: drive the full initial state to a
    final pose, tilt and shape rate in N steps of length h; the final wheel
    angles are free."""

    initial: tuple[se2.GroupElement, BaseState, BaseVelocity]
    final_g: se2.GroupElement
    final_alpha: float
    final_v: BaseVelocity
    N: int
    h: float
    bounds: Bounds

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two steps")
        if not self.h > 0:
            raise ValueError("step length must be positive")
        g, s, v = self.initial
        vals = [g.x, g.y, g.theta, *s.as_array(), *v.as_array(),
                self.final_g.x, self.final_g.y, self.final_g.theta,
                self.final_alpha, *self.final_v.as_array()]
        if not all(math.isfinite(x) for x in vals):
            raise ValueError("boundary values must be finite")


@dataclass(frozen=True)
class ShootingConfig:
    """Solver knobs.

    segments=None picks one segment per two steps, short enough that the
    open-loop tilt instability cannot amplify errors much within a segment.
    max_outer_iters caps the Newton iterations of each continuation stage.
    fd_step is the forward-difference step on the scaled unknowns; costates
    and multipliers are scaled by their typical magnitude so one Jacobian
    step is meaningful for every column.
    """

    segments: int | None = None
    max_outer_iters: int = 60
    fd_step: float = 1e-5
    eps_schedule: tuple = _DEFAULT_EPS_SCHEDULE
    tol_residual: float = 1e-9
    costate_scale: float = 1e-2
    multiplier_scale: float = 1e-2
    stage_tol: float = 1e-7
    homotopy_min_step: float = 1e-3
    stall_iters: int = 12
    stall_ratio: float = 0.995
    max_jacobian_reuse: int = 4

    def __post_init__(self):
        eps = self.eps_schedule
        if not (len(eps) >= 1 and all(e > 0 for e in eps)
                and all(a > b for a, b in zip(eps, eps[1:]))):
            raise ValueError("eps_schedule must be positive and strictly "
                             "decreasing")
        if self.segments is not None and self.segments < 1:
            raise ValueError("segments must be >= 1")
        if not (self.fd_step > 0 and self.tol_residual > 0
                and self.max_outer_iters >= 1):
            raise ValueError("invalid solver configuration")
        if not (self.stall_iters >= 1 and 0.0 < self.stall_ratio <= 1.0):
            raise ValueError("invalid stall detection settings")
        if self.max_jacobian_reuse < 0:
            raise ValueError("max_jacobian_reuse must be >= 0")


@dataclass
class SolveReport:
    """Everything a converged (or best-effort) solve produced.

    trajectory/costates hold N+1 nodes, torques is an (N, 2) array,
    multipliers has one entry per interior node 1..N-1.  active_sets maps
    'tilt' -> (N+1,) bools, 'rate' -> (N+1, 3) bools, 'torque' -> (N, 2)
    bools.  segment_starts records the shooting grid so that validation can
    re-simulate per segment.
    """

    converged: bool
    iterations: int
    final_residual: float
    cost: float
    trajectory: list
    costates: list
    torques: np.ndarray
    multipliers: list
    active_sets: dict
    segment_starts: tuple
    tol_residual: float
    message: str = ""


# ---------------------------------------------------------------------------
# Unknown-vector layout


@dataclass(frozen=True)
class Layout:
    """Fixed ordering of the unknown vector (all entries scaled).

    [states at segment starts 1..S-1: (gx, gy, gtheta, s, v) x 9]
    [costates at segment starts 0..S-1: (zeta, psi, lam) x 9]
    [multipliers at nodes 1..N-1: (sigma, beta1..3) x 4]

    The residual vector has the same length: matching defects (18 per
    interior segment boundary), then final boundary (7) + transversality
    (2), then complementarity (4 per interior node).
    """

    N: int
    starts: tuple
    costate_scale: float
    multiplier_scale: float

    @property
    def S(self) -> int:
        return len(self.starts) - 1

    @property
    def off_costates(self) -> int:
        return 9 * (self.S - 1)

    @property
    def off_mults(self) -> int:
        return self.off_costates + 9 * self.S

    @property
    def n(self) -> int:
        return self.off_mults + 4 * (self.N - 1)

    # Residual row offsets.
    @property
    def off_final(self) -> int:
        return 18 * (self.S - 1)

    @property
    def off_comp(self) -> int:
        return self.off_final + 9

    def state_slice(self, s: int) -> slice:
        if not 1 <= s <= self.S - 1:
            raise IndexError("interior segment starts only")
        return slice(9 * (s - 1), 9 * s)

    def costate_slice(self, s: int) -> slice:
        if not 0 <= s <= self.S - 1:
            raise IndexError(s)
        return slice(self.off_costates + 9 * s, self.off_costates + 9 * s + 9)

    def mult_slice(self, k: int) -> slice:
        if not 1 <= k <= self.N - 1:
            raise IndexError(k)
        return slice(self.off_mults + 4 * (k - 1), self.off_mults + 4 * k)

    def segment_of(self, k: int) -> int:
        """Segment index whose half-open node range [start, next) contains
        k; the final node N belongs to the last segment."""
        return min(bisect.bisect_right(self.starts, k) - 1, self.S - 1)

    # -- pack/unpack ------------------------------------------------------
    def unpack_state(self, z: np.ndarray, s: int) -> NodeState:
        w = z[self.state_slice(s)]
        return NodeState(g=se2.GroupElement(w[0], w[1], w[2]),
                         s=w[3:6].copy(), v=w[6:9].copy())

    def pack_state(self, z: np.ndarray, s: int, x: NodeState) -> None:
        z[self.state_slice(s)] = [x.g.x, x.g.y, x.g.theta, *x.s, *x.v]

    def unpack_costate(self, z: np.ndarray, s: int) -> NodeCostate:
        w = z[self.costate_slice(s)] * self.costate_scale
        return NodeCostate(zeta=w[0:3], psi=w[3:6], lam=w[6:9])

    def pack_costate(self, z: np.ndarray, s: int, c: NodeCostate) -> None:
        z[self.costate_slice(s)] = np.concatenate(
            [c.zeta, c.psi, c.lam]) / self.costate_scale

    def unpack_mult(self, z: np.ndarray, k: int) -> Multipliers:
        w = z[self.mult_slice(k)] * self.multiplier_scale
        return Multipliers(sigma=w[0], beta=w[1:4].copy())

    def pack_mult(self, z: np.ndarray, k: int, m: Multipliers) -> None:
        z[self.mult_slice(k)] = np.array(
            [m.sigma, *m.beta]) / self.multiplier_scale


def _num_segments(problem: OcProblem, cfg: ShootingConfig) -> int:
    s = cfg.segments if cfg.segments is not None else max(1, problem.N // 2)
    return min(s, problem.N)


def assemble_unknowns(problem: OcProblem, cfg: ShootingConfig) -> Layout:
    """Build the unknown-vector layout for this problem/solver pair."""
    s_count = _num_segments(problem, cfg)
    starts = tuple(round(i * problem.N / s_count)
                   for i in range(s_count + 1))
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValueError("more segments than steps")
    return Layout(N=problem.N, starts=starts,
                  costate_scale=cfg.costate_scale,
                  multiplier_scale=cfg.multiplier_scale)


# ---------------------------------------------------------------------------
# Residual assembly


def _mult_lookup(layout: Layout, z: np.ndarray, override: dict | None = None):
    """Multiplier accessor by node index; zeros outside 1..N-1."""
    def lookup(k: int) -> Multipliers:
        if override and k in override:
            return override[k]
        if 1 <= k <= layout.N - 1:
            return layout.unpack_mult(z, k)
        return Multipliers.zeros()
    return lookup


def _propagate(problem: OcProblem, icfg: IntegratorConfig, model: WipModel,
               mults, x0: NodeState, c0: NodeCostate, k0: int, k1: int,
               eps: float):
    """March state+costate from node k0 to k1, generating torques from the
    eps-smoothed saturation law.  Returns (states, costates, torques) with
    k1-k0+1 nodes.

    Raises:
        IntegratorFailure: implicit velocity solve broke down at some node.
    """
    mu = problem.bounds.mu
    h = problem.h
    xs, cs, taus = [x0], [c0], []
    x, c = x0, c0
    for k in range(k0, k1):
        tau = smooth_torque(c.lam, mu, eps)
        try:
            x = step(x, tau, icfg, model)
        except (NewtonDivergence, SingularJacobian) as err:
            raise IntegratorFailure(k, err) from err
        c = adjoint_step(c, x, mults(k + 1), h, model)
        xs.append(x)
        cs.append(c)
        taus.append(tau)
    return xs, cs, taus


def _match_rows(x_pred: NodeState, c_pred: NodeCostate, x_unk: NodeState,
                c_unk: NodeCostate) -> np.ndarray:
    out = np.empty(18)
    out[0:3] = _pose_defect(x_pred.g, x_unk.g)
    out[3:6] = x_unk.s - x_pred.s
    out[6:9] = x_unk.v - x_pred.v
    out[9:12] = c_unk.zeta - c_pred.zeta
    out[12:15] = c_unk.psi - c_pred.psi
    out[15:18] = c_unk.lam - c_pred.lam
    return out


def _final_rows(problem: OcProblem, x_end: NodeState,
                c_end: NodeCostate) -> np.ndarray:
    out = np.empty(9)
    out[0:3] = _pose_defect(x_end.g, problem.final_g)
    out[3] = x_end.s[0] - problem.final_alpha
    out[4:7] = x_end.v - problem.final_v.as_array()
    out[7:9] = transversality_residual(c_end)
    return out


class _Cache:
    """Per-evaluation propagation results, one list per segment."""

    __slots__ = ("xs", "cs", "taus")

    def __init__(self):
        self.xs, self.cs, self.taus = [], [], []

    def node_state(self, layout: Layout, k: int) -> NodeState:
        s = layout.segment_of(k)
        return self.xs[s][k - layout.starts[s]]


def _initial_node(problem: OcProblem) -> NodeState:
    g0, s0, v0 = problem.initial
    return NodeState(g=g0, s=s0.as_array(), v=v0.as_array())


def _residual_cached(z: np.ndarray, layout: Layout, problem: OcProblem,
                     model: WipModel, eps: float):
    """Full residual plus the propagation cache used to build it."""
    icfg = IntegratorConfig(h=problem.h)
    mults = _mult_lookup(layout, z)
    r = np.zeros(layout.n)
    cache = _Cache()
    for s in range(layout.S):
        x0 = _initial_node(problem) if s == 0 else layout.unpack_state(z, s)
        c0 = layout.unpack_costate(z, s)
        xs, cs, taus = _propagate(problem, icfg, model, mults, x0, c0,
                                  layout.starts[s], layout.starts[s + 1],
                                  eps)
        cache.xs.append(xs)
        cache.cs.append(cs)
        cache.taus.append(taus)
        if s < layout.S - 1:
            r[18 * s:18 * s + 18] = _match_rows(
                xs[-1], cs[-1], layout.unpack_state(z, s + 1),
                layout.unpack_costate(z, s + 1))
        else:
            r[layout.off_final:layout.off_final + 9] = _final_rows(
                problem, xs[-1], cs[-1])
    for k in range(1, layout.N):
        r[layout.off_comp + 4 * (k - 1):layout.off_comp + 4 * k] = \
            complementarity_residual(cache.node_state(layout, k),
                                     mults(k), problem.bounds, eps)
    return r, cache


def residual(unknowns: np.ndarray, problem: OcProblem, cfg: ShootingConfig,
             eps: float, model: WipModel) -> np.ndarray:
    """Stacked optimality residual at one unknown vector (scaled units)."""
    layout = assemble_unknowns(problem, cfg)
    r, _ = _residual_cached(np.asarray(unknowns, dtype=float), layout,
                            problem, model, eps)
    return r


# ---------------------------------------------------------------------------
# Forward-difference Jacobian with segment locality


def _comp_row_slice(layout: Layout, k: int) -> slice:
    return slice(layout.off_comp + 4 * (k - 1), layout.off_comp + 4 * k)


def _segment_tail_rows(z: np.ndarray, layout: Layout, problem: OcProblem,
                       model: WipModel, eps: float, mults, s: int,
                       xs, cs, r_out: np.ndarray, rows: list,
                       first_comp_node: int) -> None:
    """Write the rows of segment s that depend on its propagation: matching
    (or final+transversality) and complementarity from first_comp_node on."""
    if s < layout.S - 1:
        sl = slice(18 * s, 18 * s + 18)
        r_out[sl] = _match_rows(xs[-1], cs[-1], layout.unpack_state(z, s + 1),
                                layout.unpack_costate(z, s + 1))
        rows.append(sl)
    else:
        sl = slice(layout.off_final, layout.off_final + 9)
        r_out[sl] = _final_rows(problem, xs[-1], cs[-1])
        rows.append(sl)
    for k in range(max(first_comp_node, 1), layout.starts[s + 1]):
        sl = _comp_row_slice(layout, k)
        r_out[sl] = complementarity_residual(xs[k - layout.starts[s]],
                                             mults(k), problem.bounds, eps)
        rows.append(sl)


def _fd_column(i: int, z: np.ndarray, layout: Layout, problem: OcProblem,
               cfg: ShootingConfig, model: WipModel, eps: float,
               cache: _Cache):
    """Residual rows affected by unknown i and their perturbed values.

    Returns (row_slices, perturbed_residual_array); only entries inside the
    slices of the returned array are meaningful.
    """
    zp = z.copy()
    zp[i] += cfg.fd_step
    icfg = IntegratorConfig(h=problem.h)
    r_out = np.zeros(layout.n)
    rows: list = []

    if i < layout.off_mults:
        # State or costate unknown at the start of segment s.
        if i < layout.off_costates:
            s = i // 9 + 1
        else:
            s = (i - layout.off_costates) // 9
        mults = _mult_lookup(layout, zp)
        if s >= 1:
            # Direct effect on the previous segment's matching defect.
            sl = slice(18 * (s - 1), 18 * s)
            r_out[sl] = _match_rows(cache.xs[s - 1][-1], cache.cs[s - 1][-1],
                                    layout.unpack_state(zp, s),
                                    layout.unpack_costate(zp, s))
            rows.append(sl)
        x0 = _initial_node(problem) if s == 0 else layout.unpack_state(zp, s)
        c0 = layout.unpack_costate(zp, s)
        xs, cs, _ = _propagate(problem, icfg, model, mults, x0, c0,
                               layout.starts[s], layout.starts[s + 1], eps)
        _segment_tail_rows(zp, layout, problem, model, eps, mults, s, xs, cs,
                           r_out, rows, layout.starts[s])
        return rows, r_out

    # Multiplier unknown at node k: enters the adjoint transition into k and
    # the complementarity row at k.
    k = (i - layout.off_mults) // 4 + 1
    mult_new = layout.unpack_mult(zp, k)
    mults = _mult_lookup(layout, zp)
    s = layout.segment_of(k - 1)          # segment whose propagation covers
    j = k - layout.starts[s]              # the transition into node k
    c_k = adjoint_step(cache.cs[s][j - 1], cache.xs[s][j], mult_new,
                       problem.h, model)
    if k == layout.starts[s + 1]:
        # Node k is the next segment's start: only the matching defect of
        # segment s and the complementarity row at k are touched.
        if s < layout.S - 1:
            sl = slice(18 * s, 18 * s + 18)
            r_out[sl] = _match_rows(cache.xs[s][-1], c_k,
                                    layout.unpack_state(zp, s + 1),
                                    layout.unpack_costate(zp, s + 1))
            rows.append(sl)
        else:
            sl = slice(layout.off_final, layout.off_final + 9)
            r_out[sl] = _final_rows(problem, cache.xs[s][-1], c_k)
            rows.append(sl)
        sl = _comp_row_slice(layout, k)
        r_out[sl] = complementarity_residual(cache.node_state(layout, k),
                                             mult_new, problem.bounds, eps)
        rows.append(sl)
        return rows, r_out
    xs, cs, _ = _propagate(problem, icfg, model, mults, cache.xs[s][j], c_k,
                           k, layout.starts[s + 1], eps)
    # Complementarity at node k itself: state unchanged, multiplier new.
    sl = _comp_row_slice(layout, k)
    r_out[sl] = complementarity_residual(cache.xs[s][j], mult_new,
                                         problem.bounds, eps)
    rows.append(sl)
    # Prepend the partial propagation with the untouched head of segment s
    # so that node indexing inside the tail writer stays uniform.
    xs_full = cache.xs[s][:j] + xs
    cs_full = cache.cs[s][:j] + cs
    _segment_tail_rows(zp, layout, problem, model, eps, mults, s, xs_full,
                       cs_full, r_out, rows, k + 1)
    return rows, r_out


def _fd_jacobian(z: np.ndarray, r0: np.ndarray, cache: _Cache,
                 layout: Layout, problem: OcProblem, cfg: ShootingConfig,
                 model: WipModel, eps: float) -> np.ndarray:
    jac = np.zeros((layout.n, layout.n))
    for i in range(layout.n):
        try:
            rows, rp = _fd_column(i, z, layout, problem, cfg, model, eps,
                                  cache)
        except IntegratorFailure:
            continue
        for sl in rows:
            jac[sl, i] = (rp[sl] - r0[sl]) / cfg.fd_step
    return jac


# ---------------------------------------------------------------------------
# Damped-Newton core


def _newton_direction(jac: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Newton step for the row-equilibrated square system.

    Rows span many orders of magnitude (pose defects are O(1), momentum rows
    scale with the tiny wheel inertias), so each row is normalized by its
    largest entry first.  The equilibrated system is solved in the
    rank-revealing least-squares sense: straight or resting trajectories
    leave the lateral-momentum costate exactly indeterminate (the
    nonholonomic constraint direction never feeds back into the controls),
    and the minimum-norm solution simply leaves that component untouched.
    """
    d = 1.0 / np.maximum(np.abs(jac).max(axis=1), 1e-10)
    delta, *_ = scipy.linalg.lstsq(jac * d[:, None], -(r * d), cond=1e-8,
                                   lapack_driver="gelsy")
    return delta


def _lm_direction(jac: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    """Levenberg-Marquardt step for the row-equilibrated system.

    Near folds of the continuation path the Jacobian turns singular along
    the fold direction and the pure Newton step blows up there; damping
    with lam * diag(J^T J) bounds the step and turns it toward steepest
    descent, which still makes progress through the ill-conditioned region.
    """
    d = 1.0 / np.maximum(np.abs(jac).max(axis=1), 1e-10)
    je = jac * d[:, None]
    g = je.T @ (r * d)
    a = je.T @ je
    diag = np.maximum(np.diag(a), 1e-12)
    a[np.diag_indices_from(a)] += lam * diag
    try:
        with warnings.catch_warnings():
            # Near-singular normal equations are exactly the case this
            # fallback exists for; the damping ladder retries with more
            # regularization if the step is useless.
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(a, -g, assume_a="pos")
    except scipy.linalg.LinAlgError:
        return scipy.linalg.lstsq(a, -g, cond=1e-12,
                                  lapack_driver="gelsy")[0]


def _newton_stage(z: np.ndarray, layout: Layout, problem: OcProblem,
                  cfg: ShootingConfig, model: WipModel, eps: float,
                  tol: float):
    """Drive the residual below tol (infinity norm) from warm start z.

    Damped Newton: full step first, halved until the squared residual
    decreases.  The Jacobian is the dominant cost, so a healthy full-step
    iteration keeps it for a few more steps (modified Newton); any damping
    or slowdown forces a rebuild before giving up on the direction.
    Returns (z, r, cache, converged, iterations).
    """
    try:
        r, cache = _residual_cached(z, layout, problem, model, eps)
    except IntegratorFailure as err:
        log.debug("warm start infeasible: %s", err)
        return z, None, None, False, 0
    it = 0
    stalls = 0
    jac = None
    jac_age = 0
    while it < cfg.max_outer_iters:
        norm = float(np.max(np.abs(r)))
        if norm <= tol:
            return z, r, cache, True, it
        if jac is None:
            jac = _fd_jacobian(z, r, cache, layout, problem, cfg, model,
                               eps)
            jac_age = 0
        delta = _newton_direction(jac, r)
        sq0 = float(r @ r)
        # Damped Newton first: full step, halved on failure.
        t = 1.0
        cand = None                     # (z, r, cache, sq, label)
        for _ in range(8):
            try:
                r_try, cache_try = _residual_cached(z + t * delta, layout,
                                                    problem, model, eps)
            except IntegratorFailure:
                t *= 0.5
                continue
            if float(r_try @ r_try) < sq0:
                cand = (z + t * delta, r_try, cache_try,
                        float(r_try @ r_try), t)
                break
            t *= 0.5
        if cand is None or t <= 1.0 / 16.0:
            # The Newton direction needed heavy damping (or failed
            # outright), the signature of a near-singular Jacobian: try a
            # Levenberg-Marquardt step from the same point, escalating the
            # damping until the residual decreases, and keep whichever
            # candidate made more progress.
            lam = 1e-6
            while lam <= 1e6:
                delta_lm = _lm_direction(jac, r, lam)
                try:
                    r_try, cache_try = _residual_cached(z + delta_lm, layout,
                                                        problem, model, eps)
                except IntegratorFailure:
                    lam *= 10.0
                    continue
                sq = float(r_try @ r_try)
                if sq < sq0 and (cand is None or sq < cand[3]):
                    cand = (z + delta_lm, r_try, cache_try, sq, -lam)
                if sq < sq0:
                    break
                lam *= 10.0
        accepted = cand is not None
        if accepted:
            z, r, cache, _, t = cand
        it += 1
        log.debug("newton it=%d eps=%.1e |r|=%.3e step=%.4f accepted=%s "
                  "jac_age=%d", it, eps, float(np.max(np.abs(r))), t,
                  accepted, jac_age)
        if not accepted:
            if jac_age > 0:
                jac = None          # retry this point with a fresh Jacobian
                continue
            return z, r, cache, float(np.max(np.abs(r))) <= tol, it
        jac_age += 1
        # Keep a Jacobian only while it delivers undamped steps with a
        # solid contraction; anything less and the next iteration rebuilds.
        if not (t == 1.0 and float(r @ r) < 0.25 * sq0
                and jac_age <= cfg.max_jacobian_reuse):
            jac = None
        # Bail out early when the iteration is only creeping: continuation
        # with a smaller step is cheaper than grinding a bad warm start.
        stalls = stalls + 1 if float(r @ r) > cfg.stall_ratio * sq0 else 0
        if stalls >= cfg.stall_iters:
            return z, r, cache, float(np.max(np.abs(r))) <= tol, it
    return z, r, cache, float(np.max(np.abs(r))) <= tol, it


# ---------------------------------------------------------------------------
# Continuation drivers


def _interp_pose(a: se2.GroupElement, b: se2.GroupElement,
                 u: float) -> se2.GroupElement:
    """Point at fraction u of the constant-twist arc from a to b.

    The arc keeps the heading tangent to a constant-curvature path, so
    every intermediate pose is reachable by plain rolling; interpolating
    x/y/theta independently instead produces intermediate targets offset
    sideways from the start pose, which the nonholonomic vehicle can only
    reach through expensive parallel-parking motions.  The heading uses the
    cover difference, so multi-revolution targets wind the intended way.
    """
    dth = b.theta - a.theta
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    dx = ca * (b.x - a.x) + sa * (b.y - a.y)
    dy = -sa * (b.x - a.x) + ca * (b.y - a.y)
    half = 0.5 * dth
    if abs(dth) < 1e-8 or abs(math.sin(half)) < 1e-8:
        # straight segment, or a whole number of turns (the screw is
        # degenerate there): blend the translation linearly
        tx, ty = u * dx, u * dy
    else:
        # twist (w1, w2) with exp translation V(dth) (w1, w2) = (dx, dy),
        # using V(t) = (2 sin(t/2) / t) R(t/2)
        scale = dth / (2.0 * math.sin(half))
        ch, sh = math.cos(half), math.sin(half)
        w1 = scale * (ch * dx + sh * dy)
        w2 = scale * (-sh * dx + ch * dy)
        uh = u * half
        f = 2.0 * math.sin(uh) / dth
        tx = f * (math.cos(uh) * w1 - math.sin(uh) * w2)
        ty = f * (math.sin(uh) * w1 + math.cos(uh) * w2)
    return se2.GroupElement(a.x + ca * tx - sa * ty,
                            a.y + sa * tx + ca * ty,
                            a.theta + u * dth)


def _anchor_rollout(problem: OcProblem, model: WipModel) -> list:
    """Zero-torque trajectory of the anchor problem: the requested initial
    state with the tilt and tilt rate zeroed.  Upright straight rolling at
    constant wheel speed is an exact relative equilibrium, so this rollout
    exists for any boundary data and solves the u=0 problem of the homotopy
    with zero torques and zero costates.

    Raises:
        IntegratorFailure: never expected; kept for defensive propagation.
    """
    g0, s0, v0 = problem.initial
    x0 = NodeState(g=g0, s=np.array([0.0, s0.phi1, s0.phi2]),
                   v=np.array([0.0, v0.v_phi1, v0.v_phi2]))
    icfg = IntegratorConfig(h=problem.h)
    return rollout(x0, np.zeros((problem.N, 2)), icfg, model)


def _interp_problem(problem: OcProblem, u: float,
                    anchor_end: NodeState) -> OcProblem:
    """Morph from the freely rolling anchor problem (u=0) to the requested
    one (u=2), pose first.

    The initial wheel speeds are kept at their true values for every u (the
    lateral direction is only controllable through heading changes at
    speed, so intermediate problems must not grind to a halt).  The morph
    runs in two phases: u in [0, 1] carries the final pose from the anchor
    end to the requested pose while the final tilt and rates stay at their
    rolling-compatible anchor values; u in [1, 2] then blends the initial
    tilt state and the final tilt/rate targets to the requested ones.
    Blending everything at once puts a fold in the solution path of hard
    transfer legs (the continuation stalls part-way regardless of step
    size); splitting the phases routes around it.
    """
    g0, s0, v0 = problem.initial
    w = min(max(u - 1.0, 0.0), 1.0)     # velocity/tilt phase
    p = min(u, 1.0)                     # pose phase
    init_u = (g0, BaseState(w * s0.alpha, s0.phi1, s0.phi2),
              BaseVelocity(w * v0.v_alpha, v0.v_phi1, v0.v_phi2))
    fv = problem.final_v
    ev = anchor_end.v
    return replace(
        problem,
        initial=init_u,
        final_g=_interp_pose(anchor_end.g, problem.final_g, p),
        final_alpha=(1.0 - w) * anchor_end.s[0] + w * problem.final_alpha,
        final_v=BaseVelocity(
            (1.0 - w) * ev[0] + w * fv.v_alpha,
            (1.0 - w) * ev[1] + w * fv.v_phi1,
            (1.0 - w) * ev[2] + w * fv.v_phi2,
        ),
    )


def _interior_multiplier(eps: float, slack: float) -> float:
    """Value making the smoothed complementarity row vanish at given slack."""
    return -eps * eps / (2.0 * slack) if slack > 0 else 0.0


def _initial_guess(problem: OcProblem, layout: Layout, eps: float,
                   anchor: list) -> np.ndarray:
    """Planted solution of the u=0 problem: states off the zero-torque
    anchor rollout, zero costates, interior multipliers."""
    z = np.zeros(layout.n)
    for s in range(1, layout.S):
        layout.pack_state(z, s, anchor[layout.starts[s]])
    b = problem.bounds
    for k in range(1, layout.N):
        x = anchor[k]
        beta = np.array([
            _interior_multiplier(eps, b.nu**2 - x.v[j]**2) for j in range(3)
        ])
        layout.pack_mult(z, k, Multipliers(
            sigma=_interior_multiplier(eps, b.a**2 - x.s[0]**2), beta=beta))
    return z


def _rewarm_multipliers(z: np.ndarray, layout: Layout, cache: _Cache,
                        bounds: Bounds, eps_old: float,
                        eps_new: float) -> np.ndarray:
    """Reset clearly-inactive multipliers to their interior value at the new
    smoothing level; active ones are kept for the warm start."""
    z = z.copy()
    for k in range(1, layout.N):
        x = cache.node_state(layout, k)
        m = layout.unpack_mult(z, k)
        slack_a = bounds.a**2 - x.s[0]**2
        sigma = (_interior_multiplier(eps_new, slack_a)
                 if slack_a > 10.0 * eps_old else m.sigma)
        beta = m.beta.copy()
        for j in range(3):
            slack_v = bounds.nu**2 - x.v[j]**2
            if slack_v > 10.0 * eps_old:
                beta[j] = _interior_multiplier(eps_new, slack_v)
        layout.pack_mult(z, k, Multipliers(sigma=sigma, beta=beta))
    return z


def solve(problem: OcProblem, cfg: ShootingConfig,
          model: WipModel) -> SolveReport:
    """Solve the two-point boundary value problem end to end.

    Runs the boundary homotopy at the coarsest smoothing level, then the
    smoothing continuation, then a final polish to cfg.tol_residual.  On
    failure returns the best iterate with converged=False.
    """
    layout = assemble_unknowns(problem, cfg)
    eps0 = cfg.eps_schedule[0]
    try:
        anchor = _anchor_rollout(problem, model)
    except IntegratorFailure as err:  # pragma: no cover - defensive
        return SolveReport(False, 0, math.inf, math.nan, [], [],
                           np.zeros((0, 2)), [], {}, layout.starts,
                           cfg.tol_residual, f"anchor rollout failed: {err}")
    z = _initial_guess(problem, layout, eps0, anchor)
    total_iters = 0
    stage_tol = max(cfg.stage_tol, cfg.tol_residual)

    def fail_report(msg, z_best, eps):
        try:
            r, cache = _residual_cached(z_best, layout, problem, model, eps)
            rep = _build_report(z_best, r, cache, layout, problem, cfg,
                                model, total_iters, converged=False)
        except IntegratorFailure as err:
            rep = SolveReport(False, total_iters, math.inf, math.nan, [], [],
                              np.zeros((0, 2)), [], {}, layout.starts,
                              cfg.tol_residual, f"{msg}; {err}")
            return rep
        rep.message = msg
        return rep

    # Stage 1: homotopy from the rest-to-rest problem to the requested one
    # (u in [0, 2]: pose phase then velocity/tilt phase).
    u, du = 0.0, 1.0
    u_prev, z_prev = None, None
    while u < 2.0:
        u_try = min(2.0, u + du)
        prob_u = _interp_problem(problem, u_try, anchor[-1])
        # Secant predictor: extrapolate the last two converged solutions to
        # the new continuation point (capped so a doubled step cannot fling
        # the guess far off the path); fall back to the plain warm start if
        # the predicted guess does not converge.
        guesses = [z]
        if z_prev is not None and u > u_prev:
            f = min((u_try - u) / (u - u_prev), 2.0)
            guesses.insert(0, z + f * (z - z_prev))
        ok = False
        for z_guess in guesses:
            z_new, r, cache, ok, it = _newton_stage(
                z_guess, layout, prob_u, cfg, model, eps0, stage_tol)
            total_iters += it
            log.debug("homotopy u=%.4f ok=%s iters=%d", u_try, ok, it)
            if ok:
                break
        if ok:
            u_prev, z_prev = u, z
            u, z = u_try, z_new
            du = min(2.0 * du, 1.0)
        else:
            du *= 0.5
            if du < cfg.homotopy_min_step:
                return fail_report(
                    f"boundary homotopy stalled at u={u:.3f}", z, eps0)

    # Stage 2: smoothing continuation.
    eps_prev = eps0
    for eps in cfg.eps_schedule[1:]:
        _, cache = _residual_cached(z, layout, problem, model, eps_prev)
        z = _rewarm_multipliers(z, layout, cache, problem.bounds, eps_prev,
                                eps)
        z_new, r, cache, ok, it = _newton_stage(
            z, layout, problem, cfg, model, eps, stage_tol)
        total_iters += it
        log.debug("continuation eps=%.1e ok=%s iters=%d", eps, ok, it)
        z = z_new
        if not ok:
            return fail_report(
                f"smoothing continuation stalled at eps={eps:.1e}", z, eps)
        eps_prev = eps

    # Stage 3: polish at the final smoothing level.
    eps_min = cfg.eps_schedule[-1]
    z, r, cache, ok, it = _newton_stage(
        z, layout, problem, cfg, model, eps_min, cfg.tol_residual)
    total_iters += it
    if not ok or r is None:
        return fail_report("final polish did not reach tolerance", z, eps_min)
    return _build_report(z, r, cache, layout, problem, cfg, model,
                         total_iters, converged=True)


def _build_report(z, r, cache, layout: Layout, problem: OcProblem,
                  cfg: ShootingConfig, model: WipModel, iterations: int,
                  converged: bool) -> SolveReport:
    trajectory, costates, torques = [], [], []
    for s in range(layout.S):
        last = s == layout.S - 1
        trajectory.extend(cache.xs[s][:-1] if not last else cache.xs[s])
        costates.extend(cache.cs[s][:-1] if not last else cache.cs[s])
        torques.extend(cache.taus[s])
    torques = np.array(torques).reshape(layout.N, 2)
    multipliers = [layout.unpack_mult(z, k) for k in range(1, layout.N)]
    h, b = problem.h, problem.bounds
    cost = 0.5 * h * float(np.sum(torques**2))

    n_nodes = layout.N + 1
    tilt_active = np.zeros(n_nodes, dtype=bool)
    rate_active = np.zeros((n_nodes, 3), dtype=bool)
    for k in range(1, layout.N):
        m = multipliers[k - 1]
        x = trajectory[k]
        tilt_active[k] = (-m.sigma > 1e-6) or (b.a - abs(x.s[0]) < 1e-8)
        for j in range(3):
            rate_active[k, j] = ((-m.beta[j] > 1e-6)
                                 or (b.nu - abs(x.v[j]) < 1e-8))
    torque_active = np.abs(torques) >= b.mu - 1e-12
    active_sets = {"tilt": tilt_active, "rate": rate_active,
                   "torque": torque_active}
    return SolveReport(
        converged=converged,
        iterations=iterations,
        final_residual=float(np.max(np.abs(r))),
        cost=cost,
        trajectory=trajectory,
        costates=costates,
        torques=torques,
        multipliers=multipliers,
        active_sets=active_sets,
        segment_starts=layout.starts,
        tol_residual=cfg.tol_residual,
    )


# ---------------------------------------------------------------------------
# Independent validation


def validate_report(report: SolveReport, problem: OcProblem,
                    model: WipModel) -> list:
    """Re-check every optimality and feasibility condition from the report
    data alone; returns a list of human-readable violations (empty if the
    report stands up)."""
    violations = []
    n_steps = problem.N
    b = problem.bounds
    if len(report.trajectory) != n_steps + 1:
        return [f"trajectory has {len(report.trajectory)} nodes, expected "
                f"{n_steps + 1}"]

    # Deterministic re-simulation per shooting segment.
    icfg = IntegratorConfig(h=problem.h)
    starts = report.segment_starts
    for s in range(len(starts) - 1):
        k0, k1 = starts[s], starts[s + 1]
        try:
            resim = rollout(report.trajectory[k0],
                            report.torques[k0:k1], icfg, model)
        except IntegratorFailure as err:
            violations.append(f"segment {s} does not re-simulate: {err}")
            continue
        for k in range(k0, k1 + 1):
            x, y = resim[k - k0], report.trajectory[k]
            dev = max(np.max(np.abs(x.s - y.s)), np.max(np.abs(x.v - y.v)),
                      abs(x.g.x - y.g.x), abs(x.g.y - y.g.y),
                      abs(x.g.theta - y.g.theta))
            # segment-boundary states agree with the re-simulation only to
            # the matching tolerance the root-finder was asked for
            if dev > max(1e-10, 10.0 * report.tol_residual):
                violations.append(
                    f"stored state at node {k} deviates from re-simulation "
                    f"by {dev:.2e}")
                break

    for k, x in enumerate(report.trajectory):
        if abs(x.s[0]) > b.a + 1e-8:
            violations.append(f"tilt bound violated at node {k}: "
                              f"{x.s[0]:.6f}")
        if np.max(np.abs(x.v)) > b.nu + 1e-8:
            violations.append(f"rate bound violated at node {k}")
    for k in range(n_steps):
        if np.max(np.abs(report.torques[k])) > b.mu + 1e-12:
            violations.append(f"torque bound violated at step {k}")
    # Multiplier signs hold only as tightly as the root-finder converged.
    sign_tol = max(1e-12, 10.0 * report.tol_residual)
    for k, m in enumerate(report.multipliers, start=1):
        if m.sigma > sign_tol or np.max(m.beta) > sign_tol:
            violations.append(f"multiplier sign violated at node {k}")

    # Boundary rows.
    g0, s0, v0 = problem.initial
    x0, xn = report.trajectory[0], report.trajectory[-1]
    bres = max(np.max(np.abs(_pose_defect(x0.g, g0))),
               np.max(np.abs(x0.s - s0.as_array())),
               np.max(np.abs(x0.v - v0.as_array())),
               np.max(np.abs(_pose_defect(xn.g, problem.final_g))),
               abs(xn.s[0] - problem.final_alpha),
               np.max(np.abs(xn.v - problem.final_v.as_array())))
    if bres > 1e-6:
        violations.append(f"boundary residual {bres:.2e} exceeds 1e-6")

    if report.converged:
        try:
            kkt = kkt_residual(report.trajectory, report.costates,
                               report.multipliers, report.torques, problem,
                               model)
        except Exception as err:  # pragma: no cover - diagnostic path
            violations.append(f"optimality recheck failed to run: {err}")
        else:
            if kkt > 10.0 * report.tol_residual:
                violations.append(
                    f"optimality residual {kkt:.2e} exceeds "
                    f"{10.0 * report.tol_residual:.2e}")
    return violations
