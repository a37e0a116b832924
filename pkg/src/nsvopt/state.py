"""Discrete state equation: implicit march with the Voigt term.

Each step solves the nonlinear saddle-point system

    M (y_n - y_{n-1}) + nu tau_n K y_n + alpha^2 K (y_n - y_{n-1})
      + tau_n c(y_n, y_n, .) + tau_n B^T p_n = Load_n,     B y_n = 0,

by Newton's method with warm start from the previous step and a
frozen-convection (Picard) fallback.  Loads average the control over
the interval: exactly for cellwise-constant controls, by per-interval
Gauss quadrature for callbacks.  No coupling between tau and h is
assumed anywhere.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import assemble as asm
from .errors import SolverError
from .projections import ProjectionContext, project_ph
from .quadrature import gauss_interval
from .space import FeFunction

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    """Nonlinear/linear solve controls.

    ``picard_after`` counts Newton iterations with non-decreasing
    residual before the step falls back to the frozen-convection
    operator; ``force_picard`` skips Newton entirely (used to study the
    fallback).  Residuals are Euclidean norms of the free velocity dofs
    of the momentum residual scaled by 1/tau_n.
    """

    newton_max: int = 25
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    picard_after: int = 2
    picard_max: int = 200
    force_picard: bool = False
    time_quad_points: int = 2


class StateTrajectory:
    """Snapshots y_0, ..., y_N with y(t) = y_n on (t_{n-1}, t_n].

    ``pressures[n]`` holds the saddle multiplier of step n (index 0 is
    None); it is exposed as a discrete pressure without an accuracy
    claim of its own.
    """

    def __init__(self, grid, space, snapshots, pressures=None, diagnostics=None):
        self.grid = grid
        self.space = space
        self.snapshots = snapshots
        self.pressures = pressures if pressures is not None else [None] * len(snapshots)
        self.diagnostics = diagnostics or []

    def on_interval(self, n):
        """Value on (t_{n-1}, t_n], n = 1..N."""
        if not 1 <= n <= self.grid.num_steps:
            raise IndexError("interval index out of range")
        return self.snapshots[n]

    def at_node(self, n):
        return self.snapshots[n]

    @property
    def num_steps(self):
        return self.grid.num_steps

    def function(self, n):
        return FeFunction(self.space, self.snapshots[n], self.pressures[n])


def projection_context(space, alpha):
    """Shared Voigt-projection context, cached per (space, alpha)."""
    key = ("projection_ctx", float(alpha))
    ctx = space._cache.get(key)
    if ctx is None:
        ctx = ProjectionContext(space, alpha)
        space._cache[key] = ctx
    return ctx


def initial_state(data, space):
    """y_{0,h}: divergence-free projection of the initial velocity."""
    if data.y0 is None:
        return np.zeros(space.n_vel)
    ctx = projection_context(space, data.alpha)
    return project_ph(ctx, data.y0).velocity


def interval_load(space, u, grid, n, nq_time=2):
    """Integral of (u(t), phi) over interval n (1-based).

    Cellwise-constant controls integrate exactly; callbacks use
    ``nq_time``-point Gauss in time.
    """
    if u is None:
        return np.zeros(space.n_vel)
    if hasattr(u, "interval_load"):
        return u.interval_load(space, n)
    t0, t1 = grid.nodes[n - 1], grid.nodes[n]
    ts, ws = gauss_interval(nq_time, t0, t1)
    out = np.zeros(space.n_vel)
    for t, w in zip(ts, ws):
        out += w * asm.load_mass(space, u, t)
    return out


class _StepSystems:
    """Per-solve cache of constant step blocks keyed by tau."""

    def __init__(self, space, nu, alpha):
        self.space = space
        self.nu = nu
        self.alpha2 = alpha ** 2
        ops = asm.operators(space)
        self.M = ops.M
        self.K = ops.K
        self.B = ops.B
        self._const = {}

    def const_block(self, tau):
        A = self._const.get(tau)
        if A is None:
            A = (self.M + (self.nu * tau + self.alpha2) * self.K).tocsr()
            self._const[tau] = A
        return A

    def momentum_residual(self, tau, y, y_prev, p, load):
        conv = asm.assemble_convection(self.space, y, "state")
        r = (self.M @ (y - y_prev) + (self.nu * tau) * (self.K @ y)
             + self.alpha2 * (self.K @ (y - y_prev))
             + tau * (conv @ y) + tau * (self.B.T @ p) - load)
        r[self.space.dirichlet_vel] = 0.0
        return r


def _step_solve(systems, space, grid, n, y_prev, load, y_guess, p_guess, opts):
    """One nonlinear step; returns (y, p, s, diagnostics)."""
    tau = float(grid.steps[n - 1])
    A_const = systems.const_block(tau)
    B = asm.operators(space).B
    mean = asm.operators(space).mean_vec

    y = y_guess.copy()
    p = p_guess.copy()
    s = 0.0
    mode = "picard" if opts.force_picard else "newton"
    history = []
    fails = 0
    res0 = None
    max_iter = opts.picard_max if opts.force_picard else opts.newton_max

    for it in range(max_iter + 1):
        r_mom = systems.momentum_residual(tau, y, y_prev, p, load)
        res = float(np.linalg.norm(r_mom)) / tau
        history.append(res)
        if res0 is None:
            res0 = res
        if res <= max(opts.abs_tol, opts.rel_tol * res0):
            return y, p, s, {"step": n, "method": mode, "iterations": it,
                             "residuals": history}
        if it == max_iter:
            break
        if mode == "newton" and len(history) > 1 and history[-1] >= history[-2]:
            fails += 1
            if fails >= opts.picard_after:
                log.debug("step %d: Newton stalled, switching to Picard", n)
                mode = "picard"
                max_iter = opts.picard_max

        conv_mode = "state" if mode == "picard" else "state_jacobian"
        Lc = asm.assemble_convection(space, y, conv_mode)
        try:
            solver = asm.SaddleSolver(space, A_const + tau * Lc, bt_scale=tau)
        except SolverError:
            if mode == "picard":
                raise
            log.debug("step %d: singular Jacobian, switching to Picard", n)
            mode = "picard"
            max_iter = opts.picard_max
            Lc = asm.assemble_convection(space, y, "state")
            solver = asm.SaddleSolver(space, A_const + tau * Lc, bt_scale=tau)

        r_div = B @ y + mean * s
        r_mean = float(mean @ p)
        dy, dp, ds = solver.solve(-r_mom, -r_div, rhs_mean=-r_mean)
        y = y + dy
        p = p + dp
        s = s + ds

    raise SolverError(
        "step {} did not converge after {} iterations (residual {:.3e})".format(
            n, max_iter, history[-1]), step=n, history=history)


def solve_state(data, space, grid, u, opts=None):
    """March the discrete state equation; returns a StateTrajectory.

    ``u`` is a Control, a callback ``u(x, t)``, or None (zero control).
    """
    opts = opts or SolverOptions()
    systems = _StepSystems(space, data.nu, data.alpha)
    y0 = initial_state(data, space)
    snapshots = [y0]
    pressures = [None]
    diags = []
    y_prev = y0
    p_prev = np.zeros(space.n_pre)
    for n in range(1, grid.num_steps + 1):
        load = interval_load(space, u, grid, n, opts.time_quad_points)
        load[space.dirichlet_vel] = 0.0
        y, p, _, diag = _step_solve(systems, space, grid, n, y_prev, load,
                                    y_prev, p_prev, opts)
        log.debug("state step %d: %s iters=%d res=%.3e", n, diag["method"],
                  diag["iterations"], diag["residuals"][-1])
        snapshots.append(y)
        pressures.append(p)
        diags.append(diag)
        y_prev, p_prev = y, p
    return StateTrajectory(grid, space, snapshots, pressures, diags)


def newton_step_state(space, data, grid, n, y_prev, rhs, y_guess):
    """Single Newton update of step n from ``y_guess``.

    ``rhs`` is the interval-integrated load vector.  The saddle system
    uses the exact convection Jacobian; the updated pressure rides along
    in the returned FeFunction.
    """
    systems = _StepSystems(space, data.nu, data.alpha)
    tau = float(grid.steps[n - 1])
    yg = y_guess.velocity if isinstance(y_guess, FeFunction) else y_guess
    yp = y_prev.velocity if isinstance(y_prev, FeFunction) else y_prev
    load = np.array(rhs, dtype=float)
    load[space.dirichlet_vel] = 0.0
    p = np.zeros(space.n_pre)
    r_mom = systems.momentum_residual(tau, yg, yp, p, load)
    Lc = asm.assemble_convection(space, yg, "state_jacobian")
    solver = asm.SaddleSolver(space,
                              systems.const_block(tau) + tau * Lc, bt_scale=tau)
    ops = asm.operators(space)
    dy, dp, _ = solver.solve(-r_mom, -(ops.B @ yg))
    return FeFunction(space, yg + dy, p + dp)


def solve_linearized_state(data, space, grid, base, v, opts=None):
    """Derivative of the control-to-state map applied to direction v.

    Linear forward march with the convection couplings frozen at the
    base trajectory; z_0 = 0.
    """
    opts = opts or SolverOptions()
    systems = _StepSystems(space, data.nu, data.alpha)
    z_prev = np.zeros(space.n_vel)
    snapshots = [z_prev]
    pressures = [None]
    for n in range(1, grid.num_steps + 1):
        tau = float(grid.steps[n - 1])
        y_n = base.snapshots[n]
        load = interval_load(space, v, grid, n, opts.time_quad_points)
        rhs = systems.M @ z_prev + systems.alpha2 * (systems.K @ z_prev) + load
        Lc = asm.assemble_convection(space, y_n, "state_jacobian")
        solver = asm.SaddleSolver(space,
                                  systems.const_block(tau) + tau * Lc,
                                  bt_scale=tau)
        z, pi, _ = solver.solve(rhs)
        snapshots.append(z)
        pressures.append(pi)
        z_prev = z
    return StateTrajectory(grid, space, snapshots, pressures)
