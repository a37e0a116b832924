"""Backward adjoint march, objective evaluation and control gradient.

The terminal snapshot solves the Voigt-inner-product system (same
matrix as the divergence-free projection); each backward step solves
the transpose of the state step's convection linearization.  Tracking
integrals use the same per-interval Gauss rule as the state loads, so
the discrete duality identity, and hence the gradient, hold to solver
precision rather than quadrature error.
"""

import logging

import numpy as np

from . import assemble as asm
from .errors import SolverError
from .projections import project_ph
from .quadrature import gauss_interval
from .space import FeFunction
from .state import _StepSystems, projection_context

log = logging.getLogger(__name__)

TIME_QUAD_POINTS = 2


class AdjointTrajectory:
    """Backward snapshots lam_1, ..., lam_{N+1}.

    The trajectory reads lam(t) = lam_n on (t_{n-1}, t_n) and
    lam(t_n) = lam_{n+1}; ``lam(n)`` returns snapshot n with the
    1-based paper indexing. ``multipliers`` holds the per-step
    pressure-like fields, with the terminal entry last.
    """

    def __init__(self, grid, space, snapshots, multipliers=None):
        self.grid = grid
        self.space = space
        self.snapshots = snapshots          # snapshots[k] = lam_{k+1}, k=0..N
        self.multipliers = multipliers

    def lam(self, n):
        if not 1 <= n <= self.grid.num_steps + 1:
            raise IndexError("adjoint index out of range")
        return self.snapshots[n - 1]

    def on_interval(self, n):
        return self.lam(n)

    def at_node(self, n):
        return self.snapshots[n]

    def function(self, n):
        return FeFunction(self.space, self.lam(n))


def _tracking_loads(data, space, grid):
    """Per-interval Gauss data for the distributed target.

    Returns a list over intervals of (times, weights, loads, target_sq)
    where loads[g] pairs y_Q(t_g) with the velocity basis and target_sq
    integrates |y_Q(t_g)|^2.  None when no distributed target is set.
    Cached on the space; the cache key ties to the grid and data
    objects, which share the space's lifetime in every driver here.
    """
    if data.yQ is None:
        return None
    key = ("yq_loads", id(grid), id(data.yQ), grid.num_steps)
    cached = space._cache.get(key)
    if cached is not None:
        return cached
    out = []
    for n in range(1, grid.num_steps + 1):
        ts, ws = gauss_interval(TIME_QUAD_POINTS,
                                grid.nodes[n - 1], grid.nodes[n])
        loads = [asm.load_mass(space, data.yQ, t) for t in ts]
        sq = [asm.integral_vector_sq(space, data.yQ, t) for t in ts]
        out.append((ts, ws, loads, sq))
    space._cache[key] = out
    return out


def terminal_target(data, space):
    """y_T^h: divergence-free projection of the terminal target.

    Satisfies the discrete-target conditions (L2 distance O(h), bounded
    H1 norm) whenever the target itself is smooth and solenoidal.
    """
    if data.yT is None:
        return np.zeros(space.n_vel)
    ctx = projection_context(space, data.alpha)
    return project_ph(ctx, data.yT).velocity


def solve_adjoint(data, space, grid, state, yT_h=None):
    """Solve the backward linearized system along a state trajectory.

    ``yT_h`` overrides the discrete terminal target (coefficients or
    FeFunction); by default the projection of ``data.yT`` is used.
    """
    if state.grid is not grid and state.grid.num_steps != grid.num_steps:
        raise ValueError("state trajectory does not match the time grid")
    ops = asm.operators(space)
    systems = _StepSystems(space, data.nu, data.alpha)
    if yT_h is None:
        yTh = terminal_target(data, space)
    else:
        yTh = yT_h.velocity if isinstance(yT_h, FeFunction) else np.asarray(yT_h)

    N = grid.num_steps
    multipliers = [None] * (N + 1)
    if data.alpha_T != 0.0:
        rhs = data.alpha_T * (ops.M @ (state.snapshots[N] - yTh))
        ctx = projection_context(space, data.alpha)
        lam_next, r_mult, _ = ctx.solve(rhs)
        multipliers[N] = r_mult
    else:
        lam_next = np.zeros(space.n_vel)

    snapshots = [None] * (N + 1)
    snapshots[N] = lam_next
    tracking = _tracking_loads(data, space, grid)

    for n in range(N, 0, -1):
        tau = float(grid.steps[n - 1])
        y_n = state.snapshots[n]
        rhs = systems.M @ lam_next + systems.alpha2 * (systems.K @ lam_next)
        if data.alpha_Q != 0.0:
            rhs = rhs + data.alpha_Q * tau * (systems.M @ y_n)
            if tracking is not None:
                _, ws, loads, _ = tracking[n - 1]
                for w, b in zip(ws, loads):
                    rhs = rhs - data.alpha_Q * w * b
        conv = asm.assemble_convection(space, y_n, "adjoint")
        solver = asm.SaddleSolver(space,
                                  systems.const_block(tau) + tau * conv,
                                  bt_scale=tau)
        lam, q, _ = solver.solve(rhs)
        snapshots[n - 1] = lam
        multipliers[n - 1] = q
        lam_next = lam
    return AdjointTrajectory(grid, space, snapshots, multipliers)


def objective(data, space, grid, state, u):
    """Discrete cost: terminal + distributed tracking + control energy."""
    ops = asm.operators(space)
    J = 0.0
    if data.alpha_T != 0.0:
        diff = state.snapshots[grid.num_steps] - terminal_target(data, space)
        J += 0.5 * data.alpha_T * float(diff @ (ops.M @ diff))
    if data.alpha_Q != 0.0:
        tracking = _tracking_loads(data, space, grid)
        for n in range(1, grid.num_steps + 1):
            y_n = state.snapshots[n]
            yMy = float(y_n @ (ops.M @ y_n))
            if tracking is None:
                J += 0.5 * data.alpha_Q * float(grid.steps[n - 1]) * yMy
            else:
                _, ws, loads, sq = tracking[n - 1]
                for w, b, c in zip(ws, loads, sq):
                    J += 0.5 * data.alpha_Q * w * (yMy - 2.0 * float(y_n @ b) + c)
    J += 0.5 * data.gamma * _control_energy(space, grid, u)
    return J


def _control_energy(space, grid, u):
    if u is None:
        return 0.0
    if hasattr(u, "norm_sq"):
        return u.norm_sq()
    total = 0.0
    for n in range(1, grid.num_steps + 1):
        ts, ws = gauss_interval(TIME_QUAD_POINTS,
                                grid.nodes[n - 1], grid.nodes[n])
        for t, w in zip(ts, ws):
            total += w * asm.integral_vector_sq(space, u, t)
    return total


def gradient(data, space, grid, state, adjoint, u):
    """Riesz representative of the cost derivative on the control space.

    Entry (n, K, j): cell average of adjoint component j on interval n
    plus gamma times the control value.  Returns an array shaped like
    ``u.values``.
    """
    ops = asm.operators(space)
    vols = space.mesh.cell_volumes
    values = u.values if hasattr(u, "values") else np.asarray(u)
    N, nc, dim = values.shape
    if N != grid.num_steps or nc != space.mesh.num_cells or dim != space.dim:
        raise ValueError("control shape does not match grid/mesh")
    g = data.gamma * values.copy()
    for n in range(1, N + 1):
        lam = adjoint.lam(n)
        for c in range(dim):
            comp = space.component(lam, c)
            g[n - 1, :, c] += (ops.cell_load.T @ comp) / vols
    return g
