"""Elliptic and time-sampling projections onto the discrete spaces.

``project_ph`` is the (u,v) + alpha^2 (grad u, grad v)-orthogonal
projection onto the discretely divergence-free subspace, realized as a
saddle-point solve with the divergence multiplier and a pressure
zero-mean row.  ``project_rh`` reuses the same factorization: its
right-hand side pairs the input pressure with div of the velocity test
functions and the pressure component of the solution is returned.
``project_time`` samples a time-dependent field at interval endpoints
(right endpoints for the forward trajectory convention, left endpoints
for the reversed one used by the adjoint).
"""

import logging

import numpy as np

from . import assemble as asm
from .space import FeFunction

log = logging.getLogger(__name__)


class ProjectionContext:
    """Factorized Voigt-inner-product saddle system for one space.

    Immutable after construction; solves against it may run
    concurrently.  The same factorization serves the velocity
    projection, the pressure projection and the terminal solve of the
    backward (adjoint) march, all of which share the system matrix.
    """

    def __init__(self, space, alpha):
        if alpha == 0.0:
            raise ValueError("alpha must be nonzero")
        self.space = space
        self.alpha = float(alpha)
        self.solver = asm.SaddleSolver(space, asm.assemble_a_alpha(space, alpha))
        self._ops = asm.operators(space)

    def solve(self, rhs_vel, rhs_div=None):
        """Raw saddle solve; returns (velocity, pressure, mean multiplier)."""
        return self.solver.solve(rhs_vel, rhs_div)

    def _rhs_from(self, y, t=None):
        space, alpha = self.space, self.alpha
        if isinstance(y, FeFunction):
            y = y.velocity
        if isinstance(y, np.ndarray):
            ops = self._ops
            return ops.M @ y + alpha ** 2 * (ops.K @ y)
        value, grad = _value_grad(y)
        return asm.load_a_alpha(space, value, grad, alpha, t)


def _value_grad(y):
    """Accept an object with .value/.grad or a (value, grad) pair."""
    if hasattr(y, "value") and hasattr(y, "grad"):
        return y.value, y.grad
    try:
        value, grad = y
    except (TypeError, ValueError):
        raise TypeError(
            "analytic input must provide both values and gradients "
            "(object with .value/.grad or a (value, grad) pair); the "
            "Voigt pairing needs grad")
    return value, grad


def project_ph(ctx, y, t=None):
    """Voigt-orthogonal projection onto the divergence-free subspace.

    Parameters
    ----------
    ctx : ProjectionContext
    y : FeFunction, coefficient vector, or analytic field
        Analytic fields must expose values and gradients (see
        :func:`_value_grad`); they are consumed through quadrature
        points, not interpolated first.
    t : float, optional
        Time passed through to time-dependent callbacks.

    Returns
    -------
    FeFunction with the discrete divergence constraint enforced.
    """
    vel, _, _ = ctx.solve(ctx._rhs_from(y, t))
    return FeFunction(ctx.space, vel)


def project_rh(ctx, p, t=None):
    """Pressure projection; returns a pressure-only FeFunction.

    A nonzero mean of the input is removed first (the projection is
    defined on zero-mean data) and logged.
    """
    space = ctx.space
    mean = asm.integral_scalar(space, p, t) / space.mesh.volume
    if mean != 0.0:
        log.debug("project_rh: removed input mean %.3e", mean)

    def shifted(x, tt=None):
        vals = p(x) if t is None and tt is None else p(x, t if tt is None else tt)
        return np.asarray(vals, dtype=float) - mean

    rhs = asm.load_div(space, shifted, None)
    _, pres, _ = ctx.solve(rhs)
    return FeFunction(space, pressure=pres)


class ProjectedTrajectory:
    """Nodal projections of a field with an interval-evaluation rule.

    ``snapshots[n]`` is the projection at grid node t_n.  With
    endpoint='right' the value on interval n (1-based, i.e. on
    (t_{n-1}, t_n]) is the sample at t_n; with endpoint='left' it is
    the sample at t_{n-1}.
    """

    def __init__(self, grid, snapshots, endpoint):
        self.grid = grid
        self.snapshots = snapshots
        self.endpoint = endpoint

    def on_interval(self, n):
        if not 1 <= n <= self.grid.num_steps:
            raise IndexError("interval index out of range")
        return self.snapshots[n if self.endpoint == "right" else n - 1]

    def at_node(self, n):
        return self.snapshots[n]


def project_time(ctx, y, grid, endpoint="right"):
    """Sample-and-project a time-dependent field onto a trajectory.

    The field is projected at every grid node; ``endpoint`` selects how
    intervals read the samples (right endpoint for the forward state
    convention, left endpoint for the reversed adjoint one).
    """
    if endpoint not in ("right", "left"):
        raise ValueError("endpoint must be 'right' or 'left'")
    snaps = [project_ph(ctx, y, t=float(t)) for t in grid.nodes]
    return ProjectedTrajectory(grid, snaps, endpoint)
