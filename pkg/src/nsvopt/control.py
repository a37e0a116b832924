"""Cellwise/intervalwise-constant controls, box projection, and the
projected-gradient solver for the discrete control problem.

A control assigns one vector per (time interval, cell) pair.  The
L2(Q) geometry on this space is the weighted Euclidean one with weights
tau_n |K|; all norms, inner products and the stationarity measure
``|u - Proj(u - g)|`` use it.  The optimizer is monotone projected
gradient with Barzilai-Borwein step seeding and Armijo backtracking.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import adjoint as adj
from . import assemble as asm
from . import state as st
from .errors import SolverError

log = logging.getLogger(__name__)


class Control:
    """Piecewise-constant control over (interval, cell) pairs.

    values : (num_steps, num_cells, dim) array.
    box : (lo, hi) arrays of per-component bounds; None means free.
    Feasibility (values inside the box) is enforced unless
    ``require_feasible=False``; the cost functional itself is defined
    for any values, so finite-difference probes may opt out.
    """

    def __init__(self, grid, mesh, values=None, box=None, require_feasible=True):
        self.grid = grid
        self.mesh = mesh
        dim = mesh.dim
        shape = (grid.num_steps, mesh.num_cells, dim)
        if values is None:
            values = np.zeros(shape)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != shape:
            raise ValueError("control values must have shape {}".format(shape))
        if box is None:
            lo = np.full(dim, -np.inf)
            hi = np.full(dim, np.inf)
        else:
            lo = np.asarray(box[0], dtype=float)
            hi = np.asarray(box[1], dtype=float)
            if lo.shape != (dim,) or hi.shape != (dim,):
                raise ValueError("box bounds need one entry per component")
            if (lo > hi).any():
                raise ValueError("box lower bound exceeds upper bound")
        self.box = (lo, hi)
        if require_feasible and not self.is_feasible():
            raise ValueError("control values violate the box bounds")

    # -- geometry ----------------------------------------------------------------

    def weights(self):
        """tau_n |K| weights, shape (num_steps, num_cells, 1)."""
        return (self.grid.steps[:, None]
                * self.mesh.cell_volumes[None, :])[:, :, None]

    def norm_sq(self, values=None):
        v = self.values if values is None else values
        return float(np.sum(self.weights() * v * v))

    def inner(self, a, b=None):
        b = self.values if b is None else b
        return float(np.sum(self.weights() * a * b))

    def norm(self, values=None):
        return float(np.sqrt(self.norm_sq(values)))

    def is_feasible(self, tol=0.0):
        lo, hi = self.box
        return bool((self.values >= lo - tol).all()
                    and (self.values <= hi + tol).all())

    def clipped(self, values=None):
        lo, hi = self.box
        v = self.values if values is None else values
        return np.clip(v, lo, hi)

    def with_values(self, values, require_feasible=True):
        return Control(self.grid, self.mesh, values, self.box, require_feasible)

    def copy(self):
        return Control(self.grid, self.mesh, self.values.copy(), self.box,
                       require_feasible=False)

    # -- couplings ----------------------------------------------------------------

    def interval_load(self, space, n):
        """Exact integral of (u, phi) over interval n for the state march."""
        if space.mesh is not self.mesh:
            raise ValueError("control mesh does not match the space")
        tau = float(self.grid.steps[n - 1])
        out = np.zeros(space.n_vel)
        load = asm.operators(space).cell_load
        for c in range(space.dim):
            out[c * space.n_scalar:(c + 1) * space.n_scalar] = \
                tau * (load @ self.values[n - 1, :, c])
        return out

    def pair_trajectory(self, space, trajectory):
        """Sum over intervals of the (u, lam_n)-pairing, integrated in time."""
        load = asm.operators(space).cell_load
        total = 0.0
        for n in range(1, self.grid.num_steps + 1):
            lam = trajectory.on_interval(n)
            tau = float(self.grid.steps[n - 1])
            for c in range(space.dim):
                comp = load.T @ space.component(lam, c)
                total += tau * float(self.values[n - 1, :, c] @ comp)
        return total

    def as_callback(self):
        return embed_control(self)


def project_box(u, box=None):
    """Componentwise clamp onto the box.

    Accepts a Control (returns a feasible Control) or a plain array with
    an explicit box (returns the clipped array).
    """
    if isinstance(u, Control):
        return u.with_values(u.clipped())
    if box is None:
        raise ValueError("box bounds required for raw arrays")
    lo, hi = box
    if np.asarray(lo).size and (np.asarray(lo) > np.asarray(hi)).any():
        raise ValueError("box lower bound exceeds upper bound")
    return np.clip(np.asarray(u, dtype=float), lo, hi)


def embed_control(u):
    """Time-space callback view of a control.

    Point location is brute force over cells (intended for tests and
    quadrature at desk scale).  The time convention matches the state
    trajectory: interval n owns (t_{n-1}, t_n], and t = 0 reads the
    first interval.
    """
    mesh = u.mesh
    verts = mesh.vertices[mesh.cells]                       # (nc, d+1, d)
    jac = (verts[:, 1:, :] - verts[:, :1, :]).transpose(0, 2, 1)
    inv = np.linalg.inv(jac)
    origin = verts[:, 0, :]

    def locate(x):
        cells = np.empty(len(x), dtype=int)
        for i, pt in enumerate(x):
            lam = np.einsum("cde,ce->cd", inv, pt[None, :] - origin)
            ok = (lam >= -1e-12).all(axis=1) & (lam.sum(axis=1) <= 1.0 + 1e-12)
            hits = np.flatnonzero(ok)
            if not hits.size:
                raise ValueError("point {} outside the mesh".format(pt))
            cells[i] = hits[0]
        return cells

    nodes = u.grid.nodes

    def callback(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = max(1, int(np.searchsorted(nodes, t, side="left")))
        if n > u.grid.num_steps:
            raise ValueError("time {} outside the horizon".format(t))
        return u.values[n - 1, locate(x), :]

    return callback


@dataclass
class OptimizeOptions:
    tol: float = 1e-8
    max_iter: int = 400
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    bb_min: float = 1e-6
    bb_max: float = 1e3
    initial_step: float = 1.0
    solver: st.SolverOptions = field(default_factory=st.SolverOptions)


@dataclass
class OptimizeReport:
    """Projected-gradient run record.

    ``objective_history`` is non-increasing over accepted iterates;
    ``stationarity_history`` tracks |u - Proj(u - g)| in L2(Q).
    """

    control: Control
    state: object
    adjoint: object
    gradient: np.ndarray
    objective_history: list
    stationarity_history: list
    step_history: list
    backtrack_history: list
    converged: bool
    iterations: int
    kkt: dict

    @property
    def objective(self):
        return self.objective_history[-1]

    def to_csv(self, path):
        with open(path, "w", newline="\n") as f:
            f.write("iteration,objective,stationarity,step,backtracks\n")
            for k, (J, stat) in enumerate(zip(self.objective_history,
                                              self.stationarity_history)):
                s = self.step_history[k] if k < len(self.step_history) else ""
                b = (self.backtrack_history[k]
                     if k < len(self.backtrack_history) else "")
                f.write("{},{:.17g},{:.17g},{},{}\n".format(k, J, stat, s, b))


def audit_kkt(u, g, tol):
    """Pointwise first-order conditions at a candidate minimizer.

    The pointwise tolerance converts the L2(Q) stationarity tolerance
    through the smallest quadrature weight.  Returns per-condition
    worst-case violations (negative slack is a violation).
    """
    lo, hi = u.box
    w = np.broadcast_to(u.weights(), u.values.shape)
    ptol = tol / np.sqrt(w.min())
    at_lo = u.values <= lo + 0.0
    at_hi = u.values >= hi - 0.0
    interior = ~(at_lo | at_hi)
    worst_interior = float(np.abs(g[interior]).max()) if interior.any() else 0.0
    worst_lo = float((-g[at_lo]).max()) if at_lo.any() else -np.inf
    worst_hi = float(g[at_hi].max()) if at_hi.any() else -np.inf
    return {
        "pointwise_tol": float(ptol),
        "interior_max_abs_gradient": worst_interior,
        "lower_active_max_neg_gradient": worst_lo,
        "upper_active_max_pos_gradient": worst_hi,
        "passed": bool(worst_interior <= ptol and worst_lo <= ptol
                       and worst_hi <= ptol),
    }


def optimize(data, space, grid, u0, opts=None):
    """Projected gradient descent on the discrete control problem.

    Stops when |u - Proj(u - g)| in L2(Q) falls below ``opts.tol`` or at
    the iteration cap (then ``converged=False`` and the best iterate is
    returned).  Every accepted step satisfies the Armijo condition, so
    the objective history is monotone.
    """
    opts = opts or OptimizeOptions()
    u = project_box(u0)

    def evaluate(ctrl):
        traj = st.solve_state(data, space, grid, ctrl, opts.solver)
        return traj, adj.objective(data, space, grid, traj, ctrl)

    state, J = evaluate(u)
    adjoint = adj.solve_adjoint(data, space, grid, state)
    g = adj.gradient(data, space, grid, state, adjoint, u)

    J_hist, stat_hist, step_hist, bt_hist = [J], [], [], []
    prev_du = prev_dg = None
    s = opts.initial_step
    converged = False
    iterations = 0

    for k in range(opts.max_iter + 1):
        stat = u.norm(u.values - u.clipped(u.values - g))
        stat_hist.append(stat)
        log.debug("optimize iter %d: J=%.12e stat=%.3e", k, J, stat)
        if stat <= opts.tol:
            converged = True
            iterations = k
            break
        if k == opts.max_iter:
            iterations = k
            break

        if prev_du is not None:
            denom = u.inner(prev_du, prev_dg)
            s = (u.inner(prev_du, prev_du) / denom if denom > 0
                 else opts.bb_max)
        s = float(np.clip(s, opts.bb_min, opts.bb_max))

        backtracks = 0
        while True:
            trial_vals = u.clipped(u.values - s * g)
            du = trial_vals - u.values
            if not du.any():
                break
            u_trial = u.with_values(trial_vals)
            state_trial, J_trial = evaluate(u_trial)
            if J_trial <= J + opts.armijo * u.inner(g, du):
                break
            backtracks += 1
            if backtracks > opts.max_backtracks:
                raise SolverError(
                    "line search failed at iteration {} (step {:.3e})".format(
                        k, s))
            s *= opts.backtrack

        step_hist.append(s)
        bt_hist.append(backtracks)
        if not du.any():
            iterations = k
            converged = stat <= opts.tol
            break

        u = u_trial
        state = state_trial
        J = J_trial
        J_hist.append(J)
        adjoint = adj.solve_adjoint(data, space, grid, state)
        g_new = adj.gradient(data, space, grid, state, adjoint, u)
        prev_du, prev_dg = du, g_new - g
        g = g_new

    kkt = audit_kkt(u, g, opts.tol)
    return OptimizeReport(u, state, adjoint, g, J_hist, stat_hist, step_hist,
                          bt_hist, converged, iterations, kkt)


def hessian_quadratic(data, space, grid, u, state, adjoint, v):
    """Second-derivative quadratic form of the cost along direction v.

    Uses the linearized state z(v) and subtracts twice the accumulated
    convection pairing of z with the adjoint; exact for the discrete
    cost by the same duality that gives the gradient.
    """
    z = st.solve_linearized_state(data, space, grid, state, v)
    ops = asm.operators(space)
    N = grid.num_steps
    val = 0.0
    if data.alpha_T != 0.0:
        zN = z.snapshots[N]
        val += data.alpha_T * float(zN @ (ops.M @ zN))
    if data.alpha_Q != 0.0:
        for n in range(1, N + 1):
            zn = z.snapshots[n]
            val += data.alpha_Q * float(grid.steps[n - 1]) * float(zn @ (ops.M @ zn))
    vv = v.norm_sq() if hasattr(v, "norm_sq") else None
    if vv is None:
        raise TypeError("direction must be a Control")
    val += data.gamma * vv
    for n in range(1, N + 1):
        zn = z.snapshots[n]
        val -= 2.0 * float(grid.steps[n - 1]) * asm.apply_trilinear(
            space, zn, zn, adjoint.lam(n))
    return val
