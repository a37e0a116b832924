"""Manufactured solutions, error norms and convergence studies.

Cases are built symbolically: a stream function (2D) or vector
potential (3D) gives an exactly divergence-free velocity vanishing on
the boundary of the unit box, and the forcing that makes the velocity/
pressure pair solve the flow equations is obtained by symbolic
differentiation, never numerically.  Studies drive mesh/time-grid
hierarchies and fit log-log slopes against the theory-predicted orders:
one in the mesh size, and at least one half in the time step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import sympy

from . import adjoint as adj
from . import assemble as asm
from . import control as ctrl
from . import state as st
from .errors import SolverError
from .mesh import build_structured, refine_uniform
from .problem import ProblemData, TimeGrid
from .quadrature import gauss_interval
from .space import MixedSpace

log = logging.getLogger(__name__)

_X, _Y, _Z, _T = sympy.symbols("x y z t")


def _as_value_fn(exprs, dim):
    syms = (_X, _Y, _Z)[:dim] + (_T,)
    fns = [sympy.lambdify(syms, e, "numpy") for e in exprs]

    def value(pts, tval):
        pts = np.asarray(pts, dtype=float)
        args = [pts[:, i] for i in range(dim)] + [tval]
        cols = [np.broadcast_to(np.asarray(f(*args), dtype=float), (len(pts),))
                for f in fns]
        return np.column_stack(cols) if len(cols) > 1 else cols[0]

    return value


class AnalyticVectorField:
    """Vector field from sympy expressions, with exact gradients."""

    def __init__(self, exprs, dim):
        self.exprs = [sympy.sympify(e) for e in exprs]
        self.dim = dim
        self._value = _as_value_fn(self.exprs, dim)
        coords = (_X, _Y, _Z)[:dim]
        self._grad = _as_value_fn(
            [sympy.diff(e, c) for e in self.exprs for c in coords], dim)

    def value(self, x, t=0.0):
        return self._value(x, t)

    __call__ = value

    def grad(self, x, t=0.0):
        flat = self._grad(x, t)
        return flat.reshape(len(np.atleast_2d(x)), self.dim, self.dim)

    def frozen(self, t0):
        return _FrozenField(self, float(t0))


class _FrozenField:
    def __init__(self, parent, t0):
        self.parent = parent
        self.t0 = t0

    def value(self, x, t=None):
        return self.parent.value(x, self.t0)

    __call__ = value

    def grad(self, x, t=None):
        return self.parent.grad(x, self.t0)


class AnalyticScalarField:
    def __init__(self, expr, dim):
        self.expr = sympy.sympify(expr)
        self.dim = dim
        self._value = _as_value_fn([self.expr], dim)

    def value(self, x, t=0.0):
        return self._value(x, t)

    __call__ = value


def _laplacian(expr, dim):
    coords = (_X, _Y, _Z)[:dim]
    return sum(sympy.diff(expr, c, 2) for c in coords)


def _flow_forcing(vel_exprs, p_expr, nu, alpha, dim):
    coords = (_X, _Y, _Z)[:dim]
    out = []
    for j, yj in enumerate(vel_exprs):
        expr = (sympy.diff(yj, _T)
                - nu * _laplacian(yj, dim)
                - alpha ** 2 * sympy.diff(_laplacian(yj, dim), _T)
                + sum(vel_exprs[i] * sympy.diff(yj, coords[i])
                      for i in range(dim))
                + sympy.diff(p_expr, coords[j]))
        out.append(sympy.expand(expr))
    return out


class ManufacturedCase:
    """Exact velocity/pressure pair with its symbolically derived forcing."""

    def __init__(self, name, dim, vel_exprs, p_expr, nu, alpha):
        self.name = name
        self.dim = dim
        self.nu = float(nu)
        self.alpha = float(alpha)
        self.velocity = AnalyticVectorField(vel_exprs, dim)
        self.pressure = AnalyticScalarField(p_expr, dim)
        self.forcing = AnalyticVectorField(
            _flow_forcing(self.velocity.exprs, self.pressure.expr, nu, alpha, dim),
            dim)
        coords = (_X, _Y, _Z)[:dim]
        self._div = sympy.simplify(
            sum(sympy.diff(e, c) for e, c in zip(self.velocity.exprs, coords)))

    @property
    def y0(self):
        return self.velocity.frozen(0.0)

    def domain(self):
        return [(0.0, 1.0)] * self.dim

    def self_check(self, rng=None, npts=40):
        """Certify the symbolic construction before studies run.

        Checks that the symbolic divergence vanished identically, that
        the assembled strong-form residual evaluates to rounding, and
        cross-checks the forcing against finite differences of the
        velocity/pressure callbacks (independent of the symbolic path).
        """
        if self._div != 0:
            raise AssertionError("velocity is not divergence-free symbolically")
        rng = rng or np.random.default_rng(1234)
        pts = rng.uniform(0.15, 0.85, size=(npts, self.dim))
        ts = rng.uniform(0.1, 0.9, size=npts)
        scale = max(1.0, float(np.abs(self.forcing.value(pts, 0.5)).max()))
        for tv in (float(ts[0]), float(ts[1])):
            res = self.forcing.value(pts, tv) - self._fd_strong_form(pts, tv)
            if np.abs(res).max() > 2e-4 * scale:
                raise AssertionError(
                    "finite-difference residual {:.2e} too large".format(
                        np.abs(res).max()))
        return True

    def _fd_strong_form(self, pts, tv, hx=1e-4, ht=1e-4):
        """Strong-form left side by central differences of the callbacks."""
        dim = self.dim
        vel, pre = self.velocity.value, self.pressure.value

        def lap(f, x, t):
            out = -2 * dim * f(x, t)
            for c in range(dim):
                xp, xm = x.copy(), x.copy()
                xp[:, c] += hx
                xm[:, c] -= hx
                out = out + f(xp, t) + f(xm, t)
            return out / hx ** 2

        y_t = (vel(pts, tv + ht) - vel(pts, tv - ht)) / (2 * ht)
        lap_y = lap(vel, pts, tv)
        lap_yt = (lap(vel, pts, tv + ht) - lap(vel, pts, tv - ht)) / (2 * ht)
        grad_p = np.empty((len(pts), dim))
        for c in range(dim):
            xp, xm = pts.copy(), pts.copy()
            xp[:, c] += hx
            xm[:, c] -= hx
            grad_p[:, c] = (pre(xp, tv) - pre(xm, tv)) / (2 * hx)
        yv = vel(pts, tv)
        conv = np.empty_like(yv)
        for j in range(dim):
            acc = np.zeros(len(pts))
            for i in range(dim):
                xp, xm = pts.copy(), pts.copy()
                xp[:, i] += hx
                xm[:, i] -= hx
                acc += yv[:, i] * (vel(xp, tv)[:, j] - vel(xm, tv)[:, j]) / (2 * hx)
            conv[:, j] = acc
        return (y_t - self.nu * lap_y - self.alpha ** 2 * lap_yt
                + conv + grad_p)


def _bump(s):
    return (s * (1 - s)) ** 2


def build_case(name, nu=0.05, alpha=0.2):
    """Catalogued manufactured cases on the unit box.

    'stream-poly-2d'      polynomial stream-function bump times a sinusoid
    'taylor-green-2d'     no-slip vortex with sin^2 stream function
    'vector-potential-3d' two-component polynomial vector potential
    """
    if name == "stream-poly-2d":
        psi = 120 * _bump(_X) * _bump(_Y) * (sympy.cos(3 * _T) + sympy.Rational(1, 2))
        vel = [sympy.diff(psi, _Y), -sympy.diff(psi, _X)]
        p = sympy.sin(2 * sympy.pi * _X) * sympy.cos(sympy.pi * _Y) \
            * (1 + _T / 2)
        return ManufacturedCase(name, 2, vel, p, nu, alpha)
    if name == "taylor-green-2d":
        psi = (sympy.sin(sympy.pi * _X) * sympy.sin(sympy.pi * _Y)) ** 2 \
            / sympy.pi * sympy.exp(-_T)
        vel = [sympy.diff(psi, _Y), -sympy.diff(psi, _X)]
        p = (sympy.cos(2 * sympy.pi * _X) + sympy.cos(2 * sympy.pi * _Y)) \
            * sympy.exp(-2 * _T) / 4
        return ManufacturedCase(name, 2, vel, p, nu, alpha)
    if name == "vector-potential-3d":
        bump3 = _bump(_X) * _bump(_Y) * _bump(_Z)
        av = 600 * bump3 * sympy.cos(2 * _T)
        aw = 900 * bump3 * (1 + _T)
        vel = [sympy.diff(aw, _Y),
               sympy.diff(av, _Z) - sympy.diff(aw, _X),
               -sympy.diff(av, _Y)]
        p = sympy.sin(2 * sympy.pi * _X) * (_Y - sympy.Rational(1, 2)) \
            * (_Z + 1) * sympy.cos(_T)
        return ManufacturedCase(name, 3, vel, p, nu, alpha)
    raise ValueError("unknown manufactured case '{}'".format(name))


class AdjointCase:
    """Manufactured backward solution for the adjoint error study.

    The adjoint field vanishes at the final time, so the terminal weight
    can be zero and no discrete terminal target is needed; the
    distributed target that makes the chosen adjoint exact is solved for
    symbolically from the strong backward equation.
    """

    def __init__(self, state_case, alpha_Q=1.0):
        if state_case.dim != 2:
            raise ValueError("adjoint cases are catalogued in 2D")
        self.state_case = state_case
        self.alpha_Q = float(alpha_Q)
        nu, alpha, dim = state_case.nu, state_case.alpha, state_case.dim
        coords = (_X, _Y)
        Tsym = sympy.Symbol("T_end")

        phi = 90 * _bump(_X) * _bump(_Y) * (Tsym - _T) * (1 + sympy.sin(2 * _T) / 2)
        lam = [sympy.diff(phi, _Y), -sympy.diff(phi, _X)]
        q = sympy.sin(2 * sympy.pi * _X) * sympy.sin(2 * sympy.pi * _Y) * (Tsym - _T)
        yexprs = state_case.velocity.exprs
        yq = []
        for j in range(dim):
            resid = (-sympy.diff(lam[j], _T)
                     - nu * _laplacian(lam[j], dim)
                     + alpha ** 2 * sympy.diff(_laplacian(lam[j], dim), _T)
                     - sum(yexprs[i] * sympy.diff(lam[j], coords[i])
                           for i in range(dim))
                     + sum(sympy.diff(yexprs[i], coords[j]) * lam[i]
                           for i in range(dim))
                     + sympy.diff(q, coords[j]))
            yq.append(sympy.expand(yexprs[j] - resid / self.alpha_Q))
        self._lam_exprs = lam
        self._yq_exprs = yq
        self._q_expr = q
        self._Tsym = Tsym

    def at_horizon(self, T):
        """Concrete fields for a horizon T: (lambda, q, yQ) callbacks."""
        subs = {self._Tsym: sympy.Float(T)}
        lam = AnalyticVectorField([e.subs(subs) for e in self._lam_exprs], 2)
        q = AnalyticScalarField(self._q_expr.subs(subs), 2)
        yq = AnalyticVectorField([e.subs(subs) for e in self._yq_exprs], 2)
        return lam, q, yq


def build_adjoint_case(name="stream-poly-2d", nu=0.05, alpha=0.2, alpha_Q=1.0):
    return AdjointCase(build_case(name, nu, alpha), alpha_Q)


# -- error norms -----------------------------------------------------------------

TIME_ERROR_QUAD = 3
ERROR_QUAD_AXIS = 4


def _error_space(space, npts_axis=ERROR_QUAD_AXIS):
    """Same mesh with an elevated rule: error integrands are not the
    degree-5 polynomials the assembly rule is tuned to."""
    key = ("error_space", npts_axis)
    out = space._cache.get(key)
    if out is None:
        out = MixedSpace(space.mesh, quad_npts_axis=npts_axis)
        space._cache[key] = out
    return out


def field_h1_error(space, coeffs, field, tval, quad_npts_axis=ERROR_QUAD_AXIS):
    """Full H1 distance between FE coefficients and an analytic field."""
    es = _error_space(space, quad_npts_axis)
    l2, semi = asm.velocity_error_sq(es, coeffs, field.value, field.grad, tval)
    return np.sqrt(l2 + semi)


def error_norms(exact, approx, space, quad_npts_axis=ERROR_QUAD_AXIS):
    """Trajectory errors against an exact field.

    Returns nodal-max H1 error (grid nodes), L2-in-time H1 error
    (3-point Gauss per interval against the trajectory's interval
    value), and the L-infinity-in-time H1 error sampled at both the
    Gauss points and the nodes.  Works for forward and backward
    trajectories through their interval/node conventions.
    """
    grid = approx.grid
    nodal_max = 0.0
    for n in range(grid.num_steps + 1):
        err = field_h1_error(space, approx.at_node(n), exact,
                             float(grid.nodes[n]), quad_npts_axis)
        nodal_max = max(nodal_max, err)
    l2_sq = 0.0
    linf = nodal_max
    for n in range(1, grid.num_steps + 1):
        snap = approx.on_interval(n)
        ts, ws = gauss_interval(TIME_ERROR_QUAD,
                                grid.nodes[n - 1], grid.nodes[n])
        for tval, w in zip(ts, ws):
            err = field_h1_error(space, snap, exact, float(tval),
                                 quad_npts_axis)
            l2_sq += w * err ** 2
            linf = max(linf, err)
    return {
        "nodal_max_h1": float(nodal_max),
        "l2_h1": float(np.sqrt(l2_sq)),
        "linf_h1": float(linf),
    }


# -- rate tables and studies ------------------------------------------------------

@dataclass
class RateTable:
    """Per-level errors with least-squares log-log slopes.

    A fit is flagged inconclusive when dropping the coarsest level moves
    any slope by more than ``drop_tol`` (preasymptotic guard).
    """

    variable: str
    rows: list = field(default_factory=list)
    drop_tol: float = 0.15

    def add_row(self, level, h, tau, errors):
        self.rows.append({"level": level, "h": h, "tau": tau, **errors})

    @property
    def norms(self):
        return [k for k in self.rows[0] if k not in ("level", "h", "tau")]

    def _fit(self, rows):
        xs = np.log([r[self.variable] for r in rows])
        out = {}
        for nm in self.norms:
            ys = np.log([max(r[nm], 1e-300) for r in rows])
            out[nm] = float(np.polyfit(xs, ys, 1)[0])
        return out

    def slopes(self):
        if len(self.rows) < 2:
            raise ValueError("need at least two levels to fit slopes")
        return self._fit(self.rows)

    def conclusive(self, norms=None):
        """Slope fit insensitive to the coarsest level for these norms."""
        if len(self.rows) < 4:
            return True
        norms = self.norms if norms is None else norms
        full = self.slopes()
        trimmed = self._fit(self.rows[1:])
        return all(abs(full[nm] - trimmed[nm]) <= self.drop_tol
                   for nm in norms)

    def summary_lines(self, thresholds):
        slopes = self.slopes()
        lines = []
        for nm, thr in thresholds.items():
            s = slopes[nm]
            lines.append("norm={} slope={:.4f} threshold={:.4f} {}".format(
                nm, s, thr, "PASS" if s >= thr else "FAIL"))
        return lines

    def to_csv(self, path):
        with open(path, "w", newline="\n") as f:
            f.write("level,h,tau," + ",".join(self.norms) + "\n")
            for r in self.rows:
                f.write("{},{:.17g},{:.17g},".format(r["level"], r["h"], r["tau"])
                        + ",".join("{:.17g}".format(r[nm]) for nm in self.norms)
                        + "\n")
            slopes = self.slopes()
            f.write("slope,,," + ",".join(
                "{:.6g}".format(slopes[nm]) for nm in self.norms) + "\n")


@dataclass
class StudyConfig:
    """Declarative description of a convergence experiment.

    kind: 'state', 'adjoint' (manufactured errors) or 'control'
    (self-convergence of optimized controls against the finest level).
    coupling: 'tau~h2', 'tau~h', or 'tau-only' (fixed mesh).
    The time-step count multiplies by 4, 2 or 2 per level respectively;
    the mesh refines uniformly per level except for 'tau-only'.
    """

    kind: str = "state"
    case: str = "stream-poly-2d"
    levels: int = 4
    base_n: int = 4
    base_steps: int = 2
    coupling: str = "tau~h2"
    T: float = 1.0
    nu: float = 0.05
    alpha: float = 0.2
    alpha_Q: float = 1.0
    gamma: float = 5e-2
    solver: st.SolverOptions = field(default_factory=st.SolverOptions)
    optimizer_tol: float = 1e-8

    def __post_init__(self):
        if self.levels < 3:
            raise ValueError("a study needs at least 3 levels")
        if self.coupling not in ("tau~h2", "tau~h", "tau-only"):
            raise ValueError("unknown coupling '{}'".format(self.coupling))
        if self.kind not in ("state", "adjoint", "control"):
            raise ValueError("unknown study kind '{}'".format(self.kind))


def _hierarchy(config):
    """(mesh, space, grid) per level along the configured coupling."""
    case_dim = 3 if config.case.endswith("3d") else 2
    mesh = build_structured([(0.0, 1.0)] * case_dim, config.base_n)
    step_factor = {"tau~h2": 4, "tau~h": 2, "tau-only": 2}[config.coupling]
    levels = []
    steps = config.base_steps
    for lvl in range(config.levels):
        if lvl > 0:
            if config.coupling != "tau-only":
                mesh = refine_uniform(mesh)
            steps *= step_factor
        levels.append((mesh, TimeGrid.uniform(config.T, steps)))
    return [(m, MixedSpace(m), g) for m, g in levels]


def run_convergence(config):
    """Run the configured study and fit slopes.

    Any level failure re-raises the solver error with the partial table
    attached as ``exc.partial_table``.
    """
    if config.kind == "state":
        return _state_study(config)
    if config.kind == "adjoint":
        return _adjoint_study(config)
    return _control_study(config)


def _variable_for(config):
    return "tau" if config.coupling == "tau-only" else "h"


def _state_study(config):
    case = build_case(config.case, config.nu, config.alpha)
    case.self_check()
    table = RateTable(_variable_for(config))
    data = ProblemData(nu=case.nu, alpha=case.alpha, gamma=1.0, alpha_T=0.0,
                       alpha_Q=1.0, T=config.T, y0=case.y0, dim=case.dim)
    try:
        for lvl, (mesh, space, grid) in enumerate(_hierarchy(config)):
            traj = st.solve_state(data, space, grid, case.forcing, config.solver)
            errs = error_norms(case.velocity, traj, space)
            table.add_row(lvl, mesh.h, grid.tau, errs)
            log.info("state study level %d: h=%.3g tau=%.3g %s",
                     lvl, mesh.h, grid.tau, errs)
    except SolverError as exc:
        exc.partial_table = table
        raise
    return table


def _adjoint_study(config):
    acase = build_adjoint_case(config.case, config.nu, config.alpha,
                               config.alpha_Q)
    scase = acase.state_case
    scase.self_check()
    lam, _, yq = acase.at_horizon(config.T)
    data = ProblemData(nu=scase.nu, alpha=scase.alpha, gamma=1.0, alpha_T=0.0,
                       alpha_Q=acase.alpha_Q, T=config.T, y0=scase.y0,
                       yQ=yq, dim=2)
    table = RateTable(_variable_for(config))
    try:
        for lvl, (mesh, space, grid) in enumerate(_hierarchy(config)):
            traj = st.solve_state(data, space, grid, scase.forcing, config.solver)
            lam_traj = adj.solve_adjoint(data, space, grid, traj)
            errs = error_norms(lam, lam_traj, space)
            table.add_row(lvl, mesh.h, grid.tau, errs)
            log.info("adjoint study level %d: h=%.3g tau=%.3g %s",
                     lvl, mesh.h, grid.tau, errs)
    except SolverError as exc:
        exc.partial_table = table
        raise
    return table


def control_tracking_problem(config, dim=2):
    """Box-constrained tracking setup used by the control study.

    The distributed target amplifies the initial vortex over time,
    driving the unconstrained minimizer outside the box on roughly half
    of the cylinder, so the bounds are active there and inactive
    elsewhere.
    """
    case = build_case(config.case, config.nu, config.alpha)
    lo = np.full(dim, -0.4)
    hi = np.full(dim, 0.4)
    yq = AnalyticVectorField(
        [4 * _bump(_X) * sympy.diff(_bump(_Y), _Y) * (1 + _T),
         -4 * sympy.diff(_bump(_X), _X) * _bump(_Y) * (1 + _T)], 2)
    return ProblemData(nu=config.nu, alpha=config.alpha, gamma=config.gamma,
                       alpha_T=0.0, alpha_Q=1.0, T=config.T, box=(lo, hi),
                       y0=case.y0, yQ=yq, dim=dim)


def _prolong_control(values, space_factor, time_factor):
    """Repeat control values onto a nested finer grid.

    Children of cell i are contiguous after uniform refinement, so a
    spatial prolongation is a block repeat; nested uniform time grids
    likewise.
    """
    out = np.repeat(values, time_factor, axis=0)
    return np.repeat(out, space_factor, axis=1)


def _control_study(config):
    data = control_tracking_problem(config)
    levels = _hierarchy(config)
    step_factor = {"tau~h2": 4, "tau~h": 2, "tau-only": 2}[config.coupling]
    space_factor = 1 if config.coupling == "tau-only" else 2 ** 2

    opts = ctrl.OptimizeOptions(tol=config.optimizer_tol, solver=config.solver)
    reports = []
    try:
        for lvl, (mesh, space, grid) in enumerate(levels):
            u0 = ctrl.Control(grid, mesh, box=data.box)
            rep = ctrl.optimize(data, space, grid, u0, opts)
            reports.append(rep)
            log.info("control study level %d: J=%.6e iters=%d stat=%.2e",
                     lvl, rep.objective, rep.iterations,
                     rep.stationarity_history[-1])
    except SolverError as exc:
        exc.partial_table = RateTable(_variable_for(config))
        raise

    ref = reports[-1]
    ref_mesh, _, ref_grid = levels[-1]
    table = RateTable("tau" if config.coupling != "tau-only" else "tau")
    nlev = len(levels)
    for lvl, rep in enumerate(reports[:-1]):
        gap = nlev - 1 - lvl
        fine_vals = _prolong_control(rep.control.values,
                                     space_factor ** gap, step_factor ** gap)
        diff = fine_vals - ref.control.values
        err = ref.control.norm(diff)
        mesh, _, grid = levels[lvl]
        table.add_row(lvl, mesh.h, grid.tau, {"control_l2": err})
    table.reports = reports
    return table
