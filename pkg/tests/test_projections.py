import numpy as np
import pytest

from nsvopt import assemble as asm
from nsvopt.problem import TimeGrid
from nsvopt.projections import ProjectionContext, project_ph, project_rh, project_time
from nsvopt.verification import AnalyticScalarField, field_h1_error


@pytest.fixture(scope="module")
def contexts(square_spaces):
    return [ProjectionContext(s, alpha=0.2) for s in square_spaces]


def test_project_zero(contexts):
    ctx = contexts[2]
    out = project_ph(ctx, np.zeros(ctx.space.n_vel))
    assert np.abs(out.velocity).max() == 0.0


def test_projection_idempotent(contexts, case_poly):
    ctx = contexts[2]
    first = project_ph(ctx, case_poly.velocity.frozen(0.0))
    second = project_ph(ctx, first)
    assert np.abs(first.velocity - second.velocity).max() < 1e-12


def test_projection_divergence_free(contexts, case_poly):
    ctx = contexts[2]
    out = project_ph(ctx, case_poly.velocity.frozen(0.4))
    B = asm.operators(ctx.space).B
    assert np.abs(B @ out.velocity).max() < 1e-11


def test_projection_requires_gradients(contexts):
    with pytest.raises(TypeError):
        project_ph(contexts[0], lambda x: np.zeros_like(x))


def test_projection_h1_rate(contexts, case_poly):
    errs, hs = [], []
    for ctx in contexts[1:]:
        out = project_ph(ctx, case_poly.velocity.frozen(0.0))
        errs.append(field_h1_error(ctx.space, out.velocity,
                                   case_poly.velocity, 0.0))
        hs.append(ctx.space.mesh.h)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.9


def test_pressure_projection_zero(contexts):
    out = project_rh(contexts[1], lambda x: np.zeros(len(x)))
    assert np.abs(out.pressure).max() < 1e-13


def test_pressure_projection_reproduces_p1(contexts):
    # a global linear with zero mean belongs to the pressure space
    ctx = contexts[2]
    out = project_rh(ctx, lambda x: x[:, 0] + x[:, 1] - 1.0)
    exact = ctx.space.mesh.vertices.sum(axis=1) - 1.0
    assert np.abs(out.pressure - exact).max() < 1e-11


def test_pressure_projection_zero_mean(contexts, case_poly):
    ctx = contexts[2]
    out = project_rh(ctx, lambda x: case_poly.pressure.value(x, 0.2))
    ops = asm.operators(ctx.space)
    assert abs(ops.mean_vec @ out.pressure) < 1e-10


def test_pressure_projection_removes_mean(contexts):
    # constant input has zero projection after mean removal
    out = project_rh(contexts[1], lambda x: np.full(len(x), 3.0))
    assert np.abs(out.pressure).max() < 1e-11


def test_pressure_projection_rate(contexts, case_poly):
    errs, hs = [], []
    for ctx in contexts[1:]:
        out = project_rh(ctx, lambda x: case_poly.pressure.value(x, 0.0))
        err = asm.pressure_error_sq(
            ctx.space, out.pressure,
            lambda x: case_poly.pressure.value(x, 0.0))
        errs.append(np.sqrt(err))
        hs.append(ctx.space.mesh.h)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.9


def test_project_time_constant_field(contexts, case_poly):
    ctx = contexts[1]
    frozen = case_poly.velocity.frozen(0.3)

    class Steady:
        def value(self, x, t=None):
            return frozen.value(x)

        def grad(self, x, t=None):
            return frozen.grad(x)

    grid = TimeGrid.uniform(1.0, 4)
    traj = project_time(ctx, Steady(), grid)
    ref = project_ph(ctx, frozen).velocity
    for snap in traj.snapshots:
        assert np.abs(snap.velocity - ref).max() < 1e-12


def test_project_time_right_vs_left(contexts, case_poly):
    # y(t) = t * field: right and left interval samples differ by tau * P_h field
    ctx = contexts[1]
    base = case_poly.velocity.frozen(0.0)

    class Linear:
        def value(self, x, t=0.0):
            return t * base.value(x)

        def grad(self, x, t=0.0):
            return t * base.grad(x)

    grid = TimeGrid.uniform(1.0, 5)
    right = project_time(ctx, Linear(), grid, endpoint="right")
    left = project_time(ctx, Linear(), grid, endpoint="left")
    phb = project_ph(ctx, base).velocity
    for n in range(1, grid.num_steps + 1):
        tau = grid.steps[n - 1]
        diff = right.on_interval(n).velocity - left.on_interval(n).velocity
        assert np.abs(diff - tau * phb).max() < 1e-11


def test_project_time_joint_rate(contexts, case_poly):
    # L2-in-time H1 error of the sampled projection decays first order
    # under simultaneous tau ~ h refinement
    from nsvopt.verification import error_norms

    errs, hs = [], []
    for lvl, ctx in enumerate(contexts[1:]):
        grid = TimeGrid.uniform(1.0, 4 * 2 ** lvl)
        traj = project_time(ctx, case_poly.velocity, grid)

        class Wrap:
            def __init__(self, tr, space):
                self.grid = tr.grid
                self._tr = tr

            def at_node(self, n):
                return self._tr.at_node(n).velocity

            def on_interval(self, n):
                return self._tr.on_interval(n).velocity

        e = error_norms(case_poly.velocity, Wrap(traj, ctx.space), ctx.space)
        errs.append(e["l2_h1"])
        hs.append(ctx.space.mesh.h)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.9


def test_projection_a_alpha_orthogonality(contexts, case_poly, rng):
    # the projection residual, tested against random velocity dofs with
    # the divergence multiplier accounted for, vanishes to solver
    # tolerance: a_alpha(y_h - y, v) + (multiplier pairing) = 0
    ctx = contexts[1]
    space = ctx.space
    field = case_poly.velocity.frozen(0.2)
    rhs = asm.load_a_alpha(space, field.value, field.grad, ctx.alpha)
    vel, mult, _ = ctx.solve(rhs)
    ops = asm.operators(space)
    A = asm.assemble_a_alpha(space, ctx.alpha)
    residual = rhs - A @ vel - ops.B.T @ mult
    free = np.setdiff1d(np.arange(space.n_vel), space.dirichlet_vel)
    for _ in range(5):
        v = np.zeros(space.n_vel)
        v[free] = rng.standard_normal(len(free))
        assert abs(v @ residual) <= 1e-9 * np.linalg.norm(v) * max(
            1.0, np.linalg.norm(rhs))
