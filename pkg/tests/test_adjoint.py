import numpy as np
import pytest

from nsvopt import assemble as asm
from nsvopt.adjoint import (gradient, objective, solve_adjoint,
                            terminal_target, _tracking_loads)
from nsvopt.control import Control
from nsvopt.problem import ProblemData, TimeGrid
from nsvopt.state import SolverOptions, solve_linearized_state, solve_state


def _data(case, **kw):
    base = dict(nu=case.nu, alpha=case.alpha, gamma=1e-2, alpha_T=0.5,
                alpha_Q=1.0, T=1.0, y0=case.y0, yT=case.velocity.frozen(1.0),
                yQ=lambda x, t: 0.2 * case.velocity.value(x, 0.5 * t),
                dim=case.dim)
    base.update(kw)
    return ProblemData(**base)


@pytest.fixture(scope="module")
def grid():
    return TimeGrid.uniform(1.0, 6)


@pytest.fixture(scope="module")
def setup(space8, case_poly):
    grid = TimeGrid.uniform(1.0, 6)
    data = _data(case_poly)
    rng = np.random.default_rng(11)
    u = Control(grid, space8.mesh,
                rng.uniform(-0.5, 0.5, (grid.num_steps, space8.mesh.num_cells, 2)),
                box=(np.full(2, -1.0), np.full(2, 1.0)))
    traj = solve_state(data, space8, grid, u)
    lam = solve_adjoint(data, space8, grid, traj)
    return data, u, traj, lam


def test_zero_weights_zero_adjoint(space8, grid, case_poly):
    # degenerate weights bypass the data validation on purpose: the
    # backward system is then homogeneous and must return exactly zero
    data = _data(case_poly)
    data.alpha_T = 0.0
    data.alpha_Q = 0.0
    traj = solve_state(data, space8, grid, case_poly.forcing)
    lam = solve_adjoint(data, space8, grid, traj)
    assert max(np.abs(s).max() for s in lam.snapshots) == 0.0


def test_matched_terminal_zero_adjoint(space8, grid, case_poly):
    # alpha_Q = 0 and terminal datum equal to the final state
    data = _data(case_poly, alpha_Q=0.0, yQ=None, yT=None)
    traj = solve_state(data, space8, grid, case_poly.forcing)
    lam = solve_adjoint(data, space8, grid, traj,
                        yT_h=traj.snapshots[grid.num_steps])
    assert max(np.abs(s).max() for s in lam.snapshots) < 1e-11


def test_adjoint_snapshots_divergence_free(setup, space8):
    _, _, _, lam = setup
    B = asm.operators(space8).B
    for snap in lam.snapshots:
        assert np.abs(B @ snap).max() < 1e-9


def test_discrete_duality(setup, space8, rng):
    data, u, traj, lam = setup
    grid = traj.grid
    ops = asm.operators(space8)
    yTh = terminal_target(data, space8)
    tracking = _tracking_loads(data, space8, grid)
    for _ in range(4):
        v = Control(grid, space8.mesh,
                    rng.uniform(-1, 1, u.values.shape), box=u.box)
        z = solve_linearized_state(data, space8, grid, traj, v)
        lhs = data.alpha_T * float(
            (traj.snapshots[-1] - yTh) @ (ops.M @ z.snapshots[-1]))
        for n in range(1, grid.num_steps + 1):
            zn, yn = z.snapshots[n], traj.snapshots[n]
            _, ws, loads, _ = tracking[n - 1]
            for w, b in zip(ws, loads):
                lhs += data.alpha_Q * w * float(yn @ (ops.M @ zn) - zn @ b)
        rhs = v.pair_trajectory(space8, lam)
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_transpose_consistency(setup, space8):
    # adjoint step matrix is the transpose of the linearized state one
    data, u, traj, _ = setup
    y = traj.snapshots[3]
    tau = float(traj.grid.steps[2])
    ops = asm.operators(space8)
    const = ops.M + (data.nu * tau + data.alpha ** 2) * ops.K
    fwd = const + tau * asm.assemble_convection(space8, y, "state_jacobian")
    bwd = const + tau * asm.assemble_convection(space8, y, "adjoint")
    diff = abs(fwd.T - bwd).max()
    assert diff <= 1e-13 * abs(fwd).max()


def test_objective_zero_at_match(space8, grid, case_poly):
    data = _data(case_poly, y0=None, yT=None, yQ=None)
    traj = solve_state(data, space8, grid, None)
    assert objective(data, space8, grid, traj, None) == 0.0


def test_objective_quadratic_in_control(space8, grid, case_poly, rng):
    data = _data(case_poly, y0=None, yT=None, yQ=None)
    data.alpha_T = 0.0
    data.alpha_Q = 0.0
    u = Control(grid, space8.mesh,
                rng.uniform(-1, 1, (grid.num_steps, space8.mesh.num_cells, 2)))
    u2 = u.with_values(2 * u.values, require_feasible=False)
    traj = solve_state(data, space8, grid, u)
    traj2 = solve_state(data, space8, grid, u2)
    J1 = objective(data, space8, grid, traj, u)
    J2 = objective(data, space8, grid, traj2, u2)
    assert J2 == pytest.approx(4 * J1, rel=1e-12)
    assert J1 >= 0.0


def test_objective_nonnegative(setup, space8):
    data, u, traj, _ = setup
    assert objective(data, space8, traj.grid, traj, u) >= 0.0


def test_gradient_zero_adjoint_reduces_to_gamma_u(space8, grid, case_poly, rng):
    data = _data(case_poly)
    data.alpha_T = 0.0
    data.alpha_Q = 0.0
    u = Control(grid, space8.mesh,
                rng.uniform(-1, 1, (grid.num_steps, space8.mesh.num_cells, 2)))
    traj = solve_state(data, space8, grid, u)
    lam = solve_adjoint(data, space8, grid, traj)
    g = gradient(data, space8, grid, traj, lam, u)
    assert np.abs(g - data.gamma * u.values).max() == 0.0


def test_gradient_directional_derivative(space8, case_poly, rng):
    # convection-dominated data so the third-order term is visible above
    # the solver noise floor and the central-difference error shows its
    # quadratic decay
    grid = TimeGrid.uniform(1.0, 6)
    data = _data(case_poly, nu=0.01, alpha=0.1, gamma=1e-3, alpha_T=1.0,
                 yQ=lambda x, t: -2.0 * case_poly.velocity.value(x, 0.3 * t))
    u = Control(grid, space8.mesh,
                rng.uniform(-3, 3, (grid.num_steps, space8.mesh.num_cells, 2)),
                box=(np.full(2, -10.0), np.full(2, 10.0)))
    opts = SolverOptions(abs_tol=1e-12, rel_tol=1e-12)
    traj = solve_state(data, space8, grid, u, opts)
    lam = solve_adjoint(data, space8, grid, traj)
    g = gradient(data, space8, grid, traj, lam, u)
    v = rng.uniform(-3, 3, u.values.shape)
    gd = float(np.sum(u.weights() * g * v))
    errs = []
    eps_list = (1e-1, 1e-2, 1e-3)
    for eps in eps_list:
        up = u.with_values(u.values + eps * v, require_feasible=False)
        um = u.with_values(u.values - eps * v, require_feasible=False)
        Jp = objective(data, space8, grid,
                       solve_state(data, space8, grid, up, opts), up)
        Jm = objective(data, space8, grid,
                       solve_state(data, space8, grid, um, opts), um)
        errs.append(abs((Jp - Jm) / (2 * eps) - gd))
    slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
    assert slope >= 1.9
    assert errs[-1] <= 1e-6 * max(abs(gd), 1.0)


def test_gradient_constant_shift(setup, space8):
    # shifting the control by a constant moves the gradient by gamma*c
    # plus the cell averages of the adjoint change (computed directly)
    data, u, traj, lam = setup
    grid = traj.grid
    c = np.array([0.3, -0.2])
    u2 = u.with_values(u.values + c, require_feasible=False)
    traj2 = solve_state(data, space8, grid, u2)
    lam2 = solve_adjoint(data, space8, grid, traj2)
    g1 = gradient(data, space8, grid, traj, lam, u)
    g2 = gradient(data, space8, grid, traj2, lam2, u2)

    load = asm.operators(space8).cell_load
    vols = space8.mesh.cell_volumes
    lam_shift = np.empty_like(g1)
    for n in range(1, grid.num_steps + 1):
        dlam = lam2.lam(n) - lam.lam(n)
        for comp in range(2):
            lam_shift[n - 1, :, comp] = \
                (load.T @ space8.component(dlam, comp)) / vols
    expect = data.gamma * np.broadcast_to(c, g1.shape) + lam_shift
    assert np.abs((g2 - g1) - expect).max() < 1e-12


def test_adjoint_h1_bounded_over_refinement(square_spaces, case_poly):
    norms = []
    for space in square_spaces[1:3]:
        grid = TimeGrid.uniform(1.0, 4)
        data = _data(case_poly)
        traj = solve_state(data, space, grid, case_poly.forcing)
        lam = solve_adjoint(data, space, grid, traj)
        worst = max(asm.norm_h1(space, s) for s in lam.snapshots)
        norms.append(worst)
    assert norms[1] <= 1.5 * norms[0] + 1e-12
