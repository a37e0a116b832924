import numpy as np
import pytest

from nsvopt import cli
from nsvopt import vtkio
from nsvopt.config import RunConfig
from nsvopt.errors import ConfigError
from nsvopt.expressions import parse_expression, parse_vector_expression
from nsvopt.mesh import build_structured
from nsvopt.space import MixedSpace


# -- expression parsing ------------------------------------------------------------

def test_expression_basic():
    expr = parse_expression("sin(2*pi*x) * cos(y) + t^2", 2)
    fn = parse_vector_expression(["sin(2*pi*x)", "x*y + exp(t)"], 2)
    pts = np.array([[0.25, 0.5], [0.1, 0.9]])
    vals = fn.value(pts, 0.0)
    assert vals.shape == (2, 2)
    assert vals[0, 0] == pytest.approx(1.0)
    assert vals[0, 1] == pytest.approx(0.125 + 1.0)


def test_expression_rejects_unknown_names():
    with pytest.raises(ConfigError):
        parse_expression("__import__('os')", 2)
    with pytest.raises(ConfigError):
        parse_expression("foo(x)", 2)
    with pytest.raises(ConfigError):
        parse_expression("x; y", 2)


def test_expression_rejects_z_in_2d():
    with pytest.raises(ConfigError):
        parse_expression("z + 1", 2)
    parse_expression("z + 1", 3)


def test_expression_gradients_exact():
    f = parse_vector_expression(["x^2*y", "cos(x)"], 2)
    pts = np.array([[0.3, 0.7]])
    g = f.grad(pts, 0.0)
    assert g[0, 0, 0] == pytest.approx(2 * 0.3 * 0.7)
    assert g[0, 0, 1] == pytest.approx(0.09)
    assert g[0, 1, 0] == pytest.approx(-np.sin(0.3))


# -- field and VTK round trips --------------------------------------------------------

def test_field_roundtrip_bit_exact(tmp_path, rng):
    path = tmp_path / "f.nsvfield"
    vel = rng.standard_normal(50)
    pre = rng.standard_normal(9)
    vtkio.write_field(path, vel, pre)
    v2, p2 = vtkio.read_field(path)
    assert np.array_equal(vel, v2)
    assert np.array_equal(pre, p2)
    vtkio.write_field(path, vel, None)
    v3, p3 = vtkio.read_field(path)
    assert np.array_equal(vel, v3) and p3 is None


def test_vtk_output_structure(tmp_path):
    mesh = build_structured([(0, 1), (0, 1)], 2)
    space = MixedSpace(mesh)
    vel = np.linspace(0, 1, space.n_vel)
    path = tmp_path / "out.vtk"
    vtkio.write_vtk(path, mesh, {
        "velocity": vtkio.vertex_velocity(space, vel),
        "pressure": np.zeros(mesh.num_vertices)})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "DATASET UNSTRUCTURED_GRID" in text[3]
    assert any(ln.startswith("POINTS 9 double") for ln in text)
    assert any(ln.startswith("CELLS 8") for ln in text)
    assert any(ln.startswith("VECTORS velocity double") for ln in text)


# -- config --------------------------------------------------------------------------

def _write_config(tmp_path, body, name="run.cfg"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


GOOD = """
[problem]
nu = 0.05
alpha = 0.2
gamma = 0.01
alpha_q = 1.0
t_final = 1.0
box_lower = -1 -1
box_upper = 1 1

[discretization]
n = 2
num_steps = 2
"""


def test_config_roundtrip(tmp_path):
    cfg = RunConfig.load(_write_config(tmp_path, GOOD))
    data = cfg.problem_data()
    assert data.nu == 0.05
    assert data.box[0][0] == -1.0
    grid = cfg.grid(data)
    assert grid.num_steps == 2
    mesh = cfg.mesh()
    assert mesh.num_cells == 8


def test_config_unknown_key_named(tmp_path):
    bad = GOOD + "\n[solver]\nnewtom_max = 3\n"
    with pytest.raises(ConfigError) as err:
        RunConfig.load(_write_config(tmp_path, bad))
    assert "newtom_max" in str(err.value)


def test_config_unknown_section(tmp_path):
    bad = GOOD + "\n[misc]\na = 1\n"
    with pytest.raises(ConfigError) as err:
        RunConfig.load(_write_config(tmp_path, bad))
    assert "misc" in str(err.value)


def test_config_infeasible_box(tmp_path):
    bad = GOOD.replace("box_lower = -1 -1", "box_lower = 2 2")
    cfg = RunConfig.load(_write_config(tmp_path, bad))
    with pytest.raises(ConfigError):
        cfg.problem_data()


def test_config_expressions(tmp_path):
    body = GOOD + "\n"
    body = body.replace("[discretization]",
                        "y0 = 0 | 0\nyq = sin(pi*x)*t | 0\n\n[discretization]")
    cfg = RunConfig.load(_write_config(tmp_path, body))
    data = cfg.problem_data()
    pts = np.array([[0.5, 0.5]])
    assert data.yQ.value(pts, 1.0)[0, 0] == pytest.approx(1.0)


# -- CLI ------------------------------------------------------------------------------

def test_cli_requires_config():
    assert cli.main(["mesh-info"]) == cli.EXIT_CONFIG


def test_cli_bad_config_key(tmp_path, capsys):
    path = _write_config(tmp_path, GOOD + "\n[solver]\nbogus_key = 1\n")
    assert cli.main(["--config", path, "mesh-info"]) == cli.EXIT_CONFIG


def test_cli_mesh_info(tmp_path, capsys):
    path = _write_config(tmp_path, GOOD)
    assert cli.main(["--config", path, "mesh-info"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "vertices=9" in out
    assert "h=" in out


def test_cli_solve_state_zero_data(tmp_path, capsys):
    body = GOOD + "\n[output]\ndirectory = {}\n".format(tmp_path / "out")
    path = _write_config(tmp_path, body)
    assert cli.main(["--config", path, "solve-state"]) == cli.EXIT_OK
    fields = sorted((tmp_path / "out").glob("state_*.nsvfield"))
    assert len(fields) == 3
    vel, _ = vtkio.read_field(fields[-1])
    assert np.abs(vel).max() == 0.0


def test_cli_solve_state_manufactured_error_matches_module(tmp_path, capsys):
    body = """
[problem]
nu = 0.05
alpha = 0.2
gamma = 1.0
alpha_q = 1.0
t_final = 1.0
case = taylor-green-2d

[discretization]
n = 4
num_steps = 4

[output]
directory = {}
vtk = false
""".format(tmp_path / "out")
    path = _write_config(tmp_path, body)
    assert cli.main(["--config", path, "solve-state"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    printed = {}
    for line in out.splitlines():
        if "=" in line:
            key, _, val = line.partition("=")
            try:
                printed[key] = float(val)
            except ValueError:
                pass

    from nsvopt import state as st, verification as vf
    cfg = RunConfig.load(path)
    data = cfg.problem_data()
    space = cfg.space()
    grid = cfg.grid(data)
    case = cfg.manufactured_case()
    traj = st.solve_state(data, space, grid, case.forcing, cfg.solver_options())
    errs = vf.error_norms(case.velocity, traj, space)
    for key, val in errs.items():
        assert printed[key] == pytest.approx(val, rel=1e-12)


def test_cli_optimize_trivial_and_deterministic(tmp_path, capsys):
    body = """
[problem]
nu = 0.1
alpha = 0.2
gamma = 0.01
alpha_q = 1.0
t_final = 1.0
box_lower = -1 -1
box_upper = 1 1

[discretization]
n = 2
num_steps = 2

[output]
directory = {}
vtk = false
fields = false
""".format(tmp_path / "out")
    path = _write_config(tmp_path, body)
    assert cli.main(["--config", path, "optimize"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    J = [float(l.split("=")[1]) for l in out.splitlines()
         if l.startswith("objective=")][0]
    assert J <= 1e-12
    first = (tmp_path / "out" / "optimize_report.csv").read_bytes()
    assert cli.main(["--config", path, "optimize"]) == cli.EXIT_OK
    second = (tmp_path / "out" / "optimize_report.csv").read_bytes()
    assert first == second


def test_cli_optimize_infeasible_box(tmp_path):
    body = GOOD.replace("box_lower = -1 -1", "box_lower = 2 2")
    path = _write_config(tmp_path, body)
    assert cli.main(["--config", path, "optimize"]) == cli.EXIT_CONFIG


def test_cli_convergence_rejects_two_levels(tmp_path):
    body = GOOD + "\n[study]\nkind = state\nlevels = 2\n"
    path = _write_config(tmp_path, body)
    assert cli.main(["--config", path, "convergence"]) == cli.EXIT_CONFIG


def test_cli_convergence_summary_format(tmp_path, capsys):
    body = GOOD + """
[study]
kind = state
case = taylor-green-2d
levels = 3
base_n = 2
base_steps = 2
coupling = tau~h2

[output]
directory = {}
""".format(tmp_path / "out")
    path = _write_config(tmp_path, body)
    code = cli.main(["--config", path, "convergence"])
    out = capsys.readouterr().out
    import re
    lines = [l for l in out.splitlines() if l.startswith("norm=")]
    assert lines, out
    for line in lines:
        assert re.fullmatch(
            r"norm=\S+ slope=-?\d+\.\d{4} threshold=\d+\.\d{4} (PASS|FAIL)",
            line)
    assert (tmp_path / "out" / "rates.csv").exists()
    assert code in (cli.EXIT_OK, cli.EXIT_SOLVER)


def test_cli_solve_adjoint(tmp_path):
    body = GOOD + "\nalpha_t = 0.5\nyt = 0 | 0\n\n[output]\ndirectory = {}\nvtk = false\n".format(
        tmp_path / "out")
    # configparser needs keys inside sections; rebuild properly
    body = """
[problem]
nu = 0.05
alpha = 0.2
gamma = 0.01
alpha_t = 0.5
alpha_q = 1.0
t_final = 1.0
yt = 0 | 0

[discretization]
n = 2
num_steps = 2

[output]
directory = {}
vtk = false
""".format(tmp_path / "out")
    path = _write_config(tmp_path, body)
    assert cli.main(["--config", path, "solve-adjoint"]) == cli.EXIT_OK
    adj_fields = sorted((tmp_path / "out").glob("adjoint_*.nsvfield"))
    assert len(adj_fields) == 3
