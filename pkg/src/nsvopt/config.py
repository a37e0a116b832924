"""Run configuration: INI-style sections with strict key validation.

Unknown sections or keys are rejected by name (typo safety).  Analytic
inputs are expression strings over x y z t with | separating vector
components; they go through the restricted expression parser, never
eval.
"""

import configparser
import os

import numpy as np

from . import control as ctrl
from . import state as st
from .errors import ConfigError
from .expressions import parse_expression, parse_vector_expression
from .mesh import build_structured, load_mesh, refine_uniform
from .problem import ProblemData, TimeGrid
from .space import MixedSpace

_SCHEMA = {
    "problem": {"nu", "alpha", "gamma", "alpha_t", "alpha_q", "t_final",
                "box_lower", "box_upper", "case", "y0", "yq", "yt", "forcing"},
    "discretization": {"dim", "mesh", "n", "refine", "num_steps"},
    "solver": {"newton_max", "abs_tol", "rel_tol", "picard_after",
               "force_picard"},
    "optimizer": {"tol", "max_iter", "armijo", "backtrack"},
    "output": {"directory", "vtk", "fields"},
    "study": {"kind", "case", "levels", "base_n", "base_steps", "coupling",
              "thresholds", "gamma", "optimizer_tol"},
}

_DEFAULT_THRESHOLDS = {
    ("state", "h"): {"nodal_max_h1": 0.9, "l2_h1": 0.9},
    ("state", "tau"): {"linf_h1": 0.45},
    ("adjoint", "h"): {"nodal_max_h1": 0.9, "l2_h1": 0.9, "linf_h1": 0.9},
    ("control", "tau"): {"control_l2": 0.45},
}


class RunConfig:
    """Parsed and validated configuration file."""

    def __init__(self, parser, path="<config>"):
        self.path = path
        self._cp = parser
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError("unknown config section [{}]".format(section))
            for key in parser[section]:
                if key not in _SCHEMA[section]:
                    raise ConfigError(
                        "unknown config key '{}' in section [{}]".format(
                            key, section))

    @classmethod
    def load(cls, path):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not os.path.exists(path):
            raise ConfigError("config file not found: {}".format(path))
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError("could not parse {}: {}".format(path, exc))
        return cls(parser, path)

    # -- typed getters ----------------------------------------------------------

    def _get(self, section, key, cast, default=None, required=False):
        try:
            raw = self._cp.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            if required:
                raise ConfigError(
                    "missing required key '{}' in section [{}]".format(
                        key, section))
            return default
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigError("invalid value '{}' for [{}] {}".format(
                raw, section, key))

    def _vector(self, section, key, dim, default=None):
        raw = self._get(section, key, str)
        if raw is None:
            return default
        parts = raw.split()
        if len(parts) != dim:
            raise ConfigError(
                "[{}] {} needs {} entries".format(section, key, dim))
        return np.array([float(p) for p in parts])

    def _field(self, key, dim):
        raw = self._get("problem", key, str)
        if raw is None:
            return None
        return parse_vector_expression([s.strip() for s in raw.split("|")], dim)

    # -- builders ----------------------------------------------------------------

    @property
    def dim(self):
        return self._get("discretization", "dim", int, default=2)

    def case_name(self):
        return self._get("problem", "case", str)

    def manufactured_case(self):
        from .verification import build_case
        name = self.case_name()
        if name is None:
            return None
        data = self.problem_data()
        return build_case(name, nu=data.nu, alpha=data.alpha)

    def problem_data(self):
        dim = self.dim
        case = self.case_name()
        y0 = self._field("y0", dim)
        yT = self._field("yt", dim)
        yQ = self._field("yq", dim)
        if case is not None:
            from .verification import build_case
            c = build_case(case,
                           nu=self._get("problem", "nu", float, required=True),
                           alpha=self._get("problem", "alpha", float,
                                           required=True))
            if y0 is None:
                y0 = c.y0
            dim = c.dim
        try:
            return ProblemData(
                nu=self._get("problem", "nu", float, required=True),
                alpha=self._get("problem", "alpha", float, required=True),
                gamma=self._get("problem", "gamma", float, default=1.0),
                alpha_T=self._get("problem", "alpha_t", float, default=0.0),
                alpha_Q=self._get("problem", "alpha_q", float, default=1.0),
                T=self._get("problem", "t_final", float, required=True),
                box=(self._vector("problem", "box_lower", dim),
                     self._vector("problem", "box_upper", dim)),
                y0=y0, yT=yT, yQ=yQ, dim=dim)
        except ValueError as exc:
            raise ConfigError(str(exc))

    def forcing(self):
        case = self.manufactured_case()
        if case is not None:
            return case.forcing
        return self._field("forcing", self.dim)

    def mesh(self):
        src = self._get("discretization", "mesh", str, default="structured")
        case = self.case_name()
        dim = 3 if (case or "").endswith("3d") else self.dim
        if src == "structured":
            n = self._get("discretization", "n", int, default=4)
            if n < 1:
                raise ConfigError("structured mesh needs n >= 1")
            m = build_structured([(0.0, 1.0)] * dim, n)
        else:
            try:
                m = load_mesh(src)
            except OSError as exc:
                raise ConfigError("cannot read mesh '{}': {}".format(src, exc))
        for _ in range(self._get("discretization", "refine", int, default=0)):
            m = refine_uniform(m)
        return m

    def space(self, mesh=None):
        return MixedSpace(mesh if mesh is not None else self.mesh())

    def grid(self, data=None):
        data = data or self.problem_data()
        steps = self._get("discretization", "num_steps", int, required=True)
        if steps < 1:
            raise ConfigError("num_steps must be >= 1")
        return TimeGrid.uniform(data.T, steps)

    def solver_options(self):
        return st.SolverOptions(
            newton_max=self._get("solver", "newton_max", int, default=25),
            abs_tol=self._get("solver", "abs_tol", float, default=1e-10),
            rel_tol=self._get("solver", "rel_tol", float, default=1e-9),
            picard_after=self._get("solver", "picard_after", int, default=2),
            force_picard=self._get("solver", "force_picard", bool,
                                   default=False))

    def optimizer_options(self):
        return ctrl.OptimizeOptions(
            tol=self._get("optimizer", "tol", float, default=1e-8),
            max_iter=self._get("optimizer", "max_iter", int, default=400),
            armijo=self._get("optimizer", "armijo", float, default=1e-4),
            backtrack=self._get("optimizer", "backtrack", float, default=0.5),
            solver=self.solver_options())

    def study(self):
        from .verification import StudyConfig
        kind = self._get("study", "kind", str, default="state")
        try:
            cfg = StudyConfig(
                kind=kind,
                case=self._get("study", "case", str, default="stream-poly-2d"),
                levels=self._get("study", "levels", int, default=4),
                base_n=self._get("study", "base_n", int, default=4),
                base_steps=self._get("study", "base_steps", int, default=2),
                coupling=self._get("study", "coupling", str, default="tau~h2"),
                T=self._get("problem", "t_final", float, default=1.0),
                nu=self._get("problem", "nu", float, default=0.05),
                alpha=self._get("problem", "alpha", float, default=0.2),
                gamma=self._get("study", "gamma", float, default=5e-2),
                solver=self.solver_options(),
                optimizer_tol=self._get("study", "optimizer_tol", float,
                                        default=1e-8))
        except ValueError as exc:
            raise ConfigError(str(exc))
        return cfg

    def thresholds(self, study_cfg):
        raw = self._get("study", "thresholds", str)
        if raw is not None:
            out = {}
            for part in raw.split():
                if "=" not in part:
                    raise ConfigError(
                        "threshold entries look like norm=value, got '{}'".format(
                            part))
                name, val = part.split("=", 1)
                out[name] = float(val)
            return out
        variable = "tau" if study_cfg.coupling == "tau-only" else "h"
        if study_cfg.kind == "control":
            variable = "tau"
        return dict(_DEFAULT_THRESHOLDS[(study_cfg.kind, variable)])

    def output_dir(self, override=None):
        out = override or self._get("output", "directory", str, default="out")
        os.makedirs(out, exist_ok=True)
        return out

    def write_vtk(self):
        return self._get("output", "vtk", bool, default=True)

    def write_fields(self):
        return self._get("output", "fields", bool, default=True)
