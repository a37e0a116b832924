"""Problem data and time partitions."""

from dataclasses import dataclass, field

import numpy as np


class TimeGrid:
    """Partition 0 = t_0 < ... < t_N = T with quasi-uniformity check.

    The largest step must stay below ``rho0`` times every step (default
    rho0 = 2); violating grids are rejected at construction.
    """

    def __init__(self, nodes, rho0=2.0):
        self.nodes = np.asarray(nodes, dtype=float)
        if self.nodes.ndim != 1 or len(self.nodes) < 2:
            raise ValueError("need at least two time nodes")
        if self.nodes[0] != 0.0:
            raise ValueError("time grid must start at 0")
        self.steps = np.diff(self.nodes)
        if not (self.steps > 0).all():
            raise ValueError("time nodes must be strictly increasing")
        self.tau = float(self.steps.max())
        self.rho0 = float(rho0)
        if not (self.tau < self.rho0 * self.steps).all():
            raise ValueError(
                "time grid violates quasi-uniformity: max step {:.3g} vs "
                "rho0 * min step {:.3g}".format(self.tau,
                                                self.rho0 * self.steps.min()))
        self.nodes.setflags(write=False)

    @classmethod
    def uniform(cls, T, num_steps, rho0=2.0):
        if num_steps < 1:
            raise ValueError("need at least one step")
        return cls(np.linspace(0.0, float(T), num_steps + 1), rho0)

    @property
    def T(self):
        return float(self.nodes[-1])

    @property
    def num_steps(self):
        return len(self.steps)

    def __repr__(self):
        return "TimeGrid(T={}, steps={}, tau={:.4g})".format(
            self.T, self.num_steps, self.tau)


@dataclass
class ProblemData:
    """Physical and cost parameters of the control problem.

    Targets are vector callbacks: ``y0(x)``, ``yT(x)`` and ``yQ(x, t)``
    map an (npts, dim) array (plus time for yQ) to (npts, dim) values;
    None means identically zero.  ``y0``/``yT`` may also carry gradients
    as (value, grad) pairs or objects with .value/.grad, which the
    divergence-free projection needs.  ``box`` holds per-component
    bounds (lo, hi) with +-inf allowed.
    """

    nu: float
    alpha: float
    gamma: float
    alpha_T: float
    alpha_Q: float
    T: float
    box: tuple = (None, None)
    y0: object = None
    yT: object = None
    yQ: object = None
    dim: int = 2
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if self.alpha == 0:
            raise ValueError("Voigt length scale alpha must be nonzero")
        if not self.gamma > 0:
            raise ValueError("control cost gamma must be positive")
        if self.alpha_T < 0 or self.alpha_Q < 0:
            raise ValueError("tracking weights must be non-negative")
        if self.alpha_T == 0 and self.alpha_Q == 0:
            raise ValueError("at least one tracking weight must be positive")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        lo, hi = self.box
        lo = np.full(self.dim, -np.inf) if lo is None else np.asarray(lo, float)
        hi = np.full(self.dim, np.inf) if hi is None else np.asarray(hi, float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ValueError("box bounds need one entry per component")
        if (lo > hi).any():
            raise ValueError("box lower bound exceeds upper bound")
        self.box = (lo, hi)
