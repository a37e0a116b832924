"""Space-time finite element solver and box-constrained control optimizer
for incompressible Navier-Stokes-Voigt flow.

Piecewise-constant-in-time (backward-Euler type) stepping combined with
Taylor-Hood P2/P1 elements in space; adjoint-based gradients; projected
gradient descent over cellwise-constant controls with box bounds; and a
manufactured-solution verification harness for the expected first-order
space and half-order time convergence."""

__version__ = "0.1.0"
