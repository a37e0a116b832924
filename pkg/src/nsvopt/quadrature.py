"""Quadrature rules on reference simplices and intervals.

Simplex rules are conical (collapsed Gauss-Jacobi) products, exact for
polynomials of total degree ``2n - 1`` with ``n`` points per axis and
all weights positive.  The default n=3 gives degree 5, which integrates
every form in the scheme exactly on affine cells (three P2 factors with
one differentiation have degree 5).
"""

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def gauss_interval(n, a, b):
    """n-point Gauss-Legendre nodes/weights on [a, b]."""
    x, w = roots_legendre(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def _shifted_jacobi(n, alpha):
    """Nodes/weights for integral of f(s) (1-s)^alpha over [0, 1]."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def simplex_rule(dim, npts_axis=3):
    """Quadrature on the unit reference simplex.

    Returns
    -------
    points : (nq, dim) array
    weights : (nq,) array, summing to 1/2 (2D) or 1/6 (3D)
    """
    if dim == 2:
        s1, w1 = _shifted_jacobi(npts_axis, 1.0)
        s2, w2 = roots_legendre(npts_axis)
        s2, w2 = 0.5 * (s2 + 1.0), 0.5 * w2
        x = np.repeat(s1, npts_axis)
        y = np.tile(s2, npts_axis) * (1.0 - x)
        w = np.outer(w1, w2).ravel()
        return np.column_stack([x, y]), w
    if dim == 3:
        s1, w1 = _shifted_jacobi(npts_axis, 2.0)
        s2, w2 = _shifted_jacobi(npts_axis, 1.0)
        s3, w3 = roots_legendre(npts_axis)
        s3, w3 = 0.5 * (s3 + 1.0), 0.5 * w3
        g1, g2, g3 = np.meshgrid(s1, s2, s3, indexing="ij")
        x = g1.ravel()
        y = (g2 * (1.0 - g1)).ravel()
        z = (g3 * (1.0 - g1) * (1.0 - g2)).ravel()
        w = np.einsum("i,j,k->ijk", w1, w2, w3).ravel()
        return np.column_stack([x, y, z]), w
    raise ValueError("dim must be 2 or 3")
