"""Lagrange basis functions on reference simplices.

Barycentric coordinates are (l0, ..., ld) with l0 = 1 - sum(xi).  P2
midpoint nodes follow ``mesh.LOCAL_EDGES`` so that cell dof layouts stay
consistent between the mesh and the spaces built on it.
"""

import numpy as np

from .mesh import LOCAL_EDGES


def p1_basis(dim, points):
    """P1 values and gradients at reference points.

    Returns (vals, grads) with shapes (dim+1, nq) and (dim+1, nq, dim).
    """
    pts = np.asarray(points, dtype=float)
    nq = len(pts)
    lam = np.empty((dim + 1, nq))
    lam[0] = 1.0 - pts.sum(axis=1)
    for i in range(dim):
        lam[i + 1] = pts[:, i]
    grads = np.empty((dim + 1, nq, dim))
    grads[0] = -1.0
    for i in range(dim):
        grads[i + 1] = 0.0
        grads[i + 1, :, i] = 1.0
    return lam, grads


def p2_basis(dim, points):
    """P2 values and gradients at reference points.

    Node order: the dim+1 vertices, then one midpoint per local edge.
    Returns (vals, grads) with shapes (nloc, nq) and (nloc, nq, dim),
    nloc = 6 in 2D and 10 in 3D.
    """
    lam, dlam = p1_basis(dim, points)
    edges = LOCAL_EDGES[dim]
    nq = lam.shape[1]
    nloc = (dim + 1) + len(edges)
    vals = np.empty((nloc, nq))
    grads = np.empty((nloc, nq, dim))
    for a in range(dim + 1):
        vals[a] = lam[a] * (2.0 * lam[a] - 1.0)
        grads[a] = (4.0 * lam[a] - 1.0)[:, None] * dlam[a]
    for k, (i, j) in enumerate(edges):
        a = dim + 1 + k
        vals[a] = 4.0 * lam[i] * lam[j]
        grads[a] = 4.0 * (lam[i][:, None] * dlam[j] + lam[j][:, None] * dlam[i])
    return vals, grads
