"""Taylor-Hood P2/P1 mixed space on a simplicial mesh.

Velocity coefficients are component-blocked: dof ``c * n_scalar + i``
holds component ``c`` at scalar P2 node ``i`` (vertices first, then
edge midpoints).  Pressure dofs are the P1 vertex values.  All boundary
velocity dofs are Dirichlet; the pressure carries a zero-mean
constraint enforced through one multiplier row in saddle systems.

The space precomputes basis values, physical gradients and quadrature
geometry once; it is immutable and safe to share.
"""

import numpy as np

from .basis import p1_basis, p2_basis
from .quadrature import simplex_rule


class MixedSpace:
    """Degree-of-freedom layout plus cached quadrature data.

    Attributes
    ----------
    n_scalar, n_vel, n_pre : int
        Scalar P2, vector velocity and pressure dof counts.
    cell_dofs : (nc, nloc) int array
        Scalar P2 local-to-global map.
    dirichlet_scalar, dirichlet_vel : int arrays
        Constrained scalar nodes / velocity dofs (all components).
    phi, grad_phi : arrays
        P2 values (nloc, nq) and physical gradients (nc, nloc, nq, dim).
    psi, grad_psi : arrays
        P1 counterparts.
    wdet : (nc, nq) array
        Quadrature weights times |det| per cell.
    quad_x : (nc, nq, dim) array
        Physical quadrature points.
    """

    def __init__(self, mesh, quad_npts_axis=3):
        self.mesh = mesh
        dim = mesh.dim
        self.dim = dim
        self.n_scalar = mesh.num_vertices + mesh.num_edges
        self.n_vel = dim * self.n_scalar
        self.n_pre = mesh.num_vertices

        self.cell_dofs = np.hstack(
            [mesh.cells, mesh.num_vertices + mesh.cell_to_edge])
        self.cell_dofs_p1 = mesh.cells
        self.nloc = self.cell_dofs.shape[1]
        self.nloc_p1 = dim + 1

        self.quad_ref, self.quad_w = simplex_rule(dim, quad_npts_axis)
        self.nq = len(self.quad_w)
        self.phi, grad_phi_ref = p2_basis(dim, self.quad_ref)
        self.psi, grad_psi_ref = p1_basis(dim, self.quad_ref)

        pts = mesh.vertices[mesh.cells]
        jac = (pts[:, 1:, :] - pts[:, :1, :]).transpose(0, 2, 1)  # columns v_k - v_0
        self.absdet = np.abs(np.linalg.det(jac))
        inv_t = np.linalg.inv(jac).transpose(0, 2, 1)
        self.grad_phi = np.einsum("cde,aqe->caqd", inv_t, grad_phi_ref)
        self.grad_psi = np.einsum("cde,aqe->caqd", inv_t, grad_psi_ref)
        self.quad_x = pts[:, :1, :] + np.einsum("cde,qe->cqd", jac, self.quad_ref)
        self.wdet = self.quad_w[None, :] * self.absdet[:, None]

        bmask_v = mesh.boundary_vertex_mask()
        bmask_e = mesh.boundary_edge_mask()
        self.dirichlet_scalar = np.concatenate([
            np.flatnonzero(bmask_v),
            mesh.num_vertices + np.flatnonzero(bmask_e)])
        self.dirichlet_scalar.sort()
        self.dirichlet_vel = np.concatenate(
            [c * self.n_scalar + self.dirichlet_scalar for c in range(dim)])

        self.scalar_node_coords = np.vstack([
            mesh.vertices,
            0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])])

        self._cache = {}

    # -- evaluation at quadrature points ---------------------------------------

    def component(self, vcoeffs, c):
        return vcoeffs[c * self.n_scalar:(c + 1) * self.n_scalar]

    def velocity_at_quad(self, vcoeffs):
        """Values (nc, nq, dim) of a velocity coefficient vector."""
        out = np.empty((self.mesh.num_cells, self.nq, self.dim))
        for c in range(self.dim):
            loc = self.component(vcoeffs, c)[self.cell_dofs]
            out[:, :, c] = np.einsum("ca,aq->cq", loc, self.phi)
        return out

    def velocity_grad_at_quad(self, vcoeffs):
        """Gradients (nc, nq, dim, dim); entry [..., d, e] is d y_d / d x_e."""
        out = np.empty((self.mesh.num_cells, self.nq, self.dim, self.dim))
        for c in range(self.dim):
            loc = self.component(vcoeffs, c)[self.cell_dofs]
            out[:, :, c, :] = np.einsum("ca,caqe->cqe", loc, self.grad_phi)
        return out

    def pressure_at_quad(self, pcoeffs):
        loc = pcoeffs[self.cell_dofs_p1]
        return np.einsum("ca,aq->cq", loc, self.psi)

    # -- nodal interpolation ----------------------------------------------------

    def interpolate_velocity(self, value, t=None):
        """Nodal P2 interpolant of a vector callback ``value(x[, t])``."""
        x = self.scalar_node_coords
        vals = value(x) if t is None else value(x, t)
        vals = np.asarray(vals, dtype=float).reshape(len(x), self.dim)
        return vals.T.reshape(-1).copy()

    def interpolate_pressure(self, value, t=None):
        x = self.mesh.vertices
        vals = value(x) if t is None else value(x, t)
        return np.asarray(vals, dtype=float).reshape(len(x)).copy()

    def zero_velocity(self):
        return np.zeros(self.n_vel)

    def apply_dirichlet(self, vcoeffs):
        """Zero the Dirichlet entries in place; returns the array."""
        vcoeffs[self.dirichlet_vel] = 0.0
        return vcoeffs

    def __repr__(self):
        return "MixedSpace(dim={}, n_vel={}, n_pre={})".format(
            self.dim, self.n_vel, self.n_pre)


class FeFunction:
    """Velocity/pressure coefficient pair on a :class:`MixedSpace`.

    ``velocity`` has length ``space.n_vel`` (component-blocked),
    ``pressure`` length ``space.n_pre`` or None.
    """

    def __init__(self, space, velocity=None, pressure=None):
        self.space = space
        self.velocity = (np.zeros(space.n_vel) if velocity is None
                         else np.asarray(velocity, dtype=float))
        if self.velocity.shape != (space.n_vel,):
            raise ValueError("velocity coefficients have wrong length")
        self.pressure = None
        if pressure is not None:
            self.pressure = np.asarray(pressure, dtype=float)
            if self.pressure.shape != (space.n_pre,):
                raise ValueError("pressure coefficients have wrong length")

    def max_dirichlet_violation(self):
        if not len(self.space.dirichlet_vel):
            return 0.0
        return float(np.abs(self.velocity[self.space.dirichlet_vel]).max())

    def copy(self):
        return FeFunction(self.space, self.velocity.copy(),
                          None if self.pressure is None else self.pressure.copy())
