"""Assembly of the forms used by the scheme.

Provides mass, stiffness, the Voigt combination (u,v) + alpha^2 (grad u,
grad v), the divergence coupling, and the skew-symmetrized convection
trilinear form with its state/linearized/adjoint operator variants.
All assembly is vectorized over cells; quadrature is exact for the
polynomial degrees that occur on affine cells, so the algebraic
identities of the trilinear form hold to rounding.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .space import FeFunction


class Operators:
    """Data-independent operators of a space, built once and cached.

    Attributes
    ----------
    M_s, K_s : scalar P2 mass/stiffness (CSR).
    M, K : vector (component-blocked) mass/stiffness.
    B : divergence coupling, shape (n_pre, n_vel); row q, col z gives
        the pairing of div z with pressure basis q.
    mean_vec : (n_pre,) pressure basis integrals (zero-mean constraint).
    cell_load : (n_scalar, nc) sparse; column K holds the integrals of
        the P2 basis over cell K (exact loads for cellwise-constant
        data, and cell averages when transposed).
    """

    def __init__(self, space):
        phi, psi, wdet = space.phi, space.psi, space.wdet
        gphi = space.grad_phi
        n_s, n_p = space.n_scalar, space.n_pre
        cd, cd1 = space.cell_dofs, space.cell_dofs_p1

        me = np.einsum("cq,aq,bq->cab", wdet, phi, phi)
        ke = np.einsum("cq,caqd,cbqd->cab", wdet, gphi, gphi)
        self.M_s = _scatter_square(me, cd, n_s)
        self.K_s = _scatter_square(ke, cd, n_s)
        eye = sp.eye(space.dim, format="csr")
        self.M = sp.kron(eye, self.M_s, format="csr")
        self.K = sp.kron(eye, self.K_s, format="csr")

        blocks = []
        for c in range(space.dim):
            be = np.einsum("cq,bq,caq->cba", wdet, psi, gphi[:, :, :, c])
            rows = np.broadcast_to(cd1[:, :, None], be.shape)
            cols = np.broadcast_to(cd[:, None, :], be.shape)
            blocks.append(sp.coo_matrix(
                (be.ravel(), (rows.ravel(), cols.ravel())),
                shape=(n_p, n_s)).tocsr())
        self.B = sp.hstack(blocks, format="csr")

        self.mean_vec = np.zeros(n_p)
        pe = np.einsum("cq,bq->cb", wdet, psi)
        np.add.at(self.mean_vec, cd1, pe)

        le = np.einsum("cq,aq->ca", wdet, phi)
        nc = space.mesh.num_cells
        cidx = np.broadcast_to(np.arange(nc)[:, None], le.shape)
        self.cell_load = sp.coo_matrix(
            (le.ravel(), (cd.ravel(), cidx.ravel())), shape=(n_s, nc)).tocsr()


def _scatter_square(elem, dofs, n):
    rows = np.broadcast_to(dofs[:, :, None], elem.shape)
    cols = np.broadcast_to(dofs[:, None, :], elem.shape)
    return sp.coo_matrix((elem.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(n, n)).tocsr()


def operators(space):
    """Cached :class:`Operators` for a space."""
    ops = space._cache.get("operators")
    if ops is None:
        ops = Operators(space)
        space._cache["operators"] = ops
    return ops


# -- spec-facing operator constructors -----------------------------------------

def assemble_mass(space):
    return operators(space).M


def assemble_stiffness(space):
    return operators(space).K


def assemble_a_alpha(space, alpha):
    """M + alpha^2 K.  alpha = 0 is rejected: the Voigt term defines the
    model and every step matrix divides by it implicitly."""
    if alpha == 0.0:
        raise ValueError("the Voigt length scale alpha must be nonzero")
    ops = operators(space)
    return (ops.M + alpha ** 2 * ops.K).tocsr()


def assemble_div(space):
    return operators(space).B


def _coeffs(u):
    return u.velocity if isinstance(u, FeFunction) else np.asarray(u, dtype=float)


def _check_space(space, *fns):
    for f in fns:
        if isinstance(f, FeFunction) and f.space is not space:
            raise ValueError("FeFunction does not live on the given space")


def apply_trilinear(space, u, v, w):
    """c(u, v, w) = [b(u, v, w) - b(u, w, v)] / 2 by quadrature."""
    _check_space(space, u, v, w)
    uq = space.velocity_at_quad(_coeffs(u))
    vq = space.velocity_at_quad(_coeffs(v))
    wq = space.velocity_at_quad(_coeffs(w))
    gv = space.velocity_grad_at_quad(_coeffs(v))
    gw = space.velocity_grad_at_quad(_coeffs(w))
    b1 = np.einsum("cq,cqe,cqde,cqd->", space.wdet, uq, gv, wq)
    b2 = np.einsum("cq,cqe,cqde,cqd->", space.wdet, uq, gw, vq)
    return 0.5 * (b1 - b2)


def assemble_convection(space, y, mode):
    """Convection operators linearized around the velocity ``y``.

    mode='state'           N(y):  w^T N(y) v = c(y, v, w)
    mode='state_jacobian'  L(y):  w^T L(y) z = c(z, y, w) + c(y, z, w)
    mode='adjoint'         L(y)^T, pairing lambda -> c(w, y, lam) + c(y, w, lam)
    """
    _check_space(space, y)
    ycoef = _coeffs(y)
    yq = space.velocity_at_quad(ycoef)
    wdet, phi, gphi = space.wdet, space.phi, space.grad_phi
    n_s, dim = space.n_scalar, space.dim
    cd = space.cell_dofs

    conv = np.einsum("cqd,cbqd->cbq", yq, gphi)          # (y . grad) phi_b
    de = np.einsum("cq,aq,cbq->cab", wdet, phi, conv)
    skew = 0.5 * (de - de.transpose(0, 2, 1))
    if mode == "state":
        return sp.kron(sp.eye(dim, format="csr"),
                       _scatter_square(skew, cd, n_s), format="csr")
    if mode not in ("state_jacobian", "adjoint"):
        raise ValueError("unknown convection mode '{}'".format(mode))

    gy = space.velocity_grad_at_quad(ycoef)
    data, rows, cols = [], [], []
    rr = np.broadcast_to(cd[:, :, None], de.shape).ravel()
    cc = np.broadcast_to(cd[:, None, :], de.shape).ravel()
    for d in range(dim):
        for e in range(dim):
            # c(z, y, w) contribution: [ (z.grad) y . w - (z.grad) w . y ] / 2
            ee = np.einsum("cq,aq,bq,cq->cab", wdet, phi, phi, gy[:, :, d, e])
            g2 = np.einsum("cq,cq,bq,caq->cab",
                           wdet, yq[:, :, d], phi, gphi[:, :, :, e])
            block = 0.5 * (ee - g2)
            if d == e:
                block = block + skew
            data.append(block.ravel())
            rows.append(rr + d * n_s)
            cols.append(cc + e * n_s)
    L = sp.coo_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(space.n_vel, space.n_vel)).tocsr()
    return L if mode == "state_jacobian" else L.T.tocsr()


# -- Dirichlet handling and saddle-point systems --------------------------------

def dirichlet_eliminate(A, dofs, n=None, diag=1.0):
    """Symmetric elimination: zero rows and columns, unit diagonal."""
    n = A.shape[0] if n is None else n
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    out = (D @ A @ D).tocsr()
    if diag:
        fixed = np.zeros(n)
        fixed[dofs] = diag
        out = (out + sp.diags(fixed)).tocsr()
    return out


def zero_columns(B, dofs):
    keep = np.ones(B.shape[1])
    keep[dofs] = 0.0
    return (B @ sp.diags(keep)).tocsr()


class SaddleSolver:
    """Direct solver for the bordered saddle system

        [ A    s*B^T  0 ] [ v ]   [ f ]
        [ B    0      m ] [ p ] = [ g ]
        [ 0    m^T    0 ] [ z ]   [ d ]

    with Dirichlet rows/columns of A eliminated symmetrically and the
    matching columns of B zeroed.  ``m`` is the pressure-mean vector, so
    p has zero discrete mean; ``s`` scales the pressure coupling in the
    momentum rows (tau_n in time steps, 1 otherwise).

    The dense border would wreck the fill-reducing ordering, so the
    factorization pins one pressure dof instead and the bordered
    solution is recovered exactly: with zero-trace velocity dofs both
    1^T B and B^T 1 vanish, hence z = 1^T g / |Omega| by compatibility,
    the pinned equation is redundant, and the constant-pressure shift
    that restores the mean condition does not touch the momentum rows.
    """

    def __init__(self, space, A_vel, bt_scale=1.0):
        ops = operators(space)
        self.space = space
        self.bt_scale = bt_scale
        self.mean_vec = ops.mean_vec
        self.volume = space.mesh.volume
        A = dirichlet_eliminate(A_vel, space.dirichlet_vel, n=space.n_vel)
        B, BT_pin, pin = _pinned_div_blocks(space)
        mat = sp.bmat([[A, bt_scale * BT_pin], [B, pin]], format="csc")
        try:
            self.lu = spla.splu(mat)
        except RuntimeError as exc:
            raise SolverError("saddle-point factorization failed: {}".format(exc))
        self.n_vel = space.n_vel
        self.n_pre = space.n_pre

    def solve(self, rhs_vel, rhs_div=None, rhs_mean=0.0):
        """Returns (velocity, pressure, mean multiplier)."""
        rhs = np.zeros(self.n_vel + self.n_pre)
        rhs[:self.n_vel] = rhs_vel
        rhs[self.space.dirichlet_vel] = 0.0
        z = 0.0
        if rhs_div is not None:
            z = float(rhs_div.sum()) / self.volume
            rhs[self.n_vel:] = rhs_div - self.mean_vec * z
        rhs[self.n_vel] = 0.0                      # pinned pressure dof
        sol = self.lu.solve(rhs)
        vel = sol[:self.n_vel]
        p = sol[self.n_vel:]
        p = p + (rhs_mean - self.mean_vec @ p) / self.volume
        return vel, p, z


def _pinned_div_blocks(space):
    """Eliminated divergence blocks with pressure dof 0 pinned, cached."""
    cached = space._cache.get("pinned_div")
    if cached is None:
        ops = operators(space)
        B = zero_columns(ops.B, space.dirichlet_vel).tolil()
        B[0, :] = 0.0
        BT = zero_columns(ops.B, space.dirichlet_vel).T.tolil()
        BT[:, 0] = 0.0
        pin = sp.coo_matrix(([1.0], ([0], [0])),
                            shape=(space.n_pre, space.n_pre))
        cached = (B.tocsr(), BT.tocsr(), pin.tocsr())
        space._cache["pinned_div"] = cached
    return cached


# -- loads and integrals from callbacks ------------------------------------------

def _eval_vector(space, value, t=None):
    x = space.quad_x.reshape(-1, space.dim)
    vals = value(x) if t is None else value(x, t)
    return np.asarray(vals, dtype=float).reshape(
        space.mesh.num_cells, space.nq, space.dim)


def _eval_scalar(space, value, t=None):
    x = space.quad_x.reshape(-1, space.dim)
    vals = value(x) if t is None else value(x, t)
    return np.asarray(vals, dtype=float).reshape(space.mesh.num_cells, space.nq)


def load_mass(space, value, t=None):
    """(f, phi_i) for a vector callback f."""
    fq = _eval_vector(space, value, t)
    out = np.zeros(space.n_vel)
    for c in range(space.dim):
        le = np.einsum("cq,aq,cq->ca", space.wdet, space.phi, fq[:, :, c])
        np.add.at(out, c * space.n_scalar + space.cell_dofs, le)
    return out


def load_a_alpha(space, value, grad, alpha, t=None):
    """(f, phi_i) + alpha^2 (grad f, grad phi_i) for callbacks (f, grad f)."""
    out = load_mass(space, value, t)
    x = space.quad_x.reshape(-1, space.dim)
    g = grad(x) if t is None else grad(x, t)
    gq = np.asarray(g, dtype=float).reshape(
        space.mesh.num_cells, space.nq, space.dim, space.dim)
    for c in range(space.dim):
        le = np.einsum("cq,caqe,cqe->ca", space.wdet, space.grad_phi, gq[:, :, c, :])
        np.add.at(out, c * space.n_scalar + space.cell_dofs, alpha ** 2 * le)
    return out


def load_div(space, value, t=None):
    """(p, div phi_i) for a scalar callback p."""
    pq = _eval_scalar(space, value, t)
    out = np.zeros(space.n_vel)
    for c in range(space.dim):
        le = np.einsum("cq,caq,cq->ca", space.wdet, space.grad_phi[:, :, :, c], pq)
        np.add.at(out, c * space.n_scalar + space.cell_dofs, le)
    return out


def integral_scalar(space, value, t=None):
    return float(np.sum(space.wdet * _eval_scalar(space, value, t)))


def integral_vector_sq(space, value, t=None):
    fq = _eval_vector(space, value, t)
    return float(np.einsum("cq,cqd,cqd->", space.wdet, fq, fq))


# -- norms and errors ------------------------------------------------------------

def norm_l2(space, vcoeffs):
    M = operators(space).M
    return float(np.sqrt(max(vcoeffs @ (M @ vcoeffs), 0.0)))


def norm_h1(space, vcoeffs):
    ops = operators(space)
    val = vcoeffs @ (ops.M @ vcoeffs) + vcoeffs @ (ops.K @ vcoeffs)
    return float(np.sqrt(max(val, 0.0)))


def velocity_error_sq(space, vcoeffs, value, grad=None, t=None):
    """Squared L2 and H1-seminorm errors against callbacks at time t."""
    diff = space.velocity_at_quad(vcoeffs) - _eval_vector(space, value, t)
    l2 = float(np.einsum("cq,cqd,cqd->", space.wdet, diff, diff))
    semi = 0.0
    if grad is not None:
        x = space.quad_x.reshape(-1, space.dim)
        g = grad(x) if t is None else grad(x, t)
        gq = np.asarray(g, dtype=float).reshape(
            space.mesh.num_cells, space.nq, space.dim, space.dim)
        gdiff = space.velocity_grad_at_quad(vcoeffs) - gq
        semi = float(np.einsum("cq,cqde,cqde->", space.wdet, gdiff, gdiff))
    return l2, semi


def pressure_error_sq(space, pcoeffs, value, t=None):
    diff = space.pressure_at_quad(pcoeffs) - _eval_scalar(space, value, t)
    return float(np.einsum("cq,cq,cq->", space.wdet, diff, diff))
