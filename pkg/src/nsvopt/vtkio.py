"""Field and mesh serialization: legacy ASCII VTK plus an exact
coefficient format.

VTK files carry vertex-sampled data for visualization.  The ``nsvfield``
format dumps all P2/P1 coefficients at 17 significant digits, which
round-trips IEEE doubles bit-exactly.
"""

import numpy as np

from .errors import MeshFormatError

_VTK_CELL_TYPE = {2: 5, 3: 10}        # triangle, tetrahedron


def write_vtk(path, mesh, point_data=None):
    """Legacy ASCII VTK unstructured grid with optional vertex data.

    point_data maps names to (nv,) scalars or (nv, dim) vectors; vector
    data is padded to three components as VTK requires.
    """
    point_data = point_data or {}
    nv, nc = mesh.num_vertices, mesh.num_cells
    with open(path, "w", newline="\n") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("nsvopt field output\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write("POINTS {} double\n".format(nv))
        for v in mesh.vertices:
            coords = list(v) + [0.0] * (3 - mesh.dim)
            f.write(" ".join("{:.17g}".format(c) for c in coords) + "\n")
        f.write("CELLS {} {}\n".format(nc, nc * (mesh.dim + 2)))
        for cell in mesh.cells:
            f.write("{} ".format(mesh.dim + 1)
                    + " ".join(str(i) for i in cell) + "\n")
        f.write("CELL_TYPES {}\n".format(nc))
        ctype = _VTK_CELL_TYPE[mesh.dim]
        for _ in range(nc):
            f.write("{}\n".format(ctype))
        if point_data:
            f.write("POINT_DATA {}\n".format(nv))
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                f.write("SCALARS {} double 1\nLOOKUP_TABLE default\n".format(name))
                for val in values:
                    f.write("{:.17g}\n".format(val))
            else:
                f.write("VECTORS {} double\n".format(name))
                for row in values:
                    padded = list(row) + [0.0] * (3 - values.shape[1])
                    f.write(" ".join("{:.17g}".format(c) for c in padded) + "\n")


def vertex_velocity(space, vcoeffs):
    """Velocity vectors at mesh vertices (vertex dofs are point values)."""
    nv = space.mesh.num_vertices
    return np.column_stack([space.component(vcoeffs, c)[:nv]
                            for c in range(space.dim)])


def write_field(path, vcoeffs, pcoeffs=None):
    """Exact ASCII dump of coefficient vectors (17 significant digits)."""
    with open(path, "w", newline="\n") as f:
        f.write("nsvfield\n")
        f.write("velocity {}\n".format(len(vcoeffs)))
        for val in vcoeffs:
            f.write("{:.17g}\n".format(val))
        npre = 0 if pcoeffs is None else len(pcoeffs)
        f.write("pressure {}\n".format(npre))
        if pcoeffs is not None:
            for val in pcoeffs:
                f.write("{:.17g}\n".format(val))


def read_field(path):
    """Inverse of :func:`write_field`; returns (velocity, pressure|None)."""
    with open(path) as f:
        lines = [ln.strip() for ln in f.read().splitlines() if ln.strip()]
    if not lines or lines[0] != "nsvfield":
        raise MeshFormatError("not an nsvfield file", line=1)
    idx = 1

    def block(name):
        nonlocal idx
        tok = lines[idx].split()
        if len(tok) != 2 or tok[0] != name:
            raise MeshFormatError("expected '{} <count>'".format(name),
                                  line=idx + 1)
        count = int(tok[1])
        idx += 1
        vals = np.array([float(lines[idx + k]) for k in range(count)])
        idx += count
        return vals

    vel = block("velocity")
    pre = block("pressure")
    return vel, (pre if len(pre) else None)
