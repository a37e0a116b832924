"""Simplicial meshes of polytopal domains with uniform refinement.

Triangles in 2D and tetrahedra in 3D.  Refinement is red in 2D and
Bey-style octasection in 3D, which keeps structured (Kuhn) hierarchies
shape-regular; children of cell ``i`` occupy the contiguous index range
``[2**dim * i, 2**dim * (i+1))`` in the refined mesh, a property the
control-prolongation code relies on.
"""

import itertools

import numpy as np

from .errors import MeshFormatError, MeshTopologyError

# local edges of the reference simplex, shared with the P2 basis layout
LOCAL_EDGES = {
    2: ((0, 1), (1, 2), (0, 2)),
    3: ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}


class Mesh:
    """Conforming simplicial mesh with tagged boundary facets.

    Parameters
    ----------
    vertices : (nv, dim) array
        Vertex coordinates; dim must be 2 or 3.
    cells : (nc, dim+1) int array
        Vertex indices per cell.  Cells with negative signed volume are
        reoriented in place unless ``fix_orientation=False``, in which
        case they raise :class:`MeshTopologyError`.
    boundary_facets : (nb, dim) int array, optional
        Facet vertex indices.  Computed from the cell topology (with
        marker 0) when omitted.  When given, they must coincide with the
        topological boundary.
    boundary_markers : (nb,) int array, optional
        One integer marker per boundary facet; defaults to 0.

    Attributes
    ----------
    h : float
        Largest cell diameter.
    shape_regularity : float
        max over cells of (diameter / inradius-diameter).
    quasi_uniformity : float
        max over cells of (h / cell diameter).
    edges : (ne, 2) int array
        Unique vertex pairs, sorted; P2 midpoint dofs attach to these.
    cell_to_edge : (nc, n_local_edges) int array
        Edge index per local edge of each cell.

    The mesh is immutable after construction.
    """

    def __init__(self, vertices, cells, boundary_facets=None,
                 boundary_markers=None, fix_orientation=True):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise MeshTopologyError("vertices must be (nv, 2) or (nv, 3)")
        self.dim = self.vertices.shape[1]
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dim + 1:
            raise MeshTopologyError(
                "cells must have {} vertices in {}D".format(self.dim + 1, self.dim))
        if self.cells.size and (self.cells.min() < 0
                                or self.cells.max() >= len(self.vertices)):
            raise MeshTopologyError("cell refers to a vertex index out of range")

        self._orient(fix_orientation)
        self._build_edges()
        self._build_boundary(boundary_facets, boundary_markers)
        self._geometry()
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    def _orient(self, fix):
        vol = self.signed_volumes()
        bad = np.flatnonzero(vol == 0.0)
        if bad.size:
            raise MeshTopologyError("cell {} is degenerate (zero volume)".format(bad[0]))
        neg = np.flatnonzero(vol < 0.0)
        if neg.size:
            if not fix:
                raise MeshTopologyError(
                    "cell {} has negative orientation".format(neg[0]))
            lo, hi = self.dim - 1, self.dim
            tmp = self.cells[neg, lo].copy()
            self.cells[neg, lo] = self.cells[neg, hi]
            self.cells[neg, hi] = tmp

    def _build_edges(self):
        loc = np.array(LOCAL_EDGES[self.dim])
        pairs = np.sort(self.cells[:, loc].reshape(-1, 2), axis=1)
        self.edges, inv = np.unique(pairs, axis=0, return_inverse=True)
        self.cell_to_edge = inv.reshape(len(self.cells), len(loc))

    def _cell_facets(self):
        """All (cell, local facet) vertex tuples, sorted per facet."""
        nloc = self.dim + 1
        # facet k of a simplex omits local vertex k
        keep = [[j for j in range(nloc) if j != k] for k in range(nloc)]
        f = self.cells[:, keep].reshape(-1, self.dim)
        return np.sort(f, axis=1)

    def _build_boundary(self, facets, markers):
        allf = self._cell_facets()
        uniq, counts = np.unique(allf, axis=0, return_counts=True)
        if counts.max(initial=1) > 2:
            raise MeshTopologyError("a facet is shared by more than two cells")
        topo = uniq[counts == 1]
        topo_keys = {tuple(f) for f in topo}

        if facets is None:
            self.boundary_facets = topo
            self.boundary_markers = np.zeros(len(topo), dtype=int)
        else:
            facets = np.asarray(facets, dtype=int).reshape(-1, self.dim)
            if facets.size and (facets.min() < 0
                                or facets.max() >= len(self.vertices)):
                raise MeshTopologyError("boundary facet vertex index out of range")
            given = {tuple(f) for f in np.sort(facets, axis=1)}
            if given != topo_keys:
                raise MeshTopologyError(
                    "boundary facets do not match the topological boundary")
            self.boundary_facets = facets
            if markers is None:
                self.boundary_markers = np.zeros(len(facets), dtype=int)
            else:
                self.boundary_markers = np.asarray(markers, dtype=int)
                if len(self.boundary_markers) != len(facets):
                    raise MeshTopologyError("one marker per boundary facet required")
        self.boundary_facets.setflags(write=False)
        self.boundary_markers.setflags(write=False)

    def _geometry(self):
        d = self.dim
        pts = self.vertices[self.cells]                      # (nc, d+1, d)
        diffs = pts[:, 1:, :] - pts[:, :1, :]                # (nc, d, d)
        self.cell_volumes = np.abs(np.linalg.det(diffs)) / _factorial(d)
        # diameter: max pairwise vertex distance
        diam = np.zeros(len(self.cells))
        for i, j in itertools.combinations(range(d + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        self.cell_diameters = diam
        self.h = float(diam.max())
        # inradius diameter: 2 * d * V / (sum of facet measures)
        surf = np.zeros(len(self.cells))
        nloc = d + 1
        for k in range(nloc):
            keep = [j for j in range(nloc) if j != k]
            fp = pts[:, keep, :]
            if d == 2:
                surf += np.linalg.norm(fp[:, 1] - fp[:, 0], axis=1)
            else:
                surf += 0.5 * np.linalg.norm(
                    np.cross(fp[:, 1] - fp[:, 0], fp[:, 2] - fp[:, 0]), axis=1)
        self.cell_inradius_diameters = 2.0 * d * self.cell_volumes / surf
        self.shape_regularity = float(
            (self.cell_diameters / self.cell_inradius_diameters).max())
        self.quasi_uniformity = float(self.h / self.cell_diameters.min())
        self.volume = float(self.cell_volumes.sum())

    # -- queries ---------------------------------------------------------------

    def signed_volumes(self):
        pts = self.vertices[self.cells]
        diffs = pts[:, 1:, :] - pts[:, :1, :]
        return np.linalg.det(diffs) / _factorial(self.dim)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_edges(self):
        return len(self.edges)

    def boundary_vertex_mask(self):
        mask = np.zeros(len(self.vertices), dtype=bool)
        mask[self.boundary_facets.ravel()] = True
        return mask

    def boundary_edge_mask(self):
        """Edges lying on the boundary (2D: the facets themselves)."""
        mask = np.zeros(len(self.edges), dtype=bool)
        if self.dim == 2:
            keys = _edge_lookup(self.edges)
            for f in np.sort(self.boundary_facets, axis=1):
                mask[keys[tuple(f)]] = True
        else:
            keys = _edge_lookup(self.edges)
            for f in self.boundary_facets:
                for i, j in itertools.combinations(sorted(f), 2):
                    mask[keys[(i, j)]] = True
        return mask

    def __repr__(self):
        return ("Mesh(dim={}, vertices={}, cells={}, h={:.4g}, "
                "shape_regularity={:.3g})").format(
                    self.dim, self.num_vertices, self.num_cells, self.h,
                    self.shape_regularity)


def _factorial(d):
    return 2.0 if d == 2 else 6.0


def _edge_lookup(edges):
    return {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}


def build_structured(domain, n):
    """Structured simplicial mesh of an axis-aligned box.

    Parameters
    ----------
    domain : sequence of (lo, hi) pairs
        One pair per axis; two pairs give triangles, three give
        tetrahedra (Kuhn subdivision, 6 per cube).
    n : int
        Subdivisions per axis.

    Returns
    -------
    Mesh
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    domain = [(float(a), float(b)) for a, b in domain]
    dim = len(domain)
    if dim not in (2, 3):
        raise ValueError("domain must have 2 or 3 axes")
    for a, b in domain:
        if not b > a:
            raise ValueError("degenerate box extent [{}, {}]".format(a, b))

    axes = [np.linspace(a, b, n + 1) for a, b in domain]
    if dim == 2:
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        vertices = np.column_stack([X.ravel(), Y.ravel()])

        def vid(ix, iy):
            return iy * (n + 1) + ix

        cells = []
        for iy in range(n):
            for ix in range(n):
                a = vid(ix, iy)
                b = vid(ix + 1, iy)
                c = vid(ix, iy + 1)
                d = vid(ix + 1, iy + 1)
                cells.append((a, b, d))
                cells.append((a, d, c))
        return Mesh(vertices, np.array(cells))

    X, Y, Z = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
    # index (ix, iy, iz) -> flat with ix fastest
    vertices = np.column_stack([X.T.ravel(), Y.T.ravel(), Z.T.ravel()])

    def vid3(ix, iy, iz):
        return (iz * (n + 1) + iy) * (n + 1) + ix

    perms = list(itertools.permutations(range(3)))
    cells = []
    for iz in range(n):
        for iy in range(n):
            for ix in range(n):
                base = np.array([ix, iy, iz])
                for perm in perms:
                    p = base.copy()
                    tet = [vid3(*p)]
                    for axis in perm:
                        p = p.copy()
                        p[axis] += 1
                        tet.append(vid3(*p))
                    cells.append(tet)
    return Mesh(vertices, np.array(cells))


def refine_uniform(mesh):
    """Split every cell into ``2**dim`` children.

    Red refinement in 2D (children similar to the parent).  In 3D the
    four corner children are fixed and the interior octahedron is split
    along one of its three diagonals, each joining the midpoints of an
    opposite-edge pair of the parent: the shortest diagonal is chosen,
    with ties broken towards the pair with the smaller maximum edge
    length.  On Kuhn (structured-cube) tetrahedra this selects the
    cube-diagonal split at every level, so the hierarchy is self-similar
    and the shape-regularity ratio is preserved exactly; the diagonal is
    interior to the parent, so conformity never breaks.  Boundary
    markers are inherited from the parent facet containing each child
    facet.
    """
    d = mesh.dim
    nv = mesh.num_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                       + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    c = mesh.cells
    edge_keys = mesh.edges[:, 0].astype(np.int64) * nv + mesh.edges[:, 1]

    def mid(i, j):
        a = np.minimum(c[:, i], c[:, j]).astype(np.int64)
        b = np.maximum(c[:, i], c[:, j])
        return nv + np.searchsorted(edge_keys, a * nv + b)

    if d == 2:
        m01, m02, m12 = mid(0, 1), mid(0, 2), mid(1, 2)
        children = np.stack([
            np.column_stack([c[:, 0], m01, m02]),
            np.column_stack([m01, c[:, 1], m12]),
            np.column_stack([m02, m12, c[:, 2]]),
            np.column_stack([m01, m12, m02]),
        ], axis=1).reshape(-1, 3)
    else:
        m01, m02, m03 = mid(0, 1), mid(0, 2), mid(0, 3)
        m12, m13, m23 = mid(1, 2), mid(1, 3), mid(2, 3)
        corner = [
            np.column_stack([c[:, 0], m01, m02, m03]),
            np.column_stack([m01, c[:, 1], m12, m13]),
            np.column_stack([m02, m12, c[:, 2], m23]),
            np.column_stack([m03, m13, m23, c[:, 3]]),
        ]
        # diagonal, its equatorial midpoint cycle, and the opposite-edge
        # pair it joins (local vertex labels)
        options = [
            (m01, m23, (m02, m03, m13, m12), ((0, 1), (2, 3))),
            (m02, m13, (m01, m03, m23, m12), ((0, 2), (1, 3))),
            (m03, m12, (m01, m02, m23, m13), ((0, 3), (1, 2))),
        ]

        def edge_len(i, j):
            return np.linalg.norm(mesh.vertices[c[:, i]]
                                  - mesh.vertices[c[:, j]], axis=1)

        diag_len = np.stack([np.linalg.norm(vertices[a] - vertices[b], axis=1)
                             for a, b, _, _ in options])
        pair_max = np.stack([np.maximum(edge_len(*p0), edge_len(*p1))
                             for _, _, _, (p0, p1) in options])
        choice = np.zeros(len(c), dtype=int)
        for k in (1, 2):
            better = (diag_len[k] < diag_len[choice, np.arange(len(c))]) | (
                (diag_len[k] == diag_len[choice, np.arange(len(c))])
                & (pair_max[k] < pair_max[choice, np.arange(len(c))]))
            choice[better] = k
        inner = np.empty((len(c), 4, 4), dtype=int)
        for k, (a, b, ring, _) in enumerate(options):
            sel = choice == k
            for j in range(4):
                inner[sel, j, 0] = a[sel]
                inner[sel, j, 1] = b[sel]
                inner[sel, j, 2] = ring[j][sel]
                inner[sel, j, 3] = ring[(j + 1) % 4][sel]
        children = np.stack(corner + [inner[:, j] for j in range(4)],
                            axis=1).reshape(-1, 4)

    refined = Mesh(vertices, children)

    # marker inheritance: the ancestor vertices of a child boundary facet
    # (midpoints expand to their edge endpoints) span the parent facet
    parent = {frozenset(f): mk
              for f, mk in zip(mesh.boundary_facets, mesh.boundary_markers)}
    edge_of_mid = {nv + k: (int(a), int(b)) for k, (a, b) in enumerate(mesh.edges)}
    markers = np.zeros(len(refined.boundary_facets), dtype=int)
    for idx, facet in enumerate(refined.boundary_facets):
        anc = set()
        for v in facet:
            v = int(v)
            anc.update(edge_of_mid[v] if v >= nv else (v,))
        key = frozenset(anc)
        if key not in parent:
            raise MeshTopologyError(
                "refined boundary facet {} not contained in a parent facet".format(idx))
        markers[idx] = parent[key]
    return Mesh(refined.vertices, refined.cells, refined.boundary_facets, markers)


def save_mesh(mesh, path):
    """Write the ASCII ``nsvmesh`` format (17 significant digits)."""
    with open(path, "w", newline="\n") as f:
        f.write("nsvmesh {}\n".format(mesh.dim))
        f.write("vertices {}\n".format(mesh.num_vertices))
        for v in mesh.vertices:
            f.write(" ".join("{:.17g}".format(x) for x in v) + "\n")
        f.write("cells {}\n".format(mesh.num_cells))
        for cell in mesh.cells:
            f.write(" ".join(str(i) for i in cell) + "\n")
        f.write("boundary {}\n".format(len(mesh.boundary_facets)))
        for facet, mk in zip(mesh.boundary_facets, mesh.boundary_markers):
            f.write(str(mk) + " " + " ".join(str(i) for i in facet) + "\n")


def load_mesh(path):
    """Read the ``nsvmesh`` format written by :func:`save_mesh`.

    Raises
    ------
    MeshFormatError
        On malformed content, with the offending line number.
    MeshTopologyError
        On inverted/degenerate cells or inconsistent boundary data.
    """
    with open(path) as f:
        lines = f.read().splitlines()

    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", line=len(lines))
        pos += 1
        return lines[pos - 1].split(), pos

    tok, ln = next_line()
    if len(tok) != 2 or tok[0] != "nsvmesh":
        raise MeshFormatError("expected header 'nsvmesh <dim>'", line=ln)
    try:
        dim = int(tok[1])
    except ValueError:
        raise MeshFormatError("dimension must be an integer", line=ln)
    if dim not in (2, 3):
        raise MeshFormatError("dimension must be 2 or 3", line=ln)

    def section(name, width, cast, validate=None):
        tok, ln = next_line()
        if len(tok) != 2 or tok[0] != name:
            raise MeshFormatError("expected '{} <count>'".format(name), line=ln)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshFormatError("count must be an integer", line=ln)
        rows = []
        for _ in range(count):
            tok, ln = next_line()
            if len(tok) != width:
                raise MeshFormatError(
                    "expected {} entries, got {}".format(width, len(tok)), line=ln)
            try:
                row = [cast(t) for t in tok]
            except ValueError:
                raise MeshFormatError("could not parse '{}'".format(" ".join(tok)),
                                      line=ln)
            if validate is not None:
                validate(row, ln)
            rows.append(row)
        return rows

    vertices = np.array(section("vertices", dim, float), dtype=float).reshape(-1, dim)

    def check_index(row, ln):
        for i in row:
            if i < 0 or i >= len(vertices):
                raise MeshFormatError(
                    "vertex index {} out of range".format(i), line=ln)

    cells = np.array(section("cells", dim + 1, int, check_index),
                     dtype=int).reshape(-1, dim + 1)
    braw = section("boundary", dim + 1, int,
                   lambda row, ln: check_index(row[1:], ln))
    markers = np.array([r[0] for r in braw], dtype=int)
    facets = np.array([r[1:] for r in braw], dtype=int).reshape(-1, dim)
    return Mesh(vertices, cells, facets, markers, fix_orientation=False)
