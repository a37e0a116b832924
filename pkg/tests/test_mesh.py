import numpy as np
import pytest

from nsvopt.errors import MeshFormatError, MeshTopologyError
from nsvopt.mesh import Mesh, build_structured, load_mesh, refine_uniform, save_mesh


def test_unit_square_n1():
    m = build_structured([(0, 1), (0, 1)], 1)
    assert m.num_cells == 2
    assert m.num_vertices == 4
    assert m.h == pytest.approx(np.sqrt(2.0), abs=0)


def test_unit_square_n2_counts():
    m = build_structured([(0, 1), (0, 1)], 2)
    assert m.num_cells == 8
    assert m.num_vertices == 9


def test_unit_cube_kuhn():
    m = build_structured([(0, 1), (0, 1), (0, 1)], 1)
    assert m.num_cells == 6
    assert m.num_vertices == 8
    # the six path simplices partition the cube
    assert m.volume == pytest.approx(1.0, rel=1e-14)
    assert (m.signed_volumes() > 0).all()


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        build_structured([(0, 0), (0, 1)], 2)
    with pytest.raises(ValueError):
        build_structured([(0, 1), (0, 1)], 0)


def test_volume_matches_domain():
    m = build_structured([(0, 2), (1, 4)], 3)
    assert m.volume == pytest.approx(6.0, rel=1e-12)
    c = build_structured([(0, 1), (0, 2), (0, 1)], 2)
    assert c.volume == pytest.approx(2.0, rel=1e-12)


def test_refine_counts_and_h():
    m = build_structured([(0, 1), (0, 1)], 1)
    r = refine_uniform(m)
    assert r.num_cells == 8
    assert r.h == m.h / 2
    assert r.volume == pytest.approx(m.volume, rel=1e-14)


def test_refine_h_halves_exactly_over_levels():
    m = build_structured([(0, 1), (0, 1)], 2)
    h0 = m.h
    for k in range(1, 4):
        m = refine_uniform(m)
        assert m.h == h0 / 2 ** k


def test_shape_regularity_preserved_2d():
    m = build_structured([(0, 1), (0, 2)], 2)
    r = refine_uniform(refine_uniform(m))
    assert r.shape_regularity == pytest.approx(m.shape_regularity, rel=1e-12)


def test_shape_regularity_preserved_3d():
    m = build_structured([(0, 1), (0, 1), (0, 1)], 1)
    ratios = [m.shape_regularity]
    for _ in range(2):
        m = refine_uniform(m)
        ratios.append(m.shape_regularity)
    assert ratios[1] == pytest.approx(ratios[0], rel=1e-12)
    assert ratios[2] == pytest.approx(ratios[0], rel=1e-12)


def test_refine_preserves_boundary():
    m = build_structured([(0, 1), (0, 1)], 2)
    r = refine_uniform(m)
    # every child boundary facet lies on x=0/1 or y=0/1, as the parent's do
    pts = r.vertices[r.boundary_facets]
    on_side = np.zeros(len(pts), dtype=bool)
    for axis in range(2):
        for val in (0.0, 1.0):
            on_side |= (pts[:, :, axis] == val).all(axis=1)
    assert on_side.all()


def test_refine_children_contiguous():
    m = build_structured([(0, 1), (0, 1)], 2)
    r = refine_uniform(m)
    # children 4i..4i+3 tile parent cell i
    parent_pts = m.vertices[m.cells]
    for i in range(m.num_cells):
        child_vol = r.cell_volumes[4 * i:4 * (i + 1)].sum()
        a, b, c = parent_pts[i]
        e1, e2 = b - a, c - a
        vol = abs(e1[0] * e2[1] - e1[1] * e2[0]) / 2
        assert child_vol == pytest.approx(vol, rel=1e-13)


def test_marker_inheritance():
    m = build_structured([(0, 1), (0, 1)], 1)
    markers = np.arange(len(m.boundary_facets))
    tagged = Mesh(m.vertices, m.cells, m.boundary_facets, markers)
    r = refine_uniform(tagged)
    # each child facet has the marker of the parent side containing it
    parent_mid = {tuple(np.sort(f)): mk
                  for f, mk in zip(tagged.boundary_facets, markers)}
    for facet, mk in zip(r.boundary_facets, r.boundary_markers):
        mids = r.vertices[facet].mean(axis=0)
        found = False
        for pf, pmk in parent_mid.items():
            a, b = tagged.vertices[list(pf)]
            along = np.linalg.norm(b - a)
            e, w = b - a, mids - a
            d = abs(e[0] * w[1] - e[1] * w[0]) / along
            inside = d < 1e-12 and np.dot(mids - a, b - a) >= 0 \
                and np.dot(mids - b, a - b) >= 0
            if inside:
                assert mk == pmk
                found = True
        assert found


def test_roundtrip_bit_exact(tmp_path):
    m = refine_uniform(build_structured([(0, 1), (0, 1)], 2))
    path = tmp_path / "mesh.nsvmesh"
    save_mesh(m, path)
    m2 = load_mesh(path)
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.cells, m2.cells)
    assert np.array_equal(m.boundary_facets, m2.boundary_facets)
    assert np.array_equal(m.boundary_markers, m2.boundary_markers)


def test_load_inverted_cell_topology_error(tmp_path):
    path = tmp_path / "bad.nsvmesh"
    path.write_text(
        "nsvmesh 2\nvertices 4\n0 0\n1 0\n0 1\n1 1\n"
        "cells 2\n0 2 1\n1 3 2\nboundary 4\n0 0 1\n0 1 3\n0 3 2\n0 2 0\n")
    with pytest.raises(MeshTopologyError):
        load_mesh(path)


def test_load_out_of_range_vertex_parse_error(tmp_path):
    path = tmp_path / "bad.nsvmesh"
    path.write_text(
        "nsvmesh 2\nvertices 3\n0 0\n1 0\n0 1\n"
        "cells 1\n0 1 7\nboundary 3\n0 0 1\n0 1 2\n0 2 0\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert err.value.line is not None


def test_load_malformed_header(tmp_path):
    path = tmp_path / "bad.nsvmesh"
    path.write_text("wrong 2\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert "line 1" in str(err.value)


def test_boundary_facets_must_match_topology():
    m = build_structured([(0, 1), (0, 1)], 1)
    wrong = m.boundary_facets[:-1]
    with pytest.raises(MeshTopologyError):
        Mesh(m.vertices, m.cells, wrong)


def test_constructor_fixes_orientation():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = Mesh(verts, np.array([[0, 2, 1]]))
    assert (m.signed_volumes() > 0).all()


def test_degenerate_cell_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(MeshTopologyError):
        Mesh(verts, np.array([[0, 1, 2]]))


def test_quasi_uniformity_and_shape_reported():
    m = build_structured([(0, 1), (0, 1)], 3)
    assert np.isfinite(m.shape_regularity)
    assert m.quasi_uniformity == pytest.approx(1.0)
