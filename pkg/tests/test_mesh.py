import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydrodg.mesh import (INTERIOR, BoundaryTag, Mesh, MeshError, MeshParseError,
                          build_structured_mesh, read_mesh, shape_regularity, write_mesh)


def counts(m):
    return m.n_vertices, m.n_triangles, len(m.interior_faces), len(m.boundary_faces)


def test_smallest_structured_mesh():
    assert counts(build_structured_mesh(1, 1)) == (4, 2, 1, 4)


def test_two_by_two_counts():
    assert counts(build_structured_mesh(2, 2)) == (9, 8, 8, 8)


def test_thirty_mesh_diameter():
    assert build_structured_mesh(30, 30).h == pytest.approx(math.sqrt(2) / 30, rel=1e-14)


@pytest.mark.parametrize("nx, nz", [(0, 3), (3, 0), (-1, 1)])
def test_zero_cell_count_rejected(nx, nz):
    with pytest.raises(ValueError):
        build_structured_mesh(nx, nz)


def test_degenerate_rectangle_rejected():
    with pytest.raises(ValueError):
        build_structured_mesh(2, 2, domain=(0, 0, 0, 1))


def test_unit_square_tags():
    m = build_structured_mesh(3, 3)
    for f in m.boundary_faces:
        a, b = m.vertices[m.face_vertices[f]]
        tag = BoundaryTag(m.face_tag[f])
        if tag is BoundaryTag.SURFACE:
            assert a[1] == b[1] == 1.0
        elif tag is BoundaryTag.BOTTOM:
            assert a[1] == b[1] == 0.0
        else:
            assert a[0] == b[0] and a[0] in (0.0, 1.0)
    assert len(m.faces_with_tag(BoundaryTag.SURFACE)) == 3
    assert len(m.faces_with_tag(BoundaryTag.SIDEWALL)) == 6


def test_face_record():
    m = build_structured_mesh(1, 1)
    f = m.face(int(m.interior_faces[0]))
    assert not f.is_boundary and f.tag is None
    assert (f.left, f.right) == (0, 1)
    assert f.diameter == pytest.approx(math.sqrt(2))
    b = m.face(int(m.boundary_faces[0]))
    assert b.is_boundary and b.right == -1 and isinstance(b.tag, BoundaryTag)
    assert len(m.faces) == m.n_faces


def test_mesh_arrays_read_only():
    m = build_structured_mesh(2, 2)
    with pytest.raises(ValueError):
        m.face_normals[0, 0] = 3.0


@given(st.integers(1, 7), st.integers(1, 7),
       st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_structured_invariants(nx, nz, lx, lz):
    m = build_structured_mesh(nx, nz, domain=(0.0, lx, -lz, 0.0))
    # areas
    assert np.all(m.signed_areas > 0)
    assert m.areas.sum() == pytest.approx(lx * lz, rel=1e-12)
    # unit normals, diameters equal edge lengths
    assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0, atol=1e-14)
    p = m.vertices[m.face_vertices]
    assert np.allclose(m.face_diameter, np.linalg.norm(p[:, 1] - p[:, 0], axis=1), rtol=1e-14)
    # boundary length = perimeter
    assert m.face_diameter[m.boundary_faces].sum() == pytest.approx(2 * (lx + lz), rel=1e-12)
    # Euler-type face count
    assert m.n_faces == (3 * m.n_triangles + len(m.boundary_faces)) // 2
    assert 2 * m.n_faces == 3 * m.n_triangles + len(m.boundary_faces)
    # every face shared by 1 or 2 triangles, consistent with tags
    assert np.all((m.face_elems[:, 1] == INTERIOR) == (m.face_tag != INTERIOR))
    assert shape_regularity(m) > 0


@given(st.integers(1, 6), st.integers(1, 6))
def test_normals_point_from_lower_to_higher_element(nx, nz):
    m = build_structured_mesh(nx, nz)
    mid = m.vertices[m.face_vertices].mean(axis=1)
    cent = m.vertices[m.triangles].mean(axis=1)
    plus, minus = m.face_elems[:, 0], m.face_elems[:, 1]
    # outward from K+ everywhere
    assert np.all(np.einsum("ij,ij->i", m.face_normals, mid - cent[plus]) > 0)
    inner = m.interior_faces
    assert np.all(plus[inner] < minus[inner])
    assert np.all(np.einsum("ij,ij->i", m.face_normals[inner], cent[minus[inner]] - mid[inner]) > 0)


@given(st.integers(1, 8), st.integers(1, 8))
def test_refinement_halves_h(nx, nz):
    a = build_structured_mesh(nx, nz)
    b = build_structured_mesh(2 * nx, 2 * nz)
    assert b.h == pytest.approx(a.h / 2, rel=1e-14)


def test_shape_regularity_right_isoceles():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], tags={(1, 2): "SIDEWALL"})
    # r = (a + b - c) / 2 for a right triangle, h = hypotenuse
    r = (2 - math.sqrt(2)) / 2
    assert shape_regularity(m) == pytest.approx(r / math.sqrt(2), rel=1e-14)
    assert shape_regularity(m) == pytest.approx(0.2071, abs=1e-4)


def test_shape_regularity_equilateral():
    m = Mesh([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]], [[0, 1, 2]],
             tags={(0, 1): "BOTTOM", (1, 2): "SIDEWALL", (2, 0): "SIDEWALL"})
    assert shape_regularity(m) == pytest.approx(1 / (2 * math.sqrt(3)), rel=1e-14)


def test_congruent_elements_share_ratio():
    m = build_structured_mesh(5, 5)
    ratio = m.elem_inradius / m.elem_diameter
    single = shape_regularity(Mesh([[0, 0], [1, 0], [1, 1]], [[0, 1, 2]], tags={(2, 0): "SURFACE"}))
    assert np.allclose(ratio, single, rtol=1e-13)


def test_non_rectangle_edge_needs_override():
    with pytest.raises(MeshError, match="does not lie on the domain"):
        Mesh([[0, 0], [1, 0], [0.5, 0.8]], [[0, 1, 2]], domain=(0, 1, 0, 1))


def test_clockwise_triangle_rejected():
    with pytest.raises(MeshError, match="negative area"):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_edge_shared_three_times_rejected():
    verts = [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.5, 0.5]]
    with pytest.raises(MeshError):
        Mesh(verts, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])


def test_index_out_of_range():
    with pytest.raises(MeshError, match="out of range"):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])


def test_locate():
    m = build_structured_mesh(4, 4)
    pts = np.array([[0.1, 0.05], [0.05, 0.1], [0.99, 0.99], [1.5, 0.5]])
    idx = m.locate(pts)
    assert idx[3] == -1
    for p, e in zip(pts[:3], idx[:3]):
        tri = m.vertices[m.triangles[e]]
        lam = np.linalg.solve(np.vstack([tri.T, np.ones(3)]), np.append(p, 1.0))
        assert np.all(lam >= -1e-12)


# ----------------------------------------------------------------------
# file format

TWO_TRIANGLES = """hydrodg-mesh 1
# unit square
vertices 4
0 0
1 0
0 1
1 1
triangles 2
0 1 3
0 3 2
"""


def test_read_two_triangle_file(tmp_path):
    path = tmp_path / "sq.mesh"
    path.write_text(TWO_TRIANGLES)
    m = read_mesh(path)
    ref = build_structured_mesh(1, 1)
    assert counts(m) == counts(ref)
    key = lambda mesh: sorted(map(tuple, np.sort(mesh.vertices[mesh.face_vertices].reshape(-1, 4), axis=1)))
    assert key(m) == key(ref)
    assert sorted(m.face_tag.tolist()) == sorted(ref.face_tag.tolist())


def test_round_trip(tmp_path):
    m = build_structured_mesh(3, 2, domain=(0.0, 2.0, 0.0, 1.0))
    write_mesh(m, tmp_path / "m.mesh")
    r = read_mesh(tmp_path / "m.mesh")
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.face_tag, m.face_tag)


def test_tag_overrides_from_file(tmp_path):
    text = TWO_TRIANGLES + "tags\n0 1 surface\n"
    (tmp_path / "t.mesh").write_text(text)
    m = read_mesh(tmp_path / "t.mesh")
    f = [i for i in m.boundary_faces if set(m.face_vertices[i]) == {0, 1}][0]
    assert m.face_tag[f] == BoundaryTag.SURFACE


def test_clockwise_triangle_in_file(tmp_path):
    text = TWO_TRIANGLES.replace("0 3 2", "0 2 3")
    (tmp_path / "cw.mesh").write_text(text)
    with pytest.raises(MeshParseError, match=r"cw.mesh:10: triangle 1 has negative area"):
        read_mesh(tmp_path / "cw.mesh")


def test_vertex_index_out_of_range_in_file(tmp_path):
    (tmp_path / "bad.mesh").write_text(TWO_TRIANGLES.replace("0 3 2", "0 3 7"))
    with pytest.raises(MeshParseError, match=r":10: vertex index out of range"):
        read_mesh(tmp_path / "bad.mesh")


@pytest.mark.parametrize("text, where", [
    ("hello\n", ":1:"),
    (TWO_TRIANGLES.replace("vertices 4", "vertices four"), ":3:"),
    (TWO_TRIANGLES.replace("1 1\n", "1 x\n"), ":7:"),
    (TWO_TRIANGLES.replace("0 1 3", "0 1"), ":9:"),
    (TWO_TRIANGLES + "tags\n0 1 lid\n", ":12:"),
    (TWO_TRIANGLES + "junk\n", ":11:"),
])
def test_malformed_files_name_lines(tmp_path, text, where):
    (tmp_path / "bad.mesh").write_text(text)
    with pytest.raises(MeshParseError, match=where):
        read_mesh(tmp_path / "bad.mesh")


def test_truncated_file(tmp_path):
    (tmp_path / "t.mesh").write_text("hydrodg-mesh 1\nvertices 3\n0 0\n")
    with pytest.raises(MeshParseError, match="truncated"):
        read_mesh(tmp_path / "t.mesh")


def test_round_trip_keeps_overrides(tmp_path):
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], tags={(1, 2): "SURFACE", (0, 1): "SIDEWALL"})
    write_mesh(m, tmp_path / "o.mesh")
    r = read_mesh(tmp_path / "o.mesh")
    assert np.array_equal(r.face_tag, m.face_tag)
