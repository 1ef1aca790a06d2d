from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdivmhd.mesh import (BOUNDARY, LOCAL_FACES, DegenerateElementError, MeshConsistencyError,
                          NonConformingMeshError, TetgenParseError, UnsupportedFormatError,
                          build_faces, dump_mesh, generate_structured_cube, load_tetgen,
                          mesh_metrics, read_dump, to_tetgen)

from conftest import REF_TET

REF_NODE = """# reference tetrahedron
4 3 0 0
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
"""
REF_ELE = "1 4 0\n1 1 2 3 4\n"
REF_ELE_NEG = "1 4 0\n1 2 1 3 4\n"


def outward_normals(mesh):
    """Outward unit normals of each tet's local faces, from vertex geometry alone."""
    v = mesh.vertices[mesh.tets]
    out = np.empty((mesh.n_tets, 4, 3))
    for j, (a, b, c) in enumerate(LOCAL_FACES):
        n = np.cross(v[:, b] - v[:, a], v[:, c] - v[:, a])
        n /= np.linalg.norm(n, axis=1)[:, None]
        inward = v[:, j] - v[:, a]
        n *= -np.sign(np.einsum("ni,ni->n", n, inward))[:, None]
        out[:, j] = n
    return out


def facet_multiset(mesh):
    return Counter(tuple(sorted(mesh.tets[e, list(f)])) for e in range(mesh.n_tets)
                   for f in LOCAL_FACES)


@pytest.mark.parametrize("n,tets,verts", [(1, 6, 8), (2, 48, 27), (3, 162, 64)])
def test_structured_counts(n, tets, verts):
    mesh = generate_structured_cube(n)
    assert mesh.n_tets == tets == 6 * n ** 3
    assert mesh.n_vertices == verts
    assert mesh.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    assert np.all(mesh.volumes > 0)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_face_matching_is_exhaustive(n):
    mesh = generate_structured_cube(n)
    counts = facet_multiset(mesh)
    assert set(counts.values()) <= {1, 2}
    keys = {tuple(f) for f in mesh.face_vertices.tolist()}
    assert keys == set(counts)
    for f in range(mesh.n_faces):
        key = tuple(mesh.face_vertices[f])
        expected = 1 if mesh.face_neighbor[f] == BOUNDARY else 2
        assert counts[key] == expected
        for e in (mesh.face_owner[f], mesh.face_neighbor[f]):
            if e != BOUNDARY:
                assert set(key) <= set(mesh.tets[e])
    n_int = (sum(counts.values()) - len(mesh.boundary_faces)) // 2
    assert len(mesh.interior_faces) == n_int


def test_reference_tet_faces(ref_tet_mesh):
    assert len(ref_tet_mesh.boundary_faces) == 4
    assert len(ref_tet_mesh.interior_faces) == 0
    m = mesh_metrics(ref_tet_mesh)
    assert m["h_max"] == m["h_min"] == m["h_mean"] == pytest.approx(np.sqrt(2))
    surface = 1.5 + np.sqrt(3) / 2
    rho = 3 * (1 / 6) / surface
    assert m["shape_regularity"] == pytest.approx(np.sqrt(2) / rho, rel=1e-13)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_normal_orientation(n):
    mesh = generate_structured_cube(n)
    out = outward_normals(mesh)
    assert np.allclose(np.linalg.norm(mesh.face_normal, axis=1), 1.0, atol=1e-14)
    for e in range(mesh.n_tets):
        for j in range(4):
            f = mesh.tet_faces[e, j]
            dot = out[e, j] @ mesh.face_normal[f]
            expected = 1.0 if mesh.face_owner[f] == e else -1.0
            assert dot == pytest.approx(expected, abs=1e-13)
            assert mesh.tet_face_sign[e, j] == expected
    # on the boundary of the unit cube the normal points away from the centre
    fb = mesh.boundary_faces
    centres = mesh.vertices[mesh.face_vertices[fb]].mean(axis=1)
    assert np.all(np.einsum("fi,fi->f", mesh.face_normal[fb], centres - 0.5) > 0)


def test_owner_is_smaller_index(cube2):
    fi = cube2.interior_faces
    assert np.all(cube2.face_owner[fi] < cube2.face_neighbor[fi])


def test_two_tets_sharing_a_face():
    verts = np.vstack([REF_TET, [[1.0, 1.0, 1.0]]])
    mesh = build_faces(verts, np.array([[0, 1, 2, 3], [1, 2, 3, 4]]))
    out = outward_normals(mesh)
    shared = mesh.interior_faces
    assert len(shared) == 1 and not mesh.face(shared[0]).is_boundary
    f = shared[0]
    j0 = list(mesh.tet_faces[0]).index(f)
    j1 = list(mesh.tet_faces[1]).index(f)
    assert out[0, j0] @ mesh.face_normal[f] == pytest.approx(1.0)
    assert out[1, j1] @ mesh.face_normal[f] == pytest.approx(-1.0)


@pytest.mark.parametrize("n", [1, 3])
def test_closed_surfaces_per_tet(n):
    mesh = generate_structured_cube(n)
    out = outward_normals(mesh)
    areas = mesh.face_area[mesh.tet_faces]
    flux = np.einsum("nj,nji->ni", areas, out)
    assert np.abs(flux).max() <= 1e-12


def test_face_record_fields(cube1):
    rec = cube1.face(int(cube1.boundary_faces[0]))
    assert rec.is_boundary and rec.neighbor_tet == BOUNDARY
    v = cube1.vertices[list(rec.vertex_ids)]
    edges = [np.linalg.norm(v[a] - v[b]) for a, b in ((0, 1), (0, 2), (1, 2))]
    assert rec.h_f == pytest.approx(max(edges))
    assert rec.area == pytest.approx(0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))
    assert len(cube1.faces) == cube1.n_faces


def test_shape_regularity_is_scale_invariant():
    a = mesh_metrics(generate_structured_cube(2))["shape_regularity"]
    b = mesh_metrics(generate_structured_cube(4))["shape_regularity"]
    assert a == pytest.approx(b, rel=1e-12)


def test_metrics_of_structured_cube(cube2):
    m = mesh_metrics(cube2)
    assert m["h_max"] == pytest.approx(np.sqrt(3) / 2)
    # every Kuhn tet of a cube cell has the cell diagonal as its longest edge
    assert m["h_min"] == pytest.approx(m["h_max"], rel=1e-15)
    assert m["h_mean"] == pytest.approx(m["h_max"], rel=1e-15)


def test_boundary_vertex_flags(cube2):
    flags = cube2.boundary_vertex_flags()
    on_plane = (np.isclose(cube2.vertices, 0.0) | np.isclose(cube2.vertices, 1.0))
    np.testing.assert_array_equal(flags, on_plane)


def test_load_reference_tetgen():
    mesh = load_tetgen(REF_NODE, REF_ELE)
    assert mesh.n_tets == 1 and mesh.volumes[0] == pytest.approx(1 / 6)


def test_load_reorients_negative_tet():
    mesh = load_tetgen(REF_NODE, REF_ELE_NEG)
    assert mesh.volumes[0] == pytest.approx(1 / 6)
    assert sorted(mesh.tets[0]) == [0, 1, 2, 3]


def test_zero_based_files_and_markers():
    node = "4 3 1 1\n0 0 0 0 7.5 1\n1 1 0 0 7.5 1\n2 0 1 0 7.5 0\n3 0 0 1 7.5 1\n"
    ele = "1 4 1\n0 0 1 2 3 9\n"
    mesh = load_tetgen(node, ele)
    assert mesh.volumes[0] == pytest.approx(1 / 6)


@pytest.mark.parametrize("n", [1, 2])
def test_tetgen_round_trip(n):
    mesh = generate_structured_cube(n)
    node, ele = to_tetgen(mesh)
    back = load_tetgen(node, ele)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    assert [set(t) for t in back.tets.tolist()] == [set(t) for t in mesh.tets.tolist()]


def test_dump_round_trip(cube2):
    back = read_dump(dump_mesh(cube2))
    np.testing.assert_array_equal(back.tets, cube2.tets)
    np.testing.assert_array_equal(back.face_vertices, cube2.face_vertices)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 10))
def test_affine_images_keep_invariants(n, shift, scale):
    base = generate_structured_cube(n)
    mesh = build_faces(base.vertices * scale + np.array(shift), base.tets)
    assert mesh.volumes.sum() == pytest.approx(scale ** 3, rel=1e-11)
    assert np.array_equal(mesh.face_owner, base.face_owner)
    np.testing.assert_allclose(mesh.face_normal, base.face_normal, atol=1e-12)


def test_errors():
    with pytest.raises(TetgenParseError, match="line"):
        load_tetgen("4 three 0 0\n", REF_ELE)
    with pytest.raises(TetgenParseError, match="line 4"):
        load_tetgen(REF_NODE.replace("2 1 0 0", "2 1 zero 0"), REF_ELE)
    with pytest.raises(UnsupportedFormatError):
        load_tetgen("3 2 0 0\n1 0 0\n2 1 0\n3 0 1\n", REF_ELE)
    with pytest.raises(MeshConsistencyError):
        load_tetgen(REF_NODE, "1 4 0\n1 1 2 3 9\n")
    with pytest.raises(DegenerateElementError):
        load_tetgen(REF_NODE.replace("4 0 0 1", "4 1 1 0"), REF_ELE)
    # three tets on the same facet {1, 2, 3}
    verts = np.vstack([REF_TET, [[1, 1, 1.0]], [[2, 2, 2.0]]])
    tets = np.array([[0, 1, 2, 3], [1, 2, 3, 4], [1, 2, 3, 5]])
    with pytest.raises(NonConformingMeshError):
        build_faces(verts, tets)
