"""Mesh topology, volume, and STL round-trip tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from machineseq import mesh as M
from machineseq.errors import StlParseError, TopologyError

# A regular tetrahedron with outward CCW winding: the smallest closed manifold.
TET = M.TriMesh(
    vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]),
    faces=np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]),
)


def test_box_mesh_is_valid_and_welded(box_mesh):
    M.validate_mesh(box_mesh)
    assert box_mesh.n_vertices == 8
    assert box_mesh.n_faces == 12


def test_box_volume_exact(box_mesh):
    assert M.mesh_volume(box_mesh) == pytest.approx(1000.0, abs=1e-9)


def test_tetrahedron_volume_exact():
    # V = 1/6 |det| for a corner tetrahedron with unit legs
    assert M.mesh_volume(TET) == pytest.approx(1.0 / 6.0, abs=1e-15)


def test_face_areas_and_normals(box_mesh):
    areas = M.face_areas(box_mesh)
    assert areas.shape == (12,)
    assert np.allclose(areas, 50.0)  # each square face splits into two 50 mm^2
    normals = M.face_normals(box_mesh)
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0)


def test_open_mesh_rejected():
    open_mesh = M.TriMesh(TET.vertices, TET.faces[:3])
    with pytest.raises(TopologyError):
        M.validate_mesh(open_mesh)
    with pytest.raises(TopologyError):
        M.mesh_volume(open_mesh)


def test_inconsistent_winding_rejected():
    faces = TET.faces.copy()
    faces[0] = faces[0][::-1]
    with pytest.raises(TopologyError):
        M.validate_mesh(M.TriMesh(TET.vertices, faces))


def test_degenerate_face_rejected():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(TopologyError):
        M.validate_mesh(M.TriMesh(verts, np.array([[0, 1, 2]] * 2)))


def test_weld_merges_duplicates():
    soup = TET.triangle_corners()
    verts, faces = M.weld_vertices(soup)
    assert len(verts) == 4
    assert faces.shape == (4, 3)


def test_stl_binary_roundtrip_bit_exact(box_mesh):
    blob = M.write_stl(box_mesh, "binary")
    again = M.write_stl(M.read_stl(blob), "binary")
    assert blob == again


def test_stl_ascii_roundtrip(box_mesh):
    blob = M.write_stl(box_mesh, "ascii")
    back = M.read_stl(blob)
    assert back.n_faces == box_mesh.n_faces
    assert M.mesh_volume(back) == pytest.approx(1000.0, rel=1e-7)


def test_stl_binary_truncated():
    blob = M.write_stl(TET, "binary")
    with pytest.raises(StlParseError):
        M.read_stl(blob[:-10])
    with pytest.raises(StlParseError):
        M.read_stl(blob[:50])


def test_stl_ascii_bad_vertex():
    text = M.write_stl(TET, "ascii").decode().replace("vertex 0", "vertex x", 1)
    with pytest.raises(StlParseError):
        M.read_stl(text.encode())


def test_stl_parse_error_carries_offset():
    try:
        M.read_stl(b"\x00" * 40)
    except StlParseError as exc:
        assert exc.offset == 40
    else:  # pragma: no cover
        pytest.fail("expected StlParseError")


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.floats(-50, 50).map(lambda v: round(v, 3))] * 3))
def test_translation_preserves_volume(offset):
    moved = TET.translated(offset)
    assert M.mesh_volume(moved) == pytest.approx(1.0 / 6.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10.0))
def test_scaling_volume_cubic(s):
    assert M.mesh_volume(TET.scaled(s)) == pytest.approx(s**3 / 6.0, rel=1e-9)
