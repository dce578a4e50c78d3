import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import plane_layer
from slamesh.errors import DegenerateFace, NoValidFace
from slamesh.mapping import MeshMap, integrate_scan
from slamesh.mesh import (TriangleMesh, connect_layer, extract_mesh, face_normal, smoothed_normal,
                          vertex_normals)

SIG = 0.5


def test_connect_layer_counts():
    L = plane_layer()
    assert len(connect_layer(L, SIG)) == 50
    L.variances[:] = 0.9
    assert len(connect_layer(L, SIG)) == 0
    # corners off the split diagonal touch one triangle, corners on it touch two
    for corner, faces in (((0, 5), 49), ((5, 0), 49), ((0, 0), 48), ((5, 5), 48)):
        L = plane_layer()
        L.variances[corner] = 0.9
        assert len(connect_layer(L, SIG)) == faces


def test_connect_layer_only_valid_vertices():
    rng = np.random.default_rng(0)
    for _ in range(50):
        L = plane_layer()
        L.variances = rng.random((6, 6))
        faces = connect_layer(L, SIG)
        v = L.variances.ravel()
        assert np.all(v[faces] < SIG)
        assert np.all((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2]))
        assert np.array_equal(faces, connect_layer(L, SIG))


def test_face_normal_examples():
    assert np.array_equal(face_normal((0, 0, 0), (1, 0, 0), (0, 1, 0)), (0, 0, 1))
    assert np.array_equal(face_normal((0, 0, 0), (0, 1, 0), (1, 0, 0)), (0, 0, -1))
    with pytest.raises(DegenerateFace):
        face_normal((0, 0, 0), (1, 1, 1), (2, 2, 2))


def test_smoothed_normal_planar():
    L = plane_layer(fn=lambda u, w: 0.8 + 0 * u)
    n = smoothed_normal(L, (2, 3), SIG)
    assert np.abs(n - (0, 0, 1)).max() < 1e-12
    n = smoothed_normal(L, (2, 3), SIG, sensor=(0.5, 0.5, -10.0))
    assert np.abs(n - (0, 0, -1)).max() < 1e-12


def test_smoothed_normal_ridge():
    # roof with its ridge along row 2: u <= ridge rises, u >= ridge falls
    L = plane_layer(fn=lambda u, w: 1.0 - 0.5 * np.abs(u - 0.64))
    r, c = 2, 2
    n1 = np.array([-0.5, 0.0, 1.0]) / np.linalg.norm([-0.5, 0.0, 1.0])
    n2 = np.array([0.5, 0.0, 1.0]) / np.linalg.norm([0.5, 0.0, 1.0])
    # on the fixed diagonal split a vertex touches 3 faces on each side of the ridge,
    # all of equal area, so the area-weighted sum is the plain sum
    expected = (n1 + n2) / np.linalg.norm(n1 + n2)
    n = smoothed_normal(L, (r, c), SIG)
    assert np.abs(n - expected).max() < 1e-12


def test_smoothed_normal_no_valid_face():
    L = plane_layer()
    L.variances[:] = 0.9
    L.variances[3, 3] = 0.1
    with pytest.raises(NoValidFace):
        smoothed_normal(L, (3, 3), SIG)
    with pytest.raises(NoValidFace):
        smoothed_normal(L, (0, 0), SIG)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.sampled_from([0, 1, 2]))
def test_plane_normals_match_analytic(a, b, axis):
    L = plane_layer(axis=axis, fn=lambda u, w: 0.8 + a * u + b * w)
    normals, ok = vertex_normals(L, SIG)
    assert ok.all()
    from slamesh.gp import LOCATION_AXES

    u_ax, w_ax = LOCATION_AXES[axis]
    n = np.zeros(3)
    n[axis], n[u_ax], n[w_ax] = 1.0, -a, -b
    n /= np.linalg.norm(n)
    assert np.abs(normals - n).max() < 1e-6


def test_extract_mesh_counts():
    m = MeshMap(1.6)
    assert len(extract_mesh(m).vertices) == 0
    integrate_scan(m, [plane_layer()])
    mesh = extract_mesh(m)
    assert (len(mesh.vertices), len(mesh.faces)) == (36, 50)
    m = MeshMap(1.6)
    z = lambda u, w: 0.8 + 0 * u
    integrate_scan(m, [plane_layer((0, 0, 0), fn=z), plane_layer((1, 0, 0), fn=z)])
    mesh = extract_mesh(m)
    assert (len(mesh.vertices), len(mesh.faces)) == (66, 100)
    assert np.abs(np.linalg.norm(mesh.face_normals(), axis=1) - 1).max() < 1e-9


def test_extract_mesh_does_not_merge_mismatched_borders():
    m = MeshMap(1.6)
    integrate_scan(m, [plane_layer((0, 0, 0), fn=lambda u, w: 0.8 + 0 * u),
                       plane_layer((1, 0, 0), fn=lambda u, w: 0.9 + 0 * u)])
    assert len(extract_mesh(m).vertices) == 72


def test_extract_mesh_skips_invalid_vertices():
    m = MeshMap(1.6)
    L = plane_layer()
    L.variances[0, 5] = 0.7
    integrate_scan(m, [L])
    mesh = extract_mesh(m)
    assert len(mesh.vertices) == 35 and len(mesh.faces) == 49
    assert np.all(mesh.variances[mesh.faces] < SIG)


def test_triangle_mesh_helpers():
    mesh = TriangleMesh([[0, 0, 0], [2, 0, 0], [0, 2, 0]], [[0, 1, 2]], np.zeros(3))
    assert mesh.face_areas()[0] == 2.0
    assert np.array_equal(mesh.face_normals()[0], (0, 0, 1))
