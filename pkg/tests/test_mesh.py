import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_transform
from meshreg.errors import DegenerateGeometry, InvalidMesh, MeshIndexError
from meshreg.mesh import (Mesh, RigidTransform, apply_transform, compute_vertex_normals,
                          surface_area)
from meshreg.synth import icosphere, octahedron, unit_cube


def test_mesh_rejects_out_of_range_index():
    with pytest.raises(MeshIndexError):
        Mesh(np.eye(3), [[0, 1, 3]])


def test_mesh_rejects_repeated_index():
    with pytest.raises(InvalidMesh):
        Mesh(np.eye(3), [[0, 1, 1]])


def test_mesh_rejects_non_unit_normals():
    with pytest.raises(InvalidMesh):
        Mesh(np.eye(3), [[0, 1, 2]], normals=np.full((3, 3), 1.0))


def test_mesh_is_immutable():
    m = unit_cube()
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_rigid_transform_rejects_reflection():
    with pytest.raises(InvalidMesh):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


# --- normals ---------------------------------------------------------------

def test_single_triangle_normals():
    m = compute_vertex_normals(Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]))
    np.testing.assert_allclose(m.normals, np.tile([0.0, 0.0, 1.0], (3, 1)))


def test_octahedron_normals_are_radial():
    m = compute_vertex_normals(octahedron())
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    np.testing.assert_allclose(m.normals, radial, atol=1e-12)


def test_icosphere_normals_close_to_radial():
    m = compute_vertex_normals(icosphere(3))
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    cos = np.clip(np.einsum("ij,ij->i", m.normals, radial), -1, 1)
    assert np.degrees(np.arccos(cos)).max() < 2.0


def test_isolated_vertex_gets_default_normal():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    out, n_isolated = compute_vertex_normals(m, with_diagnostics=True)
    assert n_isolated == 1
    np.testing.assert_array_equal(out.normals[3], [0.0, 0.0, 1.0])


def test_all_degenerate_incident_triangles():
    m = Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2], [0, 1, 3]])
    with pytest.raises(DegenerateGeometry):
        compute_vertex_normals(m)


def test_normals_invariant_under_vertex_reordering():
    m = compute_vertex_normals(icosphere(2))
    rng = np.random.default_rng(3)
    perm = rng.permutation(m.n_vertices)
    inv = np.argsort(perm)
    shuffled = Mesh(m.vertices[perm], inv[m.triangles])
    out = compute_vertex_normals(shuffled)
    np.testing.assert_allclose(out.normals[inv], m.normals, atol=1e-9)


# --- area ------------------------------------------------------------------

def test_unit_cube_area():
    assert surface_area(unit_cube()) == pytest.approx(6.0, abs=1e-12)


def test_single_triangle_area():
    assert surface_area(Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])) == 0.5


def test_icosphere_area_close_to_analytic():
    assert surface_area(icosphere(4, radius=2.0)) == pytest.approx(16 * math.pi, rel=0.01)


# --- transforms ------------------------------------------------------------

def test_identity_transform_is_noop():
    m = compute_vertex_normals(icosphere(1))
    out = apply_transform(m, RigidTransform.identity())
    np.testing.assert_array_equal(out.vertices, m.vertices)
    np.testing.assert_array_equal(out.normals, m.normals)


def test_translation_keeps_normals():
    m = compute_vertex_normals(icosphere(1))
    out = apply_transform(m, RigidTransform(np.eye(3), [1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out.vertices, m.vertices + [1, 2, 3])
    np.testing.assert_array_equal(out.normals, m.normals)
    np.testing.assert_array_equal(out.triangles, m.triangles)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_transform_then_inverse(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng)
    m = icosphere(1)
    back = apply_transform(apply_transform(m, t), t.inverse())
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_invariants_of_area_and_distances(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng)
    m = icosphere(1)
    out = apply_transform(m, t)
    a0 = surface_area(m)
    assert abs(surface_area(out) - a0) / a0 <= 1e-9
    d0 = np.linalg.norm(m.vertices[:, None] - m.vertices[None], axis=2)
    d1 = np.linalg.norm(out.vertices[:, None] - out.vertices[None], axis=2)
    np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-12)
    R = t.rotation
    assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9
    assert abs(np.linalg.det(R) - 1.0) <= 1e-9


def test_transform_list_round_trip():
    t = RigidTransform.from_rotvec([0.1, -0.2, 0.3], [4.0, 5.0, 6.0])
    back = RigidTransform.from_list(t.to_list())
    np.testing.assert_array_equal(back.matrix, t.matrix)
