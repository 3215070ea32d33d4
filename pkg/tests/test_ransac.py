import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import partial, random_transform, ring, symmetric_error
from meshreg.errors import DegeneratePair, InvalidParams, MissingNormals, NoHypothesisFound
from meshreg.kdtree import build_kdtree
from meshreg.mesh import Mesh, RigidTransform, apply_transform, compute_vertex_normals, rotvec_to_matrix
from meshreg.ransac import (FeatureTable, PairFeature, RansacParams, build_or_extend_table,
                            pair_feature, query_table, ransac_register, transform_from_pairs,
                            verify_hypothesis)
from meshreg.synth import icosphere

unit = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.asarray(v) / np.linalg.norm(v))
point = st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10)).map(np.asarray)


# --- pair features -----------------------------------------------------------

def test_feature_coplanar_normals():
    f = pair_feature([0, 0, 0], [0, 0, 1], [1, 0, 0], [0, 0, 1])
    assert f == PairFeature(1.0, math.pi / 2, math.pi / 2, 0.0)


def test_feature_sign_convention():
    f = pair_feature([0, 0, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0])
    assert (f.alpha, f.beta) == (math.pi / 2, math.pi / 2)
    # right-handed about q - p = +x: turning +z onto +y is a rotation by -90 degrees
    assert f.delta == pytest.approx(-math.pi / 2)


def test_feature_coincident_points():
    with pytest.raises(DegeneratePair):
        pair_feature([1, 2, 3], [0, 0, 1], [1, 2, 3], [0, 0, 1])


def test_feature_parallel_normal_gives_zero_delta():
    f = pair_feature([0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0])
    assert f.alpha == 0.0 and f.delta == 0.0


@settings(max_examples=200, deadline=None)
@given(point, unit, point, unit)
def test_feature_definition(p, n_p, q, n_q):
    if np.linalg.norm(q - p) < 1e-3:
        return
    f = pair_feature(p, n_p, q, n_q)
    u = (q - p) / np.linalg.norm(q - p)
    assert f.d == pytest.approx(np.linalg.norm(q - p))
    assert 0 <= f.alpha <= math.pi and 0 <= f.beta <= math.pi
    assert -math.pi < f.delta <= math.pi
    assert f.alpha == pytest.approx(math.acos(np.clip(n_p @ u, -1, 1)), abs=1e-6)
    assert f.beta == pytest.approx(math.acos(np.clip(n_q @ u, -1, 1)), abs=1e-6)
    a, b = n_p - (n_p @ u) * u, n_q - (n_q @ u) * u
    if min(np.linalg.norm(a), np.linalg.norm(b)) > 1e-3:
        # rotating the projected first normal about u by delta gives the second
        rotated = rotvec_to_matrix(f.delta * u) @ a
        np.testing.assert_allclose(rotated / np.linalg.norm(rotated), b / np.linalg.norm(b), atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(point, unit, point, unit)
def test_feature_swap_relation(p, n_p, q, n_q):
    if np.linalg.norm(q - p) < 1e-3:
        return
    f, g = pair_feature(p, n_p, q, n_q), pair_feature(q, n_q, p, n_p)
    # reversing the pair reverses the connecting direction: both angles are
    # measured against -u, and the signed angle flips twice (order and axis)
    assert g.d == pytest.approx(f.d)
    assert g.alpha == pytest.approx(math.pi - f.beta, abs=1e-9)
    assert g.beta == pytest.approx(math.pi - f.alpha, abs=1e-9)
    if abs(abs(f.delta) - math.pi) > 1e-9:
        assert g.delta == pytest.approx(f.delta, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(point, unit, point, unit, st.integers(0, 2**32 - 1))
def test_feature_rigid_invariance(p, n_p, q, n_q, seed):
    if np.linalg.norm(q - p) < 1e-3:
        return
    t = random_transform(np.random.default_rng(seed))
    R = t.rotation
    f = pair_feature(p, n_p, q, n_q)
    g = pair_feature(t.apply(p), R @ n_p, t.apply(q), R @ n_q)
    assert abs(f.d - g.d) <= 1e-9 * max(1.0, f.d)
    assert abs(f.alpha - g.alpha) <= 1e-9 and abs(f.beta - g.beta) <= 1e-9
    dd = abs(f.delta - g.delta)
    assert min(dd, 2 * math.pi - dd) <= 1e-9 or min(f.alpha, f.beta, math.pi - f.alpha, math.pi - f.beta) < 1e-6


# --- tables ------------------------------------------------------------------

def _mesh(points, normals):
    return Mesh(np.asarray(points, float), normals=np.asarray(normals, float))


def test_insert_then_query():
    m = _mesh([[0, 0, 0], [1, 0, 0], [0, 3, 0]], [[0, 0, 1]] * 3)
    table = FeatureTable(0.1, math.radians(6))
    build_or_extend_table(table, m, (0, 1))
    f = pair_feature(m.vertices[0], m.normals[0], m.vertices[1], m.normals[1])
    assert query_table(table, f) == [(0, 1)]
    assert len(table) == 1
    # stored pairs re-quantize to their bucket
    for key, pairs in table.buckets.items():
        for i, j in pairs:
            assert table.key(pair_feature(m.vertices[i], m.normals[i], m.vertices[j], m.normals[j])) == key


def test_bucket_membership():
    ab = math.radians(6)
    table = FeatureTable(1.0, ab)
    # a sits at a bin centre; b differs by under half a bin in every coordinate
    a = PairFeature(5.5, 9.5 * ab, 10.5 * ab, 30.5 * ab - math.pi)
    b = PairFeature(5.9, 9.9 * ab, 10.1 * ab, 30.9 * ab - math.pi)
    c = PairFeature(6.7, a.alpha, a.beta, a.delta)  # more than one bin away in d
    assert table.key(a) == table.key(b)
    assert table.key(a) != table.key(c)
    assert query_table(table, a) == []


def test_near_boundary_feature_may_miss():
    table = FeatureTable(1.0, math.radians(6))
    m = _mesh([[0, 0, 0], [1.9999999, 0, 0], [2.0000001, 0, 0]], [[0, 0, 1]] * 3)
    build_or_extend_table(table, m, (0, 1))
    f = pair_feature(m.vertices[0], m.normals[0], m.vertices[2], m.normals[2])
    assert query_table(table, f) == []


def test_table_errors():
    m = _mesh([[0, 0, 0], [1, 0, 0]], [[0, 0, 1]] * 2)
    table = FeatureTable(0.1, 0.1)
    with pytest.raises(DegeneratePair):
        build_or_extend_table(table, m, (0, 0))
    with pytest.raises(DegeneratePair):
        build_or_extend_table(table, m, (0, 1), min_pair_distance=2.0)
    with pytest.raises(IndexError):
        build_or_extend_table(table, m, (0, 5))
    with pytest.raises(MissingNormals):
        build_or_extend_table(table, Mesh(np.eye(3)), (0, 1))
    with pytest.raises(InvalidParams):
        FeatureTable(0.0, 0.1)


# --- transform from pairs ----------------------------------------------------

def _random_pair(rng):
    p = rng.normal(size=(2, 3))
    n = rng.normal(size=(2, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return ((p[0], n[0]), (p[1], n[1]))


def test_same_pair_gives_identity():
    pa = _random_pair(np.random.default_rng(0))
    np.testing.assert_allclose(transform_from_pairs(pa, pa).matrix, np.eye(4), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pair_transform_recovers_known(seed):
    rng = np.random.default_rng(seed)
    pa = _random_pair(rng)
    t = random_transform(rng)
    pb = tuple((t.apply(p), t.rotation @ n) for p, n in pa)
    est = transform_from_pairs(pa, pb)
    np.testing.assert_allclose(est.rotation, t.rotation, atol=1e-9)
    np.testing.assert_allclose(est.translation, t.translation, atol=1e-9)
    # midpoint and connecting direction are mapped exactly
    mid_a, mid_b = (pa[0][0] + pa[1][0]) / 2, (pb[0][0] + pb[1][0]) / 2
    np.testing.assert_allclose(est.apply(mid_a), mid_b, atol=1e-9)


def test_parallel_normal_pair():
    pa = (([0, 0, 0], [1, 0, 0]), ([1, 0, 0], [0, 0, 1]))
    with pytest.raises(DegeneratePair):
        transform_from_pairs(pa, pa)


# --- verification ------------------------------------------------------------

def _params(**kw):
    return RansacParams(**kw).resolved(ring())


def test_verify_identity():
    m = ring()
    assert verify_hypothesis(RigidTransform.identity(), m, build_kdtree(m.vertices), _params()) == 1.0


def test_verify_displaced_plane():
    g = np.linspace(0, 10, 41)
    plane = np.array(np.meshgrid(g, g, [0.0], indexing="ij")).reshape(3, -1).T
    mesh = Mesh(plane)
    p = RansacParams(inlier_eps=0.05, d_bin=0.1, min_pair_distance=0.5)
    shift = RigidTransform(np.eye(3), [0.0, 0.0, 10 * p.inlier_eps])
    assert verify_hypothesis(shift, mesh, build_kdtree(plane), p) < 0.05


def test_verify_partial_on_full():
    p = _params()
    assert verify_hypothesis(RigidTransform.identity(), partial(), build_kdtree(ring().vertices), p) >= 0.9


def test_confidence_monotone_in_eps():
    m = ring()
    tree = build_kdtree(m.vertices)
    t = RigidTransform.from_rotvec([0, 0, math.radians(2)], [0.3, 0, 0])
    confs = [verify_hypothesis(t, m, tree, _params(inlier_eps=e)) for e in (2.0, 1.0, 0.5, 0.25)]
    assert all(b <= a for a, b in zip(confs, confs[1:]))


# --- registration ------------------------------------------------------------

def test_missing_normals():
    m = ring()
    with pytest.raises(MissingNormals):
        ransac_register(Mesh(m.vertices, m.triangles), m)


def test_invalid_params():
    with pytest.raises(InvalidParams):
        ransac_register(ring(), ring(), RansacParams(confidence_threshold=1.5))


def test_no_hypothesis():
    # two pairs with unrelated features: no lookup can ever succeed
    a = _mesh([[0, 0, 0], [1, 0, 0]], [[0, 0, 1], [0, 0, 1]])
    b = _mesh([[0, 0, 0], [5, 0, 0]], [[0, 1, 0], [0, 0, 1]])
    with pytest.raises(NoHypothesisFound):
        ransac_register(a, b, RansacParams(max_iterations=50, diagonal=10.0, min_pair_distance=0.5))


def lumpy(subdivisions: int = 3) -> Mesh:
    """Anisotropic blob with smooth random bumps: no rotational near-symmetry."""
    base = icosphere(subdivisions)
    v = base.vertices
    rng = np.random.default_rng(0)
    k = rng.normal(size=(6, 3))
    r = 1 + 0.12 * np.sin(v @ k.T * 2.0).sum(axis=1) / 3
    return compute_vertex_normals(Mesh(v * r[:, None] * [30.0, 20.0, 12.0], base.triangles))


def test_self_registration_asymmetric_mesh():
    m = lumpy()
    r = ransac_register(m, m)
    eps = r.diagnostics["inlier_eps"]
    assert r.converged and r.confidence >= 0.7
    assert math.degrees(r.transform.angle_to(RigidTransform.identity())) < 1.0
    assert np.linalg.norm(r.transform.translation) < eps


def test_ring_under_known_transform():
    m = ring()
    t = random_transform(np.random.default_rng(11))
    r = ransac_register(m, apply_transform(m, t), RansacParams(seed=3))
    rot, tr = symmetric_error(r.transform, t)
    assert rot < 2.0 and tr < r.diagnostics["inlier_eps"]
    assert r.diagnostics["tested_hypotheses"] > 0 and r.diagnostics["successful_queries"] > 0


def test_partial_against_full():
    t = random_transform(np.random.default_rng(12))
    r = ransac_register(partial(), apply_transform(ring(), t), RansacParams(seed=4))
    rot, tr = symmetric_error(r.transform, t)
    assert rot < 2.0 and tr < r.diagnostics["inlier_eps"]


def test_deterministic():
    t = random_transform(np.random.default_rng(13))
    dst = apply_transform(ring(), t)
    a = ransac_register(partial(), dst, RansacParams(seed=5))
    b = ransac_register(partial(), dst, RansacParams(seed=5))
    assert a.trace == b.trace and a.diagnostics == b.diagnostics
    np.testing.assert_array_equal(a.transform.matrix, b.transform.matrix)


def test_self_registration_reaches_brute_force_optimum():
    m = lumpy(2)
    assert m.n_vertices <= 500
    p = RansacParams(exhaustive=True, max_iterations=4000, verify_samples=m.n_vertices, seed=1).resolved(m)
    tree = build_kdtree(m.vertices)
    # oracle: every pair matched against every pair in the same bucket
    table = FeatureTable(p.d_bin, p.angle_bin)
    for i, j in itertools.permutations(range(0, m.n_vertices, max(1, m.n_vertices // 60)), 2):
        try:
            build_or_extend_table(table, m, (i, j), min_pair_distance=p.min_pair_distance)
        except DegeneratePair:
            pass
    best = 0.0
    V, N = m.vertices, m.normals
    for pairs in table.buckets.values():
        for (i, j), (k, l) in itertools.product(pairs[:8], repeat=2):
            try:
                t = transform_from_pairs(((V[i], N[i]), (V[j], N[j])), ((V[k], N[k]), (V[l], N[l])))
            except DegeneratePair:
                continue
            best = max(best, verify_hypothesis(t, m, tree, p))
    assert best == 1.0
    r = ransac_register(m, m, p)
    assert r.confidence == best
