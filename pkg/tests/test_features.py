import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_transform, ring
from meshreg.errors import AmbiguousOrientation, DegenerateInput, InvalidParams
from meshreg.features import Ellipsoid, OrientedBox, min_bounding_box, min_enclosing_ellipsoid, prealign
from meshreg.mesh import RigidTransform
from meshreg.synth import synth_specimen

CUBE = np.array(list(itertools.product((0.0, 1.0), repeat=3)))


def test_cube_corners_give_circumsphere():
    e = min_enclosing_ellipsoid(CUBE)
    np.testing.assert_allclose(e.center, 0.5, atol=1e-6)
    np.testing.assert_allclose(e.semi_axes, math.sqrt(3) / 2, rtol=1e-6)


def test_scaled_octahedron_against_axis_aligned_grid_oracle():
    a = np.array([3.0, 2.0, 1.0])
    pts = np.vstack([np.diag(a), -np.diag(a)])
    e = min_enclosing_ellipsoid(pts)
    assert e.residuals(pts).max() <= 1 + 1e-6
    # brute force over centred axis-aligned ellipsoids: smallest containing volume
    grid = np.linspace(0.5, 4.0, 351)
    best = np.inf
    for x in grid:
        for y in grid:
            z = grid[:, None]
            ok = np.all((pts[:, 0] / x) ** 2 + (pts[:, 1] / y) ** 2 + (pts[:, 2:3].T / z) ** 2 <= 1 + 1e-12,
                        axis=1)
            if ok.any():
                best = min(best, 4 / 3 * math.pi * x * y * grid[ok].min())
    assert e.volume <= best * (1 + 1e-6)
    np.testing.assert_allclose(e.semi_axes, a, rtol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 400))
def test_containment_certificate(seed, n):
    pts = np.random.default_rng(seed).normal(size=(n, 3)) * [3, 1, 0.5]
    e = min_enclosing_ellipsoid(pts)
    assert e.residuals(pts).max() <= 1 + 1e-6
    np.testing.assert_allclose(e.shape, e.shape.T, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(e.shape) > 0)


def test_equivariance():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(300, 3)) * [4, 2, 1]
    t = random_transform(rng)
    e0 = min_enclosing_ellipsoid(pts).transformed(t)
    e1 = min_enclosing_ellipsoid(t.apply(pts))
    np.testing.assert_allclose(e1.center, e0.center, atol=1e-6)
    np.testing.assert_allclose(e1.shape, e0.shape, atol=1e-6)


@pytest.mark.parametrize("pts", [np.zeros((3, 3)), np.c_[np.random.default_rng(0).random((20, 2)), np.zeros(20)]])
def test_degenerate_clouds(pts):
    with pytest.raises(DegenerateInput):
        min_enclosing_ellipsoid(pts)
    with pytest.raises(DegenerateInput):
        min_bounding_box(pts)


def test_invalid_tolerances():
    with pytest.raises(InvalidParams):
        min_enclosing_ellipsoid(CUBE, tol=0.1)
    with pytest.raises(InvalidParams):
        min_bounding_box(CUBE, eps=0.0)


def _box_cloud(rng, n=2000):
    pts = rng.random((n, 3)) * [2.0, 1.0, 0.5]
    corners = np.array(list(itertools.product((0, 2.0), (0, 1.0), (0, 0.5))))
    return np.vstack([pts, corners])


def test_axis_aligned_box_cloud():
    box = min_bounding_box(_box_cloud(np.random.default_rng(0)))
    assert box.volume <= 1.05
    np.testing.assert_allclose(box.half_extents, [1.0, 0.5, 0.25], rtol=1e-6)


def test_rotated_box_cloud_recovers_axes():
    rng = np.random.default_rng(1)
    t = random_transform(rng)
    pts = t.apply(_box_cloud(rng))
    box = min_bounding_box(pts, rng=np.random.default_rng(0))
    assert box.volume <= 1.05
    assert box.contains(pts)
    # canonical order: columns follow the descending extents 2, 1, 0.5
    cos = np.abs(np.einsum("ij,ij->j", box.axes, t.rotation))
    assert np.all(cos > math.cos(math.radians(2.0)))


def test_box_volume_between_hull_and_aabb():
    from scipy.spatial import ConvexHull
    pts = np.random.default_rng(3).normal(size=(500, 3)) * [3, 2, 1]
    box = min_bounding_box(pts)
    aabb = np.prod(pts.max(0) - pts.min(0))
    assert ConvexHull(pts).volume <= box.volume <= aabb + 1e-9
    np.testing.assert_allclose(box.axes.T @ box.axes, np.eye(3), atol=1e-9)
    assert np.linalg.det(box.axes) == pytest.approx(1.0)
    assert np.all(np.diff(box.half_extents) <= 0)


def _features(pts):
    return min_enclosing_ellipsoid(pts), min_bounding_box(pts, rng=np.random.default_rng(0))


def _asymmetric_cloud(rng):
    # distinct extents plus a bulge so the ellipsoid centre is offset from the box centre
    pts = rng.random((1500, 3)) * [6.0, 3.0, 1.0]
    bulge = rng.random((300, 3)) * [1.0, 1.0, 0.5] + [0.0, 0.0, 0.5]
    return np.vstack([pts, bulge[np.linalg.norm(bulge - [0, 0, 0.5], axis=1) < 0.8]])


def test_prealign_identical_features_is_identity():
    f = _features(_asymmetric_cloud(np.random.default_rng(0)))
    t = prealign(*f, *f)
    np.testing.assert_allclose(t.matrix, np.eye(4), atol=1e-9)


def test_prealign_recovers_known_transform():
    rng = np.random.default_rng(1)
    pts = _asymmetric_cloud(rng)
    truth = random_transform(rng)
    src, dst = _features(pts), _features(truth.apply(pts))
    t = prealign(*src, *dst)
    assert math.degrees(t.angle_to(truth)) < 0.5
    assert np.linalg.norm(t.translation - truth.translation) < 0.05


def test_prealign_on_exact_features_is_exact():
    # features mapped analytically: no fitting noise, recovery to 1e-6
    e = Ellipsoid(np.array([0.3, -0.2, 0.1]), np.diag([1 / 9, 1 / 4, 1.0]))
    b = OrientedBox(np.zeros(3), np.eye(3), np.array([3.0, 2.0, 1.0]))
    truth = random_transform(np.random.default_rng(2))
    t = prealign(e, b, e.transformed(truth), b.transformed(truth))
    np.testing.assert_allclose(t.rotation, truth.rotation, atol=1e-6)
    np.testing.assert_allclose(t.translation, truth.translation, atol=1e-6)


def test_prealign_cube_like_with_zero_offset_is_ambiguous():
    e = Ellipsoid(np.zeros(3), np.eye(3))
    b = OrientedBox(np.zeros(3), np.eye(3), np.ones(3))
    with pytest.raises(AmbiguousOrientation):
        prealign(e, b, e, b)


def test_ring_mee_center_near_ring_center():
    m = ring()
    e = min_enclosing_ellipsoid(m.vertices, rng=np.random.default_rng(0))
    # the ring axis is the z axis
    assert np.linalg.norm(e.center[:2]) < 0.01 * 100.0


def test_mee_ignores_interior_structure():
    lo = synth_specimen("ring_with_pits", density=0.1)
    hi = synth_specimen("ring_with_pits", density=0.5)
    # interior lattice on one side of the solid, as a volume scan would add
    g = np.linspace(2, 18, 9)
    r = np.linspace(37, 43, 7)
    th = np.radians(np.linspace(0, 90, 40))
    R, TH, Z = np.meshgrid(r, th, g, indexing="ij")
    lattice = np.c_[(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel(), Z.ravel()]
    ct = np.vstack([hi.vertices, lattice])
    c_lo = min_enclosing_ellipsoid(lo.vertices).center
    c_ct = min_enclosing_ellipsoid(ct).center
    diameter = 100.0
    assert np.linalg.norm(c_lo - c_ct) < 0.01 * diameter
    centroid_shift = np.linalg.norm(lo.vertices.mean(0) - ct.mean(0))
    assert centroid_shift > np.linalg.norm(c_lo - c_ct)
