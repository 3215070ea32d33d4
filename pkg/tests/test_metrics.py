import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import point_mesh, random_transform
from meshreg.errors import EmptyMesh
from meshreg.mesh import Mesh, apply_transform
from meshreg.metrics import directed_hausdorff, hausdorff, rmsd
from meshreg.synth import icosphere


def test_rmsd_self_is_zero():
    m = icosphere(2)
    assert rmsd(m, m) == 0.0


def test_single_points():
    a, b = point_mesh([0, 0, 0]), point_mesh([1, 2, 2])
    assert rmsd(a, b) == 3.0
    assert hausdorff(a, b) == 3.0
    assert hausdorff(a, b, "manhattan") == 5.0


def test_rmsd_under_transform():
    m = icosphere(3)
    t = random_transform(np.random.default_rng(0))
    assert rmsd(m, apply_transform(m, t), t) < 1e-9


def test_empty():
    with pytest.raises(EmptyMesh):
        rmsd(Mesh(np.zeros((0, 3))), icosphere(1))
    with pytest.raises(EmptyMesh):
        hausdorff(icosphere(1), Mesh(np.zeros((0, 3))))


def test_concentric_spheres():
    inner, outer = icosphere(4, 1.0), icosphere(4, 2.0)
    assert hausdorff(inner, outer, sample_cap=None) == pytest.approx(1.0, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hausdorff_symmetric_and_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    a = point_mesh(rng.normal(size=(30, 3)))
    b = point_mesh(rng.normal(size=(40, 3)))
    assert hausdorff(a, b, sample_cap=None) == hausdorff(b, a, sample_cap=None)
    assert hausdorff(a, a, sample_cap=None) == 0.0
    assert hausdorff(a, b, sample_cap=None) > 0.0
    # adding target vertices never increases the directed distance
    more = point_mesh(np.vstack([b.vertices, rng.normal(size=(10, 3))]))
    assert directed_hausdorff(a, more, sample_cap=None) <= directed_hausdorff(a, b, sample_cap=None)


def test_hausdorff_brute_force():
    rng = np.random.default_rng(4)
    A, B = rng.random((50, 3)), rng.random((70, 3))
    D = np.linalg.norm(A[:, None] - B[None], axis=2)
    expected = max(D.min(1).max(), D.min(0).max())
    assert hausdorff(point_mesh(A), point_mesh(B), sample_cap=None) == pytest.approx(expected, abs=1e-15)


def test_rmsd_is_directional():
    a = point_mesh([[0, 0, 0]])
    b = point_mesh([[0, 0, 0], [10, 0, 0]])
    assert rmsd(a, b) == 0.0
    assert rmsd(b, a) == pytest.approx(np.sqrt(50.0))


def test_sampling_is_seeded():
    m = icosphere(4)
    other = icosphere(4, 1.1)
    assert rmsd(m, other, sample_cap=100, seed=1) == rmsd(m, other, sample_cap=100, seed=1)
