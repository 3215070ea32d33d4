"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.spatial.transform import Rotation

from meshreg.mesh import Mesh, RigidTransform
from meshreg.synth import synth_specimen


def brute_nearest(points: np.ndarray, queries: np.ndarray, metric: str = "euclidean"):
    """Linear-scan nearest neighbour, ties to the smallest index.

    Euclidean candidates are ranked by squared distance, which orders them
    exactly like the distance itself but without the rounding of the root.
    """
    diff = points[None, :, :] - queries[:, None, :]
    if metric == "euclidean":
        sq = diff * diff
        key = sq[..., 0] + sq[..., 1] + sq[..., 2]
    else:
        a = np.abs(diff)
        key = a[..., 0] + a[..., 1] + a[..., 2]
    idx = np.argmin(key, axis=1)  # argmin returns the first minimum
    best = key[np.arange(len(queries)), idx]
    return idx, (np.sqrt(best) if metric == "euclidean" else best)


def random_transform(rng: np.random.Generator, max_translation: float = 30.0) -> RigidTransform:
    R = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(R, rng.uniform(-max_translation, max_translation, 3))


def symmetric_error(estimate: RigidTransform, truth: RigidTransform, order: int = 5):
    """(rotation deg, translation) error modulo the ring's rotational symmetry about z."""
    best = (np.inf, np.inf)
    for s in range(order):
        t = truth @ RigidTransform.from_rotvec([0.0, 0.0, 2.0 * np.pi * s / order])
        err = (float(np.degrees(estimate.angle_to(t))),
               float(np.linalg.norm(estimate.translation - t.translation)))
        best = min(best, err)
    return best


@lru_cache(maxsize=None)
def ring(**kw) -> Mesh:
    return synth_specimen("ring_with_pits", **kw)


@lru_cache(maxsize=None)
def partial(**kw) -> Mesh:
    return synth_specimen("partial_ring", **kw)


def point_mesh(points) -> Mesh:
    return Mesh(np.asarray(points, dtype=np.float64).reshape(-1, 3))
