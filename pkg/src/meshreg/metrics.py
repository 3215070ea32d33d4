"""Registration quality: RMSD and symmetric vertex-set Hausdorff distance.

Both measures use nearest-vertex distances (not point-to-triangle).  When a
mesh has more vertices than ``sample_cap`` a seeded uniform subsample is
used; otherwise every vertex is evaluated and the result is exact.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .errors import EmptyMesh, InvalidParams
from .kdtree import KdTree, Metric, build_kdtree, query
from .mesh import Mesh, RigidTransform

DEFAULT_SAMPLE_CAP = 50_000


def _sample(points: NDArray, cap: int | None, seed: int) -> NDArray:
    if cap is None or len(points) <= cap:
        return points
    if cap <= 0:
        raise InvalidParams("sample_cap must be positive")
    rng = np.random.default_rng(seed)
    return points[np.sort(rng.choice(len(points), size=cap, replace=False))]


def _check(*meshes: Mesh) -> None:
    for m in meshes:
        if m.n_vertices == 0:
            raise EmptyMesh("metrics need nonempty meshes")


def rmsd(source: Mesh, target: Mesh, t: RigidTransform | None = None,
         metric: Metric | str = Metric.EUCLIDEAN, sample_cap: int | None = DEFAULT_SAMPLE_CAP,
         *, seed: int = 0, target_tree: KdTree | None = None) -> float:
    """Root mean square nearest-target distance of transformed source vertices.

    Not symmetric: only source vertices are measured.
    """
    _check(source, target)
    pts = _sample(source.vertices, sample_cap, seed)
    if t is not None:
        pts = t.apply(pts)
    tree = target_tree or build_kdtree(target.vertices)
    _, d = query(tree, pts, metric)
    return float(np.sqrt(np.mean(d * d)))


def directed_hausdorff(a: Mesh, b: Mesh, metric: Metric | str = Metric.EUCLIDEAN,
                       sample_cap: int | None = DEFAULT_SAMPLE_CAP, *, seed: int = 0,
                       b_tree: KdTree | None = None) -> float:
    """Largest nearest-vertex distance from (sampled) vertices of ``a`` into ``b``."""
    _check(a, b)
    tree = b_tree or build_kdtree(b.vertices)
    _, d = query(tree, _sample(a.vertices, sample_cap, seed), metric)
    return float(d.max())


def hausdorff(a: Mesh, b: Mesh, metric: Metric | str = Metric.EUCLIDEAN,
              sample_cap: int | None = DEFAULT_SAMPLE_CAP, *, seed: int = 0) -> float:
    """Symmetric Hausdorff distance between the vertex sets of ``a`` and ``b``.

    Pass ``sample_cap=None`` to force the exact computation.
    """
    return max(directed_hausdorff(a, b, metric, sample_cap, seed=seed),
               directed_hausdorff(b, a, metric, sample_cap, seed=seed))
