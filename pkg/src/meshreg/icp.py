"""Point-to-point ICP with a damped (Levenberg-Marquardt) rigid update.

Each iteration pairs a fixed, seeded subsample of source vertices with their
nearest target vertices and solves the damped normal equations for a
six-parameter increment: a rotation vector about the centroid of the
transformed sample and a translation.  A step is accepted only if it lowers
the RMS nearest-vertex distance (with fresh correspondences); otherwise the
damping grows and the step is retried.  The RMS trace is therefore
non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateCorrespondences, EmptyMesh, InvalidParams
from .kdtree import KdTree, Metric, build_kdtree, query
from .mesh import Mesh, RigidTransform, nearest_rotation, rotvec_to_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    rms_rel_tolerance: float = 1e-6
    correspondence_cap: int = 5000
    damping_init: float = 1e-3
    damping_scale: float = 10.0
    seed: int = 0
    max_damping_retries: int = 12
    max_step_expansion: float = 64.0

    def validate(self) -> None:
        if self.max_iterations <= 0 or self.correspondence_cap <= 0:
            raise InvalidParams("iteration and correspondence limits must be positive")
        if self.rms_rel_tolerance <= 0 or self.damping_init <= 0:
            raise InvalidParams("tolerance and damping must be positive")
        if self.damping_scale <= 1:
            raise InvalidParams("damping_scale must exceed 1")
        if self.max_damping_retries <= 0 or self.max_step_expansion < 1:
            raise InvalidParams("damping retries must be positive and step expansion >= 1")


@dataclass
class RegistrationResult:
    """Outcome of a registration stage.

    ``confidence`` is only set by RANSAC.  ``trace`` holds the RMS distance
    after every accepted ICP step (RANSAC: best confidence per improvement).
    """

    transform: RigidTransform
    rmsd: float
    iterations: int
    converged: bool
    hausdorff: float | None = None
    confidence: float | None = None
    trace: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def estimate_rigid(src_pts: ArrayLike, dst_pts: ArrayLike) -> RigidTransform:
    """Least-squares rigid transform taking ``src_pts[i]`` to ``dst_pts[i]``.

    Centroid alignment plus SVD-based orthogonal Procrustes, with the sign of
    the last singular direction flipped when needed to exclude reflections.
    """
    A = np.asarray(src_pts, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 3)
    if A.shape != B.shape:
        raise DegenerateCorrespondences(f"point counts differ: {len(A)} vs {len(B)}")
    if len(A) < 3:
        raise DegenerateCorrespondences("need at least 3 correspondences")
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    A0, B0 = A - ca, B - cb
    s = np.linalg.svd(A0, compute_uv=False)
    if s[0] <= 1e-12 * max(1.0, float(np.abs(A).max())) or s[1] <= 1e-9 * s[0]:
        raise DegenerateCorrespondences("source points are coincident or collinear")
    U, _, Vt = np.linalg.svd(A0.T @ B0)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    R = nearest_rotation(R)
    return RigidTransform(R, cb - R @ ca)


def _rms(d: NDArray) -> float:
    return float(np.sqrt(np.mean(d * d)))


def _damped_step(x: NDArray, y: NDArray, lam: float) -> tuple[NDArray, NDArray]:
    """Solve the damped normal equations for one rigid increment.

    Residuals r_i = x_i - y_i; the increment rotates about the centroid c of
    x by rotation vector w and translates by v, so to first order
    x_i -> x_i + w x (x_i - c) + v.  The damping adds lam times the mean
    diagonal of each 3x3 block, which keeps the step rotation equivariant.
    Returns the 6-vector increment and the rotation centre.
    """
    c = x.mean(axis=0)
    p = x - c
    r = x - y
    n = len(x)
    # sum [p]x^T [p]x = sum (|p|^2 I - p p^T)
    H_rot = np.eye(3) * np.einsum("ij,ij->", p, p) - p.T @ p
    g_rot = np.cross(p, r).sum(axis=0)
    g_t = r.sum(axis=0)
    H = np.zeros((6, 6))
    H[:3, :3] = H_rot
    H[3:, 3:] = n * np.eye(3)
    H[:3, :3] += lam * np.trace(H_rot) / 3.0 * np.eye(3)
    H[3:, 3:] += lam * n * np.eye(3)
    g = np.concatenate([g_rot, g_t])
    try:
        delta = np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        raise DegenerateCorrespondences("normal matrix is singular") from None
    return delta, c


def _increment(delta: NDArray, c: NDArray, scale: float = 1.0) -> RigidTransform:
    """Rigid motion for ``scale`` times the increment ``delta`` about ``c``."""
    Rd = rotvec_to_matrix(scale * delta[:3])
    return RigidTransform(Rd, c + scale * delta[3:] - Rd @ c)


def icp_register(source: Mesh, target: Mesh, init: RigidTransform | None = None,
                 params: IcpParams = IcpParams(), *, target_tree: KdTree | None = None,
                 metric: Metric | str = Metric.EUCLIDEAN) -> RegistrationResult:
    """Refine ``init`` so that ``source`` overlays ``target``.

    The returned transform maps source coordinates to target coordinates and
    already includes ``init``.
    """
    params.validate()
    if source.n_vertices == 0 or target.n_vertices == 0:
        raise EmptyMesh("ICP needs nonempty source and target")
    rng = np.random.default_rng(params.seed)
    if source.n_vertices > params.correspondence_cap:
        pick = np.sort(rng.choice(source.n_vertices, params.correspondence_cap, replace=False))
        src = source.vertices[pick]
    else:
        src = source.vertices
    tree = target_tree or build_kdtree(target.vertices)
    return icp_points(src, target.vertices, tree, init, params, metric)


def icp_points(src: NDArray, target_pts: NDArray, tree: KdTree,
               init: RigidTransform | None = None, params: IcpParams = IcpParams(),
               metric: Metric | str = Metric.EUCLIDEAN) -> RegistrationResult:
    """ICP core on a fixed set of source points (no subsampling).

    ``tree`` must be built over ``target_pts``.
    """
    if len(src) < 3:
        raise DegenerateCorrespondences("need at least 3 source vertices")
    T = init or RigidTransform.identity()
    x = T.apply(src)
    nn, dist = query(tree, x, metric)
    rms = _rms(dist)
    trace = [rms]
    lam = params.damping_init
    converged = False
    it = 0
    while it < params.max_iterations:
        if rms == 0.0:
            converged = True
            break
        it += 1
        y = target_pts[nn]
        accepted = False
        for _ in range(params.max_damping_retries):
            delta, c = _damped_step(x, y, lam)
            T_new = _increment(delta, c) @ T
            x_new = T_new.apply(src)
            nn_new, dist_new = query(tree, x_new, metric)
            rms_new = _rms(dist_new)
            if rms_new < rms:
                accepted = True
                lam = max(lam / params.damping_scale, 1e-12)
                break
            lam *= params.damping_scale
        if not accepted:
            # no descent direction left at any tested damping
            converged = True
            break
        # expand an accepted step while the RMS keeps falling; point-to-point
        # updates are short along near-symmetric directions of the surface
        scale = 1.0
        while scale < params.max_step_expansion:
            scale *= 2.0
            T_try = _increment(delta, c, scale) @ T
            x_try = T_try.apply(src)
            nn_try, dist_try = query(tree, x_try, metric)
            rms_try = _rms(dist_try)
            if rms_try >= rms_new:
                break
            T_new, x_new, nn_new, rms_new = T_try, x_try, nn_try, rms_try
        rel = (rms - rms_new) / rms
        T, x, nn, rms = T_new, x_new, nn_new, rms_new
        trace.append(rms)
        if rel < params.rms_rel_tolerance:
            converged = True
            break

    return RegistrationResult(
        transform=T, rmsd=rms, iterations=it, converged=converged, trace=trace,
        diagnostics={"samples": int(len(src)), "final_damping": lam},
    )
