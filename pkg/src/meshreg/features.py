"""Global shape descriptors and the pre-alignment they drive.

* ``min_enclosing_ellipsoid``: Khachiyan's barycentric coordinate ascent on
  the lifted problem, with Todd-Yildirim away steps, run on the convex hull
  of (a subsample of) the input.  A final pass over every input point
  rescales the result so containment holds exactly.
* ``min_bounding_box``: approximate minimum-volume oriented box.  Candidate
  orientations (coarse rotation grid, principal axes, hull facet normals with
  a 2D minimum-area rectangle) are scored by the axis-aligned volume of the
  hull vertices, and the best few are polished by a pattern search over
  small rotations about the box axes.
* ``prealign``: matches box axes between two objects and uses the offset
  between ellipsoid center and box center to pick among the candidate
  axis correspondences.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import ConvexHull, QhullError

from .errors import AmbiguousOrientation, DegenerateInput, InvalidParams
from .mesh import RigidTransform, nearest_rotation, rotvec_to_matrix

logger = logging.getLogger(__name__)

SUBSAMPLE_CAP = 20_000
EXTENT_RATIO_TOL = 0.05
SCORE_TIE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """{x : (x - center)^T shape (x - center) <= 1}."""

    center: NDArray[np.float64]
    shape: NDArray[np.float64]

    @property
    def semi_axes(self) -> NDArray[np.float64]:
        """Semi-axis lengths, descending."""
        return np.sort(1.0 / np.sqrt(np.linalg.eigvalsh(self.shape)))[::-1]

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi / math.sqrt(np.linalg.det(self.shape))

    def residuals(self, points: ArrayLike) -> NDArray[np.float64]:
        """(x - c)^T A (x - c) for each point; <= 1 means inside."""
        d = np.asarray(points, dtype=np.float64) - self.center
        return np.einsum("ij,jk,ik->i", d, self.shape, d)

    def transformed(self, t: RigidTransform) -> "Ellipsoid":
        R = t.rotation
        return Ellipsoid(t.apply(self.center), R @ self.shape @ R.T)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "shape": self.shape.tolist(),
                "semi_axes": self.semi_axes.tolist(), "volume": self.volume}


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box with orthonormal ``axes`` (columns, det +1) and ``half_extents``."""

    center: NDArray[np.float64]
    axes: NDArray[np.float64]
    half_extents: NDArray[np.float64]

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    @property
    def diagonal(self) -> float:
        return float(2.0 * np.linalg.norm(self.half_extents))

    def local(self, points: ArrayLike) -> NDArray[np.float64]:
        """Coordinates of ``points`` in the box frame."""
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.axes

    def contains(self, points: ArrayLike, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.local(points)) <= self.half_extents + tol))

    def corners(self) -> NDArray[np.float64]:
        signs = np.array(list(itertools.product((-1, 1), repeat=3)), dtype=float)
        return self.center + (signs * self.half_extents) @ self.axes.T

    def transformed(self, t: RigidTransform) -> "OrientedBox":
        return OrientedBox(t.apply(self.center), t.rotation @ self.axes, self.half_extents.copy())

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "axes": self.axes.T.tolist(),
                "half_extents": self.half_extents.tolist(), "volume": self.volume}


def _check_spread(points: NDArray) -> None:
    if len(points) < 4:
        raise DegenerateInput(f"need at least 4 points, got {len(points)}")
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0 or s[2] <= 1e-9 * s[0]:
        raise DegenerateInput("points are coplanar or collinear")


def _subsample(points: NDArray, cap: int, rng) -> NDArray:
    if len(points) <= cap:
        return points
    rng = np.random.default_rng(rng)
    pick = np.sort(rng.choice(len(points), size=cap, replace=False))
    return points[pick]


def _hull_vertices(points: NDArray) -> tuple[NDArray, ConvexHull]:
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise DegenerateInput(f"convex hull failed: {exc}") from exc
    return points[hull.vertices], hull


# ---------------------------------------------------------------------------
# Minimal enclosing ellipsoid
# ---------------------------------------------------------------------------

def _khachiyan(P: NDArray, tol: float, max_iter: int) -> tuple[NDArray, int, bool]:
    """Weights u on the columns of the lifted point matrix.

    Stops when max_i M_i <= (d + 1)(1 + tol) and, for points carrying
    weight, min M_i >= (d + 1)(1 - tol).
    """
    n, d = P.shape
    Q = np.vstack([P.T, np.ones(n)])
    u = np.full(n, 1.0 / n)
    dp1 = d + 1.0
    for it in range(max_iter):
        X = (Q * u) @ Q.T
        try:
            M = np.einsum("ij,ji->i", Q.T, np.linalg.solve(X, Q))
        except np.linalg.LinAlgError:
            raise DegenerateInput("lifted moment matrix became singular") from None
        j = int(np.argmax(M))
        active = u > 0
        k = int(np.flatnonzero(active)[np.argmin(M[active])])
        up = M[j] / dp1 - 1.0
        down = 1.0 - M[k] / dp1
        if up <= tol and down <= tol:
            return u, it, True
        if up >= down:
            step = (M[j] - dp1) / (dp1 * (M[j] - 1.0))
            u *= 1.0 - step
            u[j] += step
        else:
            step = (M[k] - dp1) / (dp1 * (M[k] - 1.0))
            step = max(step, -u[k] / (1.0 - u[k]))
            u *= 1.0 - step
            u[k] += step
            if u[k] < 1e-15:
                u[k] = 0.0
    return u, max_iter, False


def min_enclosing_ellipsoid(points: ArrayLike, tol: float = 1e-6, *,
                            max_iter: int = 100_000, rng=None) -> Ellipsoid:
    """Smallest-volume ellipsoid containing ``points`` (to relative ``tol``).

    Inputs larger than 20,000 points are subsampled with ``rng`` for the
    iteration; containment of every input point is restored afterwards.
    """
    if not (0 < tol <= 1e-2):
        raise InvalidParams("tol must lie in (0, 1e-2]")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _check_spread(pts)
    hull_pts, _ = _hull_vertices(_subsample(pts, SUBSAMPLE_CAP, rng))

    # work in a centred, scaled frame for conditioning; the iteration is affine invariant
    origin = hull_pts.mean(axis=0)
    scale = float(np.abs(hull_pts - origin).max())
    P = (hull_pts - origin) / scale
    u, iters, ok = _khachiyan(P, tol, max_iter)
    if not ok:
        logger.warning("ellipsoid iteration hit the cap of %d iterations", max_iter)

    c = u @ P
    cov = (P * u[:, None]).T @ P - np.outer(c, c)
    A = np.linalg.inv(cov) / 3.0
    A = 0.5 * (A + A.T)
    center = origin + scale * c
    shape = A / scale ** 2

    # exact containment over every input point
    d = pts - center
    worst = float(np.einsum("ij,jk,ik->i", d, shape, d).max())
    if worst > 1.0:
        shape = shape / worst
    return Ellipsoid(center, shape)


# ---------------------------------------------------------------------------
# Minimal bounding box
# ---------------------------------------------------------------------------

def _euler_zyx(yaw: float, pitch: float, roll: float) -> NDArray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def _coarse_grid(step_deg: float = 30.0) -> list[NDArray]:
    """Rotations covering box orientations (SO(3) modulo the cube group)."""
    s = math.radians(step_deg)
    out = []
    for yaw in np.arange(0.0, math.pi - 1e-9, s):
        for pitch in np.arange(-math.pi / 2, math.pi / 2 + 1e-9, s):
            for roll in np.arange(0.0, math.pi / 2 - 1e-9, s):
                out.append(_euler_zyx(yaw, pitch, roll))
    return out


def _box_volume(P: NDArray, R: NDArray) -> float:
    L = P @ R
    return float(np.prod(L.max(axis=0) - L.min(axis=0)))


def _min_area_rect_frame(P: NDArray, normal: NDArray) -> NDArray | None:
    """Frame whose third axis is ``normal`` and whose first two axes bound
    the projection of ``P`` with a minimum-area rectangle."""
    n = normal / np.linalg.norm(normal)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    xy = P @ np.column_stack([e1, e2])
    try:
        h2 = ConvexHull(xy)
    except QhullError:
        return None
    poly = xy[h2.vertices]
    edges = np.roll(poly, -1, axis=0) - poly
    ang = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2))
    c, s = np.cos(ang), np.sin(ang)
    u = poly[:, :1] * c + poly[:, 1:] * s
    v = -poly[:, :1] * s + poly[:, 1:] * c
    area = (u.max(0) - u.min(0)) * (v.max(0) - v.min(0))
    a = ang[int(np.argmin(area))]
    d1 = math.cos(a) * e1 + math.sin(a) * e2
    d2 = np.cross(n, d1)
    return np.column_stack([d1, d2, n])


def _facet_normals(hull: ConvexHull, limit: int) -> list[NDArray]:
    """Distinct facet normals of ``hull``, largest total facet area first."""
    normals = hull.equations[:, :3]
    pts = hull.points[hull.simplices]
    areas = 0.5 * np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)
    # a normal and its negation give the same box family
    canon = np.where(normals[:, [0]] < 0, -normals, normals)
    keys = np.round(canon, 6)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    total = np.bincount(inv.ravel(), weights=areas)
    order = np.argsort(-total, kind="stable")[:limit]
    return [uniq[i] for i in order]


def _pattern_search(P: NDArray, R: NDArray, vol: float, start_deg: float,
                    stop_deg: float) -> tuple[NDArray, float]:
    """Greedy descent over small rotations about the current box axes.

    Tries single-axis and two-axis moves; halves the step when none helps.
    """
    dirs = []
    for i in range(3):
        for s in (1.0, -1.0):
            e = np.zeros(3); e[i] = s
            dirs.append(e)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for si in (1.0, -1.0):
            for sj in (1.0, -1.0):
                e = np.zeros(3); e[i] = si; e[j] = sj
                dirs.append(e / math.sqrt(2))
    step = math.radians(start_deg)
    stop = math.radians(stop_deg)
    while step >= stop:
        moves = [R @ rotvec_to_matrix(step * e) for e in dirs]
        vols = [_box_volume(P, M) for M in moves]
        k = int(np.argmin(vols))
        if vols[k] < vol * (1.0 - 1e-12):
            R, vol = moves[k], vols[k]
        else:
            step *= 0.5
    return nearest_rotation(R), vol


def _canonical_box(center_local: NDArray, R: NDArray, half: NDArray) -> OrientedBox:
    order = np.argsort(-half, kind="stable")
    half = half[order]
    axes = R[:, order]
    # sign convention: the largest-magnitude component of axes 1 and 2 is
    # positive; axis 0 completes a right-handed frame
    for k in (1, 2):
        a = axes[:, k]
        if a[int(np.argmax(np.abs(a)))] < 0:
            axes[:, k] = -a
    axes[:, 0] = np.cross(axes[:, 1], axes[:, 2])
    return OrientedBox(R @ center_local, axes, half)


def _fit_box(P: NDArray, R: NDArray) -> OrientedBox:
    L = P @ R
    lo, hi = L.min(axis=0), L.max(axis=0)
    return _canonical_box(0.5 * (lo + hi), R.copy(), 0.5 * (hi - lo))


def min_bounding_box(points: ArrayLike, eps: float = 0.05, *, rng=None) -> OrientedBox:
    """Approximate minimal-volume oriented bounding box.

    ``eps`` widens the search (more seeds are polished for smaller values);
    there is no formal (1 + eps) guarantee.
    """
    if not (0 < eps <= 0.5):
        raise InvalidParams("eps must lie in (0, 0.5]")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _check_spread(pts)
    H, hull = _hull_vertices(_subsample(pts, SUBSAMPLE_CAP, rng))

    seeds: list[NDArray] = [np.eye(3)]
    cov = np.cov((H - H.mean(axis=0)).T)
    _, evecs = np.linalg.eigh(cov)
    seeds.append(nearest_rotation(evecs))
    for n in _facet_normals(hull, limit=32):
        frame = _min_area_rect_frame(H, n)
        if frame is not None:
            seeds.append(nearest_rotation(frame))
    seeds.extend(_coarse_grid(30.0))

    vols = np.array([_box_volume(H, R) for R in seeds])
    n_polish = int(np.clip(math.ceil(0.3 / eps), 4, 32))
    order = np.argsort(vols, kind="stable")[:n_polish]
    best_R, best_vol = seeds[0], vols[0]
    for i in order:
        R, v = _pattern_search(H, seeds[i], vols[i], start_deg=8.0, stop_deg=0.1)
        if v < best_vol:
            best_R, best_vol = R, v

    box = _fit_box(pts, best_R)
    aabb = _fit_box(pts, np.eye(3))
    return aabb if aabb.volume <= box.volume else box


# ---------------------------------------------------------------------------
# Pre-alignment
# ---------------------------------------------------------------------------

def _signed_permutations() -> list[NDArray]:
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            Q = np.zeros((3, 3))
            for i, j in enumerate(perm):
                Q[j, i] = signs[i]
            if np.linalg.det(Q) > 0:
                out.append(Q)
    # identity first so exact ties resolve to it
    out.sort(key=lambda Q: -np.trace(Q))
    return out


_SIGNED_PERMS = _signed_permutations()


def _interchangeable(e_src: NDArray, e_dst: NDArray) -> NDArray:
    """Boolean (3, 3) matrix: may source axis i map onto destination axis j?"""
    ok = np.eye(3, dtype=bool)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            rs = abs(e_src[i] - e_src[j]) / max(e_src[i], e_src[j])
            rd = abs(e_dst[i] - e_dst[j]) / max(e_dst[i], e_dst[j])
            ok[i, j] = rs <= EXTENT_RATIO_TOL and rd <= EXTENT_RATIO_TOL
    return ok


def prealign(src_mee: Ellipsoid, src_mbb: OrientedBox,
             dst_mee: Ellipsoid, dst_mbb: OrientedBox) -> RigidTransform:
    """Rigid transform that overlays the source features on the destination.

    Box centers are matched; among the proper rotations that carry source
    box axes onto destination box axes (respecting extent order within 5%),
    the one that best aligns the ellipsoid-center offsets wins.
    """
    allowed = _interchangeable(src_mbb.half_extents, dst_mbb.half_extents)
    off_s = src_mee.center - src_mbb.center
    off_d = dst_mee.center - dst_mbb.center
    scale = max(src_mbb.diagonal, dst_mbb.diagonal)
    ns, nd = np.linalg.norm(off_s), np.linalg.norm(off_d)
    degenerate_offset = ns <= 1e-9 * scale or nd <= 1e-9 * scale
    us = off_s / ns if not degenerate_offset else np.zeros(3)
    ud = off_d / nd if not degenerate_offset else np.zeros(3)

    candidates = []
    for Q in _SIGNED_PERMS:
        perm_ok = all(allowed[i, int(np.argmax(np.abs(Q[:, i])))] for i in range(3))
        if not perm_ok:
            continue
        R = dst_mbb.axes @ Q @ src_mbb.axes.T
        candidates.append((float(ud @ (R @ us)), R))
    scores = np.array([c[0] for c in candidates])
    best = int(np.argmax(scores))
    if len(scores) > 1:
        runner_up = np.max(np.delete(scores, best))
        symmetric = bool(np.any(allowed & ~np.eye(3, dtype=bool)))
        if scores[best] - runner_up < SCORE_TIE_TOL and (symmetric or degenerate_offset):
            raise AmbiguousOrientation(
                "global features cannot fix the orientation "
                f"(top scores {scores[best]:.3g} vs {runner_up:.3g})"
            )
    R = nearest_rotation(candidates[best][1])
    return RigidTransform(R, dst_mbb.center - R @ src_mbb.center)
