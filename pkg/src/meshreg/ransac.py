"""Global registration by random point-pair feature matching.

Two feature tables, one per mesh, are filled alternately: each iteration
draws a random vertex pair from one mesh, stores its quantized pair feature
in that mesh's table and looks the same key up in the other table.  Every
pair found there yields candidate rigid transforms (one per pair ordering),
which are scored by the fraction of a fixed random vertex sample landing
within ``inlier_eps`` of the other mesh.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateCorrespondences, DegeneratePair, InvalidParams, MissingNormals, NoHypothesisFound
from .icp import RegistrationResult, _increment, estimate_rigid
from .kdtree import KdTree, Metric, _arrays, build_kdtree, count_within, query
from .mesh import Mesh, RigidTransform

logger = logging.getLogger(__name__)

_PARALLEL_TOL = 1e-9


# ---------------------------------------------------------------------------
# pair features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairFeature:
    """Rigid-invariant description of two oriented points.

    ``d`` is the point distance, ``alpha``/``beta`` the angles of the first
    and second normal to the connecting direction, and ``delta`` the signed
    angle between the two normals projected onto the plane orthogonal to
    the connecting direction (right-handed about it).
    """

    d: float
    alpha: float
    beta: float
    delta: float


def _angle(u: tuple, v: tuple) -> float:
    """Angle between two vectors, stable near 0 and pi."""
    cx = u[1] * v[2] - u[2] * v[1]
    cy = u[2] * v[0] - u[0] * v[2]
    cz = u[0] * v[1] - u[1] * v[0]
    return math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), u[0] * v[0] + u[1] * v[1] + u[2] * v[2])


def pair_feature(p: ArrayLike, n_p: ArrayLike, q: ArrayLike, n_q: ArrayLike) -> PairFeature:
    px, py, pz = np.asarray(p, dtype=np.float64).ravel().tolist()
    qx, qy, qz = np.asarray(q, dtype=np.float64).ravel().tolist()
    a = tuple(np.asarray(n_p, dtype=np.float64).ravel().tolist())
    b = tuple(np.asarray(n_q, dtype=np.float64).ravel().tolist())
    dx, dy, dz = qx - px, qy - py, qz - pz
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d < 1e-12:
        raise DegeneratePair("pair points coincide")
    u = (dx / d, dy / d, dz / d)
    alpha = _angle(a, u)
    beta = _angle(b, u)
    # project both normals onto the plane orthogonal to u
    ua = a[0] * u[0] + a[1] * u[1] + a[2] * u[2]
    ub = b[0] * u[0] + b[1] * u[1] + b[2] * u[2]
    pa = (a[0] - ua * u[0], a[1] - ua * u[1], a[2] - ua * u[2])
    pb = (b[0] - ub * u[0], b[1] - ub * u[1], b[2] - ub * u[2])
    na = math.sqrt(pa[0] ** 2 + pa[1] ** 2 + pa[2] ** 2)
    nb = math.sqrt(pb[0] ** 2 + pb[1] ** 2 + pb[2] ** 2)
    if na < _PARALLEL_TOL or nb < _PARALLEL_TOL:
        delta = 0.0
    else:
        cx = pa[1] * pb[2] - pa[2] * pb[1]
        cy = pa[2] * pb[0] - pa[0] * pb[2]
        cz = pa[0] * pb[1] - pa[1] * pb[0]
        delta = math.atan2(cx * u[0] + cy * u[1] + cz * u[2],
                           pa[0] * pb[0] + pa[1] * pb[1] + pa[2] * pb[2])
        if delta <= -math.pi:
            delta = math.pi
    return PairFeature(d, alpha, beta, delta)


# ---------------------------------------------------------------------------
# feature tables
# ---------------------------------------------------------------------------

@dataclass
class FeatureTable:
    """Buckets of vertex-index pairs keyed by quantized pair feature."""

    d_bin: float
    angle_bin: float
    mesh_id: str = ""
    buckets: dict[tuple[int, int, int, int], list[tuple[int, int]]] = field(default_factory=dict)
    n_pairs: int = 0

    def __post_init__(self) -> None:
        if not (self.d_bin > 0 and self.angle_bin > 0):
            raise InvalidParams("bin widths must be positive")

    def key(self, f: PairFeature) -> tuple[int, int, int, int]:
        a = self.angle_bin
        return (int(math.floor(f.d / self.d_bin)), int(math.floor(f.alpha / a)),
                int(math.floor(f.beta / a)), int(math.floor((f.delta + math.pi) / a)))

    def __len__(self) -> int:
        return self.n_pairs


def _vertex_feature(mesh: Mesh, i: int, j: int) -> PairFeature:
    v, n = mesh.vertices, mesh.normals
    return pair_feature(v[i], n[i], v[j], n[j])


def build_or_extend_table(table: FeatureTable, mesh: Mesh, pair: tuple[int, int], *,
                          min_pair_distance: float = 0.0) -> FeatureTable:
    """Append ``pair`` (vertex indices into ``mesh``) to its feature bucket."""
    if not mesh.has_normals:
        raise MissingNormals("feature tables need vertex normals")
    i, j = int(pair[0]), int(pair[1])
    n = mesh.n_vertices
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"pair {pair} out of range for {n} vertices")
    if i == j:
        raise DegeneratePair("pair indices must differ")
    f = _vertex_feature(mesh, i, j)
    if f.d < min_pair_distance:
        raise DegeneratePair(f"pair distance {f.d:g} below the minimum {min_pair_distance:g}")
    table.buckets.setdefault(table.key(f), []).append((i, j))
    table.n_pairs += 1
    return table


def query_table(table: FeatureTable, f: PairFeature) -> list[tuple[int, int]]:
    """Pairs stored under the exact quantized key of ``f`` (insertion order)."""
    return list(table.buckets.get(table.key(f), ()))


# ---------------------------------------------------------------------------
# hypotheses
# ---------------------------------------------------------------------------

def _pair_frame(p1: NDArray, n1: NDArray, p2: NDArray) -> tuple[NDArray, NDArray]:
    e1 = p2 - p1
    d = np.linalg.norm(e1)
    if d < 1e-12:
        raise DegeneratePair("pair points coincide")
    e1 = e1 / d
    e2 = n1 - np.dot(n1, e1) * e1
    m = np.linalg.norm(e2)
    if m < _PARALLEL_TOL:
        raise DegeneratePair("normal is parallel to the connecting line")
    e2 = e2 / m
    F = np.column_stack([e1, e2, np.cross(e1, e2)])
    return F, 0.5 * (p1 + p2)


def transform_from_pairs(pA, pB) -> RigidTransform:
    """Rigid transform taking the local frame of pair ``pA`` onto that of ``pB``.

    Each pair is ``((point1, normal1), (point2, normal2))``.  The frame has
    its origin at the midpoint, first axis along the connecting direction
    and second axis along the part of the first normal orthogonal to it.
    """
    (a1, an1), (a2, _) = pA
    (b1, bn1), (b2, _) = pB
    FA, mA = _pair_frame(*(np.asarray(x, dtype=np.float64) for x in (a1, an1, a2)))
    FB, mB = _pair_frame(*(np.asarray(x, dtype=np.float64) for x in (b1, bn1, b2)))
    R = FB @ FA.T
    return RigidTransform(R, mB - R @ mA)


@numba.njit(cache=True, nogil=True)
def _frame_nb(p1, n1, p2, F, m):
    e = p2 - p1
    d = math.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
    if d < 1e-12:
        return False
    e = e / d
    dot = n1[0] * e[0] + n1[1] * e[1] + n1[2] * e[2]
    f = n1 - dot * e
    s = math.sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2])
    if s < 1e-9:
        return False
    f = f / s
    g0 = e[1] * f[2] - e[2] * f[1]
    g1 = e[2] * f[0] - e[0] * f[2]
    g2 = e[0] * f[1] - e[1] * f[0]
    for r in range(3):
        F[r, 0] = e[r]
        F[r, 1] = f[r]
    F[0, 2] = g0
    F[1, 2] = g1
    F[2, 2] = g2
    for r in range(3):
        m[r] = 0.5 * (p1[r] + p2[r])
    return True


@numba.njit(cache=True, nogil=True)
def _score_quads(sv, sn, tv, tn, quads, sample, inverse,
                 pts, idx, nstart, nend, nleft, nright, ndim, nsplit,
                 eps, metric, best_hits):
    """Score candidate pair matches ``(s_i, s_j, t_k, t_l)`` in order.

    Returns (best hits, index of the first quad reaching them or -1,
    hypotheses tested, degenerate quads).  Only strict improvements over
    the incoming ``best_hits`` are recorded; hopeless hypotheses abort
    verification as soon as they cannot beat the current best.
    """
    n = sample.shape[0]
    FA = np.empty((3, 3))
    FB = np.empty((3, 3))
    mA = np.empty(3)
    mB = np.empty(3)
    best_q = -1
    tested = 0
    degenerate = 0
    for q in range(quads.shape[0]):
        if best_hits >= n:
            break
        i, j, k, l = quads[q, 0], quads[q, 1], quads[q, 2], quads[q, 3]
        if not _frame_nb(sv[i], sn[i], sv[j], FA, mA) or not _frame_nb(tv[k], tn[k], tv[l], FB, mB):
            degenerate += 1
            continue
        R = FB @ FA.T
        t = mB - R @ mA
        if inverse:
            Rv = R.T.copy()
            tv_ = -(Rv @ t)
        else:
            Rv = R
            tv_ = t
        tested += 1
        hits = count_within(pts, idx, nstart, nend, nleft, nright, ndim, nsplit,
                            sample, Rv, tv_, eps, metric, n - best_hits - 1)
        if hits > best_hits:
            best_hits = hits
            best_q = q
    return best_hits, best_q, tested, degenerate


# ---------------------------------------------------------------------------
# parameters and verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RansacParams:
    """RANSAC settings.

    ``d_bin``, ``inlier_eps`` and ``min_pair_distance`` default to 1 %,
    0.5 % and 5 % of ``diagonal``, which itself defaults to the diagonal of
    the target's minimal bounding box.  ``verify_from`` selects which mesh
    the verification sample is drawn from (``"source"`` or ``"target"``).
    """

    max_iterations: int = 100_000
    d_bin: float | None = None
    angle_bin: float = math.radians(6.0)
    verify_samples: int = 200
    inlier_eps: float | None = None
    confidence_threshold: float = 0.7
    min_pair_distance: float | None = None
    seed: int = 0
    diagonal: float | None = None
    equalize: bool = True
    exhaustive: bool = False
    refit: bool = True
    refit_iterations: int = 30
    verify_from: str = "source"

    def validate(self) -> None:
        if self.max_iterations <= 0 or self.verify_samples <= 0 or self.refit_iterations <= 0:
            raise InvalidParams("iteration and sample counts must be positive")
        for name in ("d_bin", "inlier_eps", "min_pair_distance", "diagonal"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidParams(f"{name} must be positive")
        if not self.angle_bin > 0:
            raise InvalidParams("angle_bin must be positive")
        if not (0 < self.confidence_threshold <= 1):
            raise InvalidParams("confidence_threshold must lie in (0, 1]")
        if self.verify_from not in ("source", "target"):
            raise InvalidParams("verify_from must be 'source' or 'target'")

    def resolved(self, target: Mesh | None = None) -> "RansacParams":
        """Copy with every length default filled in."""
        self.validate()
        if None not in (self.d_bin, self.inlier_eps, self.min_pair_distance):
            return self
        diag = self.diagonal
        if diag is None:
            if target is None:
                raise InvalidParams("need a target mesh or an explicit diagonal")
            from .features import min_bounding_box
            diag = min_bounding_box(target.vertices, rng=np.random.default_rng(self.seed)).diagonal
        return replace(
            self, diagonal=diag,
            d_bin=self.d_bin if self.d_bin is not None else 0.01 * diag,
            inlier_eps=self.inlier_eps if self.inlier_eps is not None else 0.005 * diag,
            min_pair_distance=(self.min_pair_distance if self.min_pair_distance is not None
                               else 0.05 * diag),
        )


def _draw_sample(mesh: Mesh, count: int, rng: np.random.Generator) -> NDArray:
    n = mesh.n_vertices
    pick = rng.choice(n, size=min(count, n), replace=False)
    return np.ascontiguousarray(mesh.vertices[np.sort(pick)])


def verify_hypothesis(t: RigidTransform, source: Mesh, target_tree: KdTree,
                      params: RansacParams, *, metric: Metric | str = Metric.EUCLIDEAN,
                      sample: NDArray | None = None) -> float:
    """Fraction of sampled source vertices within ``inlier_eps`` of the target.

    The sample is ``params.verify_samples`` distinct vertices drawn with
    ``params.seed`` unless ``sample`` is given.
    """
    if params.inlier_eps is None:
        raise InvalidParams("inlier_eps must be resolved before verification")
    if sample is None:
        sample = _draw_sample(source, params.verify_samples, np.random.default_rng(params.seed))
    hits = count_within(*_arrays(target_tree), np.ascontiguousarray(sample, dtype=np.float64),
                        np.ascontiguousarray(t.rotation), np.ascontiguousarray(t.translation),
                        float(params.inlier_eps), int(Metric.parse(metric)), len(sample))
    return hits / len(sample)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

class _PairSampler:
    """Random vertex pairs from a pool, drawn in batches."""

    def __init__(self, mesh: Mesh, pool: NDArray, min_dist: float, rng: np.random.Generator):
        self.v = mesh.vertices
        self.n = mesh.normals
        self.pool = pool
        self.min_d2 = min_dist * min_dist
        self.rng = rng
        self._buf = np.empty((0, 2), np.int64)
        self._pos = 0

    def draw(self, attempts: int = 32) -> tuple[int, int] | None:
        for _ in range(attempts):
            if self._pos >= len(self._buf):
                self._buf = self.pool[self.rng.integers(0, len(self.pool), size=(4096, 2))]
                self._pos = 0
            i, j = self._buf[self._pos]
            self._pos += 1
            if i == j:
                continue
            d = self.v[j] - self.v[i]
            dd = float(d @ d)
            if dd < self.min_d2:
                continue
            # both frames need a normal that is not along the connecting line
            u = d / math.sqrt(dd)
            if 1.0 - abs(float(self.n[i] @ u)) < 1e-12 or 1.0 - abs(float(self.n[j] @ u)) < 1e-12:
                continue
            return int(i), int(j)
        return None


def _local_refine(Tv: RigidTransform, pts: NDArray, other: Mesh, tree: KdTree,
                  iterations: int, metric: Metric) -> RigidTransform:
    """Point-to-plane Gauss-Newton refinement of hypothesis ``Tv``.

    Residuals are offsets along the normal of the nearest vertex of the
    other mesh, so sliding within the surface is free and only genuine
    shape features (edges, pits) constrain the pose.
    """
    V, N = other.vertices, other.normals
    T = Tv
    for _ in range(iterations):
        x = T.apply(pts)
        nn, _ = query(tree, x, metric)
        n = N[nn]
        c = x.mean(axis=0)
        r = np.einsum("ij,ij->i", x - V[nn], n)
        J = np.hstack([np.cross(x - c, n), n])
        H = J.T @ J
        H += 1e-9 * np.trace(H) / 6.0 * np.eye(6)
        try:
            delta = np.linalg.solve(H, -J.T @ r)
        except np.linalg.LinAlgError:
            break
        T = _increment(delta, c) @ T
        if np.abs(delta).max() < 1e-10:
            break
    return T


def _inlier_refit(Tv: RigidTransform, pts: NDArray, other: Mesh, tree: KdTree, eps: float,
                  iterations: int, metric: Metric) -> RigidTransform | None:
    """Iterated Procrustes fit on the correspondences within ``eps``.

    Returns None when the inlier RMS does not improve on ``Tv``.
    """
    V = other.vertices

    def inlier_rms(T):
        nn, d = query(tree, T.apply(pts), metric)
        inl = d <= eps
        return (float(np.sqrt(np.mean(d[inl] ** 2))) if inl.sum() >= 3 else np.inf), nn, inl

    rms0, nn, inl = inlier_rms(Tv)
    T, rms = Tv, rms0
    for _ in range(iterations):
        try:
            T_new = estimate_rigid(pts[inl], V[nn[inl]])
        except DegenerateCorrespondences:
            break
        rms_new, nn, inl = inlier_rms(T_new)
        if not rms_new < rms:
            break
        T, rms = T_new, rms_new
        if rms == 0.0:
            break
    return T if rms < rms0 else None


def ransac_register(source: Mesh, target: Mesh, params: RansacParams = RansacParams(), *,
                    metric: Metric | str = Metric.EUCLIDEAN,
                    source_tree: KdTree | None = None,
                    target_tree: KdTree | None = None) -> RegistrationResult:
    """Find the rigid transform taking ``source`` onto ``target``.

    Iterations alternate between the meshes: even iterations draw a pair
    from the source, odd ones from the target.  The result's ``trace`` holds
    the best confidence after each improvement; ``diagnostics`` records the
    tested-hypothesis and successful-query counts.
    """
    metric = Metric.parse(metric)
    if not (source.has_normals and target.has_normals):
        raise MissingNormals("RANSAC needs vertex normals on both meshes")
    if source.n_vertices < 2 or target.n_vertices < 2:
        raise InvalidParams("each mesh needs at least two vertices")
    p = params.resolved(target)
    rng = np.random.default_rng(p.seed)

    meshes = (source, target)
    pools = [np.arange(source.n_vertices), np.arange(target.n_vertices)]
    if p.equalize and source.n_vertices != target.n_vertices:
        dense = 0 if source.n_vertices > target.n_vertices else 1
        k = meshes[1 - dense].n_vertices
        pools[dense] = np.sort(rng.choice(meshes[dense].n_vertices, size=k, replace=False))
    samplers = [_PairSampler(m, pool, p.min_pair_distance, np.random.default_rng(rng.integers(2 ** 63)))
                for m, pool in zip(meshes, pools)]
    tables = [FeatureTable(p.d_bin, p.angle_bin, "source"),
              FeatureTable(p.d_bin, p.angle_bin, "target")]

    # verification: fixed sample from one mesh, tree over the other
    from_target = p.verify_from == "target"
    vmesh, omesh = (target, source) if from_target else (source, target)
    otree = (source_tree if from_target else target_tree) or build_kdtree(omesh.vertices)
    vrng = np.random.default_rng(rng.integers(2 ** 63))
    sample = _draw_sample(vmesh, p.verify_samples, vrng)
    n_sample = len(sample)
    tree_arrays = _arrays(otree)

    sv = np.ascontiguousarray(source.vertices)
    sn = np.ascontiguousarray(source.normals)
    tv = np.ascontiguousarray(target.vertices)
    tn = np.ascontiguousarray(target.normals)

    # larger fixed sample for local refits of improving hypotheses
    fit_pts = _draw_sample(vmesh, 2000, vrng)
    eps = float(p.inlier_eps)

    def hits_of(Tv: RigidTransform) -> int:
        return int(count_within(*tree_arrays, sample, np.ascontiguousarray(Tv.rotation),
                                np.ascontiguousarray(Tv.translation), eps, int(metric), n_sample))

    best_hits = -1
    best_T: RigidTransform | None = None   # verification direction
    trace: list[float] = []
    tested = successes = degenerate = skipped = 0
    it = 0
    target_hits = math.ceil(p.confidence_threshold * n_sample - 1e-9)
    for it in range(1, p.max_iterations + 1):
        side = (it - 1) % 2
        pair = samplers[side].draw()
        if pair is None:
            skipped += 1
            continue
        f = _vertex_feature(meshes[side], *pair)
        key = tables[side].key(f)
        tables[side].buckets.setdefault(key, []).append(pair)
        tables[side].n_pairs += 1
        cands = tables[1 - side].buckets.get(key)
        if not cands:
            continue
        successes += 1
        c = np.asarray(cands, dtype=np.int64)
        m = len(c)
        quads = np.empty((2 * m, 4), np.int64)
        if side == 0:
            quads[:, 0] = pair[0]
            quads[:, 1] = pair[1]
            quads[0::2, 2:] = c
            quads[1::2, 2:] = c[:, ::-1]
        else:
            quads[:, 2] = pair[0]
            quads[:, 3] = pair[1]
            quads[0::2, :2] = c
            quads[1::2, :2] = c[:, ::-1]
        hits, q, nt, nd = _score_quads(sv, sn, tv, tn, quads, sample, from_target, *tree_arrays,
                                       eps, int(metric), best_hits)
        tested += nt
        degenerate += nd
        if q < 0:
            continue
        i, j, k, l = (int(x) for x in quads[q])
        T = transform_from_pairs(((sv[i], sn[i]), (sv[j], sn[j])), ((tv[k], tn[k]), (tv[l], tn[l])))
        Tv = T.inverse() if from_target else T
        if p.refit:
            # local optimisation of every new best hypothesis
            Tr = _local_refine(Tv, fit_pts, omesh, otree, p.refit_iterations, metric)
            hr = hits_of(Tr)
            if hr > hits:
                Tv, hits = Tr, hr
        best_hits, best_T = hits, Tv
        trace.append(best_hits / n_sample)
        if best_hits >= target_hits and not p.exhaustive:
            break

    if best_T is None:
        raise NoHypothesisFound(
            f"no table query succeeded in {it} iterations; try more iterations or coarser bins")

    Tv = best_T
    if p.refit:
        # final least-squares refit on inlier correspondences; kept only if
        # verification does not get worse
        Tr = _inlier_refit(Tv, fit_pts, omesh, otree, eps, p.refit_iterations, metric)
        if Tr is not None:
            hr = hits_of(Tr)
            if hr >= best_hits:
                Tv, best_hits = Tr, hr
    confidence = best_hits / n_sample
    T = Tv.inverse() if from_target else Tv

    _, d = query(otree, Tv.apply(fit_pts), metric)
    inl = d[d <= p.inlier_eps]
    rmsd = float(np.sqrt(np.mean(inl * inl))) if len(inl) else float("nan")
    converged = confidence >= p.confidence_threshold
    return RegistrationResult(
        transform=T, rmsd=rmsd, iterations=it, converged=converged, confidence=confidence,
        trace=trace,
        diagnostics={
            "tested_hypotheses": tested, "successful_queries": successes,
            "degenerate_hypotheses": degenerate, "skipped_iterations": skipped,
            "table_sizes": [len(tables[0]), len(tables[1])],
            "pools": [int(len(pools[0])), int(len(pools[1]))],
            "inlier_eps": float(p.inlier_eps), "d_bin": float(p.d_bin),
            "min_pair_distance": float(p.min_pair_distance), "diagonal": float(p.diagonal),
        },
    )
