"""kd-tree over 3D points with exact nearest-neighbour queries.

Construction splits each node at the median of its widest-spread axis
(leaf size 8) and is deterministic for a fixed input order.  Queries run in
compiled code and support the Euclidean and Manhattan metrics; ties are
broken by the smallest original point index, so results equal an
exhaustive scan exactly.
"""

from __future__ import annotations

import enum
import hashlib

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import EmptyInput, InvalidParams

LEAF_SIZE = 8


class Metric(enum.IntEnum):
    EUCLIDEAN = 0
    MANHATTAN = 1

    @classmethod
    def parse(cls, value: "Metric | str | int") -> "Metric":
        if isinstance(value, Metric):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise InvalidParams(f"unknown metric {value!r}") from None
        return cls(value)


def distance(a: ArrayLike, b: ArrayLike, metric: Metric | str = Metric.EUCLIDEAN) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if Metric.parse(metric) is Metric.MANHATTAN:
        return float(np.abs(d).sum())
    return float(np.sqrt((d * d).sum()))


class KdTree:
    """Immutable kd-tree.  Build with :func:`build_kdtree`."""

    __slots__ = ("points", "index", "node_start", "node_end", "node_left",
                 "node_right", "node_dim", "node_split", "depth")

    def __init__(self, points, index, node_start, node_end, node_left, node_right,
                 node_dim, node_split, depth):
        for name, arr in [("points", points), ("index", index), ("node_start", node_start),
                          ("node_end", node_end), ("node_left", node_left),
                          ("node_right", node_right), ("node_dim", node_dim),
                          ("node_split", node_split)]:
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "depth", depth)

    def __setattr__(self, name, value):
        raise AttributeError("KdTree is immutable")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_nodes(self) -> int:
        return len(self.node_start)

    def serialize(self) -> bytes:
        """Canonical byte form of the tree structure (for equality checks)."""
        parts = [self.points, self.index, self.node_start, self.node_end,
                 self.node_left, self.node_right, self.node_dim, self.node_split]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()


def build_kdtree(points: ArrayLike) -> KdTree:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise EmptyInput("cannot build a kd-tree over zero points")

    perm = np.arange(n, dtype=np.int64)
    start, end, left, right, dims, splits = [], [], [], [], [], []
    depth = 0
    # (node id, lo, hi, depth); node ids are assigned in creation order
    stack = [(0, 0, n, 0)]
    start.append(0); end.append(n); left.append(-1); right.append(-1)
    dims.append(-1); splits.append(0.0)
    while stack:
        node, lo, hi, d = stack.pop()
        depth = max(depth, d)
        if hi - lo <= LEAF_SIZE:
            continue
        sub = pts[perm[lo:hi]]
        spread = sub.max(axis=0) - sub.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0.0:
            continue  # all points identical: keep as one leaf
        order = np.argsort(sub[:, axis], kind="stable")
        perm[lo:hi] = perm[lo:hi][order]
        mid = lo + (hi - lo) // 2
        dims[node] = axis
        splits[node] = float(pts[perm[mid], axis])
        for child_lo, child_hi, slot in ((lo, mid, left), (mid, hi, right)):
            cid = len(start)
            start.append(child_lo); end.append(child_hi); left.append(-1); right.append(-1)
            dims.append(-1); splits.append(0.0)
            slot[node] = cid
        stack.append((right[node], mid, hi, d + 1))
        stack.append((left[node], lo, mid, d + 1))

    return KdTree(
        points=pts[perm], index=perm,
        node_start=np.asarray(start, np.int64), node_end=np.asarray(end, np.int64),
        node_left=np.asarray(left, np.int64), node_right=np.asarray(right, np.int64),
        node_dim=np.asarray(dims, np.int64), node_split=np.asarray(splits, np.float64),
        depth=depth,
    )


# ---------------------------------------------------------------------------
# compiled query kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _query_one(pts, idx, nstart, nend, nleft, nright, ndim, nsplit, qx, qy, qz, metric):
    """Return (position in pts, metric value, nodes visited).

    The metric value is the squared distance for the Euclidean metric.
    """
    best = np.inf
    best_pos = -1
    best_idx = np.int64(2 ** 62)
    visited = 0
    stack_node = np.empty(128, np.int64)
    stack_bound = np.empty(128, np.float64)
    top = 0
    stack_node[0] = 0
    stack_bound[0] = 0.0
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        if stack_bound[top] > best:
            continue
        visited += 1
        dim = ndim[node]
        if dim < 0:
            for k in range(nstart[node], nend[node]):
                dx = pts[k, 0] - qx
                dy = pts[k, 1] - qy
                dz = pts[k, 2] - qz
                if metric == 0:
                    d = dx * dx + dy * dy + dz * dz
                else:
                    d = abs(dx) + abs(dy) + abs(dz)
                if d < best or (d == best and idx[k] < best_idx):
                    best = d
                    best_pos = k
                    best_idx = idx[k]
            continue
        q = qx if dim == 0 else (qy if dim == 1 else qz)
        diff = q - nsplit[node]
        if metric == 0:
            bound = diff * diff
        else:
            bound = abs(diff)
        if diff < 0.0:
            near = nleft[node]
            far = nright[node]
        else:
            near = nright[node]
            far = nleft[node]
        # far first so that near is popped next
        stack_node[top] = far
        stack_bound[top] = bound
        top += 1
        stack_node[top] = near
        stack_bound[top] = 0.0
        top += 1
    return best_pos, best, visited


@numba.njit(cache=True, nogil=True)
def _query_many(pts, idx, nstart, nend, nleft, nright, ndim, nsplit, queries, metric):
    m = queries.shape[0]
    out_idx = np.empty(m, np.int64)
    out_dist = np.empty(m, np.float64)
    out_visits = np.empty(m, np.int64)
    for i in range(m):
        pos, d, v = _query_one(pts, idx, nstart, nend, nleft, nright, ndim, nsplit,
                               queries[i, 0], queries[i, 1], queries[i, 2], metric)
        out_idx[i] = idx[pos]
        out_dist[i] = np.sqrt(d) if metric == 0 else d
        out_visits[i] = v
    return out_idx, out_dist, out_visits


@numba.njit(cache=True, nogil=True)
def _any_within(pts, nstart, nend, nleft, nright, ndim, nsplit, qx, qy, qz, thresh, metric):
    """True if some stored point has metric value <= thresh (squared for L2).

    Subtrees are pruned against the fixed threshold, and the search stops at
    the first point found, so queries far from the data cost almost nothing.
    """
    stack_node = np.empty(128, np.int64)
    stack_node[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        dim = ndim[node]
        if dim < 0:
            for k in range(nstart[node], nend[node]):
                dx = pts[k, 0] - qx
                dy = pts[k, 1] - qy
                dz = pts[k, 2] - qz
                if metric == 0:
                    d = dx * dx + dy * dy + dz * dz
                else:
                    d = abs(dx) + abs(dy) + abs(dz)
                if d <= thresh:
                    return True
            continue
        q = qx if dim == 0 else (qy if dim == 1 else qz)
        diff = q - nsplit[node]
        bound = diff * diff if metric == 0 else abs(diff)
        if diff < 0.0:
            near = nleft[node]
            far = nright[node]
        else:
            near = nright[node]
            far = nleft[node]
        if bound <= thresh:
            stack_node[top] = far
            top += 1
        stack_node[top] = near
        top += 1
    return False


@numba.njit(cache=True, nogil=True)
def count_within(pts, idx, nstart, nend, nleft, nright, ndim, nsplit,
                 queries, R, t, eps, metric, max_misses):
    """Count transformed queries with a stored point within ``eps``.

    Stops early once more than ``max_misses`` queries have failed; the
    returned count is then a lower bound.
    """
    thresh = eps * eps if metric == 0 else eps
    hits = 0
    misses = 0
    for i in range(queries.shape[0]):
        x = queries[i, 0]
        y = queries[i, 1]
        z = queries[i, 2]
        qx = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
        qy = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
        qz = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
        if _any_within(pts, nstart, nend, nleft, nright, ndim, nsplit, qx, qy, qz, thresh, metric):
            hits += 1
        else:
            misses += 1
            if misses > max_misses:
                break
    return hits


def _arrays(tree: KdTree):
    return (tree.points, tree.index, tree.node_start, tree.node_end, tree.node_left,
            tree.node_right, tree.node_dim, tree.node_split)


def query(tree: KdTree, queries: ArrayLike, metric: Metric | str = Metric.EUCLIDEAN,
          *, return_visits: bool = False):
    """Batch nearest neighbours: returns ``(indices, distances)`` arrays.

    With ``return_visits=True`` a third array holds the number of tree nodes
    visited per query.
    """
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
    i, d, v = _query_many(*_arrays(tree), q, int(Metric.parse(metric)))
    return (i, d, v) if return_visits else (i, d)


def nearest(tree: KdTree, point: ArrayLike, metric: Metric | str = Metric.EUCLIDEAN) -> tuple[int, float]:
    """Index of the stored point closest to ``point`` and its distance."""
    i, d = query(tree, point, metric)
    return int(i[0]), float(d[0])


def nearest_distance_to_mesh(tree: KdTree, point: ArrayLike,
                             metric: Metric | str = Metric.EUCLIDEAN) -> float:
    """Distance from ``point`` to the nearest mesh vertex stored in ``tree``."""
    return nearest(tree, point, metric)[1]


def count_inliers(tree: KdTree, points: NDArray, rotation: NDArray, translation: NDArray,
                  eps: float, metric: Metric | str = Metric.EUCLIDEAN,
                  max_misses: int | None = None) -> int:
    """Number of ``rotation @ p + translation`` within ``eps`` of a stored point."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    limit = len(pts) if max_misses is None else int(max_misses)
    return int(count_within(*_arrays(tree), pts,
                            np.ascontiguousarray(rotation, dtype=np.float64),
                            np.ascontiguousarray(translation, dtype=np.float64),
                            float(eps), int(Metric.parse(metric)), limit))
