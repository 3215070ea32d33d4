"""Triangle meshes and rigid transforms.

Coordinates are unitless model units (documented as mm).  Meshes are
immutable: every array is flagged read-only after validation, and every
operation returns a new ``Mesh``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateGeometry, InvalidMesh, MeshIndexError

logger = logging.getLogger(__name__)

NORMAL_TOL = 1e-6
ROTATION_TOL = 1e-9


def _frozen(a: NDArray) -> NDArray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh with optional per-vertex unit normals and colors.

    ``normals`` is either empty (shape ``(0, 3)``) or has one row per vertex.
    ``colors`` is carried through I/O untouched and never used by algorithms.
    """

    vertices: NDArray[np.float64]
    triangles: NDArray[np.int64] = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    normals: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))
    colors: NDArray[np.uint8] | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise InvalidMesh("vertex coordinates must be finite")
        if len(t):
            if t.min() < 0 or t.max() >= len(v):
                raise MeshIndexError(
                    f"triangle index out of range [0, {len(v)}): "
                    f"min={int(t.min())}, max={int(t.max())}"
                )
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise InvalidMesh("triangle with repeated vertex index")
        if len(n):
            if len(n) != len(v):
                raise InvalidMesh(f"{len(n)} normals for {len(v)} vertices")
            lengths = np.linalg.norm(n, axis=1)
            if np.any(np.abs(lengths - 1.0) > NORMAL_TOL):
                raise InvalidMesh("normals must have unit length")
        c = None
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(c) != len(v):
                raise InvalidMesh(f"{len(c)} colors for {len(v)} vertices")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        object.__setattr__(self, "normals", _frozen(n))
        object.__setattr__(self, "colors", None if c is None else _frozen(c))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def has_normals(self) -> bool:
        return len(self.normals) > 0

    def replace(self, **changes) -> "Mesh":
        fields = dict(vertices=self.vertices, triangles=self.triangles,
                      normals=self.normals, colors=self.colors)
        fields.update(changes)
        return Mesh(**fields)

    def submesh(self, triangle_mask: ArrayLike) -> "Mesh":
        """Keep the selected triangles and compact the vertex list."""
        tris = self.triangles[np.asarray(triangle_mask)]
        used = np.unique(tris)
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return Mesh(
            vertices=self.vertices[used],
            triangles=remap[tris],
            normals=self.normals[used] if self.has_normals else np.zeros((0, 3)),
            colors=None if self.colors is None else self.colors[used],
        )

    def boundary_edges(self) -> NDArray[np.int64]:
        """Edges used by exactly one triangle, as sorted index pairs."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]

    def centroid(self) -> NDArray[np.float64]:
        return self.vertices.mean(axis=0)


def merge_meshes(meshes: Iterable[Mesh]) -> Mesh:
    """Concatenate meshes into one; normals are kept only if all have them."""
    meshes = list(meshes)
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    verts = np.concatenate([m.vertices for m in meshes])
    tris = np.concatenate([m.triangles + o for m, o in zip(meshes, offsets)])
    if all(m.has_normals for m in meshes):
        normals = np.concatenate([m.normals for m in meshes])
    else:
        normals = np.zeros((0, 3))
    return Mesh(verts, tris, normals)


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------

def skew(v: ArrayLike) -> NDArray[np.float64]:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(w: ArrayLike) -> NDArray[np.float64]:
    """Rodrigues' formula: rotation by ``|w|`` radians about ``w``."""
    w = np.asarray(w, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    if theta < 1e-15:
        return np.eye(3) + skew(w)
    K = skew(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def nearest_rotation(m: ArrayLike) -> NDArray[np.float64]:
    """Project a 3x3 matrix onto SO(3) (closest proper rotation, Frobenius)."""
    U, _, Vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def rotation_angle(R: ArrayLike) -> float:
    """Rotation angle of ``R`` in radians, in [0, pi]."""
    R = np.asarray(R)
    c = (np.trace(R) - 1.0) / 2.0
    # arccos is ill-conditioned near 0; use the skew part as well
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, c))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> rotation @ x + translation, with ``rotation`` a proper rotation."""

    rotation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidMesh("transform must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL:
            raise InvalidMesh("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise InvalidMesh("rotation is not proper (det != +1)")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m: ArrayLike, *, orthonormalize: bool = False) -> "RigidTransform":
        """Build from a 4x4 homogeneous or 3x4 matrix."""
        m = np.asarray(m, dtype=np.float64)
        R = m[:3, :3]
        if orthonormalize:
            R = nearest_rotation(R)
        return cls(R, m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec: ArrayLike, translation: ArrayLike = (0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotvec_to_matrix(rotvec), translation)

    @property
    def matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """``(self @ other)(x) == self(other(x))``."""
        R = self.rotation @ other.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12:
            R = nearest_rotation(R)
        return RigidTransform(R, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def angle_to(self, other: "RigidTransform") -> float:
        """Angle (radians) of the relative rotation between two transforms."""
        return rotation_angle(self.rotation.T @ other.rotation)

    def to_list(self) -> list[float]:
        """12 numbers: rotation row-major, then translation."""
        return [float(x) for x in self.rotation.ravel()] + [float(x) for x in self.translation]

    @classmethod
    def from_list(cls, values: Iterable[float]) -> "RigidTransform":
        v = np.asarray(list(values), dtype=np.float64)
        if v.shape != (12,):
            raise InvalidMesh(f"expected 12 numbers, got {v.size}")
        return cls(v[:9].reshape(3, 3), v[9:])


# ---------------------------------------------------------------------------
# Mesh operations
# ---------------------------------------------------------------------------

def triangle_cross(mesh: Mesh) -> NDArray[np.float64]:
    """Per-triangle (b - a) x (c - a); its norm is twice the triangle area."""
    v = mesh.vertices
    t = mesh.triangles
    a = v[t[:, 0]]
    return np.cross(v[t[:, 1]] - a, v[t[:, 2]] - a)


def surface_area(mesh: Mesh) -> float:
    if mesh.n_triangles == 0:
        return 0.0
    return float(0.5 * np.linalg.norm(triangle_cross(mesh), axis=1).sum())


def compute_vertex_normals(mesh: Mesh, *, with_diagnostics: bool = False):
    """Area-weighted vertex normals from triangle winding.

    Vertices without incident triangles get ``(0, 0, 1)``; their number is
    logged and, with ``with_diagnostics=True``, returned alongside the mesh.
    Zero-area triangles stay in the connectivity but do not contribute.
    """
    if mesh.n_triangles == 0:
        raise DegenerateGeometry("mesh has no triangles")
    cross = triangle_cross(mesh)
    double_area = np.linalg.norm(cross, axis=1)
    v = mesh.vertices
    scale = float(np.ptp(v, axis=0).max()) if len(v) else 0.0
    nondegenerate = double_area > 1e-14 * max(scale, 1e-300) ** 2
    cross = np.where(nondegenerate[:, None], cross, 0.0)

    t = mesh.triangles
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, t[:, k], cross)

    incident = np.zeros(len(v), dtype=bool)
    incident[t.ravel()] = True
    good_incident = np.zeros(len(v), dtype=bool)
    good_incident[t[nondegenerate].ravel()] = True

    bad = incident & ~good_incident
    if np.any(bad):
        raise DegenerateGeometry(
            f"{int(bad.sum())} vertices have only zero-area incident triangles"
        )
    lengths = np.linalg.norm(acc, axis=1)
    cancelled = incident & (lengths <= 1e-300)
    if np.any(cancelled):
        raise DegenerateGeometry(f"{int(cancelled.sum())} vertex normals cancel to zero")

    isolated = ~incident
    normals = np.empty_like(v)
    normals[incident] = acc[incident] / lengths[incident, None]
    normals[isolated] = (0.0, 0.0, 1.0)
    n_isolated = int(isolated.sum())
    if n_isolated:
        logger.warning("%d isolated vertices received the default normal", n_isolated)
    out = mesh.replace(normals=normals)
    return (out, n_isolated) if with_diagnostics else out


def apply_transform(mesh: Mesh, t: RigidTransform) -> Mesh:
    return mesh.replace(
        vertices=t.apply(mesh.vertices),
        normals=t.apply_vectors(mesh.normals) if mesh.has_normals else mesh.normals,
    )


def bounding_diagonal(points: ArrayLike) -> float:
    """Length of the axis-aligned bounding box diagonal."""
    p = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
