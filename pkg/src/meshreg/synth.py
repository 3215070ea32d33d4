"""Procedural test specimens.

The ring specimen is a surface of revolution: a closed (r, z) profile swept
about +z.  The outer wall tapers so the bottom annulus (z = 0) is wider than
the top one.  Hemispherical pits are carved into the bottom annulus by
displacing vertices, which keeps the mesh watertight.  Vertices lie on rows
of constant profile position; the angular samples of every row repeat in
each pit sector, so a full ring has exact discrete rotational symmetry of
order ``pit_count`` unless ``jitter`` is set.

Partial rings keep the full ring's samples whose angle lies inside the arc,
so a partial ring with the same parameters is a vertex subset of the full
ring (up to the unjittered arc ends).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams
from .mesh import Mesh, compute_vertex_normals

KINDS = ("ring_with_pits", "partial_ring", "box_with_hole")


@dataclass(frozen=True)
class RingParams:
    outer_radius: float = 50.0
    top_outer_radius: float = 44.0
    inner_radius: float = 35.0
    height: float = 20.0
    pit_count: int = 5
    pit_radius: float = 6.0
    arc_span_deg: float = 360.0
    density: float = 0.4          # vertices per square model unit
    jitter: float = 0.0           # in-surface grid jitter, fraction of a cell
    sampling: str = "irregular"   # "irregular" (random per-row angles) or "grid"
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.inner_radius < min(self.outer_radius, self.top_outer_radius)):
            raise InvalidParams("need 0 < inner_radius < outer radii")
        if self.height <= 0:
            raise InvalidParams("height must be positive")
        if self.pit_count < 0:
            raise InvalidParams("pit_count must be >= 0")
        if self.pit_count and not (0 < self.pit_radius < min(
                (self.outer_radius - self.inner_radius) / 2, self.height)):
            raise InvalidParams("pit_radius must fit inside the bottom annulus and the height")
        if not (0 < self.arc_span_deg <= 360):
            raise InvalidParams("arc span must lie in (0, 360] degrees")
        if self.density <= 0:
            raise InvalidParams("density must be positive")
        if not (0 <= self.jitter < 0.5):
            raise InvalidParams("jitter must lie in [0, 0.5)")
        if self.sampling not in ("grid", "irregular"):
            raise InvalidParams("sampling must be 'grid' or 'irregular'")

    @property
    def pit_center_radius(self) -> float:
        return 0.5 * (self.inner_radius + self.outer_radius)


@dataclass(frozen=True)
class BoxParams:
    size: tuple[float, float, float] = (60.0, 40.0, 20.0)
    hole_radius: float = 6.0
    hole_depth: float = 10.0
    hole_offset: tuple[float, float] = (12.0, 6.0)
    density: float = 0.4
    seed: int = 0

    def validate(self) -> None:
        a, b, c = self.size
        if min(self.size) <= 0:
            raise InvalidParams("box dimensions must be positive")
        if self.density <= 0:
            raise InvalidParams("density must be positive")
        ox, oy = self.hole_offset
        if self.hole_radius <= 0 or not (0 < self.hole_depth < c):
            raise InvalidParams("hole must have positive radius and depth below the box height")
        if abs(ox) + self.hole_radius >= a / 2 or abs(oy) + self.hole_radius >= b / 2:
            raise InvalidParams("hole does not fit on the top face")


def synth_specimen(kind: str, params: RingParams | BoxParams | None = None, **overrides) -> Mesh:
    """Generate a specimen mesh with vertex normals.

    ``kind`` is ``ring_with_pits``, ``partial_ring`` or ``box_with_hole``.
    Keyword overrides are applied on top of ``params`` (or the defaults).
    ``partial_ring`` defaults to a 240 degree arc.
    """
    if kind not in KINDS:
        raise InvalidParams(f"unknown specimen kind {kind!r}; expected one of {KINDS}")
    if kind == "box_with_hole":
        p = params if isinstance(params, BoxParams) else BoxParams()
        p = _override(p, overrides)
        p.validate()
        return _box_with_hole(p)
    p = params if isinstance(params, RingParams) else RingParams()
    if kind == "partial_ring" and "arc_span_deg" not in overrides and params is None:
        overrides = {"arc_span_deg": 240.0, **overrides}
    p = _override(p, overrides)
    p.validate()
    if kind == "ring_with_pits" and p.arc_span_deg != 360:
        raise InvalidParams("ring_with_pits is a closed ring; use partial_ring for arcs")
    return _ring(p)


def _override(p, overrides):
    if not overrides:
        return p
    unknown = set(overrides) - set(p.__dataclass_fields__)
    if unknown:
        raise InvalidParams(f"unknown specimen parameters: {sorted(unknown)}")
    return type(p)(**{**p.__dict__, **overrides})


def _profile(p: RingParams, spacing: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed (r, z) polyline, counter-clockwise in the (r, z) half-plane.

    Returns radii, heights and a flag marking samples on the bottom annulus.
    """
    corners = [(p.inner_radius, 0.0), (p.outer_radius, 0.0),
               (p.top_outer_radius, p.height), (p.inner_radius, p.height)]
    r, z, bottom = [], [], []
    for k in range(4):
        (r0, z0), (r1, z1) = corners[k], corners[(k + 1) % 4]
        n = max(2, int(math.ceil(math.hypot(r1 - r0, z1 - z0) / spacing)))
        s = np.arange(n) / n
        r.append(r0 + s * (r1 - r0))
        z.append(z0 + s * (z1 - z0))
        bottom.append(np.full(n, k == 0))
    bottom_flags = np.concatenate(bottom)
    # the outer-bottom corner (first sample of edge 1) also lies on z = 0
    return np.concatenate(r), np.concatenate(z), bottom_flags


def _ring_rows(p: RingParams, n_prof: int, spacing: float):
    """Angular sample positions of every profile row (full ring).

    ``grid`` sampling places the same number of equally spaced angles on
    every row.  Equal spacing makes each row invariant under a rotation by
    its own step, which gives nearest-vertex distances false minima at
    multiples of that step.  ``irregular`` sampling draws a per-row count
    and uniform random angles instead.  Either way the angles are
    replicated over the pit sectors, so the pit symmetry stays exact.
    """
    mean_r = 0.5 * (p.inner_radius + p.outer_radius)
    mult = max(p.pit_count, 1)
    base = 2 * math.pi * mean_r / spacing / mult
    sector = 2 * math.pi / mult
    rng = np.random.default_rng(p.seed)
    if p.sampling == "grid":
        counts = np.full(n_prof, int(math.ceil(base)) * mult)
    else:
        counts = np.maximum(np.round(base * rng.uniform(0.8, 1.2, size=n_prof)), 1).astype(int) * mult
    rows = []
    for j in range(n_prof):
        step = 2 * math.pi / counts[j]
        if p.sampling == "grid":
            theta = np.arange(counts[j]) * step
        else:
            u = np.sort(rng.uniform(0.0, sector, size=counts[j] // mult))
            theta = (u[None, :] + sector * np.arange(mult)[:, None]).ravel()
        # jitter is drawn for the full ring so partial rings stay subsets
        jit = rng.uniform(-p.jitter, p.jitter, size=(counts[j], 2))
        rows.append((theta, jit, step))
    return rows


def _zip_rows(a_ids, a_th, b_ids, b_th, closed):
    """Triangulate the strip between two rows of increasing angle."""
    tris = []
    na, nb = len(a_ids), len(b_ids)
    if closed:
        # unwrap one extra sample so the strip closes on itself
        a_th = np.append(a_th, a_th[0] + 2 * math.pi)
        b_th = np.append(b_th, b_th[0] + 2 * math.pi)
        a_ids = np.append(a_ids, a_ids[0])
        b_ids = np.append(b_ids, b_ids[0])
        na, nb = na + 1, nb + 1
    i = k = 0
    while i < na - 1 or k < nb - 1:
        if k >= nb - 1 or (i < na - 1 and a_th[i + 1] <= b_th[k + 1]):
            tris.append((a_ids[i], a_ids[i + 1], b_ids[k]))
            i += 1
        else:
            tris.append((a_ids[i], b_ids[k + 1], b_ids[k]))
            k += 1
    return tris


def _ring(p: RingParams) -> Mesh:
    spacing = 1.0 / math.sqrt(p.density)
    r, z, on_bottom = _profile(p, spacing)
    n_prof = len(r)
    closed = p.arc_span_deg >= 360
    arc = math.radians(p.arc_span_deg)

    rows = _ring_rows(p, n_prof, spacing)
    xs, ys, zs, ids, ths = [], [], [], [], []
    offset = 0
    for j, (theta, jit, step) in enumerate(rows):
        jt = jit.copy()
        if j == 0:
            jt[:] = 0.0
        if not on_bottom[j]:
            jt[:, 1] = 0.0
        th = theta + jt[:, 0] * step
        keep = np.ones(len(th), bool) if closed else theta <= arc + 1e-12
        if not closed:
            kept = np.flatnonzero(keep)
            if len(kept) < 2:
                raise InvalidParams("arc span too small for the sampling density")
            # clean ends: no jitter on the first and last kept samples
            th[kept[[0, -1]]] = theta[kept[[0, -1]]]
            jt[kept[[0, -1]], 1] = 0.0
        th, jt = th[keep], jt[keep]
        # radial jitter only along the flat bottom, where it stays in-surface
        rr = r[j] + jt[:, 1] * spacing
        xs.append(rr * np.cos(th))
        ys.append(rr * np.sin(th))
        zs.append(np.full(len(th), z[j]))
        ids.append(offset + np.arange(len(th)))
        ths.append(th)
        offset += len(th)
    x, y, zz = np.concatenate(xs), np.concatenate(ys), np.concatenate(zs)

    if p.pit_count:
        bottom = np.concatenate([np.full(len(t), on_bottom[j]) for j, t in enumerate(ths)])
        pit_angles = 2 * math.pi * np.arange(p.pit_count) / p.pit_count
        for a in pit_angles:
            cx, cy = p.pit_center_radius * math.cos(a), p.pit_center_radius * math.sin(a)
            d2 = (x - cx) ** 2 + (y - cy) ** 2
            inside = bottom & (d2 < p.pit_radius ** 2)
            zz[inside] = np.sqrt(p.pit_radius ** 2 - d2[inside])

    verts = np.stack([x, y, zz], axis=-1)
    tris = []
    for j in range(n_prof):
        j2 = (j + 1) % n_prof
        tris += _zip_rows(ids[j], ths[j], ids[j2], ths[j2], closed)
    tris = _orient_outward(verts, np.asarray(tris, dtype=np.int64))
    return compute_vertex_normals(Mesh(verts, tris))


def _orient_outward(verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Flip winding if the signed volume (about the vertex centroid) is negative."""
    v = verts - verts.mean(axis=0)
    a, b, c = v[tris[:, 0]], v[tris[:, 1]], v[tris[:, 2]]
    signed = float(np.einsum("ij,ij->", a, np.cross(b, c)))
    return tris if signed >= 0 else tris[:, ::-1].copy()


def _box_with_hole(p: BoxParams) -> Mesh:
    a, b, c = p.size
    spacing = 1.0 / math.sqrt(p.density)
    rng = np.random.default_rng(p.seed)
    half = np.array([a, b, c]) / 2

    pieces_v, pieces_t = [], []
    offset = 0
    for axis in range(3):
        u_ax, v_ax = [k for k in range(3) if k != axis]
        nu = max(2, int(math.ceil(2 * half[u_ax] / spacing)))
        nv = max(2, int(math.ceil(2 * half[v_ax] / spacing)))
        us = np.linspace(-half[u_ax], half[u_ax], nu + 1)
        vs = np.linspace(-half[v_ax], half[v_ax], nv + 1)
        U, V = np.meshgrid(us, vs, indexing="ij")
        for sign in (-1.0, 1.0):
            pts = np.zeros((nu + 1, nv + 1, 3))
            pts[..., u_ax] = U
            pts[..., v_ax] = V
            pts[..., axis] = sign * half[axis]
            ii, jj = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
            q = lambda i, j: offset + i * (nv + 1) + j  # noqa: E731
            t1 = np.stack([q(ii, jj), q(ii + 1, jj), q(ii + 1, jj + 1)], -1).reshape(-1, 3)
            t2 = np.stack([q(ii, jj), q(ii + 1, jj + 1), q(ii, jj + 1)], -1).reshape(-1, 3)
            pieces_v.append(pts.reshape(-1, 3))
            pieces_t.append(np.concatenate([t1, t2]))
            offset += (nu + 1) * (nv + 1)
    verts = np.concatenate(pieces_v)
    tris = np.concatenate(pieces_t)

    # weld face grids along shared edges
    key = np.round(verts / (spacing * 1e-6)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = verts[first[order]]
    tris = rank[inverse.ravel()][tris]

    # per-face winding: make each triangle face away from the box center
    tri_pts = verts[tris]
    cross = np.cross(tri_pts[:, 1] - tri_pts[:, 0], tri_pts[:, 2] - tri_pts[:, 0])
    outward = tri_pts.mean(axis=1)
    flip = np.einsum("ij,ij->i", cross, outward) < 0
    tris[flip] = tris[flip][:, ::-1]

    # blind hole: sink top-face vertices inside the disk
    ox, oy = p.hole_offset
    top = np.isclose(verts[:, 2], half[2])
    inside = top & ((verts[:, 0] - ox) ** 2 + (verts[:, 1] - oy) ** 2 < p.hole_radius ** 2)
    verts[inside, 2] = half[2] - p.hole_depth
    # small in-plane jitter on interior top vertices keeps the mesh irregular
    interior = top & ~inside & (np.abs(verts[:, 0]) < half[0] - spacing) & (np.abs(verts[:, 1]) < half[1] - spacing)
    verts[interior, :2] += rng.uniform(-0.2, 0.2, size=(int(interior.sum()), 2)) * spacing
    return compute_vertex_normals(Mesh(verts, tris))


# ---------------------------------------------------------------------------
# Small primitives used by tests and examples
# ---------------------------------------------------------------------------

def unit_cube() -> Mesh:
    """[0, 1]^3 with 12 outward-wound triangles."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    t = np.array([
        [0, 1, 3], [0, 3, 2],  # x = 0
        [4, 6, 7], [4, 7, 5],  # x = 1
        [0, 4, 5], [0, 5, 1],  # y = 0
        [2, 3, 7], [2, 7, 6],  # y = 1
        [0, 2, 6], [0, 6, 4],  # z = 0
        [1, 5, 7], [1, 7, 3],  # z = 1
    ])
    return Mesh(v, t)


def octahedron(scale=(1.0, 1.0, 1.0)) -> Mesh:
    s = np.asarray(scale, dtype=float)
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float) * s
    t = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                  [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return Mesh(v, t)


def tetrahedron() -> Mesh:
    """Regular tetrahedron inscribed in the cube [-1, 1]^3."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, t)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    phi = (1 + 5 ** 0.5) / 2
    v = [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.asarray(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    pts = np.array(verts) * radius + np.asarray(center, float)
    return Mesh(pts, np.array(faces))
