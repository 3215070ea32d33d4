"""Boundary slabs of a mesh inside its (shrunk) bounding box.

A triangle belongs to the slab of box face ``+X`` when its centroid, in box
coordinates, lies beyond ``(1 - factor) * half_extent`` along that axis.
Triangles are not clipped, and a triangle near a box edge can belong to up
to three slabs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySlabs, InvalidParams
from .features import OrientedBox
from .mesh import Mesh, surface_area

FACE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")


@dataclass(frozen=True, eq=False)
class CutSet:
    slabs: tuple[Mesh, ...]
    areas: tuple[float, ...]
    largest_index: int

    @property
    def largest_face(self) -> str:
        return FACE_NAMES[self.largest_index]


def shrink_box(box: OrientedBox, factor: float) -> OrientedBox:
    if not (0.0 <= factor < 0.5):
        raise InvalidParams("shrink factor must lie in [0, 0.5)")
    return OrientedBox(box.center.copy(), box.axes.copy(), box.half_extents * (1.0 - factor))


def slab_masks(mesh: Mesh, box: OrientedBox, factor: float = 0.01) -> np.ndarray:
    """(6, n_triangles) membership matrix in face order +X, -X, +Y, -Y, +Z, -Z."""
    inner = shrink_box(box, factor).half_extents
    if mesh.n_triangles == 0:
        return np.zeros((6, 0), dtype=bool)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    local = box.local(centroids)
    masks = []
    for axis in range(3):
        masks.append(local[:, axis] > inner[axis])
        masks.append(local[:, axis] < -inner[axis])
    return np.array(masks)


def extract_cut_set(mesh: Mesh, box: OrientedBox, factor: float = 0.01) -> CutSet:
    masks = slab_masks(mesh, box, factor)
    slabs = tuple(mesh.submesh(m) for m in masks)
    areas = tuple(surface_area(s) for s in slabs)
    if not any(s.n_triangles for s in slabs):
        raise EmptySlabs("no triangle lies in any boundary slab; is the box much larger than the mesh?")
    return CutSet(slabs, areas, int(np.argmax(areas)))


def largest_cut(cs: CutSet) -> Mesh:
    slab = cs.slabs[cs.largest_index]
    if slab.n_triangles == 0:
        raise EmptySlabs("largest slab is empty")
    return slab
