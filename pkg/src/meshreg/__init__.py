"""Rigid registration of triangle meshes from different sensors.

Global pre-alignment (minimal enclosing ellipsoid and minimal bounding
box), cut-plane submesh extraction, ICP and point-pair RANSAC fine
registration, and RMSD / Hausdorff quality metrics.
"""

from .cuts import FACE_NAMES, CutSet, extract_cut_set, largest_cut, shrink_box
from .errors import *  # noqa: F401,F403
from .features import Ellipsoid, OrientedBox, min_bounding_box, min_enclosing_ellipsoid, prealign
from .icp import IcpParams, RegistrationResult, estimate_rigid, icp_register
from .kdtree import KdTree, Metric, build_kdtree, count_inliers, nearest, query
from .mesh import Mesh, RigidTransform, apply_transform, compute_vertex_normals, surface_area
from .meshio import load_mesh, save_mesh
from .metrics import hausdorff, rmsd
from .ransac import (FeatureTable, PairFeature, RansacParams, build_or_extend_table, pair_feature,
                     query_table, ransac_register, transform_from_pairs, verify_hypothesis)
from .synth import synth_specimen

__version__ = "0.1.0"
