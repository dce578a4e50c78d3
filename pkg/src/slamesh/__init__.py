"""Simultaneous localization and meshing from LiDAR scans with per-cell GP surfaces."""

__version__ = "0.1.0"

from .geometry import Pose, compose, constant_velocity_guess, inverse, se3_exp, skew, transform_point
from .gp import GpConfig, Layer, gp_predict, kernel, reconstruct_cell, select_axes
from .mapping import MeshMap, fuse_layer, integrate_scan, map_stats
from .mesh import TriangleMesh, connect_layer, extract_mesh, face_normal, smoothed_normal
from .registration import (RegistrationConfig, associate, combine_constraints, register_scan,
                           residual, residual_jacobian, solve_lm)

__all__ = [
    "Pose", "compose", "constant_velocity_guess", "inverse", "se3_exp", "skew", "transform_point",
    "GpConfig", "Layer", "gp_predict", "kernel", "reconstruct_cell", "select_axes",
    "MeshMap", "fuse_layer", "integrate_scan", "map_stats",
    "TriangleMesh", "connect_layer", "extract_mesh", "face_normal", "smoothed_normal",
    "RegistrationConfig", "associate", "combine_constraints", "register_scan",
    "residual", "residual_jacobian", "solve_lm",
]
