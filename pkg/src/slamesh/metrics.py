"""Trajectory and mesh accuracy metrics."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, InvalidParam, TrajectoryMismatch
from .geometry import compose, inverse

KITTI_LENGTHS = tuple(range(100, 801, 100))
DESK_LENGTHS = tuple(range(10, 81, 10))


class RPE(NamedTuple):
    translation_pct: float
    rotation_deg_per_100m: float


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def path_distances(poses) -> np.ndarray:
    t = np.array([p.t for p in poses])
    steps = np.linalg.norm(np.diff(t, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def default_lengths(gt) -> tuple:
    """KITTI segment lengths, or the x0.1 desk-scale set for paths under 800 m."""
    return KITTI_LENGTHS if path_distances(gt)[-1] >= 800.0 else DESK_LENGTHS


def relative_pose_error(est, gt, lengths=None, step: int = 1) -> RPE:
    """KITTI-protocol segment errors: translation in %, rotation in deg per 100 m.

    Segments start at every ``step``-th frame and end at the first frame whose
    ground-truth arc length from the start exceeds each length L. Returns NaN
    for both errors when the path is too short for any segment.
    """
    if len(est) != len(gt):
        raise TrajectoryMismatch(f"{len(est)} estimated vs {len(gt)} ground-truth poses")
    if len(gt) < 2:
        raise TrajectoryMismatch("need at least two poses")
    if lengths is None:
        lengths = default_lengths(gt)
    dist = path_distances(gt)
    t_err, r_err = [], []
    for first in range(0, len(gt), step):
        for L in lengths:
            last = int(np.searchsorted(dist, dist[first] + L, side="right"))
            if last >= len(gt):
                continue
            d_gt = compose(inverse(gt[first]), gt[last])
            d_est = compose(inverse(est[first]), est[last])
            # same values as the KITTI error pose inv(d_est) * d_gt, in forms that
            # vanish exactly when the two relative motions are identical
            t_err.append(float(np.linalg.norm(d_gt.t - d_est.t)) / L)
            r_err.append(_chordal_angle(d_est.R, d_gt.R) / L)
    if not t_err:
        return RPE(math.nan, math.nan)
    return RPE(100.0 * float(np.mean(t_err)), 100.0 * math.degrees(float(np.mean(r_err))))


def _chordal_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Angle of Ra^T Rb from the Frobenius distance, 2 sqrt(2) sin(angle / 2)."""
    chord = float(np.linalg.norm(Ra - Rb)) / (2.0 * math.sqrt(2.0))
    return 2.0 * math.asin(min(1.0, chord))


def absolute_trajectory_error(est, gt) -> float:
    """RMS translation error after expressing both trajectories relative to their first pose."""
    if len(est) != len(gt) or not est:
        raise TrajectoryMismatch("trajectories must be non-empty and of equal length")
    e0, g0 = inverse(est[0]), inverse(gt[0])
    d = [compose(e0, e).t - compose(g0, g).t for e, g in zip(est, gt)]
    return float(np.sqrt(np.mean(np.sum(np.square(d), axis=1))))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def sample_mesh(mesh, density: float, seed: int = 0) -> np.ndarray:
    """Uniform area sampling: floor(area * density) points per face plus a Bernoulli remainder."""
    if not density > 0:
        raise InvalidParam("density must be positive")
    if len(mesh.faces) == 0:
        return np.zeros((0, 3))
    rng = np.random.default_rng(seed)
    tri = mesh.vertices[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    expected = area * density
    counts = np.floor(expected).astype(np.int64)
    counts += rng.random(len(counts)) < (expected - counts)
    face = np.repeat(np.arange(len(counts)), counts)
    r1 = np.sqrt(rng.random(len(face)))
    r2 = rng.random(len(face))
    a, b, c = tri[face, 0], tri[face, 1], tri[face, 2]
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def mesh_prf(mesh, gt_cloud, d: float = 0.3, density: float = 100.0, seed: int = 0) -> PRF:
    """Precision / recall / F1 (in %) of a mesh against a ground-truth point cloud."""
    gt = np.asarray(gt_cloud, dtype=np.float64).reshape(-1, 3)
    if len(mesh.faces) == 0 or len(gt) == 0:
        raise EmptyInput("mesh and ground-truth cloud must be non-empty")
    samples = sample_mesh(mesh, density, seed)
    if len(samples) == 0:
        raise EmptyInput("mesh has no area to sample")
    return cloud_prf(samples, gt, d)


def cloud_prf(samples, gt, d: float) -> PRF:
    d_pred, _ = cKDTree(gt).query(samples, distance_upper_bound=d * 1.0001 + 1e-12)
    d_gt, _ = cKDTree(samples).query(gt, distance_upper_bound=d * 1.0001 + 1e-12)
    p = 100.0 * float(np.mean(d_pred <= d))
    r = 100.0 * float(np.mean(d_gt <= d))
    return PRF(p, r, f1_score(p, r))
