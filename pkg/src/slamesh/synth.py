"""Synthetic scenes and a ray-casting spinning-LiDAR simulator with ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParam
from .geometry import Pose, rot_z, transform_points
from .io import RawScan

HIT_EPS = 1e-9


@dataclass(frozen=True)
class Plane:
    """Rectangle centred at ``point`` with unit ``normal``; ``u_axis`` spans the first extent."""

    point: tuple
    normal: tuple
    u_axis: tuple
    half_extent: tuple

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        u = np.asarray(self.u_axis, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9 or abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise InvalidParam("plane normal and u_axis must be unit vectors")
        if abs(n @ u) > 1e-9:
            raise InvalidParam("u_axis must lie in the plane")


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple


@dataclass
class Scene:
    planes: list = field(default_factory=list)
    boxes: list = field(default_factory=list)


@dataclass(frozen=True)
class BeamPattern:
    vertical_deg: tuple = tuple(np.linspace(-24.8, 2.0, 64))
    horizontal_res_deg: float = 0.2
    max_range: float = 100.0
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not self.horizontal_res_deg > 0:
            raise InvalidParam("horizontal resolution must be positive")
        if list(self.vertical_deg) != sorted(self.vertical_deg):
            raise InvalidParam("vertical angles must be sorted")

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, azimuth-major."""
        n_az = int(round(360.0 / self.horizontal_res_deg))
        az = np.deg2rad(np.arange(n_az) * self.horizontal_res_deg)
        el = np.deg2rad(np.asarray(self.vertical_deg, dtype=float))
        A, E = np.meshgrid(az, el, indexing="ij")
        return np.stack(
            [np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1
        ).reshape(-1, 3)


def _hit_planes(o, d, planes, best):
    for pl in planes:
        p0 = np.asarray(pl.point, dtype=float)
        n = np.asarray(pl.normal, dtype=float)
        u = np.asarray(pl.u_axis, dtype=float)
        v = np.cross(n, u)
        denom = d @ n
        ok = np.abs(denom) > 1e-12
        t = np.full(len(d), np.inf)
        t[ok] = ((p0 - o) @ n) / denom[ok]
        ok &= (t > HIT_EPS) & (t < best)
        if not ok.any():
            continue
        sel = np.nonzero(ok)[0]
        h = o - p0 + t[sel, None] * d[sel]
        inside = (np.abs(h @ u) <= pl.half_extent[0]) & (np.abs(h @ v) <= pl.half_extent[1])
        best[sel[inside]] = t[sel[inside]]


def _hit_boxes(o, d, boxes, best):
    for bx in boxes:
        lo = np.asarray(bx.lo, dtype=float)
        hi = np.asarray(bx.hi, dtype=float)
        # bounding-sphere cull before the slab test
        c = 0.5 * (lo + hi) - o
        rad = 0.5 * np.linalg.norm(hi - lo)
        proj = d @ c
        perp2 = c @ c - proj * proj
        sel = np.nonzero((perp2 <= rad * rad) & (proj > -rad) & (proj - rad < best))[0]
        if not len(sel):
            continue
        ds = d[sel]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / ds
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tnear = np.minimum(t1, t2).max(axis=1)
        tfar = np.maximum(t1, t2).min(axis=1)
        t = np.where(tnear > HIT_EPS, tnear, tfar)
        ok = (tnear <= tfar) & (t > HIT_EPS) & (t < best[sel])
        best[sel[ok]] = t[ok]


def cast_rays(scene: Scene, origin, dirs_world: np.ndarray, max_range: float) -> np.ndarray:
    """Distance to the nearest hit along each ray; ``inf`` for misses."""
    o = np.asarray(origin, dtype=float)
    best = np.full(len(dirs_world), np.inf)
    _hit_planes(o, dirs_world, scene.planes, best)
    _hit_boxes(o, dirs_world, scene.boxes, best)
    best[best > max_range] = np.inf
    return best


def simulate_scan(scene: Scene, sensor_pose: Pose, pattern: BeamPattern = BeamPattern(),
                  seed: int = 0, frame_index: int = 0, return_clean: bool = False):
    """Sensor-frame returns of one sweep; noise is Gaussian along each ray.

    With ``return_clean=True`` also returns the noise-free sensor-frame hits.
    """
    dirs = pattern.directions()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, len(dirs)) * pattern.noise_sigma
    t = cast_rays(scene, sensor_pose.t, dirs @ sensor_pose.R.T, pattern.max_range)
    hit = np.isfinite(t)
    pts = (t[hit] + noise[hit])[:, None] * dirs[hit]
    scan = RawScan(pts, frame_index=frame_index)
    if return_clean:
        return scan, t[hit][:, None] * dirs[hit]
    return scan


# --- scenes -----------------------------------------------------------------


def _wall(x0, x1, y, z0, z1, facing):
    return Plane(((x0 + x1) / 2, y, (z0 + z1) / 2), (0.0, facing, 0.0), (1.0, 0.0, 0.0),
                 ((x1 - x0) / 2, (z1 - z0) / 2))


def _xwall(x, y0, y1, z0, z1, facing):
    return Plane((x, (y0 + y1) / 2, (z0 + z1) / 2), (facing, 0.0, 0.0), (0.0, 1.0, 0.0),
                 ((y1 - y0) / 2, (z1 - z0) / 2))


def _floor(x0, x1, y0, y1, z):
    return Plane(((x0 + x1) / 2, (y0 + y1) / 2, z), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0),
                 ((x1 - x0) / 2, (y1 - y0) / 2))


def corridor_scene(n_cells: int = 50, cell: float = 1.6, margin: float = 0.1,
                   half_cells: int = 5, pillar_every: int = 0) -> Scene:
    """Straight corridor along +x with closed ends and optional wall pillars.

    The floor is at z = 0. With the sensor origin at height ``cell - margin``
    (the default of :func:`corridor_trajectory`) the scene is laid out on the
    ``cell``-sized grid anchored at the first sensor pose: the floor sits
    ``margin`` above a cell boundary and every vertical face sits ``margin``
    inside the cell on its solid side. A cell at a floor/wall junction then
    holds one full surface plus a sliver of the other.

    ``pillar_every > 0`` adds one-cell pillars on alternating walls. Their
    convex edges put an L-shaped patch into a single cell, whose GP surface
    depends on the viewpoint, so they bias registration along the corridor.
    """
    floor_z = 0.0
    top = 2 * (cell - margin)
    half_width = half_cells * cell + margin
    x0, x1 = -2 * cell - margin, n_cells * cell + margin
    planes = [
        _floor(x0, x1, -half_width, half_width, floor_z),
        _wall(x0, x1, half_width, floor_z, top, -1.0),
        _wall(x0, x1, -half_width, floor_z, top, 1.0),
        _xwall(x0, -half_width, half_width, floor_z, top, 1.0),
        _xwall(x1, -half_width, half_width, floor_z, top, -1.0),
    ]
    boxes = []
    front = (half_cells - 1) * cell + margin
    for k, i in enumerate(range(2, n_cells - 2, pillar_every) if pillar_every > 0 else ()):
        xa, xb = i * cell + margin, (i + 1) * cell - margin
        if k % 2 == 0:
            boxes.append(Box((xa, front, floor_z), (xb, half_width, top)))
        else:
            boxes.append(Box((xa, -half_width, floor_z), (xb, -front, top)))
    return Scene(planes, boxes)


def boxes_scene(seed: int = 0, size: float = 60.0, n_boxes: int = 30) -> Scene:
    rng = np.random.default_rng(seed)
    half = size / 2
    planes = [
        _floor(-half, half, -half, half, -0.05),
        _wall(-half, half, half, -0.05, 5.0, -1.0),
        _wall(-half, half, -half, -0.05, 5.0, 1.0),
        _xwall(half, -half, half, -0.05, 5.0, -1.0),
        _xwall(-half, -half, half, -0.05, 5.0, 1.0),
    ]
    boxes = []
    for _ in range(n_boxes):
        c = rng.uniform(-half + 3, half - 3, 2)
        if abs(c[1]) < 3.0:
            c[1] += 6.0 * np.sign(c[1] if c[1] != 0 else 1.0)
        s = rng.uniform(1.0, 3.0, 3)
        boxes.append(Box((c[0] - s[0] / 2, c[1] - s[1] / 2, -0.05), (c[0] + s[0] / 2, c[1] + s[1] / 2, s[2])))
    return Scene(planes, boxes)


def ramp_scene(n_cells: int = 50, slope_deg: float = 4.0) -> Scene:
    sc = corridor_scene(n_cells)
    length = n_cells * 1.6
    a = math.radians(slope_deg)
    n = (-math.sin(a), 0.0, math.cos(a))
    u = (math.cos(a), 0.0, math.sin(a))
    sc.planes.append(Plane((length / 2, 0.0, 0.0), n, u, (8.0 / math.cos(a), 1.5)))
    return sc


SCENES = {"corridor": corridor_scene, "boxes": boxes_scene, "ramp": ramp_scene}


def make_scene(name: str, seed: int = 0) -> Scene:
    if name == "boxes":
        return boxes_scene(seed)
    if name not in SCENES:
        raise InvalidParam(f"unknown scene {name!r}")
    return SCENES[name]()


def corridor_trajectory(n_frames: int, step: float = 0.5, yaw_amp_deg: float = 5.0,
                        period: int = 40, height: float = 1.5) -> list[Pose]:
    """Forward motion of ``step`` m per frame with a sinusoidal heading.

    The per-frame yaw change is bounded by ``yaw_amp * 2 pi / period``.
    """
    poses = []
    pos = np.array([0.0, 0.0, height])
    amp = math.radians(yaw_amp_deg)
    for k in range(n_frames):
        yaw = amp * math.sin(2 * math.pi * k / period)
        poses.append(Pose(rot_z(yaw), pos.copy()))
        yaw_mid = amp * math.sin(2 * math.pi * (k + 0.5) / period)
        pos = pos + step * np.array([math.cos(yaw_mid), math.sin(yaw_mid), 0.0])
    return poses


def boxes_trajectory(n_frames: int, step: float = 0.5, height: float = 1.8) -> list[Pose]:
    """A gentle arc through the boxes scene."""
    poses = []
    pos = np.array([-20.0, 0.0, height])
    for k in range(n_frames):
        yaw = math.radians(0.3 * k)
        poses.append(Pose(rot_z(yaw), pos.copy()))
        pos = pos + step * np.array([math.cos(yaw), math.sin(yaw), 0.0])
    return poses


# --- ground-truth surfaces ---------------------------------------------------


def _sample_rect(center, u, v, hu, hv, spacing):
    a = np.arange(-hu, hu + 1e-9, spacing)
    b = np.arange(-hv, hv + 1e-9, spacing)
    A, B = np.meshgrid(a, b, indexing="ij")
    return np.asarray(center) + A.reshape(-1, 1) * u + B.reshape(-1, 1) * v


def surface_cloud(scene: Scene, spacing: float = 0.05) -> np.ndarray:
    """Uniform samples on every primitive surface (box faces included)."""
    parts = []
    for pl in scene.planes:
        n = np.asarray(pl.normal, float)
        u = np.asarray(pl.u_axis, float)
        parts.append(_sample_rect(pl.point, u, np.cross(n, u), *pl.half_extent, spacing))
    for bx in scene.boxes:
        lo, hi = np.asarray(bx.lo, float), np.asarray(bx.hi, float)
        c, h = (lo + hi) / 2, (hi - lo) / 2
        for ax in range(3):
            u_ax, v_ax = (ax + 1) % 3, (ax + 2) % 3
            eu, ev = np.eye(3)[u_ax], np.eye(3)[v_ax]
            for sgn in (-1, 1):
                center = c.copy()
                center[ax] += sgn * h[ax]
                parts.append(_sample_rect(center, eu, ev, h[u_ax], h[v_ax], spacing))
    return np.vstack(parts) if parts else np.zeros((0, 3))


def visible_surface_cloud(scene: Scene, hits_world: np.ndarray, spacing: float = 0.05,
                          radius: float = 0.3) -> np.ndarray:
    """Surface samples lying within ``radius`` of some noise-free sensor return."""
    from scipy.spatial import cKDTree

    cloud = surface_cloud(scene, spacing)
    if len(hits_world) == 0 or len(cloud) == 0:
        return np.zeros((0, 3))
    d, _ = cKDTree(hits_world).query(cloud, distance_upper_bound=radius)
    return cloud[np.isfinite(d)]


@dataclass
class SyntheticSequence:
    scans: list
    poses_world: list
    gt_cloud: np.ndarray
    scene: Scene

    def relative_poses(self) -> list[Pose]:
        """Ground-truth poses expressed relative to the first frame."""
        inv0 = self.poses_world[0].inverse()
        return [inv0 @ p for p in self.poses_world]


def simulate_sequence(scene: Scene, poses: list[Pose], pattern: BeamPattern = BeamPattern(),
                      seed: int = 0, gt_spacing: float = 0.05, gt_radius: float = 0.3,
                      with_gt_cloud: bool = True) -> SyntheticSequence:
    from .io import downsample

    scans, hits = [], []
    for k, pose in enumerate(poses):
        scan, clean = simulate_scan(scene, pose, pattern, seed=seed + k, frame_index=k,
                                    return_clean=True)
        scans.append(scan)
        if with_gt_cloud:
            hits.append(downsample(RawScan(transform_points(pose, clean)), gt_spacing).points)
    gt = np.zeros((0, 3))
    if with_gt_cloud and hits:
        union = downsample(RawScan(np.vstack(hits)), gt_spacing).points
        gt = visible_surface_cloud(scene, union, gt_spacing, gt_radius)
    return SyntheticSequence(scans, list(poses), gt, scene)
