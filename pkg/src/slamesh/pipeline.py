"""Per-frame SLAM loop: ingest, register against the mesh map, fuse, export."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DegenerateProblem, NoOverlap
from .geometry import Pose, constant_velocity_guess, pose_delta, transform_points
from .gp import GpConfig
from .io import (RawScan, decode_key, downsample, encode_keys, list_frames, range_filter, read_frame,
                 write_mesh_ply, write_trajectory_kitti, write_trajectory_tum)
from .mapping import MeshMap, integrate_scan, map_stats
from .mesh import extract_mesh
from .registration import RegistrationConfig, reconstruct_scan, register_scan

log = logging.getLogger(__name__)

REPORT_SCHEMA = "slamesh.run-report/1"


@dataclass
class PipelineConfig:
    cell_size: float = 1.6
    gp: GpConfig = field(default_factory=GpConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    sigma_update_sq: float = 1.0
    fusion: str = "precision"
    threads: int = 8
    downsample_res: float | None = None
    downsample_mode: str = "first"
    min_range: float = 2.0
    max_range: float = 100.0
    # reuse the last registration-pass layers for fusion when the final update is below this
    reuse_tolerance: float = 1e-4
    input: str | None = None
    input_format: str = "kitti-bin"
    out_traj: str | None = None
    out_mesh: str | None = None
    report: str | None = None
    traj_format: str = "kitti"
    export_every: int = 0
    max_frames: int | None = None

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ConfigError("cell_size must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.min_range < 0 or self.max_range <= self.min_range:
            raise ConfigError("need 0 <= min_range < max_range")
        if self.downsample_res is not None and not self.downsample_res > 0:
            raise ConfigError("downsample_res must be positive")

    @property
    def voxel_res(self) -> float:
        return self.downsample_res if self.downsample_res is not None else self.cell_size / self.gp.n_grid


@dataclass
class FrameReport:
    frame: int
    pose: list
    durations_ms: dict
    raw_correspondences: int = 0
    combined_constraints: int = 0
    outer_iterations: int = 0
    lm_iterations: int = 0
    final_cost: float = 0.0
    n_points: int = 0
    degraded: bool = False
    reason: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class Slam:
    """Holds the map and trajectory; feed sensor-frame scans to ``process_frame``."""

    def __init__(self, cfg: PipelineConfig = PipelineConfig()):
        self.cfg = cfg
        self.map = MeshMap(cfg.cell_size, cfg.gp.n_grid, cfg.registration.sigma_match_sq,
                           cfg.sigma_update_sq, cfg.fusion)
        self.trajectory: list[Pose] = []
        self.reports: list[FrameReport] = []
        self._executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def preprocess(self, scan: RawScan) -> RawScan:
        pts = range_filter(scan.points, self.cfg.min_range, self.cfg.max_range)
        out = RawScan(pts, scan.frame_index, scan.timestamp, scan.dropped)
        return downsample(out, self.cfg.voxel_res, self.cfg.downsample_mode)

    def initial_guess(self) -> Pose:
        if len(self.trajectory) < 2:
            return self.trajectory[-1] if self.trajectory else Pose.identity()
        return constant_velocity_guess(self.trajectory[-1], self.trajectory[-2])

    def process_frame(self, raw_scan: RawScan) -> FrameReport:
        cfg = self.cfg
        k = len(self.trajectory)
        dur = dict.fromkeys(("ingest", "reconstruct", "associate", "solve", "integrate", "export"), 0.0)
        t0 = time.perf_counter()
        scan = self.preprocess(raw_scan)
        dur["ingest"] = time.perf_counter() - t0
        report = FrameReport(k, [], dur, n_points=len(scan))

        guess = self.initial_guess()
        pose = guess
        layers = None
        if k > 0:
            if len(scan) == 0:
                report.degraded, report.reason = True, "empty scan"
            else:
                try:
                    pose, st = register_scan(scan, self.map, guess, cfg.registration, cfg.gp,
                                             self._executor, frame_index=k)
                    for key in ("reconstruct", "associate", "solve"):
                        dur[key] += st["timing"][key]
                    report.raw_correspondences = st["raw_correspondences"]
                    report.combined_constraints = st["combined_constraints"]
                    report.outer_iterations = len(st["outer"])
                    report.lm_iterations = st["iterations"]
                    report.final_cost = st["final_cost"]
                    if max(pose_delta(st["layers_pose"], pose)) < cfg.reuse_tolerance:
                        layers = st["layers"]
                except (NoOverlap, DegenerateProblem) as exc:
                    pose = guess
                    report.degraded, report.reason = True, f"{type(exc).__name__}: {exc}"
                    log.warning("frame %d degraded: %s", k, exc)

        t1 = time.perf_counter()
        if layers is None and len(scan):
            layers = reconstruct_scan(scan.points, pose, cfg.cell_size, cfg.gp, self._executor)
        t2 = time.perf_counter()
        dur["reconstruct"] += t2 - t1
        if layers:
            integrate_scan(self.map, layers, frame_index=k)
            self._count_raw(scan.points, pose)
        dur["integrate"] = time.perf_counter() - t2

        self.trajectory.append(pose)
        report.pose = pose.matrix()[:3, :].reshape(-1).tolist()
        report.durations_ms = {key: 1000.0 * v for key, v in dur.items()}
        self.reports.append(report)
        return report

    def _count_raw(self, pts, pose):
        if not len(pts):
            return
        idx = np.floor(transform_points(pose, pts) / self.cfg.cell_size).astype(np.int64)
        keys = encode_keys(idx)
        if keys is None:
            return
        uk, counts = np.unique(keys, return_counts=True)
        self.map.add_raw_counts({decode_key(key): int(n) for key, n in zip(uk, counts)})

    def mesh(self):
        return extract_mesh(self.map)


def write_report(path, reports, totals: dict, stats, cfg: PipelineConfig) -> None:
    doc = {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "config": _config_dict(cfg),
        "frames": [r.to_dict() for r in reports],
        "totals": totals,
        "map": stats._asdict(),
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def _config_dict(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["registration"]["query_schedule"] = list(cfg.registration.query_schedule)
    return d


def run_sequence(cfg: PipelineConfig):
    """Process every frame of ``cfg.input`` and write the configured outputs.

    Returns (trajectory, final mesh, frame reports).
    """
    if cfg.input is None:
        raise ConfigError("no input directory given")
    frames = list_frames(cfg.input, cfg.input_format)
    if cfg.max_frames is not None:
        frames = frames[: cfg.max_frames]
    if not frames:
        raise ConfigError(f"no input frames in {cfg.input}")
    t_start = time.perf_counter()
    with Slam(cfg) as slam:
        for k, path in enumerate(frames):
            rep = slam.process_frame(read_frame(path, cfg.input_format, k))
            if cfg.export_every and cfg.out_mesh and (k + 1) % cfg.export_every == 0:
                t0 = time.perf_counter()
                stem = Path(cfg.out_mesh)
                write_mesh_ply(slam.mesh(), stem.with_name(f"{stem.stem}_{k:06d}{stem.suffix}"))
                rep.durations_ms["export"] = 1000.0 * (time.perf_counter() - t0)
            log.info("frame %d: t=%s corr=%d/%d%s", k, np.round(slam.trajectory[-1].t, 3),
                     rep.raw_correspondences, rep.combined_constraints,
                     " DEGRADED" if rep.degraded else "")
        mesh = slam.mesh()
        trajectory = slam.trajectory
        reports = slam.reports
        stats = map_stats(slam.map)
    if cfg.out_traj:
        if cfg.traj_format == "tum":
            write_trajectory_tum(trajectory, cfg.out_traj)
        else:
            write_trajectory_kitti(trajectory, cfg.out_traj)
    if cfg.out_mesh:
        write_mesh_ply(mesh, cfg.out_mesh)
    if cfg.report:
        wall = time.perf_counter() - t_start
        totals = {
            "frames": len(reports),
            "degraded_frames": sum(r.degraded for r in reports),
            "wall_time_s": wall,
            "mean_frame_ms": 1000.0 * wall / len(reports),
            "stage_ms": {key: sum(r.durations_ms[key] for r in reports)
                         for key in reports[0].durations_ms},
        }
        write_report(cfg.report, reports, totals, stats, cfg)
    return trajectory, mesh, reports


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **kw)
