"""Command-line entry point: ``slamesh run|synth|eval-traj|eval-mesh|version``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import __version__
from .errors import ConfigError, SlameshError
from .gp import GpConfig
from .pipeline import PipelineConfig, run_sequence
from .registration import RegistrationConfig

# exit status per error category; anything unlisted exits with 1
EXIT_CODES = {"config": 2, "param": 2, "io": 3, "format": 4}


def _schedule(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def load_config(path) -> PipelineConfig:
    """Read a YAML mapping of PipelineConfig fields; ``gp`` and ``registration`` are sub-mappings."""
    import yaml

    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a mapping")
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> PipelineConfig:
    doc = dict(doc)
    sub = {}
    for key, cls in (("gp", GpConfig), ("registration", RegistrationConfig)):
        part = doc.pop(key, None) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(part) - known
        if unknown:
            raise ConfigError(f"unknown {key} keys: {sorted(unknown)}")
        try:
            sub[key] = cls(**part)
        except (TypeError, SlameshError) as exc:
            raise ConfigError(f"invalid {key} section: {exc}") from exc
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**doc, **sub)


def build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    gp, reg = cfg.gp, cfg.registration
    gp_kw = {k: v for k, v in (("n_grid", args.grid), ("sigma_in_sq", args.sigma_in)) if v is not None}
    reg_kw = {k: v for k, v in (("sigma_match_sq", args.sigma_match),
                                ("query_schedule", args.query_schedule),
                                ("max_association_age", args.max_association_age)) if v is not None}
    if args.no_combine:
        reg_kw["combine"] = False
    top = {
        "cell_size": args.cell_size,
        "sigma_update_sq": args.sigma_update,
        "input": args.input,
        "input_format": args.format,
        "out_traj": args.out_traj,
        "out_mesh": args.out_mesh,
        "report": args.report,
        "traj_format": args.traj_format,
        "max_frames": args.max_frames,
        "export_every": args.export_every,
    }
    top = {k: v for k, v in top.items() if v is not None}
    threads = args.threads
    if threads is None and not (args.config and _config_sets_threads(args.config)):
        env = os.environ.get("SLAMESH_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"SLAMESH_THREADS must be an integer, got {env!r}")
    if threads is not None:
        top["threads"] = threads
    try:
        return replace(cfg, gp=replace(gp, **gp_kw), registration=replace(reg, **reg_kw), **top)
    except SlameshError as exc:
        raise ConfigError(str(exc)) from exc


def _config_sets_threads(path) -> bool:
    import yaml

    doc = yaml.safe_load(Path(path).read_text()) or {}
    return "threads" in doc


def cmd_run(args) -> int:
    cfg = build_config(args)
    traj, mesh, reports = run_sequence(cfg)
    degraded = sum(r.degraded for r in reports)
    print(f"processed {len(reports)} frames ({degraded} degraded); "
          f"mesh {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")
    return 0


def cmd_synth(args) -> int:
    from .geometry import transform_points
    from .io import write_kitti_bin, write_ply_points, write_trajectory_kitti
    from .synth import BeamPattern, boxes_trajectory, corridor_trajectory, make_scene, simulate_sequence

    scene = make_scene(args.scene, args.seed)
    make_traj = boxes_trajectory if args.scene == "boxes" else corridor_trajectory
    poses = make_traj(args.frames)
    pattern = BeamPattern(noise_sigma=args.noise)
    seq = simulate_sequence(scene, poses, pattern, seed=args.seed, with_gt_cloud=not args.no_gt_cloud)
    out = Path(args.out)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    for k, scan in enumerate(seq.scans):
        write_kitti_bin(scan.points, out / "scans" / f"{k:06d}.bin")
    write_trajectory_kitti(seq.relative_poses(), out / "poses.txt")
    if not args.no_gt_cloud:
        # ground truth lives in the first sensor frame, like the estimated map
        write_ply_points(transform_points(poses[0].inverse(), seq.gt_cloud), out / "gt_cloud.ply")
    print(f"wrote {len(seq.scans)} scans to {out / 'scans'}")
    return 0


def cmd_eval_traj(args) -> int:
    from .io import read_trajectory_kitti
    from .metrics import absolute_trajectory_error, default_lengths, relative_pose_error

    est = read_trajectory_kitti(args.est)
    gt = read_trajectory_kitti(args.gt)
    lengths = tuple(args.lengths) if args.lengths else default_lengths(gt)
    rpe = relative_pose_error(est, gt, lengths)
    # null when the path is shorter than every segment length
    rpe = [None if math.isnan(v) else v for v in rpe]
    result = {
        "frames": len(gt),
        "ate_rmse_m": absolute_trajectory_error(est, gt),
        "rpe_translation_pct": rpe[0],
        "rpe_rotation_deg_per_100m": rpe[1],
        "segment_lengths_m": list(lengths),
    }
    _emit(result, args.json)
    return 0


def cmd_eval_mesh(args) -> int:
    from .io import read_mesh_ply, read_ply_points
    from .metrics import mesh_prf

    mesh = read_mesh_ply(args.mesh)
    gt = read_ply_points(args.gt_cloud).points
    result = {"d_m": args.d, "density": args.density}
    prf = mesh_prf(mesh, gt, args.d, args.density, args.seed)
    result.update(precision=prf.precision, recall=prf.recall, f1=prf.f1)
    # sampling-density sensitivity
    for dens in (50.0, 200.0):
        result[f"f1_density_{int(dens)}"] = mesh_prf(mesh, gt, args.d, dens, args.seed).f1
    _emit(result, args.json)
    return 0


def _emit(result: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(result))
        return
    for key, val in result.items():
        if isinstance(val, float):
            val = f"{val:.6g}"
        print(f"{key}: {val}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slamesh", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-frame progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="process a scan sequence into a trajectory and mesh")
    run.add_argument("--config", help="YAML file with PipelineConfig keys")
    run.add_argument("--input", help="directory of numbered scan files")
    run.add_argument("--format", choices=("kitti-bin", "ply-dir"))
    run.add_argument("--cell-size", type=float)
    run.add_argument("--grid", type=int, help="vertices per layer side")
    run.add_argument("--sigma-in", type=float, help="GP input noise variance")
    run.add_argument("--sigma-match", type=float, help="vertex validity threshold (variance)")
    run.add_argument("--sigma-update", type=float, help="fusion gate (variance)")
    run.add_argument("--threads", type=int, help="worker threads (default: $SLAMESH_THREADS or 8)")
    run.add_argument("--query-schedule", type=_schedule, help="query lengths per pass, e.g. 2,0")
    run.add_argument("--no-combine", action="store_true", help="solve on raw correspondences")
    run.add_argument("--max-association-age", type=int,
                     help="ignore map layers last updated more than this many frames ago")
    run.add_argument("--max-frames", type=int)
    run.add_argument("--export-every", type=int, help="also write an intermediate mesh every N frames")
    run.add_argument("--out-traj")
    run.add_argument("--traj-format", choices=("kitti", "tum"))
    run.add_argument("--out-mesh")
    run.add_argument("--report", help="JSON run report path")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("version", help="print the package version")
    ver.set_defaults(func=lambda args: print(__version__) or 0)

    syn = sub.add_parser("synth", help="simulate a LiDAR sequence with ground truth")
    syn.add_argument("--scene", choices=("corridor", "boxes", "ramp"), default="corridor")
    syn.add_argument("--frames", type=int, default=100)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--noise", type=float, default=0.02, help="range noise sigma in meters")
    syn.add_argument("--no-gt-cloud", action="store_true", help="skip the ground-truth surface cloud")
    syn.add_argument("--out", required=True)
    syn.set_defaults(func=cmd_synth)

    et = sub.add_parser("eval-traj", help="ATE and KITTI-style RPE of a trajectory")
    et.add_argument("--est", required=True)
    et.add_argument("--gt", required=True)
    et.add_argument("--lengths", type=float, nargs="+", help="segment lengths in meters")
    et.add_argument("--json", action="store_true")
    et.set_defaults(func=cmd_eval_traj)

    em = sub.add_parser("eval-mesh", help="precision / recall / F1 of a mesh against a point cloud")
    em.add_argument("--mesh", required=True)
    em.add_argument("--gt-cloud", required=True)
    em.add_argument("--d", type=float, default=0.3, help="distance threshold in meters")
    em.add_argument("--density", type=float, default=100.0, help="mesh samples per square meter")
    em.add_argument("--seed", type=int, default=0)
    em.add_argument("--json", action="store_true")
    em.set_defaults(func=cmd_eval_mesh)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except SlameshError as exc:
        print(f"slamesh: {exc.category} error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"slamesh: io error: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
