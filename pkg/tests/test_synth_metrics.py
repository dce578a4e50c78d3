import math

import numpy as np
import pytest

from oracles import kitti_rpe

from slamesh.errors import EmptyInput, InvalidParam, TrajectoryMismatch
from slamesh.geometry import Pose, compose, rot_z, se3_exp
from slamesh.mesh import TriangleMesh
from slamesh.metrics import (DESK_LENGTHS, KITTI_LENGTHS, absolute_trajectory_error, cloud_prf,
                             default_lengths, f1_score, mesh_prf, relative_pose_error, sample_mesh)
from slamesh.synth import (BeamPattern, Box, Plane, Scene, cast_rays, corridor_scene, corridor_trajectory,
                           make_scene, simulate_scan, simulate_sequence, surface_cloud)


def _wall_x10():
    return Scene([Plane((10.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (50.0, 50.0))])


def test_single_ray_hits_plane():
    pattern = BeamPattern(vertical_deg=(0.0,), horizontal_res_deg=360.0, noise_sigma=0.0)
    scan = simulate_scan(_wall_x10(), Pose.identity(), pattern)
    assert np.array_equal(scan.points, [[10.0, 0.0, 0.0]])
    noisy = simulate_scan(_wall_x10(), Pose.identity(), BeamPattern((0.0,), 360.0, 100.0, 0.02), seed=3)
    assert np.allclose(noisy.points, [[10, 0, 0]], atol=0.2)
    assert noisy.points[0, 1] == 0.0 and noisy.points[0, 2] == 0.0


def test_ray_miss():
    pattern = BeamPattern(vertical_deg=(0.0,), horizontal_res_deg=360.0, noise_sigma=0.0)
    scan = simulate_scan(_wall_x10(), Pose(rot_z(math.pi), [0, 0, 0]), pattern)
    assert len(scan) == 0
    assert np.isinf(cast_rays(_wall_x10(), (0, 0, 0), np.array([[0.0, 1.0, 0.0]]), 100.0)[0])


def test_closed_box_every_ray_hits():
    # inside a hollow box the ray leaves through the far face
    scene = Scene(boxes=[Box((-10, -10, -5), (10, 10, 5))])
    pattern = BeamPattern()
    scan = simulate_scan(scene, Pose.identity(), pattern)
    assert len(pattern.directions()) == 64 * 1800
    assert len(scan) == 64 * 1800


def test_box_hit_from_outside():
    scene = Scene(boxes=[Box((4, -1, -1), (6, 1, 1))])
    t = cast_rays(scene, (0, 0, 0), np.array([[1.0, 0, 0], [0, 1.0, 0]]), 100.0)
    assert t[0] == 4.0 and np.isinf(t[1])


def test_simulation_is_deterministic():
    scene = corridor_scene(10)
    pose = corridor_trajectory(3)[2]
    a = simulate_scan(scene, pose, seed=7)
    b = simulate_scan(scene, pose, seed=7)
    assert a.points.tobytes() == b.points.tobytes()
    c = simulate_scan(scene, pose, seed=8)
    assert a.points.tobytes() != c.points.tobytes()


def test_scene_validation():
    with pytest.raises(InvalidParam):
        Plane((0, 0, 0), (0, 0, 2.0), (1, 0, 0), (1, 1))
    with pytest.raises(InvalidParam):
        Plane((0, 0, 0), (0, 0, 1.0), (0, 0, 1.0), (1, 1))
    with pytest.raises(InvalidParam):
        BeamPattern(vertical_deg=(2.0, -2.0))
    with pytest.raises(InvalidParam):
        make_scene("forest")
    for name in ("corridor", "boxes", "ramp"):
        assert make_scene(name).planes


def test_sequence_ground_truth():
    seq = simulate_sequence(corridor_scene(10), corridor_trajectory(3), seed=1)
    assert len(seq.scans) == 3
    rel = seq.relative_poses()
    assert np.allclose(rel[0].matrix(), np.eye(4))
    assert np.allclose(rel[2].t[0], 1.0, atol=0.01)
    # every ground-truth point lies on a scene surface
    full = surface_cloud(seq.scene)
    assert len(seq.gt_cloud) > 1000 and len(seq.gt_cloud) <= len(full)


def test_rpe_identity_and_offset():
    rng = np.random.default_rng(0)
    gt = [Pose.identity()]
    for _ in range(200):
        gt.append(compose(gt[-1], se3_exp(np.concatenate([rng.normal(size=3) * 0.01, [0.5, 0.0, 0.0]]))))
    assert relative_pose_error(gt, gt) == (0.0, 0.0)
    offset = Pose(np.eye(3), [3.0, -2.0, 1.0])
    shifted = [compose(offset, p) for p in gt]
    t, r = relative_pose_error(shifted, gt)
    assert t < 1e-12 and r < 1e-6


def test_rpe_scale_inflation():
    gt = [Pose(np.eye(3), [float(x), 0.0, 0.0]) for x in range(201)]
    est = [Pose(np.eye(3), [1.01 * x, 0.0, 0.0]) for x in range(201)]
    t, r = relative_pose_error(est, gt, KITTI_LENGTHS)
    # every segment of length L overshoots by exactly 0.01 L
    assert abs(t - 1.0) < 0.05
    assert r == 0.0


def test_rpe_matches_textbook_oracle():
    rng = np.random.default_rng(5)
    gt, est = [Pose.identity()], [Pose.identity()]
    for _ in range(120):
        step = np.concatenate([rng.normal(size=3) * 0.01, [0.5, 0.0, 0.0]])
        gt.append(compose(gt[-1], se3_exp(step)))
        est.append(compose(est[-1], se3_exp(step + rng.normal(size=6) * 0.003)))
    t, r = relative_pose_error(est, gt, DESK_LENGTHS)
    t0, r0 = kitti_rpe(est, gt, DESK_LENGTHS)
    assert abs(t - t0) < 1e-9 * t0 and abs(r - r0) < 1e-6 * r0


def test_rpe_errors_and_lengths():
    gt = [Pose(np.eye(3), [float(x), 0.0, 0.0]) for x in range(10)]
    with pytest.raises(TrajectoryMismatch):
        relative_pose_error(gt[:5], gt)
    with pytest.raises(TrajectoryMismatch):
        relative_pose_error(gt[:1], gt[:1])
    assert all(math.isnan(v) for v in relative_pose_error(gt, gt, (20.0,)))
    assert default_lengths(gt) == DESK_LENGTHS
    long_gt = [Pose(np.eye(3), [10.0 * x, 0.0, 0.0]) for x in range(100)]
    assert default_lengths(long_gt) == KITTI_LENGTHS


def test_ate():
    gt = [Pose(np.eye(3), [float(x), 0.0, 0.0]) for x in range(5)]
    est = [Pose(np.eye(3), [float(x), 0.1 * (x > 0), 0.0]) for x in range(5)]
    # four of five poses are off by 0.1 m
    assert abs(absolute_trajectory_error(est, gt) - math.sqrt(4 * 0.01 / 5)) < 1e-15
    with pytest.raises(TrajectoryMismatch):
        absolute_trajectory_error([], [])


def test_f1_arithmetic():
    assert abs(f1_score(74.96, 86.09) - 80.14) < 0.01
    assert f1_score(0.0, 0.0) == 0.0


def test_sample_mesh():
    tri = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], np.zeros(3))
    pts = sample_mesh(tri, 1000.0, seed=0)
    assert abs(len(pts) - 500) <= 3 * math.sqrt(500)
    assert np.abs(pts[:, 2]).max() == 0.0
    assert np.all(pts[:, 0] + pts[:, 1] <= 1.0 + 1e-12)
    tilted = TriangleMesh([[0, 0, 1], [2, 0, 3], [0, 1, 1]], [[0, 1, 2]], np.zeros(3))
    p = sample_mesh(tilted, 500.0, seed=1)
    assert np.abs(p[:, 2] - (p[:, 0] + 1.0)).max() < 1e-9
    flat = TriangleMesh([[0, 0, 0], [1, 1, 1], [2, 2, 2]], [[0, 1, 2]], np.zeros(3))
    assert len(sample_mesh(flat, 1000.0)) == 0
    assert np.array_equal(sample_mesh(tri, 100.0, seed=4), sample_mesh(tri, 100.0, seed=4))
    with pytest.raises(InvalidParam):
        sample_mesh(tri, 0.0)


def _square(x0=0.0, x1=2.0, z=0.0):
    return TriangleMesh([[x0, 0, z], [x1, 0, z], [x1, 2, z], [x0, 2, z]], [[0, 1, 2], [0, 2, 3]], np.zeros(4))


def _gt_grid(x1=2.0):
    s = np.arange(0.0, x1 + 1e-9, 0.02)
    t = np.arange(0.0, 2.0 + 1e-9, 0.02)
    a, b = np.meshgrid(s, t)
    return np.column_stack([a.ravel(), b.ravel(), np.zeros(a.size)])


def test_mesh_prf_cases():
    gt = _gt_grid()
    self_prf = mesh_prf(_square(), gt, d=0.1, density=400.0)
    assert self_prf.precision == 100.0 and self_prf.recall > 99.0
    far = mesh_prf(_square(z=0.2), gt, d=0.1)
    assert far.precision == 0.0 and far.recall == 0.0
    # mesh covers x in [0, 2] of a ground truth spanning x in [0, 4]
    half = mesh_prf(_square(), _gt_grid(4.0), d=0.05, density=2000.0)
    assert half.precision == 100.0
    assert abs(half.recall - 50.0) < 2.0
    assert abs(half.f1 - 66.7) < 1.5
    with pytest.raises(EmptyInput):
        mesh_prf(TriangleMesh.empty(), gt)
    with pytest.raises(EmptyInput):
        mesh_prf(_square(), np.zeros((0, 3)))


def test_cloud_prf_threshold_is_inclusive():
    prf = cloud_prf(np.array([[0.0, 0, 0]]), np.array([[0.25, 0, 0]]), 0.25)
    assert prf == (100.0, 100.0, 100.0)
