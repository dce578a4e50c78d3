import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from slamesh.geometry import (Pose, compose, constant_velocity_guess, inverse, pose_delta, rot_z,
                              se3_exp, skew, so3_exp, transform_point)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
twist = st.tuples(*[st.floats(-3, 3, allow_nan=False)] * 6).map(np.array)


def deg(a):
    return math.radians(a)


def test_compose_identity_and_inverse():
    P = se3_exp([0.1, -0.2, 0.3, 1.0, 2.0, 3.0])
    Q = compose(Pose.identity(), P)
    assert np.array_equal(Q.R, P.R) and np.array_equal(Q.t, P.t)
    I = compose(P, inverse(P))
    assert np.abs(I.R - np.eye(3)).max() < 1e-12
    assert np.abs(I.t).max() < 1e-12


def test_compose_hand_example():
    a = Pose(rot_z(deg(90)), [1, 0, 0])
    out = compose(a, Pose(rot_z(deg(90)), [0, 0, 0]))
    # Rz(90) @ Rz(90) written out by hand
    expected = np.array([[-1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]])
    assert np.abs(out.R - expected).max() < 1e-12
    assert np.abs(out.t - [1, 0, 0]).max() < 1e-12


def test_transform_point_examples():
    assert np.allclose(transform_point(Pose.identity(), (1, 2, 3)), (1, 2, 3), atol=0)
    assert np.allclose(transform_point(Pose(np.eye(3), (1, 0, 0)), (0, 0, 0)), (1, 0, 0), atol=0)
    p = transform_point(Pose(rot_z(deg(90)), (0, 0, 0)), (1, 0, 0))
    assert np.abs(p - (0, 1, 0)).max() < 1e-12


def test_skew_examples():
    assert np.array_equal(skew((0, 0, 0)), np.zeros((3, 3)))
    assert np.array_equal(skew((1, 0, 0)) @ (0, 1, 0), (0, 0, 1))
    v = np.random.default_rng(0).normal(size=3)
    assert np.array_equal(skew(v) + skew(v).T, np.zeros((3, 3)))


def test_constant_velocity_examples():
    I = Pose.identity()
    g = constant_velocity_guess(I, I)
    assert np.allclose(g.matrix(), np.eye(4), atol=0)
    g = constant_velocity_guess(Pose(np.eye(3), (1, 0, 0)), I)
    assert np.abs(g.t - (2, 0, 0)).max() < 1e-15
    g = constant_velocity_guess(Pose(rot_z(deg(20)), (0, 0, 0)), Pose(rot_z(deg(10)), (0, 0, 0)))
    assert np.abs(g.R - rot_z(deg(30))).max() < 1e-12
    assert np.abs(g.t).max() < 1e-12


def test_non_finite_pose_rejected():
    import pytest

    with pytest.raises(ValueError):
        Pose(np.eye(3), (np.nan, 0, 0))


def test_small_angle_exp_is_taylor_accurate():
    phi = np.array([3e-9, -2e-9, 1e-9])
    assert np.abs(so3_exp(phi) - (np.eye(3) + skew(phi))).max() < 1e-16


def test_se3_exp_pure_translation():
    T = se3_exp([0, 0, 0, 1.0, 2.0, 3.0])
    assert np.array_equal(T.R, np.eye(3))
    assert np.allclose(T.t, (1, 2, 3), atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(twist)
def test_exp_map_is_orthonormal(tw):
    R = se3_exp(tw).R
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=200, deadline=None)
@given(twist, twist, vec3)
def test_transform_composition(ta, tb, p):
    a, b = se3_exp(ta), se3_exp(tb)
    lhs = transform_point(compose(a, b), p)
    rhs = transform_point(a, transform_point(b, p))
    assert np.abs(lhs - rhs).max() < 1e-10


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, finite, finite)
def test_skew_linearity(u, v, a, b):
    lhs = skew(a * u + b * v)
    rhs = a * skew(u) + b * skew(v)
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, np.abs(rhs).max())


@settings(max_examples=100, deadline=None)
@given(twist)
def test_pose_delta_of_self_is_zero(tw):
    T = se3_exp(tw)
    dt, dr = pose_delta(T, T)
    assert dt < 1e-12 and dr < 1e-6
