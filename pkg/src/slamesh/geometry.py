"""Rigid transforms on SE(3) and the small linear-algebra kernels used everywhere.

Conventions:
    - A Pose maps points from its local frame to the world: p_w = R @ p + t.
    - A twist is a 6-vector ordered (rotation 3, translation 3), radians and meters.
    - Solver updates are applied on the left: T <- exp(twist) * T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9
SMALL_ANGLE = 1e-8


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform with rotation matrix ``R`` and translation ``t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R).reshape(3, 3)
        t = _frozen(self.t).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def inverse(self) -> Pose:
        return inverse(self)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project ``R`` onto SO(3) if it drifted more than ``ORTHO_TOL``."""
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err <= ORTHO_TOL:
        return R
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def compose(a: Pose, b: Pose) -> Pose:
    """Return the pose that applies ``b`` first, then ``a``."""
    return Pose(orthonormalize(a.R @ b.R), a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return Pose(p.R.T, -(p.R.T @ p.t))


def transform_point(T: Pose, p) -> np.ndarray:
    return T.R @ np.asarray(p, dtype=np.float64) + T.t


def transform_points(T: Pose, pts) -> np.ndarray:
    """Vectorized ``transform_point`` over an (N, 3) array."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    return pts @ T.R.T + T.t


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * K
        + ((1.0 - math.cos(theta)) / theta**2) * (K @ K)
    )


def se3_exp(twist) -> Pose:
    """Exponential map of a (rotation, translation) twist."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    phi, rho = twist[:3], twist[3:]
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        V = np.eye(3) + 0.5 * K + (K @ K) / 6.0
    else:
        V = (
            np.eye(3)
            + ((1.0 - math.cos(theta)) / theta**2) * K
            + ((theta - math.sin(theta)) / theta**3) * (K @ K)
        )
    return Pose(so3_exp(phi), V @ rho)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    c = 0.5 * (np.trace(R) - 1.0)
    return math.acos(max(-1.0, min(1.0, c)))


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def constant_velocity_guess(prev: Pose, prev2: Pose) -> Pose:
    """Extrapolate the last inter-frame motion one step forward."""
    return compose(prev, compose(inverse(prev2), prev))


def pose_delta(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation (m) and rotation (rad) distance between two poses."""
    d = compose(inverse(a), b)
    return float(np.linalg.norm(d.t)), rotation_angle(d.R)
