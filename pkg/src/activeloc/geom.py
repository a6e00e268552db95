"""Rigid poses, unit quaternions, the pinhole camera and viewpoint sampling.

Conventions
-----------
* Quaternions are stored ``(w, x, y, z)``.
* A :class:`Pose` maps camera coordinates to world coordinates:
  ``X_world = R @ X_cam + position``.
* Camera frame: +Z forward, +X right, +Y down.
* World frame: +Z up. Yaw is measured about world +Z from +X, pitch is
  positive when the camera looks up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, EmptyRequestError


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Shepperd's method; returns the quaternion with non-negative ``w``."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return q if q[0] >= 0 else -q


def quat_from_axis_angle(axis, angle_rad):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle_rad
    return np.concatenate([[math.cos(h)], math.sin(h) * axis])


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def so3_exp(omega):
    """Rotation matrix for the rotation vector ``omega`` (Rodrigues)."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + math.sin(theta) / theta * K + (1 - math.cos(theta)) / theta**2 * K @ K


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform (position in meters, unit quaternion)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        q = np.array(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise DegenerateInputError("orientation quaternion has zero or non-finite norm")
        p.flags.writeable = False
        q = q / n
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3))

    @classmethod
    def from_matrix(cls, R, position):
        return cls(position, matrix_to_quat(R))

    @classmethod
    def from_yaw_pitch(cls, position, yaw_deg, pitch_deg):
        return cls(position, matrix_to_quat(yaw_pitch_matrix(yaw_deg, pitch_deg)))

    @property
    def rotation(self):
        return quat_to_matrix(self.orientation)

    @property
    def forward(self):
        return self.rotation[:, 2]

    def compose(self, other: Pose) -> Pose:
        return pose_compose(self, other)

    def inverse(self) -> Pose:
        qi = quat_conjugate(self.orientation)
        return Pose(-quat_to_matrix(qi) @ self.position, qi)

    def to_camera(self, points):
        """World points ``(..., 3)`` expressed in the camera frame."""
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation

    def __repr__(self):
        return f"Pose(position={self.position.tolist()}, orientation={self.orientation.tolist()})"


def pose_compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose(a.position + a.rotation @ b.position, quat_multiply(a.orientation, b.orientation))


def rotation_geodesic_deg(a, b) -> float:
    """Angle of the relative rotation between two unit quaternions, in degrees."""
    rel = quat_multiply(quat_conjugate(np.asarray(a, float)), np.asarray(b, float))
    # atan2 keeps precision for tiny angles where acos(|w|) does not
    return math.degrees(2.0 * math.atan2(np.linalg.norm(rel[1:]), abs(rel[0])))


def yaw_pitch_matrix(yaw_deg, pitch_deg):
    """Camera-to-world rotation whose optical axis has the given yaw and pitch."""
    y, p = math.radians(yaw_deg), math.radians(pitch_deg)
    fwd = np.array([math.cos(p) * math.cos(y), math.cos(p) * math.sin(y), math.sin(p)])
    right = np.array([math.sin(y), -math.cos(y), 0.0])
    down = np.cross(fwd, right)
    return np.column_stack([right, down, fwd])


def yaw_pitch_of(direction):
    d = np.asarray(direction, dtype=float)
    yaw = math.degrees(math.atan2(d[1], d[0])) % 360.0
    pitch = math.degrees(math.atan2(d[2], math.hypot(d[0], d[1])))
    return yaw, pitch


@dataclass(frozen=True)
class CameraModel:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    near: float = 0.1
    far: float = 15.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")

    @property
    def hfov_deg(self):
        return math.degrees(math.atan(self.cx / self.fx) + math.atan((self.width - self.cx) / self.fx))

    @property
    def half_diagonal_fov_deg(self):
        """Largest angle between the optical axis and any ray through the image."""
        xs = (np.array([0.0, self.width]) - self.cx) / self.fx
        ys = (np.array([0.0, self.height]) - self.cy) / self.fy
        r = max(math.hypot(x, y) for x in xs for y in ys)
        return math.degrees(math.atan(r))

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height", "near", "far")}

    def in_image(self, uv):
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)

    def project_camera_points(self, Xc):
        """Pixels and in-frustum mask for camera-frame points ``(n, 3)``."""
        Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
        z = Xc[:, 2]
        ok = (z >= self.near) & (z <= self.far)
        zs = np.where(ok, z, 1.0)
        uv = np.column_stack([self.fx * Xc[:, 0] / zs + self.cx, self.fy * Xc[:, 1] / zs + self.cy])
        ok &= self.in_image(uv)
        return uv, ok


def project_points(points, camera_pose: Pose, cam: CameraModel):
    """Vectorized :func:`project`; returns ``(uv, mask)``."""
    return cam.project_camera_points(camera_pose.to_camera(np.atleast_2d(points)))


def project(point, camera_pose: Pose, cam: CameraModel):
    """Pixel ``(u, v)`` of a world point, or ``None`` when outside the frustum."""
    uv, ok = project_points(np.asarray(point, dtype=float).reshape(1, 3), camera_pose, cam)
    if not ok[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def angle_between_deg(a, b):
    """Angle between vectors along the last axis, robust near 0 and 180 degrees."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.linalg.norm(np.cross(a, b), axis=-1)
    d = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(c, d))


def principal_axis_angle_deg(camera_pose: Pose, point) -> float:
    d = np.asarray(point, dtype=float) - camera_pose.position
    if np.linalg.norm(d) == 0:
        raise DegenerateInputError("point coincides with the camera position")
    return float(angle_between_deg(camera_pose.forward, d))


@dataclass(frozen=True, eq=False)
class ViewpointCandidate:
    pose: Pose
    yaw: float
    pitch: float
    index: int


def sample_viewpoints(position, n, pitch_min_deg=-10.0, pitch_max_deg=45.0, rng_seed=0):
    """Candidate orientations at a fixed position.

    Yaw is stratified into ``n`` equal bins with one jittered sample per bin;
    pitch is uniform on ``[pitch_min_deg, pitch_max_deg]``.
    """
    if n < 1:
        raise EmptyRequestError("at least one viewpoint must be requested")
    if pitch_min_deg > pitch_max_deg:
        raise ValueError("pitch_min_deg must not exceed pitch_max_deg")
    rng = np.random.default_rng(rng_seed)
    width = 360.0 / n
    yaws = (np.arange(n) + rng.random(n)) * width
    yaws = np.minimum(yaws, np.nextafter(360.0, 0.0))
    pitches = pitch_min_deg + (pitch_max_deg - pitch_min_deg) * rng.random(n)
    position = np.asarray(position, dtype=float)
    return [
        ViewpointCandidate(Pose.from_yaw_pitch(position, float(y), float(p)), float(y), float(p), i)
        for i, (y, p) in enumerate(zip(yaws, pitches))
    ]
