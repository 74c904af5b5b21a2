"""Rigid transforms and rotation helpers.

Quaternions are stored scalar-first, ``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``."""
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def quat_to_matrix(quat) -> np.ndarray:
    w, x, y, z = quat
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns the quaternion with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def axis_angle_to_quat(rotvec) -> np.ndarray:
    """Exponential map from a rotation vector to a unit quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    half = 0.5 * angle
    if angle < 1e-8:
        # second-order series keeps the map smooth at zero
        s = 0.5 - angle * angle / 48.0
        q = np.array([1.0 - half * half / 2.0, *(s * rotvec)])
    else:
        q = np.array([np.cos(half), *(np.sin(half) / angle * rotvec)])
    return q / np.linalg.norm(q)


def quat_to_axis_angle(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    return 2.0 * np.arctan2(s, q[0]) / s * v


def rotvec_to_matrix(rotvec) -> np.ndarray:
    """Rodrigues' formula."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def axis_rotation(axis, angle) -> np.ndarray:
    """Rotation matrix about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def z_rotation(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def slerp(qa, qb, t: float) -> np.ndarray:
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 0.9999995:
        out = qa + t * (qb - qa)
        return out / np.linalg.norm(out)
    theta = np.arccos(min(dot, 1.0))
    sin_theta = np.sin(theta)
    out = (np.sin((1 - t) * theta) * qa + np.sin(t * theta) * qb) / sin_theta
    return out / np.linalg.norm(out)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit quaternion (Shoemake)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1 - u1), np.sqrt(u1)
    q = np.array(
        [
            b * np.cos(2 * np.pi * u3),
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
        ]
    )
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A rigid transform: rotate by ``quaternion`` then translate by ``position``."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        quat = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = np.linalg.norm(quat)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError("quaternion must be finite and non-zero")
        if abs(norm - 1.0) > 1e-12:
            quat = quat / norm
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quaternion", quat)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=None) -> "RigidTransform":
        """Build from a 3x3 rotation and translation, or a single 4x4 matrix."""
        R = np.asarray(R, dtype=float)
        if R.shape == (4, 4):
            t = R[:3, 3]
            R = R[:3, :3]
        return cls(np.zeros(3) if t is None else t, matrix_to_quat(R))

    @classmethod
    def from_rotvec(cls, rotvec, t=None) -> "RigidTransform":
        return cls(np.zeros(3) if t is None else t, axis_angle_to_quat(rotvec))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        q = quat_multiply(self.quaternion, other.quaternion)
        return RigidTransform(self.position + self.rotation @ other.position, q)

    def inverse(self) -> "RigidTransform":
        qc = quat_conjugate(self.quaternion)
        return RigidTransform(-(quat_to_matrix(qc) @ self.position), qc)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape ``(3,)`` or ``(N, 3)``."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.position

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position], "quaternion": [float(v) for v in self.quaternion]}

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(data.get("position", [0.0, 0.0, 0.0]), data.get("quaternion", [1.0, 0.0, 0.0, 0.0]))

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        same_rot = np.allclose(self.quaternion, other.quaternion, atol=atol) or np.allclose(
            self.quaternion, -other.quaternion, atol=atol
        )
        return same_rot and np.allclose(self.position, other.position, atol=atol)
