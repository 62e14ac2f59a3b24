"""Rigid transforms, pinhole cameras and least-squares rigid alignment.

Points are plain ``numpy`` arrays of shape ``(3,)`` or ``(n, 3)``; there is no
dedicated vector class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    NonPositiveDepth,
    TooFewPoints,
    ValidationError,
)

SO3_TOL = 1e-9
_DRIFT_TOL = 1e-12
_JACOBI_TOL = 1e-15
_RANK_TOL = 1e-12


def _as_points(a, name="points"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (n, 3), got {a.shape}")
    return a


def orthonormalize(rot):
    """Project a near-rotation back onto SO(3) (polar decomposition)."""
    u, _, vt = svd3(rot)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, 2] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True)
class RigidTransform:
    """x -> rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValidationError("rigid transform must be finite")
        if not (np.allclose(r.T @ r, np.eye(3), atol=SO3_TOL, rtol=0)
                and abs(np.linalg.det(r) - 1.0) <= SO3_TOL):
            raise ValidationError("rotation is not in SO(3)")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, t):
        return cls(np.eye(3), t)

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=(0.0, 0.0, 0.0)):
        return cls(axis_angle_matrix(axis, angle), translation)

    def is_valid(self, tol=SO3_TOL):
        r = self.rotation
        return bool(
            np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other):
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > _DRIFT_TOL:
        r = orthonormalize(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(k)
    if n == 0:
        raise ValidationError("rotation axis must be non-zero")
    k = k / n
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def rotation_angle(rot):
    """Angle (radians) of a rotation matrix."""
    c = (np.trace(rot) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# 3x3 SVD


def _jacobi_rotation(alpha, beta, gamma):
    # Rotation (c, s) that orthogonalizes two columns with squared norms
    # alpha, beta and inner product gamma.
    zeta = (beta - alpha) / (2.0 * gamma)
    t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
    c = 1.0 / np.sqrt(1.0 + t * t)
    return c, c * t


def svd3(m, max_sweeps=60):
    """SVD of a 3x3 matrix by one-sided (Hestenes) Jacobi rotations.

    Returns ``u, s, vt`` with ``m = u @ diag(s) @ vt``, singular values sorted
    descending. ``u`` is completed to an orthonormal basis when ``m`` is rank
    deficient. Working on the columns of ``m`` directly avoids squaring the
    condition number the way an eigen-decomposition of ``m.T @ m`` would.
    """
    a = np.array(m, dtype=np.float64).reshape(3, 3)
    v = np.eye(3)
    scale = np.abs(a).max()
    if scale == 0.0:
        return np.eye(3), np.zeros(3), np.eye(3)
    a = a / scale
    for _ in range(max_sweeps):
        rotated = False
        for p, q in ((0, 1), (0, 2), (1, 2)):
            ap, aq = a[:, p], a[:, q]
            alpha = ap @ ap
            beta = aq @ aq
            gamma = ap @ aq
            if abs(gamma) <= _JACOBI_TOL * np.sqrt(alpha * beta) or gamma == 0.0:
                continue
            rotated = True
            c, s = _jacobi_rotation(alpha, beta, gamma)
            new_p = c * ap - s * aq
            new_q = s * ap + c * aq
            a[:, p], a[:, q] = new_p, new_q
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break

    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s, kind="stable")
    s, a, v = s[order], a[:, order], v[:, order]

    u = np.zeros((3, 3))
    u[:, 0] = a[:, 0] / s[0]
    if s[1] > _RANK_TOL * s[0]:
        u1 = a[:, 1] - (u[:, 0] @ a[:, 1]) * u[:, 0]
        u[:, 1] = u1 / np.linalg.norm(u1)
    else:
        # any unit vector orthogonal to u0
        e = np.eye(3)[np.argmin(np.abs(u[:, 0]))]
        u1 = e - (u[:, 0] @ e) * u[:, 0]
        u[:, 1] = u1 / np.linalg.norm(u1)
    u2 = np.cross(u[:, 0], u[:, 1])
    if s[2] > _RANK_TOL * s[0] and u2 @ a[:, 2] < 0:
        u2 = -u2
    u[:, 2] = u2
    return u, s * scale, v.T


# ---------------------------------------------------------------------------
# Rigid alignment


def umeyama_align(src, dst) -> RigidTransform:
    """Least-squares rigid transform mapping ``src`` onto ``dst`` (no scale).

    Minimizes ``sum_i |dst_i - (R src_i + t)|^2`` for index-corresponded
    points. Raises ``TooFewPoints`` for fewer than three pairs and
    ``DegenerateConfiguration`` when the cross-covariance has rank < 2
    (collinear or coincident points), since the rotation about the line is
    then unobservable.
    """
    src = _as_points(src, "src")
    dst = _as_points(dst, "dst")
    if src.shape != dst.shape:
        raise ValidationError(f"src/dst size mismatch: {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise TooFewPoints(f"need at least 3 point pairs, got {len(src)}")

    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    h = (src - src_mean).T @ (dst - dst_mean)
    u, s, vt = svd3(h)
    if s[0] == 0.0 or s[1] <= _RANK_TOL * s[0]:
        raise DegenerateConfiguration(
            f"cross-covariance rank < 2 (singular values {s.tolist()})"
        )
    v = vt.T
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(v @ u.T)) or 1.0
    r = v @ np.diag(d) @ u.T
    return RigidTransform(r, dst_mean - r @ src_mean)


# ---------------------------------------------------------------------------
# Cameras


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``pose`` maps camera coordinates to world coordinates."""

    intrinsics: np.ndarray
    pose: RigidTransform
    width: int
    height: int

    def __post_init__(self):
        k = np.array(self.intrinsics, dtype=np.float64).reshape(3, 3)
        k.flags.writeable = False
        object.__setattr__(self, "intrinsics", k)
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @classmethod
    def from_params(cls, fx, fy, cx, cy, width, height, pose=None):
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(k, pose if pose is not None else RigidTransform(), int(width), int(height))

    @property
    def fx(self):
        return float(self.intrinsics[0, 0])

    @property
    def fy(self):
        return float(self.intrinsics[1, 1])

    @property
    def cx(self):
        return float(self.intrinsics[0, 2])

    @property
    def cy(self):
        return float(self.intrinsics[1, 2])

    def with_pose(self, pose):
        return CameraModel(self.intrinsics, pose, self.width, self.height)

    def world_to_camera(self, points):
        p = np.asarray(points, dtype=np.float64)
        return (p - self.pose.translation) @ self.pose.rotation

    def camera_to_world(self, points):
        return self.pose.apply(points)

    def project_many(self, points):
        """Vectorized projection; returns ``(u, v, depth)`` without depth checks."""
        pc = self.world_to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return u, v, z

    def unproject_many(self, u, v, depth):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.asarray(depth, dtype=np.float64)
        pc = np.stack(
            [(u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d], axis=-1
        )
        return self.camera_to_world(pc)


def project(camera: CameraModel, point):
    """Pinhole projection of a world point: returns ``(u, v, depth)``."""
    pc = camera.world_to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    z = float(pc[2])
    if z <= 0:
        raise BehindCamera(f"point has camera depth {z} <= 0")
    u = camera.fx * pc[0] / z + camera.cx
    v = camera.fy * pc[1] / z + camera.cy
    return float(u), float(v), z


def unproject(camera: CameraModel, pixel, depth):
    """World point seen at ``pixel`` with camera-frame depth ``depth``."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = pixel
    return camera.unproject_many(u, v, depth)
