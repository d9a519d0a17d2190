"""Pinhole camera model, rigid poses, and pose-error metrics.

Coordinate conventions used throughout the package:

  World frame: right-handed, meters.
  Camera frame: x right, y down, z forward along the optical axis.
  A pose maps world points into the camera frame as

      x_cam = R @ (X - C)

  where R is the world-to-camera rotation and C the camera center in
  world coordinates.  The center is stored directly (not a translation
  vector) because retrieval gating and evaluation both work with camera
  centers.

  Pixels: origin at the top-left corner, x right, y down, continuous
  (sub-pixel) coordinates.  "Depth" is always z-depth, i.e. the
  camera-frame z coordinate, not the Euclidean ray length.

  Angles are radians internally; reported errors are degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "RigidPose",
    "PoseError",
    "project",
    "project_points",
    "back_project",
    "back_project_pixels",
    "rotation_error_deg",
    "position_error_m",
    "pose_error",
    "rotation_about_axis",
    "quaternion_to_matrix",
    "matrix_to_quaternion",
    "angle_between",
]

_ORTHONORMAL_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics, no distortion.

    fx, fy are focal lengths in pixels, (cx, cy) the principal point,
    (width, height) the image size in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        """Boolean mask of pixel coordinates inside the image rectangle."""
        p = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        return (
            (p[:, 0] >= 0.0)
            & (p[:, 0] <= self.width - 1)
            & (p[:, 1] >= 0.0)
            & (p[:, 1] <= self.height - 1)
        )


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rotation R plus camera center C in world coordinates."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64)
        C = np.asarray(self.center, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if C.shape != (3,):
            raise ValueError(f"center must be a 3-vector, got {C.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(C)):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "center", _readonly(C))

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Chain two frame transforms: ``other`` maps world -> frame1 and
        ``self`` maps frame1 -> frame2; the result maps world -> frame2."""
        R = self.rotation @ other.rotation
        C = other.center + other.rotation.T @ self.center
        return RigidPose(R, C)


@dataclass(frozen=True)
class PoseError:
    """Position error in meters and absolute orientation error in degrees."""

    position_error: float
    orientation_error: float

    def __post_init__(self) -> None:
        if not (self.position_error >= 0.0):
            raise ValueError("position error must be non-negative")
        if not (0.0 <= self.orientation_error <= 180.0):
            raise ValueError("orientation error must lie in [0, 180] degrees")


# ── Projection ───────────────────────────────────────────────────────────


def project(point: np.ndarray, pose: RigidPose, K: CameraIntrinsics) -> Optional[np.ndarray]:
    """Project a world point; returns pixel (x, y) or None if it lies at or
    behind the camera plane (z <= 0).  No image-bounds clipping here."""
    p = pose.rotation @ (np.asarray(point, dtype=np.float64) - pose.center)
    if p[2] <= 0.0:
        return None
    return np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy])


def project_points(
    points: np.ndarray, pose: RigidPose, K: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of an (N, 3) array.

    Returns (pixels, in_front); pixel rows where in_front is False are NaN.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    p = (pts - pose.center) @ pose.rotation.T
    in_front = p[:, 2] > 0.0
    pixels = np.full((len(pts), 2), np.nan)
    z = p[in_front, 2]
    pixels[in_front, 0] = K.fx * p[in_front, 0] / z + K.cx
    pixels[in_front, 1] = K.fy * p[in_front, 1] / z + K.cy
    return pixels, in_front


def back_project(
    pixel: np.ndarray, depth: float, pose: RigidPose, K: CameraIntrinsics
) -> np.ndarray:
    """Inverse of project for a given z-depth: returns the world point on the
    ray through ``pixel`` whose camera-frame z equals ``depth``."""
    if not (np.isfinite(depth) and depth > 0.0):
        raise ValueError(f"depth must be finite and positive, got {depth}")
    x, y = float(pixel[0]), float(pixel[1])
    p = np.array([(x - K.cx) / K.fx * depth, (y - K.cy) / K.fy * depth, depth])
    return pose.rotation.T @ p + pose.center


def back_project_pixels(
    pixels: np.ndarray, depths: np.ndarray, pose: RigidPose, K: CameraIntrinsics
) -> np.ndarray:
    """Vectorized back_project: (N, 2) pixels + (N,) depths -> (N, 3) points."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise ValueError("all depths must be finite and positive")
    cam = np.empty((len(d), 3))
    cam[:, 0] = (px[:, 0] - K.cx) / K.fx * d
    cam[:, 1] = (px[:, 1] - K.cy) / K.fy * d
    cam[:, 2] = d
    return cam @ pose.rotation + pose.center


# ── Error metrics ────────────────────────────────────────────────────────


def rotation_error_deg(R_gt: np.ndarray, R_est: np.ndarray) -> float:
    """Absolute angle in degrees of the relative rotation between R_gt and R_est.

    The angle satisfies 2 cos(a) = trace(R_gt^T R_est) - 1.  It is evaluated
    through atan2 of the (sin, cos) pair of the relative rotation: the cosine
    alone loses ~sqrt(eps) accuracy near 0 and 180 degrees, while the atan2
    form is uniformly accurate and can never produce NaN.  The cosine term is
    still clamped to [-1, 1] against floating-point drift.
    """
    M = np.asarray(R_gt, dtype=np.float64).T @ np.asarray(R_est, dtype=np.float64)
    c = (M[0, 0] + M[1, 1] + M[2, 2] - 1.0) / 2.0
    c = min(1.0, max(-1.0, c))
    s = 0.5 * math.sqrt(
        (M[2, 1] - M[1, 2]) ** 2 + (M[0, 2] - M[2, 0]) ** 2 + (M[1, 0] - M[0, 1]) ** 2
    )
    return math.degrees(math.atan2(s, c))


def position_error_m(C_gt: np.ndarray, C_est: np.ndarray) -> float:
    """Euclidean distance between two camera centers."""
    gt = np.asarray(C_gt, dtype=np.float64)
    est = np.asarray(C_est, dtype=np.float64)
    if not (np.all(np.isfinite(gt)) and np.all(np.isfinite(est))):
        raise ValueError("camera centers must be finite")
    return float(np.linalg.norm(est - gt))


def pose_error(gt: RigidPose, est: RigidPose) -> PoseError:
    return PoseError(
        position_error=position_error_m(gt.center, est.center),
        orientation_error=rotation_error_deg(gt.rotation, est.rotation),
    )


# ── Rotation helpers ─────────────────────────────────────────────────────


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < 1e-15:
        raise ValueError("rotation axis must be non-zero")
    a = a / n
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + math.sin(angle_rad) * K + (1.0 - math.cos(angle_rad)) * (K @ K)


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in radians between two non-zero vectors, in [0, pi]."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < 1e-15 or nv < 1e-15:
        raise ValueError("angle undefined for zero-length vector")
    c = float(np.dot(u, v) / (nu * nv))
    return math.acos(min(1.0, max(-1.0, c)))


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion (w, x, y, z).

    The quaternion is normalized first; a norm far from 1 is rejected.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
        raise ValueError(f"quaternion norm {n} too far from 1")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix.

    Shepperd's method: pick the largest of the four squared components to
    avoid cancellation, then fix the overall sign for determinism.
    """
    R = np.asarray(R, dtype=np.float64)
    t = R[0, 0] + R[1, 1] + R[2, 2]
    candidates = [t, R[0, 0], R[1, 1], R[2, 2]]
    i = int(np.argmax(candidates))
    if i == 0:
        r = math.sqrt(1.0 + t)
        w = 0.5 * r
        x = 0.5 * (R[2, 1] - R[1, 2]) / r
        y = 0.5 * (R[0, 2] - R[2, 0]) / r
        z = 0.5 * (R[1, 0] - R[0, 1]) / r
    elif i == 1:
        r = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        x = 0.5 * r
        w = 0.5 * (R[2, 1] - R[1, 2]) / r
        y = 0.5 * (R[0, 1] + R[1, 0]) / r
        z = 0.5 * (R[0, 2] + R[2, 0]) / r
    elif i == 2:
        r = math.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        y = 0.5 * r
        w = 0.5 * (R[0, 2] - R[2, 0]) / r
        x = 0.5 * (R[0, 1] + R[1, 0]) / r
        z = 0.5 * (R[1, 2] + R[2, 1]) / r
    else:
        r = math.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        z = 0.5 * r
        w = 0.5 * (R[1, 0] - R[0, 1]) / r
        x = 0.5 * (R[0, 2] + R[2, 0]) / r
        y = 0.5 * (R[1, 2] + R[2, 1]) / r
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    if q[0] < 0.0 or (q[0] == 0.0 and (q[1] < 0.0 or (q[1] == 0.0 and (q[2] < 0.0 or (q[2] == 0.0 and q[3] < 0.0))))):
        q = -q
    return q
