"""Euler-angle viewpoints, rotation matrices, geodesic distance, and pinhole projection.

Angle convention (fixed here and used consistently everywhere else):

- The world is Z-up. A viewpoint is (azimuth, elevation, tilt) in degrees.
- ``rotation_from_viewpoint`` composes Rz(tilt) @ Rx(elevation) @ Rz(azimuth):
  azimuth about the world up axis, elevation about the resulting lateral
  axis, tilt about the viewing axis. The zero viewpoint maps to the
  identity matrix. Only relative rotations between viewpoints carry
  meaning, so any fixed camera-rig alignment cancels out of the metric.
- Degrees at API boundaries, radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHONORMALITY_TOL = 1e-9


class BehindCameraError(ValueError):
    """Raised when a point to project has non-positive camera-space depth."""


def normalize_azimuth(deg: float) -> float:
    """Wrap an azimuth into [0, 360)."""
    a = math.fmod(deg, 360.0)
    if a < 0.0:
        a += 360.0
    return 0.0 if a == 360.0 else a


def normalize_tilt(deg: float) -> float:
    """Wrap a tilt into [-180, 180)."""
    t = math.fmod(deg + 180.0, 360.0)
    if t < 0.0:
        t += 360.0
    return t - 180.0


@dataclass(frozen=True)
class Viewpoint:
    """Camera orientation as (azimuth, elevation, tilt) degrees.

    Azimuth is normalized into [0, 360), tilt into [-180, 180). Elevation
    outside [-90, 90] is a construction error, never a silent clamp.
    """

    azimuth: float
    elevation: float
    tilt: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.elevation <= 90.0):
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        object.__setattr__(self, "azimuth", normalize_azimuth(float(self.azimuth)))
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "tilt", normalize_tilt(float(self.tilt)))

    def angles(self) -> tuple[float, float, float]:
        return (self.azimuth, self.elevation, self.tilt)


def rot_x(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation_matrix(R: np.ndarray, tol: float = ORTHONORMALITY_TOL) -> bool:
    """True if R is orthonormal with determinant +1 within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    if not np.allclose(R @ R.T, np.eye(3), atol=tol):
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def rotation_from_viewpoint(vp: Viewpoint) -> np.ndarray:
    """Rotation matrix Rz(tilt) @ Rx(elev) @ Rz(azim) for a viewpoint."""
    az = math.radians(vp.azimuth)
    el = math.radians(vp.elevation)
    ti = math.radians(vp.tilt)
    return rot_z(ti) @ rot_x(el) @ rot_z(az)


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic distance ||log(r1^T r2)||_F / sqrt(2) in radians, in [0, pi].

    Computed as arccos((trace(r1^T r2) - 1) / 2) with the argument clamped
    to [-1, 1] to absorb floating-point drift near 0 and pi.
    """
    m = np.asarray(r1).T @ np.asarray(r2)
    arg = (np.trace(m) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, arg))))


def viewpoint_error(gt: Viewpoint, pred: Viewpoint) -> float:
    """Geodesic error between two viewpoints, in radians."""
    return geodesic_distance(rotation_from_viewpoint(gt), rotation_from_viewpoint(pred))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-camera pose plus intrinsics.

    Camera frame: x right, y down, z forward. A world point p projects to
    ``(cx + f*x/z, cy + f*y/z)`` where (x, y, z) = rotation @ p + translation.
    """

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    principal: tuple[float, float]
    image_size: tuple[int, int]

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not is_rotation_matrix(R, tol=1e-6):
            raise ValueError("camera rotation is not a proper rotation matrix")
        if self.focal <= 0.0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        w, h = self.image_size
        cx, cy = self.principal
        if not (0.0 <= cx < w and 0.0 <= cy < h):
            raise ValueError(f"principal point {self.principal} outside image {self.image_size}")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (N, 3) into camera coordinates."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation.T + self.translation


def project_point(cam: Camera, point: np.ndarray) -> tuple[float, float, float]:
    """Project one world point to (pixel x, pixel y, camera-space depth).

    Raises BehindCameraError when the camera-space depth is <= 0.
    """
    pc = cam.to_camera(np.asarray(point, dtype=float).reshape(1, 3))[0]
    depth = float(pc[2])
    if depth <= 0.0:
        raise BehindCameraError(f"point has non-positive depth {depth}")
    cx, cy = cam.principal
    u = cx + cam.focal * float(pc[0]) / depth
    v = cy + cam.focal * float(pc[1]) / depth
    return (u, v, depth)
