"""Coordinate frames, pinhole stereo projection and planar rigid transforms.

Frames
------
image   : (u, v) pixels, v grows downward; disparity ``d`` in pixels.
camera  : (north_cam, east_cam) = (forward, right) in meters, ego-attached.
map     : (north, east) in meters.

Headings are measured clockwise from map north, so a vehicle with heading
``theta`` moves along ``(cos(theta), sin(theta))`` in (north, east).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPSILON_DEPTH = 0.5  # m
D_MIN = 0.5  # px


class DepthTooSmall(ValueError):
    pass


class DisparityTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    f_u: float
    b_prime: float
    c_u: float
    c_v: float
    width: int
    height: int
    mount_height: float = 1.5  # camera height above ground, m

    def __post_init__(self):
        if self.f_u <= 0 or self.b_prime <= 0:
            raise ValueError("f_u and b_prime must be positive")
        if not (0 <= self.c_u < self.width and 0 <= self.c_v < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def default(cls, fast: bool = False) -> "CameraIntrinsics":
        """1024x768 rig with a 0.4 m baseline, or the 256x192 CI variant."""
        if fast:
            return cls(f_u=250.0, b_prime=0.4, c_u=128.0, c_v=96.0, width=256, height=192)
        return cls(f_u=1000.0, b_prime=0.4, c_u=512.0, c_v=384.0, width=1024, height=768)

    @property
    def scale(self) -> float:
        """Resolution relative to the 1024 px wide rig."""
        return self.width / 1024.0


@dataclass(frozen=True)
class CameraPoint:
    x_north_cam: float
    x_east_cam: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_north_cam, self.x_east_cam])


@dataclass(frozen=True)
class MapPoint:
    north: float
    east: float

    def as_array(self) -> np.ndarray:
        return np.array([self.north, self.east])

    def distance(self, other: "MapPoint") -> float:
        return math.hypot(self.north - other.north, self.east - other.east)


def normalize_angle(theta):
    """Wrap angle(s) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def project(p: CameraPoint, cam: CameraIntrinsics) -> tuple[float, float]:
    """Pinhole stereo projection of a camera-frame point to (u, d)."""
    if not p.x_north_cam > EPSILON_DEPTH:
        raise DepthTooSmall(f"depth {p.x_north_cam} <= {EPSILON_DEPTH} m")
    u = cam.c_u + cam.f_u * p.x_east_cam / p.x_north_cam
    d = cam.b_prime * cam.f_u / p.x_north_cam
    return u, d


def unproject(u: float, d: float, cam: CameraIntrinsics) -> CameraPoint:
    if not d > D_MIN:
        raise DisparityTooSmall(f"disparity {d} <= {D_MIN} px")
    north = cam.b_prime * cam.f_u / d
    return CameraPoint(north, (u - cam.c_u) * north / cam.f_u)


def unproject_array(u, d, cam: CameraIntrinsics) -> np.ndarray:
    """Vectorised :func:`unproject`; returns an (n, 2) array of (forward, right)."""
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(d <= D_MIN):
        raise DisparityTooSmall("disparity below d_min")
    north = cam.b_prime * cam.f_u / d
    return np.column_stack([north, (u - cam.c_u) * north / cam.f_u])


def rotate2d(theta: float, p: MapPoint) -> MapPoint:
    n, e = rotation_matrix(theta) @ p.as_array()
    return MapPoint(float(n), float(e))


def camera_to_map(p: CameraPoint, pose) -> MapPoint:
    """Register a camera-frame point on the map given an ego pose.

    ``pose`` needs ``position`` (MapPoint) and ``theta`` attributes.
    """
    n, e = rotation_matrix(pose.theta) @ p.as_array() + pose.position.as_array()
    return MapPoint(float(n), float(e))


def camera_to_map_array(points: np.ndarray, position: np.ndarray, theta: float) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points @ rotation_matrix(theta).T + np.asarray(position, dtype=float)


def map_to_camera_array(points: np.ndarray, position: np.ndarray, theta: float) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return (points - np.asarray(position, dtype=float)) @ rotation_matrix(theta)
