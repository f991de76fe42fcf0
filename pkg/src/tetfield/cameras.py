"""Posed cameras and ray generation (pinhole and equidistant fisheye).

The camera frame looks along +z with x right and y down; ``pose`` is the
rigid world-from-camera transform, so all rays of one camera share the
world-space origin ``pose[:3, 3]`` (required by power sorting).  Pinhole ray
directions are left unnormalized; ray parameters are therefore in
direction-length units and segment lengths are rescaled with ``|dir|`` where
Euclidean distance matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class OutOfBoundsError(Exception):
    pass


@dataclass(frozen=True)
class PinholeModel:
    fx: float
    fy: float
    cx: float
    cy: float

    kind = "pinhole"


@dataclass(frozen=True)
class FisheyeModel:
    """Equidistant fisheye: pixel radius = f * angle from the optical axis."""

    f: float
    cx: float
    cy: float
    fov_deg: float = 180.0

    kind = "fisheye"

    def __post_init__(self):
        if not 0.0 < self.fov_deg <= 360.0:
            raise ValueError("fisheye fov must be in (0, 360] degrees")


@dataclass(frozen=True)
class Camera:
    model: object
    width: int
    height: int
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 world-from-camera transform")
        object.__setattr__(self, "pose", pose)

    @property
    def origin(self):
        return self.pose[:3, 3]

    @property
    def rotation(self):
        return self.pose[:3, :3]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray


def _pinhole_dirs(model, px, py):
    u = (px - model.cx) / model.fx
    v = (py - model.cy) / model.fy
    return np.stack([u, v, np.ones_like(u)], axis=-1), np.ones(np.shape(u), dtype=bool)


def _fisheye_dirs(model, px, py):
    dx = (px - model.cx) / model.f
    dy = (py - model.cy) / model.f
    theta = np.hypot(dx, dy)
    valid = theta <= math.radians(model.fov_deg) / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(theta > 0, np.sin(theta) / np.where(theta > 0, theta, 1.0), 1.0)
    d = np.stack([dx * scale, dy * scale, np.cos(theta)], axis=-1)
    return d, valid


def ray_directions(cam, px, py):
    """World-space ray directions through continuous pixel coords (vectorized).

    Returns ``(dirs, valid)``; fisheye pixels beyond the field of view are
    flagged invalid (their direction is still well defined mathematically).
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    if cam.model.kind == "pinhole":
        d_cam, valid = _pinhole_dirs(cam.model, px, py)
    else:
        d_cam, valid = _fisheye_dirs(cam.model, px, py)
    return d_cam @ cam.rotation.T, valid


def generate_ray(cam, px, py):
    """Ray through one pixel coordinate.  Raises OutOfBoundsError outside the
    image rectangle."""
    if not (0.0 <= px <= cam.width and 0.0 <= py <= cam.height):
        raise OutOfBoundsError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height}")
    d, _ = ray_directions(cam, np.float64(px), np.float64(py))
    return Ray(origin=cam.origin.copy(), dir=np.asarray(d, dtype=np.float64))


def pixel_grid(cam):
    """Pixel-center coordinates of the full image, row-major."""
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    return xs.ravel() + 0.5, ys.ravel() + 0.5


def camera_rays(cam):
    """(origin, dirs [H*W, 3], valid [H*W]) for all pixel centers."""
    px, py = pixel_grid(cam)
    dirs, valid = ray_directions(cam, px, py)
    return cam.origin.copy(), dirs, valid


def project_points(cam, points):
    """Project world points to pixel coords; pinhole only.

    Returns ``(px, py, ok)``; ``ok`` is False behind the camera or for
    non-pinhole models (callers must then treat bounds as unknown).
    """
    points = np.asarray(points, dtype=np.float64)
    if cam.model.kind != "pinhole":
        n = len(points)
        return np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool)
    local = (points - cam.origin) @ cam.rotation
    z = local[:, 2]
    ok = z > 1e-12
    zs = np.where(ok, z, 1.0)
    px = cam.model.fx * local[:, 0] / zs + cam.model.cx
    py = cam.model.fy * local[:, 1] / zs + cam.model.cy
    return px, py, ok


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)):
    """World-from-camera pose with +z toward ``target`` (x right, y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    n = np.linalg.norm(right)
    if n < 1e-12:
        upv = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, upv)
        n = np.linalg.norm(right)
    right = right / n
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = eye
    return pose
