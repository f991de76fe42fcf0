"""Procedural teacher scenes: radiance meshes with known attributes rendered
to ground-truth images.

These stand in for captured datasets: a teacher mesh carries hand-assigned
per-tet density/color (smooth functions of space, so a student field can
reproduce them), and its renders become the training images.  The thin-rod
scene additionally provides an under-densified student initialization whose
residuals concentrate on the rod, exercising the total-variance split score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cameras import Camera, FisheyeModel, PinholeModel, look_at_pose
from .geometry import delaunay
from .render import RenderAttributes, RenderOptions, render_image


@dataclass
class TeacherScene:
    name: str
    points: np.ndarray
    mesh: object
    sigma: np.ndarray
    color0: np.ndarray
    color_grad: np.ndarray
    anchor: np.ndarray
    cameras: list
    images: list = None
    background: tuple = (0.0, 0.0, 0.0)
    extras: dict = None

    def attrs(self, dtype=None):
        import torch

        return RenderAttributes.from_numpy(
            self.sigma, self.color0, self.color_grad, self.anchor,
            dtype=dtype or torch.float64,
        )


def orbit_cameras(n, radius=3.2, center=(0.0, 0.0, 0.0), width=128, height=128,
                  focal=None, fisheye=False, fov_deg=200.0):
    """Deterministic ring of cameras on a sphere around ``center``.

    Elevations alternate over three bands so views triangulate well.
    """
    center = np.asarray(center, dtype=np.float64)
    focal = focal if focal is not None else 1.1 * width
    cams = []
    for i in range(n):
        azim = 2.0 * math.pi * i / n
        elev = math.radians((-25.0, 10.0, 40.0)[i % 3])
        eye = center + radius * np.array(
            [
                math.cos(azim) * math.cos(elev),
                math.sin(azim) * math.cos(elev),
                math.sin(elev),
            ]
        )
        pose = look_at_pose(eye, center)
        if fisheye:
            model = FisheyeModel(f=focal / 3.0, cx=width / 2, cy=height / 2, fov_deg=fov_deg)
        else:
            model = PinholeModel(fx=focal, fy=focal, cx=width / 2, cy=height / 2)
        cams.append(Camera(model, width, height, pose))
    return cams


def _smooth_attrs(mesh, density_scale=1.5, color_shift=(0.0, 2.1, 4.2), grad_frac=0.5):
    """Per-tet attributes sampled from smooth spatial functions at the
    centroids, with slope magnitudes inside the non-negativity bound."""
    x = mesh.centroids
    r2 = np.sum(x * x, axis=1)
    sigma = density_scale * (0.4 + 1.6 * np.exp(-1.2 * r2))
    c0 = np.stack(
        [0.45 + 0.35 * np.sin(1.7 * x[:, (i + 1) % 3] + 2.3 * x[:, i] + color_shift[i]) for i in range(3)],
        axis=1,
    )
    dirs = np.stack(
        [
            np.cos(2.1 * x[:, 1]),
            np.sin(1.3 * x[:, 2] + 0.7),
            np.cos(1.9 * x[:, 0] + 1.1),
        ],
        axis=1,
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True) + 1e-12
    radii = mesh.clamped_radii()
    bound = c0.min(axis=1) / np.maximum(radii, 1e-9)
    grad = grad_frac * bound[:, None] * dirs
    return sigma, c0, grad


def render_ground_truth(scene: TeacherScene, early_out=0.0, dtype=None):
    """Render every camera of a teacher scene; fills ``scene.images``."""
    import torch

    attrs = scene.attrs(dtype=dtype or torch.float64)
    opts = RenderOptions(background=scene.background, early_out=early_out,
                         dtype=dtype or torch.float64)
    scene.images = [
        render_image(scene.mesh, attrs, cam, opts).pixels.astype(np.float64)
        for cam in scene.cameras
    ]
    return scene


def teacher_blob(n_points=16, n_cameras=30, seed=11, width=128, height=128,
                 density_scale=1.5):
    """Random blob of points in a ball; roughly 50 tets at the default size."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, (n_points, 3))
    pts *= (np.linalg.norm(pts, axis=1, keepdims=True) ** -0.25)  # push outward a bit
    pts = np.clip(pts, -1.2, 1.2)
    mesh = delaunay(pts)
    sigma, c0, grad = _smooth_attrs(mesh, density_scale=density_scale)
    cams = orbit_cameras(n_cameras, radius=3.4, width=width, height=height)
    return TeacherScene(
        name="blob", points=pts, mesh=mesh, sigma=sigma, color0=c0,
        color_grad=grad, anchor=mesh.centroids, cameras=cams,
    )


def teacher_boxes(n_cameras=24, seed=5, width=96, height=96, separation=1.6):
    """Two separated dense clusters in a sparse shell: the extraction scene.

    Cluster tets are opaque; connective tissue between the clusters is nearly
    transparent, so thresholded extraction yields two closed components.
    """
    rng = np.random.default_rng(seed)
    half = separation / 2.0
    corners = np.array([(x, y, z) for x in (-0.45, 0.45) for y in (-0.45, 0.45) for z in (-0.45, 0.45)])
    c1 = corners * 0.9 + np.array([-half, 0.0, 0.0]) + rng.normal(0, 0.02, (8, 3))
    c2 = corners * 0.9 + np.array([half, 0.0, 0.0]) + rng.normal(0, 0.02, (8, 3))
    shell = rng.uniform(-1, 1, (24, 3))
    shell = shell / np.linalg.norm(shell, axis=1, keepdims=True) * rng.uniform(2.4, 2.9, (24, 1))
    pts = np.vstack([c1, np.array([[-half, 0, 0]]), c2, np.array([[half, 0, 0]]), shell])
    mesh = delaunay(pts)
    centers = mesh.centroids
    in1 = np.linalg.norm(centers - np.array([-half, 0, 0]), axis=1) < 0.75
    in2 = np.linalg.norm(centers - np.array([half, 0, 0]), axis=1) < 0.75
    sigma = np.where(in1 | in2, 14.0, 0.004)
    c0 = np.where(
        in1[:, None], np.array([[0.85, 0.3, 0.2]]),
        np.where(in2[:, None], np.array([[0.2, 0.4, 0.85]]), np.array([[0.5, 0.5, 0.5]])),
    )
    grad = np.zeros_like(c0)
    cams = orbit_cameras(n_cameras, radius=5.2, width=width, height=height)
    return TeacherScene(
        name="boxes", points=pts, mesh=mesh, sigma=sigma, color0=c0,
        color_grad=grad, anchor=centers, cameras=cams,
        extras={"cluster_centers": [(-half, 0, 0), (half, 0, 0)]},
    )


def teacher_teapot(n_cameras=24, seed=3, width=96, height=96):
    """Solid of revolution with a body profile and a lid bump."""
    rng = np.random.default_rng(seed)
    zs = np.linspace(-0.8, 0.8, 7)
    profile = 0.55 + 0.35 * np.cos(zs * 1.9) - 0.25 * np.clip(zs, 0, None) ** 2
    rings = []
    for z, r in zip(zs, profile):
        k = 8
        ang = np.linspace(0, 2 * math.pi, k, endpoint=False) + (z * 2.0)
        rings.append(np.stack([r * np.cos(ang), r * np.sin(ang), np.full(k, z)], axis=1))
    pts = np.vstack(rings + [np.array([[0, 0, -0.95], [0, 0, 0.95]]), rng.normal(0, 0.25, (10, 3))])
    mesh = delaunay(pts)
    sigma, c0, grad = _smooth_attrs(mesh, density_scale=2.5)
    cams = orbit_cameras(n_cameras, radius=3.6, width=width, height=height)
    return TeacherScene(
        name="teapot", points=pts, mesh=mesh, sigma=sigma, color0=c0,
        color_grad=grad, anchor=mesh.centroids, cameras=cams,
    )


def teacher_thin_rods(n_cameras=24, seed=9, width=96, height=96, rod_radius=0.035):
    """Sparse background tets crossed by one thin bright rod.

    The full teacher (background + rod points) renders the ground truth; the
    returned ``extras`` carry the background-only student initialization and
    the rod segment for checking which tets the rod pierces.
    """
    rng = np.random.default_rng(seed)
    background = rng.uniform(-1.4, 1.4, (18, 3))
    rod_a = np.array([-1.1, -0.25, -0.2])
    rod_b = np.array([1.1, 0.3, 0.25])
    n_rod = 14
    ts = np.linspace(0.0, 1.0, n_rod)
    axis = rod_b - rod_a
    ortho1 = np.cross(axis, [0, 0, 1.0])
    ortho1 /= np.linalg.norm(ortho1)
    ortho2 = np.cross(axis, ortho1)
    ortho2 /= np.linalg.norm(ortho2)
    ring = np.stack([rod_a + t * axis for t in ts])
    jitter = (
        rod_radius * np.cos(ts * 29)[:, None] * ortho1
        + rod_radius * np.sin(ts * 29)[:, None] * ortho2
    )
    rod_pts = ring + jitter
    pts = np.vstack([background, rod_pts])
    mesh = delaunay(pts)
    centers = mesh.centroids
    # Distance from tet centroid to the rod axis segment.
    ap = centers - rod_a
    t = np.clip(ap @ axis / (axis @ axis), 0.0, 1.0)
    closest = rod_a + t[:, None] * axis
    dist = np.linalg.norm(centers - closest, axis=1)
    on_rod = dist < rod_radius * 3.0
    sigma = np.where(on_rod, 60.0, 0.05)
    c0 = np.where(on_rod[:, None], np.array([[0.95, 0.85, 0.25]]), np.array([[0.35, 0.35, 0.4]]))
    grad = np.zeros_like(c0)
    cams = orbit_cameras(n_cameras, radius=4.6, width=width, height=height)
    return TeacherScene(
        name="thin-rods", points=pts, mesh=mesh, sigma=sigma, color0=c0,
        color_grad=grad, anchor=centers, cameras=cams,
        extras={
            "background_points": background,
            "rod": (rod_a, rod_b),
            "rod_radius": rod_radius,
        },
    )


_BUILDERS = {
    "blob": teacher_blob,
    "boxes": teacher_boxes,
    "teapot": teacher_teapot,
    "thin-rods": teacher_thin_rods,
}


def build_teacher(name, **kwargs):
    if name not in _BUILDERS:
        raise ValueError(f"unknown synthetic scene '{name}' (have {sorted(_BUILDERS)})")
    return _BUILDERS[name](**kwargs)
