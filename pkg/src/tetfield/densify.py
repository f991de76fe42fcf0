"""Split-score accumulation and new-vertex placement.

Every densification pass renders a sample of training cameras and
back-projects per-pixel error onto the tets that contributed, weighted by
each tet's compositing contribution ``w * alpha``:

  * SSIM split score: per-camera mean back-projected SSIM error over the
    pixels a tet touched; a tet's score is the mean of its top two cameras
    (fewer than two views cannot be triangulated and score 0).  Threshold 0.5.
  * Total-variance split score: the ``w alpha``-weighted variance of the RGB
    residual pooled over all sample cameras, times the total weighted mass.
    Threshold 2.0.

A selected tet receives one new vertex at the approximate intersection of
its mean entry/exit rays from the two highest-error cameras, falling back to
a random interior point when the midpoint leaves the tet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cameras import camera_rays
from .losses import ssim_map
from .render import RenderOptions

SSIM_SPLIT_THRESHOLD = 0.5
VARIANCE_SPLIT_THRESHOLD = 2.0
INTERIOR_BARY_TOL = 1e-6


class InsufficientViewsError(ValueError):
    pass


class SplitStats:
    """Streaming per-(camera, tet) accumulators for one densification pass."""

    def __init__(self, n_cameras, n_tets, camera_indices=None):
        self.n_cameras = n_cameras
        self.n_tets = n_tets
        self.camera_indices = camera_indices
        self.nu = np.zeros((n_cameras, n_tets), dtype=np.int64)
        self.err = np.zeros((n_cameras, n_tets))
        self.mass = np.zeros((n_cameras, n_tets))
        self.m1 = np.zeros((n_cameras, n_tets, 3))
        self.m2 = np.zeros((n_cameras, n_tets, 3))
        self.entry = np.zeros((n_cameras, n_tets, 3))
        self.exits = np.zeros((n_cameras, n_tets, 3))

    def accumulate_chunk(self, slot, rows, walpha, t_in, t_out, s, delta, dirs, origin):
        """Add one render chunk of camera ``slot``.

        ``walpha [T', R']`` are compositing contributions of the chunk's tets
        (``rows`` maps chunk rows to tet indices); ``s [R']`` is per-pixel
        SSIM error, ``delta [R', 3]`` the RGB residual.
        """
        mass_c = walpha.sum(axis=1)
        self.mass[slot, rows] += mass_c
        self.nu[slot, rows] += (walpha > 0).sum(axis=1)
        self.err[slot, rows] += walpha @ s
        self.m1[slot, rows] += walpha @ delta
        self.m2[slot, rows] += walpha @ (delta * delta)
        self.entry[slot, rows] += mass_c[:, None] * origin + (walpha * t_in) @ dirs
        self.exits[slot, rows] += mass_c[:, None] * origin + (walpha * t_out) @ dirs


def ssim_scores(stats):
    """Top-two-camera mean of per-camera back-projected SSIM error; zero for
    tets seen by fewer than two cameras."""
    seen = stats.nu > 0
    per_cam = np.where(seen, stats.err / np.maximum(stats.nu, 1), -np.inf)
    order = np.sort(per_cam, axis=0)
    top1 = order[-1]
    top2 = order[-2] if stats.n_cameras >= 2 else np.full(stats.n_tets, -np.inf)
    enough = seen.sum(axis=0) >= 2
    return np.where(enough, 0.5 * (top1 + top2), 0.0)


def variance_scores(stats):
    """Pooled weighted residual variance (summed over channels) times total
    weighted mass; zero-mass tets score zero."""
    w = stats.mass.sum(axis=0)  # [T]
    safe_w = np.maximum(w, 1e-300)
    e1 = stats.m1.sum(axis=0) / safe_w[:, None]
    e2 = stats.m2.sum(axis=0) / safe_w[:, None]
    var = np.clip(e2 - e1 * e1, 0.0, None).sum(axis=1)
    return np.where(w > 0, var * w, 0.0)


def mean_rays(stats, k, slots):
    """Per-camera mean entry/exit segments of tet ``k`` for camera ``slots``.

    Raises :class:`InsufficientViewsError` when a requested camera carries no
    mass on the tet.
    """
    out = []
    for slot in slots:
        m = stats.mass[slot, k]
        if m <= 0:
            raise InsufficientViewsError(f"camera slot {slot} has no mass on tet {k}")
        out.append((stats.entry[slot, k] / m, stats.exits[slot, k] / m))
    return out


def closest_points_on_segments(a0, a1, b0, b1):
    """Closest point pair between 3D segments (clamped to their extents)."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    eps = 1e-30
    if a <= eps and e <= eps:
        s = t = 0.0
    elif a <= eps:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    return a0 + s * d1, b0 + t * d2


def barycentric(tet_verts, p):
    v = np.asarray(tet_verts, dtype=np.float64)
    m = (v[1:] - v[0]).T
    try:
        w = np.linalg.solve(m, np.asarray(p, dtype=np.float64) - v[0])
    except np.linalg.LinAlgError:
        return np.array([-1.0, 0.0, 0.0, 0.0])
    return np.concatenate([[1.0 - w.sum()], w])


def random_interior_point(tet_verts, rng):
    """Uniform Dirichlet barycentric sample, nudged to stay strictly inside."""
    v = np.asarray(tet_verts, dtype=np.float64)
    for _ in range(16):
        w = rng.dirichlet(np.ones(4))
        if w.min() >= INTERIOR_BARY_TOL:
            return w @ v
    w = np.full(4, 0.25)
    return w @ v


def place_point(seg_a, seg_b, tet_verts, rng):
    """Midpoint of the shortest connector between two mean-ray segments,
    falling back to a random interior point when it leaves the tet.

    Returns ``(point, provenance)`` with provenance ``"intersection"`` or
    ``"fallback-random"``.
    """
    pa, pb = closest_points_on_segments(seg_a[0], seg_a[1], seg_b[0], seg_b[1])
    mid = 0.5 * (pa + pb)
    if barycentric(tet_verts, mid).min() >= INTERIOR_BARY_TOL:
        return mid, "intersection"
    return random_interior_point(tet_verts, rng), "fallback-random"


@dataclass
class SplitDecision:
    tet_index: int
    trigger: str  # "SSIM" | "TOTAL_VARIANCE"
    new_point: np.ndarray
    provenance: str  # "intersection" | "fallback-random"
    ssim_score: float
    variance_score: float


def collect_stats(trainer, sample_size):
    """Render a camera sample with the current model and accumulate streaming
    split statistics (deterministic camera choice from the trainer's RNG)."""
    n_cams = len(trainer.scene.cameras)
    m = min(sample_size, n_cams)
    chosen = trainer.rng.choice(n_cams, size=m, replace=False)
    stats = SplitStats(m, trainer.mesh.num_tets, camera_indices=list(map(int, chosen)))
    opts = RenderOptions(
        background=trainer.scene.background,
        early_out=trainer.config.early_out,
        dtype=trainer.dtype,
    )
    for slot, cam_idx in enumerate(chosen):
        cam = trainer.scene.cameras[cam_idx]
        chunks = []

        def keep_chunk(res):
            chunks.append(
                {
                    "rows": res["tet_rows"],
                    "walpha": (res["w"] * res["alpha"]).detach().to(torch.float64).numpy(),
                    "t_in": res["t_in"].detach().to(torch.float64).numpy(),
                    "t_out": res["t_out"].detach().to(torch.float64).numpy(),
                    "slice": res["slice"],
                }
            )

        with torch.no_grad():
            attrs = trainer.camera_attributes(cam)
            from .render import render_camera

            rgb, _ = render_camera(
                trainer.V, trainer.mesh.tets, attrs, cam, opts, chunk_callback=keep_chunk
            )
        gt = trainer.gt[cam_idx]
        smap = (1.0 - ssim_map(rgb, gt)) / 2.0
        s = smap.clamp(0.0, 1.0).reshape(-1).to(torch.float64).numpy()
        delta = (rgb - gt).reshape(-1, 3).to(torch.float64).numpy()
        origin, dirs, _ = camera_rays(cam)
        for ch in chunks:
            sl = ch["slice"]
            stats.accumulate_chunk(
                slot, ch["rows"], ch["walpha"], ch["t_in"], ch["t_out"],
                s[sl], delta[sl], dirs[sl], origin,
            )
    return stats


def decide_splits(stats, trainer, rng):
    """Select tets above either threshold and place one vertex in each."""
    s_scores = ssim_scores(stats)
    v_scores = variance_scores(stats)
    selected = np.flatnonzero(
        (s_scores > SSIM_SPLIT_THRESHOLD) | (v_scores > VARIANCE_SPLIT_THRESHOLD)
    )
    decisions = []
    pts = trainer.mesh.points
    for k in selected:
        verts = pts[trainer.mesh.tets[k]]
        seen = np.flatnonzero(stats.mass[:, k] > 0)
        if len(seen) >= 2:
            per_cam = np.where(
                stats.nu[:, k] > 0, stats.err[:, k] / np.maximum(stats.nu[:, k], 1), -np.inf
            )
            top2 = seen[np.argsort(per_cam[seen])[-2:]]
            (a_in, a_out), (b_in, b_out) = mean_rays(stats, k, top2)
            point, provenance = place_point((a_in, a_out), (b_in, b_out), verts, rng)
        else:
            point, provenance = random_interior_point(verts, rng), "fallback-random"
        trigger = "SSIM" if s_scores[k] > SSIM_SPLIT_THRESHOLD else "TOTAL_VARIANCE"
        decisions.append(
            SplitDecision(
                tet_index=int(k),
                trigger=trigger,
                new_point=point,
                provenance=provenance,
                ssim_score=float(s_scores[k]),
                variance_score=float(v_scores[k]),
            )
        )
    return decisions
