"""Training loop: differentiable rendering, losses, parameter updates,
topology-recompute cadence, densification triggers, and LR spikes.

Reverse-mode gradients come from torch autograd through the closed-form
renderer (compositing, segment integrals, the linear color model, the field
query, and the intersection/circumsphere geometry), so vertex positions,
grid features, and head weights all receive exact adjoints of the rendered
loss.  Topology is frozen between Delaunay rebuilds; gradients are defined
with respect to the current tet list.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field, asdict
from pathlib import Path

import numpy as np
import torch

from . import densify as densify_mod
from .field import FieldConfig, RadianceField
from .geometry import TetMesh, delaunay
from .losses import distortion_loss_matrix, photometric_loss, psnr, weight_decay
from .render import RenderAttributes, RenderOptions, render_camera, tet_geometry


class NonFiniteGradientError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 5000
    topology_rebuild_every: int = 10
    densify_every: int = 500
    densify_sample_size: int = 20
    lr_grid: float = 2e-2
    lr_grid_final: float = 2e-3
    lr_heads: float = 5e-3
    lr_heads_final: float = 5e-4
    lr_vertices: float = 2e-4
    lr_vertices_final: float = 2e-5
    spike_duration: int = 100
    lambda_ssim: float = 0.2
    lambda_distortion: float = 1e-4
    lambda_weight_decay: float = 0.01
    early_out: float = 1e-4
    optimize_vertices: bool = True
    densify_enabled: bool = True
    seed: int = 0
    dtype: str = "float32"
    sh_degree: int = 2
    field_levels: int = 8
    field_n_min: int = 16
    field_n_max: int = 512
    field_log2_table: int = 15
    field_features: int = 2
    field_hidden: int = 32
    query_center: str = "centroid"
    checkpoint_every: int = 0

    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    @classmethod
    def from_mapping(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


class LRSchedule:
    """Log-linear decay with densification spikes.

    The base rate decays from ``base`` to ``final`` over ``total``
    iterations; each registered spike at iteration ``I`` adds
    ``(l(0) - l(I)) * exp(-6 (i - I) / L)`` for ``i > I``, which restores the
    rate to its initial value and relaxes back within ``L`` iterations.
    """

    def __init__(self, base, final, total, spike_duration=100):
        self.base = float(base)
        self.final = float(final)
        self.total = max(int(total), 1)
        self.spike_duration = max(int(spike_duration), 1)
        self.spikes = []

    def base_at(self, i):
        t = min(max(i, 0), self.total) / self.total
        return self.base * (self.final / self.base) ** t

    def add_spike(self, iteration):
        self.spikes.append(int(iteration))

    def lr_at(self, i):
        rate = self.base_at(i)
        for spike_i in self.spikes:
            if i - spike_i > 0:
                rate += (self.base_at(0) - self.base_at(spike_i)) * math.exp(
                    -6.0 * (i - spike_i) / self.spike_duration
                )
        return rate


@dataclass
class TrainScene:
    """Posed training data: cameras, linear-RGB ground-truth images, and the
    initial point cloud."""

    points: np.ndarray
    cameras: list
    images: list  # numpy [H, W, 3] float in linear RGB
    background: tuple = (0.0, 0.0, 0.0)
    scene_center: tuple = None
    scene_radius: float = None


def _scene_normalization(points):
    center = points.mean(axis=0)
    radius = float(np.linalg.norm(points - center, axis=1).max())
    return tuple(center.tolist()), max(radius, 1e-6) * 1.25


class Trainer:
    def __init__(self, scene: TrainScene, config: TrainConfig = None, out_dir=None):
        self.config = config or TrainConfig()
        self.scene = scene
        self.out_dir = Path(out_dir) if out_dir else None
        self.rng = np.random.default_rng(self.config.seed)
        torch.manual_seed(self.config.seed)

        dtype = self.config.torch_dtype()
        self.dtype = dtype
        center, radius = _scene_normalization(scene.points)
        if scene.scene_center is not None:
            center = tuple(scene.scene_center)
        if scene.scene_radius is not None:
            radius = float(scene.scene_radius)
        fcfg = FieldConfig(
            levels=self.config.field_levels,
            n_min=self.config.field_n_min,
            n_max=self.config.field_n_max,
            log2_table_size=self.config.field_log2_table,
            features=self.config.field_features,
            hidden=self.config.field_hidden,
            sh_degree=self.config.sh_degree,
            query_center=self.config.query_center,
            scene_center=center,
            scene_radius=radius,
        )
        self.field = RadianceField(fcfg, dtype=dtype)
        self.V = torch.tensor(
            np.asarray(scene.points, dtype=np.float64),
            dtype=dtype,
            requires_grad=self.config.optimize_vertices,
        )
        self.mesh = delaunay(scene.points)
        self.gt = [torch.as_tensor(img, dtype=dtype) for img in scene.images]
        self.iteration = 0
        self.metrics = []
        self._build_optimizers()
        self.schedules = {
            "grid": LRSchedule(
                self.config.lr_grid, self.config.lr_grid_final,
                self.config.iterations, self.config.spike_duration,
            ),
            "heads": LRSchedule(
                self.config.lr_heads, self.config.lr_heads_final,
                self.config.iterations, self.config.spike_duration,
            ),
            "vertices": LRSchedule(
                self.config.lr_vertices, self.config.lr_vertices_final,
                self.config.iterations, self.config.spike_duration,
            ),
        }

    def _build_optimizers(self):
        self.opt_field = torch.optim.Adam(
            [
                {"params": self.field.grid_parameters(), "lr": self.config.lr_grid, "eps": 1e-15},
                {"params": self.field.head_parameters(), "lr": self.config.lr_heads, "eps": 1e-8},
            ],
            betas=(0.9, 0.99),
        )
        self._build_vertex_optimizer()

    def _build_vertex_optimizer(self):
        if self.config.optimize_vertices:
            self.opt_vertices = torch.optim.Adam(
                [self.V], lr=self.config.lr_vertices, betas=(0.9, 0.99), eps=1e-8
            )
        else:
            self.opt_vertices = None

    def _optimizers(self):
        return [self.opt_field] + ([self.opt_vertices] if self.opt_vertices else [])

    # -- per-camera model evaluation

    def camera_attributes(self, cam):
        """Per-tet render attributes for one camera (differentiable)."""
        tets = torch.as_tensor(self.mesh.tets.astype(np.int64))
        geom = tet_geometry(self.V, tets)
        if self.field.cfg.query_center == "circumcenter":
            centers = geom["circumcenters"]
        else:
            centers = geom["centroids"]
        radii = (
            geom["circumradius_sq"].clamp(min=0).sqrt().clamp(max=self.mesh.scene_diameter)
        )
        origin = torch.as_tensor(cam.origin, dtype=self.dtype)
        view = centers - origin
        view = view / view.norm(dim=-1, keepdim=True).clamp(min=1e-12)
        b = self.field.query(centers, radii)
        sigma, c0, grad = self.field.attributes(b, radii, view)
        return RenderAttributes(sigma=sigma, color0=c0, color_grad=grad, anchor=centers)

    def render_for_camera(self, cam_idx, want_distortion=False):
        cam = self.scene.cameras[cam_idx]
        attrs = self.camera_attributes(cam)
        opts = RenderOptions(
            background=self.scene.background,
            early_out=self.config.early_out,
            dtype=self.dtype,
        )
        dist_terms = []

        def callback(res):
            n_rays = res["t_in"].shape[1]
            dist_terms.append(
                (
                    distortion_loss_matrix(
                        res["t_in"], res["t_out"], res["depth"], res["hit"]
                    ),
                    n_rays,
                )
            )

        rgb, trans = render_camera(
            self.V, self.mesh.tets, attrs, cam, opts,
            chunk_callback=callback if want_distortion else None,
        )
        if want_distortion:
            total = sum(n for _, n in dist_terms)
            distortion = sum(loss * (n / total) for loss, n in dist_terms)
            return rgb, trans, distortion
        return rgb, trans, None

    # -- training

    def train_step(self):
        """One optimization step; returns the metrics row as a dict."""
        i = self.iteration
        cam_idx = int(self.rng.integers(0, len(self.scene.cameras)))
        rgb, _, distortion = self.render_for_camera(cam_idx, want_distortion=True)
        gt = self.gt[cam_idx]
        photo = photometric_loss(rgb, gt, self.config.lambda_ssim)
        wd = weight_decay(self.field.grid)
        loss = (
            photo
            + self.config.lambda_distortion * distortion
            + self.config.lambda_weight_decay * wd
        )

        for opt in self._optimizers():
            opt.zero_grad(set_to_none=True)
        loss.backward()
        self._check_gradients()
        self._apply_lrs(i)
        for opt in self._optimizers():
            opt.step()
        self.iteration = i + 1

        densified = 0
        if (
            self.config.densify_enabled
            and self.config.densify_every > 0
            and self.iteration % self.config.densify_every == 0
        ):
            densified = self._densify()
        if self.iteration % self.config.topology_rebuild_every == 0:
            self._rebuild_topology()

        row = {
            "iteration": self.iteration,
            "loss": float(loss.detach()),
            "photometric": float(photo.detach()),
            "distortion": float(distortion.detach()),
            "weight_decay": float(wd.detach()),
            "tets": int(self.mesh.num_tets),
            "psnr": psnr(rgb.detach().numpy(), gt.numpy()),
            "densified": densified,
        }
        self.metrics.append(row)
        if (
            self.out_dir
            and self.config.checkpoint_every > 0
            and self.iteration % self.config.checkpoint_every == 0
        ):
            from .formats import save_checkpoint

            save_checkpoint(self.out_dir / f"ckpt_{self.iteration:06d}", self)
        return row

    def train(self, iterations=None, progress=None):
        n = iterations if iterations is not None else self.config.iterations
        for _ in range(n):
            row = self.train_step()
            if progress is not None:
                progress(row)
        return self.metrics

    def _check_gradients(self):
        for opt in self._optimizers():
            for group in opt.param_groups:
                for p in group["params"]:
                    if p.grad is not None and not torch.isfinite(p.grad).all():
                        raise NonFiniteGradientError(
                            f"non-finite gradient at iteration {self.iteration}"
                        )

    def _apply_lrs(self, i):
        self.opt_field.param_groups[0]["lr"] = self.schedules["grid"].lr_at(i)
        self.opt_field.param_groups[1]["lr"] = self.schedules["heads"].lr_at(i)
        if self.opt_vertices:
            self.opt_vertices.param_groups[0]["lr"] = self.schedules["vertices"].lr_at(i)

    def _rebuild_topology(self):
        pts = self.V.detach().to(torch.float64).numpy()
        self.mesh = delaunay(pts)

    def _densify(self):
        stats = densify_mod.collect_stats(self, self.config.densify_sample_size)
        decisions = densify_mod.decide_splits(stats, self, rng=self.rng)
        if not decisions:
            return 0
        new_points = np.array([d.new_point for d in decisions])
        pts = np.vstack([self.V.detach().to(torch.float64).numpy(), new_points])
        self.V = torch.tensor(
            pts, dtype=self.dtype, requires_grad=self.config.optimize_vertices
        )
        self.mesh = delaunay(pts)
        self._build_vertex_optimizer()
        for sched in self.schedules.values():
            sched.add_spike(self.iteration)
        return len(decisions)

    # -- evaluation

    def eval_psnr(self, camera_indices=None):
        idx = camera_indices if camera_indices is not None else range(len(self.scene.cameras))
        vals = []
        with torch.no_grad():
            for ci in idx:
                rgb, _, _ = self.render_for_camera(ci)
                vals.append(psnr(rgb.numpy(), self.gt[ci].numpy()))
        return float(np.mean(vals))

    def write_metrics(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = [
            "iteration", "loss", "photometric", "distortion",
            "weight_decay", "tets", "psnr", "densified",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.metrics:
                writer.writerow({k: row[k] for k in fields})
