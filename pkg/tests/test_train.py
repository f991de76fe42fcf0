import math

import numpy as np
import pytest
import torch

from conftest import random_scene
from tetfield.cameras import Camera, PinholeModel, look_at_pose
from tetfield.geometry import delaunay
from tetfield.render import RenderAttributes, RenderOptions, render_camera
from tetfield.synthetic import render_ground_truth, teacher_blob
from tetfield.train import (
    LRSchedule,
    NonFiniteGradientError,
    TrainConfig,
    Trainer,
    TrainScene,
)


class TestLRSchedule:
    def test_no_spikes_is_base(self):
        s = LRSchedule(1e-2, 1e-3, 1000, spike_duration=100)
        for i in (0, 100, 999, 1000):
            expected = 1e-2 * (0.1) ** (i / 1000)
            assert s.lr_at(i) == pytest.approx(expected, rel=1e-12)

    def test_spike_restores_initial_rate(self):
        s = LRSchedule(1e-2, 1e-3, 1000, spike_duration=100_000)
        s.add_spike(600)
        # l(601) + (l(0) - l(600)) * exp(-tiny) ~= l(0)
        assert s.lr_at(601) == pytest.approx(s.base_at(0), rel=1e-3)

    def test_spike_attenuation_at_L(self):
        s = LRSchedule(1e-2, 1e-3, 1000, spike_duration=50)
        s.add_spike(600)
        added = s.lr_at(650) - s.base_at(650)
        expected = (s.base_at(0) - s.base_at(600)) * math.exp(-6.0)
        assert added == pytest.approx(expected, rel=1e-12)

    def test_spike_inactive_at_or_before_spike(self):
        s = LRSchedule(1e-2, 1e-3, 1000)
        s.add_spike(600)
        assert s.lr_at(600) == pytest.approx(s.base_at(600))

    def test_effective_rate_at_least_base(self):
        s = LRSchedule(1e-2, 1e-3, 1000, spike_duration=80)
        s.add_spike(200)
        s.add_spike(500)
        for i in range(0, 1000, 37):
            assert s.lr_at(i) >= s.base_at(i) - 1e-18


def _toy_scene(n_points=14, n_cams=4, res=24, seed=0):
    teacher = teacher_blob(n_points=n_points, n_cameras=n_cams, seed=seed,
                           width=res, height=res)
    render_ground_truth(teacher)
    return TrainScene(
        points=teacher.points,
        cameras=teacher.cameras,
        images=teacher.images,
        background=teacher.background,
    )


class TestGradients:
    def test_zero_density_black_scene_zero_grads(self):
        mesh, _, color0, grad = random_scene(seed=1, n_points=14)
        cam = Camera(PinholeModel(20, 20, 8, 8), 16, 16, look_at_pose((0, 0, 4), (0, 0, 0)))
        sigma = torch.zeros(mesh.num_tets, dtype=torch.float64, requires_grad=True)
        c0 = torch.as_tensor(color0, dtype=torch.float64).requires_grad_(True)
        attrs = RenderAttributes(
            sigma=sigma, color0=c0,
            color_grad=torch.as_tensor(grad, dtype=torch.float64),
            anchor=torch.as_tensor(mesh.centroids, dtype=torch.float64),
        )
        V = torch.as_tensor(mesh.points, dtype=torch.float64)
        rgb, _ = render_camera(V, mesh.tets, attrs, cam, RenderOptions(early_out=0.0))
        loss = rgb.abs().mean()  # photometric L1 against a black ground truth
        loss.backward()
        assert float(loss) == 0.0
        assert sigma.grad.abs().max().item() == 0.0
        assert c0.grad.abs().max().item() == 0.0

    def test_density_gradient_finite_difference(self):
        mesh, sigma, color0, grad = random_scene(seed=2, n_points=12)
        cam = Camera(PinholeModel(20, 20, 8, 8), 16, 16, look_at_pose((0, 0, 4), (0, 0, 0)))
        opts = RenderOptions(early_out=0.0, prefilter=False)
        V = torch.as_tensor(mesh.points, dtype=torch.float64)

        def loss_for(sig_np, need_grad=False):
            sig = torch.tensor(sig_np, dtype=torch.float64, requires_grad=need_grad)
            attrs = RenderAttributes(
                sigma=sig,
                color0=torch.as_tensor(color0, dtype=torch.float64),
                color_grad=torch.as_tensor(grad, dtype=torch.float64),
                anchor=torch.as_tensor(mesh.centroids, dtype=torch.float64),
            )
            rgb, _ = render_camera(V, mesh.tets, attrs, cam, opts)
            return rgb.square().mean(), sig

        loss, sig = loss_for(sigma, need_grad=True)
        loss.backward()
        g = sig.grad.numpy()
        worst = 0.0
        for k in np.argsort(-np.abs(g))[:5]:
            h = 1e-6 * max(abs(sigma[k]), 1.0)
            sp = sigma.copy(); sp[k] += h
            sm = sigma.copy(); sm[k] -= h
            with torch.no_grad():
                fd = (float(loss_for(sp)[0]) - float(loss_for(sm)[0])) / (2 * h)
            worst = max(worst, abs(fd - g[k]) / max(abs(fd), 1e-12))
        assert worst < 1e-4

    def test_vertex_gradient_finite_difference(self):
        # ~20-tet scene, step below the flip margin, rel error < 1e-2.
        gen = np.random.default_rng(5)
        pts = gen.uniform(-1, 1, (10, 3))
        mesh = delaunay(pts)
        cam = Camera(PinholeModel(20, 20, 8, 8), 16, 16, look_at_pose((0, 0, 4), (0, 0, 0)))
        opts = RenderOptions(early_out=0.0, prefilter=False)
        t = mesh.num_tets
        sigma = gen.uniform(0.3, 2.0, t)
        color0 = gen.uniform(0.2, 0.9, (t, 3))

        def loss_for(points, need_grad=False):
            V = torch.tensor(points, dtype=torch.float64, requires_grad=need_grad)
            from tetfield.render import tet_geometry

            geom = tet_geometry(V, torch.as_tensor(mesh.tets.astype(np.int64)))
            attrs = RenderAttributes(
                sigma=torch.as_tensor(sigma, dtype=torch.float64),
                color0=torch.as_tensor(color0, dtype=torch.float64),
                color_grad=torch.zeros(t, 3, dtype=torch.float64),
                anchor=geom["centroids"],
            )
            rgb, _ = render_camera(V, mesh.tets, attrs, cam, opts)
            return rgb.square().mean(), V

        loss, V = loss_for(pts, need_grad=True)
        loss.backward()
        g = V.grad.numpy()
        flat = np.argsort(-np.abs(g).ravel())[:4]
        base_tets = mesh.canonical_tets()
        checked = 0
        for f in flat:
            vi, ci = divmod(int(f), 3)
            h = 2e-6
            pp = pts.copy(); pp[vi, ci] += h
            pm = pts.copy(); pm[vi, ci] -= h
            # flip guard: the step must not change the Delaunay topology
            if delaunay(pp).canonical_tets() != base_tets:
                continue
            if delaunay(pm).canonical_tets() != base_tets:
                continue
            with torch.no_grad():
                fd = (float(loss_for(pp)[0]) - float(loss_for(pm)[0])) / (2 * h)
            rel = abs(fd - g[vi, ci]) / max(abs(fd), 1e-12)
            assert rel < 1e-2, (vi, ci, rel)
            checked += 1
        assert checked >= 2


class TestTrainer:
    def test_deterministic_with_frozen_vertices(self):
        scene = _toy_scene()
        cfg = TrainConfig(
            iterations=12, optimize_vertices=False, densify_enabled=False,
            seed=7, dtype="float64", field_levels=3, field_n_max=64,
            field_log2_table=10, sh_degree=1, field_hidden=8,
        )
        rows_a = Trainer(scene, cfg).train()
        rows_b = Trainer(scene, cfg).train()
        assert [r["loss"] for r in rows_a] == [r["loss"] for r in rows_b]
        assert [r["psnr"] for r in rows_a] == [r["psnr"] for r in rows_b]

    def test_topology_rebuild_cadence(self):
        scene = _toy_scene()
        cfg = TrainConfig(
            iterations=21, optimize_vertices=True, densify_enabled=False,
            topology_rebuild_every=10, seed=0, dtype="float64",
            field_levels=2, field_n_max=32, field_log2_table=8, sh_degree=0,
            field_hidden=8, lr_vertices=5e-3, lr_vertices_final=5e-3,
        )
        tr = Trainer(scene, cfg)
        mesh_ids = []
        for _ in range(cfg.iterations):
            tr.train_step()
            mesh_ids.append(id(tr.mesh))
        changes = [i + 1 for i in range(1, len(mesh_ids)) if mesh_ids[i] != mesh_ids[i - 1]]
        assert all(c % 10 == 0 for c in changes)
        assert mesh_ids[9] != mesh_ids[8]  # rebuild happened at iteration 10

    def test_nonfinite_gradient_raises(self):
        scene = _toy_scene()
        cfg = TrainConfig(
            iterations=2, optimize_vertices=False, densify_enabled=False,
            seed=0, dtype="float64", field_levels=2, field_n_max=32,
            field_log2_table=8, sh_degree=0, field_hidden=8,
        )
        tr = Trainer(scene, cfg)
        with torch.no_grad():
            tr.field.grid.level_features[0][0, 0] = float("nan")
        with pytest.raises(NonFiniteGradientError):
            for _ in range(2):
                tr.train_step()

    def test_loss_decreases_on_teacher(self):
        scene = _toy_scene(n_points=14, n_cams=6, res=32, seed=3)
        cfg = TrainConfig(
            iterations=120, optimize_vertices=False, densify_enabled=False,
            seed=1, dtype="float64", field_levels=4, field_n_max=128,
            field_log2_table=12, sh_degree=1, field_hidden=16,
            lambda_distortion=0.0, lambda_weight_decay=1e-3,
        )
        tr = Trainer(scene, cfg)
        rows = tr.train()
        first = np.mean([r["loss"] for r in rows[:20]])
        last = np.mean([r["loss"] for r in rows[-20:]])
        assert last < 0.6 * first

    def test_metrics_csv_roundtrip(self, tmp_path):
        scene = _toy_scene()
        cfg = TrainConfig(
            iterations=3, optimize_vertices=False, densify_enabled=False,
            seed=0, dtype="float64", field_levels=2, field_n_max=32,
            field_log2_table=8, sh_degree=0, field_hidden=8,
        )
        tr = Trainer(scene, cfg)
        tr.train()
        path = tmp_path / "metrics.csv"
        tr.write_metrics(path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("iteration,loss,photometric")

    def test_config_rejects_unknown_keys(self):
        with pytest.raises(ValueError):
            TrainConfig.from_mapping({"iterations": 5, "bogus": 1})
