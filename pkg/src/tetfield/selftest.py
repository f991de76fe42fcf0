"""Built-in oracle suite behind ``tetfield selftest``.

Small-scale versions of the brute-force cross-checks the test suite runs in
full: power-sort/entry-order consistency, closed-form vs quadrature segment
integration, whole-image agreement with the exhaustive renderer, energy
conservation, and finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np
import torch

from .cameras import Camera, PinholeModel, look_at_pose
from .geometry import delaunay
from .reference import (
    ray_segments,
    render_image_reference,
    segment_radiance,
)
from .render import RenderAttributes, RenderOptions, render_camera, render_image
from .sorting import visibility_order


def _check(name, ok, detail, verbose):
    if verbose:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def _random_scene(rng, n_points=40):
    pts = rng.uniform(-1, 1, (n_points, 3))
    mesh = delaunay(pts)
    T = mesh.num_tets
    sigma = rng.uniform(0.1, 3.0, T)
    color0 = rng.uniform(0.1, 1.0, (T, 3))
    d = rng.normal(size=(T, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    bound = color0.min(axis=1) / mesh.clamped_radii().clip(1e-9)
    grad = 0.5 * bound[:, None] * d
    return mesh, sigma, color0, grad


def check_sorting(rng, verbose):
    mesh, *_ = _random_scene(rng, 60)
    origin = np.array([0.0, 0.0, 3.5])
    order = visibility_order(mesh, origin)
    rank = np.empty(mesh.num_tets, dtype=np.int64)
    rank[order] = np.arange(mesh.num_tets)
    bad = 0
    for _ in range(200):
        d = rng.normal(size=3)
        segs = ray_segments(mesh.points, mesh.tets, origin, d)
        ranks = [rank[k] for k, _, _ in segs]
        t_ins = [t for _, t, _ in segs]
        for i in range(len(segs) - 1):
            if ranks[i + 1] < ranks[i] and t_ins[i + 1] - t_ins[i] > 1e-9:
                bad += 1
    return _check("power-sort visibility order", bad == 0, f"{bad} inversions", verbose)


def check_quadrature(rng, verbose):
    worst = 0.0
    for _ in range(300):
        sigma = 10.0 ** rng.uniform(-12, 1)
        length = 10.0 ** rng.uniform(-3, 0.5)
        c_in = rng.uniform(0.05, 1.0, 3)
        c_out = rng.uniform(0.05, 1.0, 3)
        closed, _ = segment_radiance(sigma, 0.0, length, c_in, c_out)
        quad, _ = segment_radiance(sigma, 0.0, length, c_in, c_out, quadrature_steps=100_000)
        denom = max(np.abs(quad).max(), 1e-300)
        worst = max(worst, float(np.abs(closed - quad).max() / denom))
    return _check("segment integral vs quadrature", worst < 1e-5, f"max rel {worst:.2e}", verbose)


def check_whole_image(rng, verbose):
    mesh, sigma, color0, grad = _random_scene(rng, 30)
    cam = Camera(PinholeModel(40, 40, 16, 16), 32, 32, look_at_pose((0, 0, 4), (0, 0, 0)))
    attrs = RenderAttributes.from_numpy(sigma, color0, grad, mesh.centroids)
    opts = RenderOptions(early_out=0.0)
    img = render_image(mesh, attrs, cam, opts)
    ref, _ = render_image_reference(
        mesh.points, mesh.tets, sigma, color0, grad, mesh.centroids, cam
    )
    diff = float(np.abs(img.pixels - ref).max())
    return _check("whole-image brute-force oracle", diff < 1e-5, f"max abs {diff:.2e}", verbose)


def check_energy(rng, verbose):
    mesh, sigma, color0, grad = _random_scene(rng, 30)
    cam = Camera(PinholeModel(40, 40, 16, 16), 32, 32, look_at_pose((0, 0, 4), (0, 0, 0)))
    attrs = RenderAttributes.from_numpy(sigma, color0, grad, mesh.centroids)
    opts = RenderOptions(early_out=0.0)
    worst = [0.0]

    def callback(res):
        total = (res["w"] * res["alpha"]).sum(dim=0) + res["trans"]
        worst[0] = max(worst[0], float((total - 1.0).abs().max()))

    V = torch.as_tensor(mesh.points, dtype=torch.float64)
    with torch.no_grad():
        render_camera(V, mesh.tets, attrs, cam, opts, chunk_callback=callback)
    return _check("energy conservation", worst[0] < 1e-6, f"max |T+Sum-1| {worst[0]:.2e}", verbose)


def check_gradients(rng, verbose):
    mesh, sigma, color0, grad = _random_scene(rng, 12)
    cam = Camera(PinholeModel(20, 20, 8, 8), 16, 16, look_at_pose((0, 0, 4), (0, 0, 0)))
    opts = RenderOptions(early_out=0.0, prefilter=False)
    V = torch.as_tensor(mesh.points, dtype=torch.float64)
    sig_t = torch.tensor(sigma, dtype=torch.float64, requires_grad=True)
    attrs = RenderAttributes(
        sigma=sig_t,
        color0=torch.as_tensor(color0, dtype=torch.float64),
        color_grad=torch.as_tensor(grad, dtype=torch.float64),
        anchor=torch.as_tensor(mesh.centroids, dtype=torch.float64),
    )
    rgb, _ = render_camera(V, mesh.tets, attrs, cam, opts)
    loss = rgb.square().mean()
    loss.backward()
    analytic = sig_t.grad.numpy().copy()

    k = int(np.argmax(np.abs(analytic)))
    h = 1e-5 * max(abs(sigma[k]), 1.0)

    def loss_at(value):
        pert = sigma.copy()
        pert[k] = value
        a2 = RenderAttributes.from_numpy(pert, color0, grad, mesh.centroids)
        with torch.no_grad():
            rgb2, _ = render_camera(V, mesh.tets, a2, cam, opts)
        return float(rgb2.square().mean())

    fd = (loss_at(sigma[k] + h) - loss_at(sigma[k] - h)) / (2 * h)
    rel = abs(fd - analytic[k]) / max(abs(fd), 1e-12)
    return _check("density gradient vs finite differences", rel < 1e-4, f"rel {rel:.2e}", verbose)


def run_selftest(seed=0, verbose=True):
    rng = np.random.default_rng(seed)
    results = [
        check_sorting(rng, verbose),
        check_quadrature(rng, verbose),
        check_whole_image(rng, verbose),
        check_energy(rng, verbose),
        check_gradients(rng, verbose),
    ]
    ok = all(results)
    if verbose:
        print(f"selftest: {'all checks passed' if ok else 'FAILURES PRESENT'}")
    return ok
