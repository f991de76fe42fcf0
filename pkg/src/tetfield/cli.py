"""Command-line entry points.

Subcommands: ``triangulate``, ``render``, ``train``, ``extract``, ``bench``,
``densify-report``, ``selftest``.  Every command is deterministic given
``--seed`` and a fixed ``--threads``.  Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    if p.suffix == ".json":
        return json.loads(p.read_text())
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(p.read_text())


def _model_attributes(field, mesh, V, cam):
    """Per-tet attributes for one camera from a loaded field (inference)."""
    import torch

    from .render import RenderAttributes, tet_geometry

    tets = torch.as_tensor(mesh.tets.astype(np.int64))
    geom = tet_geometry(V, tets)
    centers = geom["circumcenters"] if field.cfg.query_center == "circumcenter" else geom["centroids"]
    radii = geom["circumradius_sq"].clamp(min=0).sqrt().clamp(max=mesh.scene_diameter)
    origin = torch.as_tensor(cam.origin, dtype=V.dtype)
    view = centers - origin
    view = view / view.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    b = field.query(centers, radii)
    sigma, c0, grad = field.attributes(b, radii, view)
    return RenderAttributes(sigma=sigma, color0=c0, color_grad=grad, anchor=centers)


# ---------------------------------------------------------------------------
# Commands


def cmd_triangulate(args):
    from .formats import read_ply_points
    from .geometry import audit_empty_sphere, check_adjacency, delaunay

    points = read_ply_points(args.points)
    mesh = delaunay(points)
    violations = audit_empty_sphere(mesh)
    adj = check_adjacency(mesh)
    print(f"points: {len(points)}  tets: {mesh.num_tets}")
    print(f"empty-sphere audit: {'PASS' if not violations else f'FAIL ({len(violations)})'}")
    print(f"adjacency audit: {'PASS' if not adj else f'FAIL ({len(adj)})'}")
    np.savez_compressed(
        args.out,
        points=mesh.points,
        tets=mesh.tets,
        neighbors=mesh.neighbors,
    )
    print(f"wrote {args.out}")
    return EXIT_NUMERIC if violations or adj else EXIT_OK


def _checkpoint_scene(args):
    import torch

    from .formats import load_checkpoint, load_scene
    from .geometry import delaunay

    points, field, meta = load_checkpoint(args.checkpoint)
    scene = load_scene(args.scene)
    mesh = delaunay(points)
    V = torch.as_tensor(points, dtype=field.dtype)
    return mesh, field, V, scene, meta


def cmd_render(args):
    import torch

    from .cameras import Camera, FisheyeModel
    from .formats import write_image
    from .render import ImageBuffer, RenderOptions, render_camera

    mesh, field, V, scene, meta = _checkpoint_scene(args)
    cam = scene["cameras"][args.camera]
    if args.fisheye and cam.model.kind != "fisheye":
        model = FisheyeModel(
            f=cam.model.fx / 3.0, cx=cam.model.cx, cy=cam.model.cy, fov_deg=200.0
        )
        cam = Camera(model, cam.width, cam.height, cam.pose)
    opts = RenderOptions(background=scene["background"], dtype=field.dtype)
    with torch.no_grad():
        rgb, trans = render_camera(V, mesh.tets, _model_attributes(field, mesh, V, cam), cam, opts)
    buf = ImageBuffer(rgb.numpy().astype(np.float32), trans.numpy().astype(np.float32))
    write_image(args.out, buf.pixels)
    print(f"rendered camera {args.camera} ({cam.model.kind}) -> {args.out}")
    return EXIT_OK


def cmd_train(args):
    import torch

    from .formats import load_train_scene, save_checkpoint
    from .train import NonFiniteGradientError, TrainConfig, Trainer, TrainScene

    torch.set_num_threads(args.threads)
    cfg_map = _load_config(args.config)
    if args.iterations is not None:
        cfg_map["iterations"] = args.iterations
    cfg_map.setdefault("seed", args.seed)
    config = TrainConfig.from_mapping(cfg_map)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.synthetic:
        scene = _synthetic_train_scene(
            args.synthetic, out_dir,
            views=args.views, width=args.width, height=args.height,
        )
    else:
        if args.scene is None:
            raise FileNotFoundError("either a scene.json or --synthetic is required")
        scene = load_train_scene(args.scene)

    trainer = Trainer(scene, config, out_dir=out_dir)
    t0 = time.time()

    def progress(row):
        if row["iteration"] % 100 == 0 or row["iteration"] == 1:
            print(
                f"iter {row['iteration']:6d}  loss {row['loss']:.5f}  "
                f"psnr {row['psnr']:.2f}  tets {row['tets']}"
            )

    try:
        trainer.train(progress=progress)
    except NonFiniteGradientError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        trainer.write_metrics(out_dir / "metrics.csv")
        return EXIT_NUMERIC
    trainer.write_metrics(out_dir / "metrics.csv")
    save_checkpoint(out_dir / "final", trainer)
    print(f"trained {trainer.iteration} iterations in {time.time()-t0:.1f}s; "
          f"final psnr {trainer.eval_psnr():.2f} dB")
    return EXIT_OK


def _synthetic_train_scene(name, out_dir, views=None, width=None, height=None):
    from .formats import camera_to_json, write_pfm, write_ply_points
    from .synthetic import build_teacher, render_ground_truth
    from .train import TrainScene

    kwargs = {}
    if views is not None:
        kwargs["n_cameras"] = views
    if width is not None:
        kwargs["width"] = width
    if height is not None:
        kwargs["height"] = height
    teacher = build_teacher(name, **kwargs)
    render_ground_truth(teacher)
    data_dir = Path(out_dir) / "synthetic"
    data_dir.mkdir(parents=True, exist_ok=True)
    cams_json = []
    for i, (cam, img) in enumerate(zip(teacher.cameras, teacher.images)):
        img_path = data_dir / f"gt_{i:03d}.pfm"
        write_pfm(img_path, img)
        cams_json.append(camera_to_json(cam, image_path=img_path.name))
    if teacher.extras and "background_points" in teacher.extras:
        init_points = teacher.extras["background_points"]
    else:
        init_points = teacher.points
    write_ply_points(data_dir / "points.ply", init_points)
    doc = {
        "background": list(teacher.background),
        "points": "points.ply",
        "cameras": cams_json,
    }
    (data_dir / "scene.json").write_text(json.dumps(doc, indent=2))
    print(f"generated synthetic scene '{name}' with {len(teacher.cameras)} views in {data_dir}")
    return TrainScene(
        points=np.asarray(init_points, dtype=np.float64),
        cameras=teacher.cameras,
        images=teacher.images,
        background=teacher.background,
    )


def cmd_extract(args):
    import torch

    from .extract import extract_surface, peak_contribution
    from .formats import write_obj_mesh, write_ply_mesh

    mesh, field, V, scene, meta = _checkpoint_scene(args)
    contrib = peak_contribution(
        V, mesh.tets, lambda cam: _model_attributes(field, mesh, V, cam),
        scene["cameras"], background=scene["background"], dtype=field.dtype,
    )
    surf = extract_surface(contrib, mesh, threshold=args.threshold)
    out = Path(args.out)
    if out.suffix.lower() == ".ply":
        write_ply_mesh(out, surf.vertices, surf.triangles, surf.tri_components)
    else:
        write_obj_mesh(out, surf.vertices, surf.triangles, surf.tri_components)
    closed = sum(1 for c in surf.closed if c)
    print(
        f"kept {int((contrib >= args.threshold).sum())}/{mesh.num_tets} tets, "
        f"{surf.n_components} components ({closed} closed), "
        f"{len(surf.triangles)} triangles -> {out}"
    )
    return EXIT_OK


def cmd_bench(args):
    import torch

    from . import sorting
    from .cameras import Camera, PinholeModel, look_at_pose
    from .geometry import delaunay
    from .render import RenderAttributes, RenderOptions, render_image

    torch.set_num_threads(args.threads)
    rng = np.random.default_rng(args.seed)
    n = args.tets
    centers = rng.uniform(-1, 1, (n, 3))
    radii_sq = rng.uniform(0.01, 0.2, n) ** 2

    class _K:  # minimal mesh stand-in for power_keys
        circumcenters = centers
        circumradius_sq = radii_sq

    t0 = time.time()
    keys = sorting.power_keys(_K, np.zeros(3))
    t_keys = time.time() - t0
    t0 = time.time()
    perm = sorting.sort_keys(keys)
    t_sort = time.time() - t0
    print(f"power keys: {n/t_keys/1e6:.1f} M keys/s ({t_keys*1e3:.1f} ms)")
    print(f"radix sort: {n/t_sort/1e6:.1f} M tets/s ({t_sort*1e3:.1f} ms)")
    assert (np.diff(keys[perm]) >= 0).all()

    pts = rng.uniform(-1, 1, (48, 3))
    mesh = delaunay(pts)
    T = mesh.num_tets
    sigma = rng.uniform(0.2, 3.0, T)
    color0 = rng.uniform(0.1, 1.0, (T, 3))
    attrs = RenderAttributes.from_numpy(sigma, color0, np.zeros((T, 3)), mesh.centroids)
    cam = Camera(PinholeModel(300, 300, 128, 128), 256, 256, look_at_pose((0, 0, 4), (0, 0, 0)))
    opts = RenderOptions(dtype=torch.float64)
    render_image(mesh, attrs, cam, opts)  # warm up
    t0 = time.time()
    render_image(mesh, attrs, cam, opts)
    t_render = time.time() - t0
    rays = cam.width * cam.height
    print(f"render: {T} tets at {cam.width}x{cam.height}: {t_render:.2f} s "
          f"({rays/t_render/1e3:.0f} k rays/s)")
    return EXIT_OK


def cmd_densify_report(args):
    import csv

    import torch

    from . import densify as densify_mod
    from .formats import load_train_scene
    from .train import TrainConfig, Trainer

    torch.set_num_threads(args.threads)
    scene = load_train_scene(args.scene)
    config = TrainConfig(seed=args.seed, optimize_vertices=False)
    trainer = Trainer(scene, config)
    if args.checkpoint:
        from .formats import load_checkpoint

        points, field, meta = load_checkpoint(args.checkpoint)
        trainer.field = field
        import numpy as _np

        trainer.V = torch.as_tensor(points, dtype=field.dtype)
        from .geometry import delaunay

        trainer.mesh = delaunay(points)
        trainer.dtype = field.dtype
    stats = densify_mod.collect_stats(trainer, args.sample)
    s_scores = densify_mod.ssim_scores(stats)
    v_scores = densify_mod.variance_scores(stats)
    decisions = densify_mod.decide_splits(stats, trainer, rng=np.random.default_rng(args.seed))
    by_tet = {d.tet_index: d for d in decisions}
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tet", "ssim_score", "variance_score", "split", "trigger",
                         "provenance", "x", "y", "z"])
        for k in range(trainer.mesh.num_tets):
            d = by_tet.get(k)
            writer.writerow([
                k, f"{s_scores[k]:.8g}", f"{v_scores[k]:.8g}",
                int(d is not None),
                d.trigger if d else "", d.provenance if d else "",
                *(f"{v:.8g}" for v in (d.new_point if d is not None else (0, 0, 0))),
            ])
    print(f"{len(decisions)} split decisions over {trainer.mesh.num_tets} tets -> {args.out}")
    return EXIT_OK


def cmd_selftest(args):
    import torch

    torch.set_num_threads(args.threads)
    from .selftest import run_selftest

    ok = run_selftest(seed=args.seed, verbose=True)
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="tetfield", description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("triangulate", help="Delaunay-tetrahedralize a PLY point cloud")
    s.add_argument("points")
    s.add_argument("out")
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("render", help="render one camera of a scene from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("scene")
    s.add_argument("out")
    s.add_argument("--camera", type=int, default=0)
    s.add_argument("--fisheye", action="store_true")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("train", help="optimize a radiance mesh")
    s.add_argument("scene", nargs="?", default=None)
    s.add_argument("out_dir")
    s.add_argument("--config", default=None, help="TOML or JSON TrainConfig overrides")
    s.add_argument("--synthetic", choices=["blob", "boxes", "teapot", "thin-rods"])
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--views", type=int, default=None, help="synthetic camera count")
    s.add_argument("--width", type=int, default=None, help="synthetic image width")
    s.add_argument("--height", type=int, default=None, help="synthetic image height")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="extract a thresholded surface mesh")
    s.add_argument("checkpoint")
    s.add_argument("scene")
    s.add_argument("out")
    s.add_argument("--threshold", type=float, default=0.1)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("bench", help="sorting and rendering throughput")
    s.add_argument("--tets", type=int, default=1_000_000)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("densify-report", help="dump per-tet split scores as CSV")
    s.add_argument("scene")
    s.add_argument("out")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--sample", type=int, default=20)
    s.set_defaults(func=cmd_densify_report)

    s = sub.add_parser("selftest", help="run the built-in oracle suite")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError,) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as e:  # data errors from parsing/validation
        from .formats import DataError
        from .geometry import GeometryError

        if isinstance(e, (DataError, GeometryError, ValueError, OSError)):
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
