"""File formats: PLY point clouds and meshes, OBJ, PFM/PNG images, scene
JSON, the versioned field checkpoint blob, and checkpoint directories.

The field blob layout is documented in ``docs/checkpoint_format.md`` and is
strictly little-endian; bump ``FIELD_VERSION`` on any change.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

import jsonschema

from .cameras import Camera, FisheyeModel, PinholeModel


class DataError(Exception):
    """A file exists but cannot be understood."""


# ---------------------------------------------------------------------------
# PLY


def write_ply_points(path, points, binary=True):
    points = np.asarray(points, dtype=np.float64)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(points.astype("<f8").tobytes())
        else:
            for p in points:
                fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n".encode("ascii"))


_PLY_SIZES = {
    "char": 1, "uchar": 1, "int8": 1, "uint8": 1,
    "short": 2, "ushort": 2, "int16": 2, "uint16": 2,
    "int": 4, "uint": 4, "int32": 4, "uint32": 4, "float": 4, "float32": 4,
    "double": 8, "float64": 8, "int64": 8, "uint64": 8,
}
_PLY_NP = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "short": "<i2", "ushort": "<u2", "char": "<i1", "uchar": "<u1",
}


def read_ply_points(path):
    """Vertex positions from an ASCII or binary little-endian PLY file.

    Extra vertex properties are skipped; list properties on other elements
    are not supported (point clouds only).
    """
    with open(path, "rb") as fh:
        line = fh.readline().strip()
        if line != b"ply":
            raise DataError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(type, name)])
        while True:
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: truncated header")
            tok = line.decode("ascii", "replace").strip().split()
            if not tok or tok[0] == "comment":
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if tok[1] == "list":
                    elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
                else:
                    elements[-1][2].append((tok[1], tok[2]))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise DataError(f"{path}: unsupported PLY format {fmt}")
        for name, _count, props in elements:
            if name == "vertex":
                prop_names = [p[1] if p[0] == "list" else p[1] for p in props]
                if not {"x", "y", "z"} <= set(prop_names):
                    raise DataError(f"{path}: vertex element lacks x/y/z")
        out = None
        for name, count, props in elements:
            if any(p[0] == "list" for p in props):
                if name == "vertex":
                    raise DataError(f"{path}: list property on vertex unsupported")
                break  # stop before face-like elements; points already read
            if fmt == "ascii":
                rows = [fh.readline().split() for _ in range(count)]
                if name == "vertex":
                    names = [p[1] for p in props]
                    ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
                    out = np.array(
                        [[float(r[ix]), float(r[iy]), float(r[iz])] for r in rows]
                    )
            else:
                dt = np.dtype([(p[1], _PLY_NP[p[0]]) for p in props])
                raw = fh.read(dt.itemsize * count)
                if len(raw) != dt.itemsize * count:
                    raise DataError(f"{path}: truncated vertex data")
                if name == "vertex":
                    rec = np.frombuffer(raw, dtype=dt)
                    out = np.stack(
                        [rec["x"].astype(np.float64), rec["y"].astype(np.float64),
                         rec["z"].astype(np.float64)], axis=1,
                    )
        if out is None:
            raise DataError(f"{path}: no vertex element")
        return out


def write_ply_mesh(path, vertices, triangles, tri_components=None):
    """Binary little-endian triangle mesh with an optional per-face
    component id property."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(triangles)}",
        "property list uchar int vertex_indices",
    ]
    if tri_components is not None:
        header.append("property int component")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vertices.astype("<f8").tobytes())
        for i, tri in enumerate(triangles):
            fh.write(struct.pack("<B3i", 3, *[int(v) for v in tri]))
            if tri_components is not None:
                fh.write(struct.pack("<i", int(tri_components[i])))


def write_obj_mesh(path, vertices, triangles, tri_components=None):
    """OBJ export; faces grouped per connected component."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    with open(path, "w") as fh:
        for v in vertices:
            fh.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        if tri_components is None:
            for t in triangles:
                fh.write(f"f {t[0]+1} {t[1]+1} {t[2]+1}\n")
        else:
            comps = np.asarray(tri_components)
            for comp in np.unique(comps):
                fh.write(f"g component_{comp}\n")
                for t in triangles[comps == comp]:
                    fh.write(f"f {t[0]+1} {t[1]+1} {t[2]+1}\n")


# ---------------------------------------------------------------------------
# Images


def write_pfm(path, image):
    """32-bit linear PFM (little-endian, bottom-up rows per convention)."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected [H, W, 3] image")
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{img.shape[1]} {img.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(img[::-1].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise DataError(f"{path}: not a PFM file")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(fh.read(w * h * ch * 4), dtype="<f4" if scale < 0 else ">f4")
        img = data.reshape(h, w, ch)[::-1]
        return img.astype(np.float32).copy()


def linear_to_srgb(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x):
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, image):
    """8-bit sRGB-encoded PNG from a linear RGB float image."""
    from PIL import Image

    srgb = linear_to_srgb(np.asarray(image, dtype=np.float64))
    u8 = (srgb * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def read_png(path):
    """Linear RGB float image from an 8-bit sRGB PNG."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr)


def read_image(path):
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path).astype(np.float64)
    return read_png(path)


def write_image(path, image):
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, image)
    else:
        write_png(path, image)


# ---------------------------------------------------------------------------
# Scene JSON

SCENE_SCHEMA = {
    "type": "object",
    "required": ["cameras"],
    "properties": {
        "background": {
            "type": "array", "items": {"type": "number"},
            "minItems": 3, "maxItems": 3,
        },
        "points": {"type": "string"},
        "scene": {
            "type": "object",
            "required": ["center", "radius"],
            "properties": {
                "center": {"type": "array", "items": {"type": "number"},
                           "minItems": 3, "maxItems": 3},
                "radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "cameras": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["model", "width", "height", "pose"],
                "properties": {
                    "model": {"enum": ["pinhole", "fisheye"]},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "fx": {"type": "number", "exclusiveMinimum": 0},
                    "fy": {"type": "number", "exclusiveMinimum": 0},
                    "f": {"type": "number", "exclusiveMinimum": 0},
                    "cx": {"type": "number"},
                    "cy": {"type": "number"},
                    "fov_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 360},
                    "pose": {
                        "type": "array", "minItems": 4, "maxItems": 4,
                        "items": {"type": "array", "items": {"type": "number"},
                                  "minItems": 4, "maxItems": 4},
                    },
                    "image": {"type": "string"},
                },
            },
        },
    },
}


def _camera_from_json(entry):
    pose = np.asarray(entry["pose"], dtype=np.float64)
    if entry["model"] == "pinhole":
        for k in ("fx", "fy", "cx", "cy"):
            if k not in entry:
                raise DataError(f"pinhole camera missing '{k}'")
        model = PinholeModel(entry["fx"], entry["fy"], entry["cx"], entry["cy"])
    else:
        for k in ("f", "cx", "cy"):
            if k not in entry:
                raise DataError(f"fisheye camera missing '{k}'")
        model = FisheyeModel(entry["f"], entry["cx"], entry["cy"], entry.get("fov_deg", 180.0))
    return Camera(model, entry["width"], entry["height"], pose)


def camera_to_json(cam, image_path=None):
    entry = {
        "model": cam.model.kind,
        "width": cam.width,
        "height": cam.height,
        "pose": [[float(v) for v in row] for row in cam.pose],
    }
    if cam.model.kind == "pinhole":
        entry.update(fx=cam.model.fx, fy=cam.model.fy, cx=cam.model.cx, cy=cam.model.cy)
    else:
        entry.update(f=cam.model.f, cx=cam.model.cx, cy=cam.model.cy, fov_deg=cam.model.fov_deg)
    if image_path is not None:
        entry["image"] = str(image_path)
    return entry


def load_scene(path):
    """Parse and validate a scene JSON file.

    Returns a dict with ``cameras`` (Camera objects), ``image_paths``,
    ``background``, ``points_path``, and optional ``scene_center`` /
    ``scene_radius``.  Referenced files must exist.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e
    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise DataError(f"{path}: schema violation: {e.message}") from e
    base = path.parent
    cameras = [_camera_from_json(c) for c in doc["cameras"]]
    image_paths = []
    for c in doc["cameras"]:
        if "image" in c:
            p = base / c["image"]
            if not p.exists():
                raise DataError(f"{path}: referenced image {p} does not exist")
            image_paths.append(p)
        else:
            image_paths.append(None)
    points_path = None
    if "points" in doc:
        points_path = base / doc["points"]
        if not points_path.exists():
            raise DataError(f"{path}: referenced point cloud {points_path} does not exist")
    out = {
        "cameras": cameras,
        "image_paths": image_paths,
        "background": tuple(doc.get("background", (0.0, 0.0, 0.0))),
        "points_path": points_path,
    }
    if "scene" in doc:
        out["scene_center"] = tuple(doc["scene"]["center"])
        out["scene_radius"] = float(doc["scene"]["radius"])
    return out


def load_train_scene(path):
    """Scene JSON -> :class:`tetfield.train.TrainScene` with images loaded."""
    from .train import TrainScene

    scene = load_scene(path)
    if scene["points_path"] is None:
        raise DataError(f"{path}: training requires a 'points' entry")
    missing = [i for i, p in enumerate(scene["image_paths"]) if p is None]
    if missing:
        raise DataError(f"{path}: cameras {missing} lack 'image' entries")
    images = [read_image(p) for p in scene["image_paths"]]
    return TrainScene(
        points=read_ply_points(scene["points_path"]),
        cameras=scene["cameras"],
        images=images,
        background=scene["background"],
        scene_center=scene.get("scene_center"),
        scene_radius=scene.get("scene_radius"),
    )


# ---------------------------------------------------------------------------
# Field checkpoint blob

FIELD_MAGIC = b"TFLD"
FIELD_VERSION = 1
_DTYPE_CODES = {"float32": 0, "float64": 1}
_DTYPE_NP = {0: "<f4", 1: "<f8"}


def save_field(path, field):
    """Serialize a RadianceField to the versioned little-endian blob."""
    import torch

    cfg = field.cfg
    dtype_code = _DTYPE_CODES["float64" if field.dtype == torch.float64 else "float32"]
    np_dtype = _DTYPE_NP[dtype_code]
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIIIII",
                FIELD_VERSION,
                cfg.levels,
                cfg.features,
                cfg.log2_table_size,
                cfg.n_min,
                cfg.n_max,
                cfg.hidden,
                cfg.sh_degree,
            )
        )
        fh.write(
            struct.pack(
                "<BBBB",
                0 if cfg.query_center == "centroid" else 1,
                dtype_code,
                0,
                0,
            )
        )
        fh.write(struct.pack("<3d", *cfg.scene_center))
        fh.write(struct.pack("<d", cfg.scene_radius))
        for p in field.grid.level_features:
            arr = p.detach().numpy()
            fh.write(struct.pack("<Q", arr.shape[0]))
            fh.write(arr.astype(np_dtype).tobytes())
        for head in (field.h_sigma, field.h_sh, field.h_delta):
            for layer in (head[0], head[2]):
                w = layer.weight.detach().numpy()
                b = layer.bias.detach().numpy()
                fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
                fh.write(w.astype(np_dtype).tobytes())
                fh.write(b.astype(np_dtype).tobytes())


def load_field(path):
    """Reconstruct a RadianceField from :func:`save_field` output."""
    import torch

    from .field import FieldConfig, RadianceField

    with open(path, "rb") as fh:
        if fh.read(4) != FIELD_MAGIC:
            raise DataError(f"{path}: not a field checkpoint")
        (version, levels, features, log2_table, n_min, n_max, hidden, sh_degree) = struct.unpack(
            "<IIIIIIII", fh.read(32)
        )
        if version != FIELD_VERSION:
            raise DataError(f"{path}: unsupported field version {version}")
        qc, dtype_code, _, _ = struct.unpack("<BBBB", fh.read(4))
        center = struct.unpack("<3d", fh.read(24))
        radius = struct.unpack("<d", fh.read(8))[0]
        cfg = FieldConfig(
            levels=levels,
            n_min=n_min,
            n_max=n_max,
            log2_table_size=log2_table,
            features=features,
            hidden=hidden,
            sh_degree=sh_degree,
            query_center="centroid" if qc == 0 else "circumcenter",
            scene_center=center,
            scene_radius=radius,
        )
        torch_dtype = torch.float32 if dtype_code == 0 else torch.float64
        np_dtype = _DTYPE_NP[dtype_code]
        itemsize = 4 if dtype_code == 0 else 8
        field = RadianceField(cfg, dtype=torch_dtype)
        with torch.no_grad():
            for p in field.grid.level_features:
                (entries,) = struct.unpack("<Q", fh.read(8))
                if entries != p.shape[0]:
                    raise DataError(f"{path}: level size mismatch")
                raw = fh.read(entries * features * itemsize)
                p.copy_(
                    torch.from_numpy(
                        np.frombuffer(raw, dtype=np_dtype)
                        .reshape(entries, features)
                        .astype(np.float64 if dtype_code else np.float32)
                    )
                )
            for head in (field.h_sigma, field.h_sh, field.h_delta):
                for layer in (head[0], head[2]):
                    out_dim, in_dim = struct.unpack("<II", fh.read(8))
                    w = np.frombuffer(fh.read(out_dim * in_dim * itemsize), dtype=np_dtype)
                    b = np.frombuffer(fh.read(out_dim * itemsize), dtype=np_dtype)
                    layer.weight.copy_(torch.from_numpy(w.reshape(out_dim, in_dim).copy()))
                    layer.bias.copy_(torch.from_numpy(b.copy()))
        return field


# ---------------------------------------------------------------------------
# Checkpoint directories


def save_checkpoint(ckpt_dir, trainer):
    """Mesh points (PLY), field blob, optimizer state, and metadata."""
    import torch

    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_ply_points(ckpt_dir / "points.ply", trainer.V.detach().to(torch.float64).numpy())
    save_field(ckpt_dir / "field.bin", trainer.field)
    torch.save(
        {
            "opt_field": trainer.opt_field.state_dict(),
            "opt_vertices": trainer.opt_vertices.state_dict() if trainer.opt_vertices else None,
        },
        ckpt_dir / "optimizer.pt",
    )
    meta = {
        "iteration": trainer.iteration,
        "config": asdict(trainer.config),
        "background": list(trainer.scene.background),
        "num_tets": int(trainer.mesh.num_tets),
    }
    (ckpt_dir / "meta.json").write_text(json.dumps(meta, indent=2))


def load_checkpoint(ckpt_dir):
    """Returns ``(points, field, meta)`` from a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    if not (ckpt_dir / "meta.json").exists():
        raise DataError(f"{ckpt_dir}: not a checkpoint directory")
    points = read_ply_points(ckpt_dir / "points.ply")
    field = load_field(ckpt_dir / "field.bin")
    meta = json.loads((ckpt_dir / "meta.json").read_text())
    return points, field, meta
