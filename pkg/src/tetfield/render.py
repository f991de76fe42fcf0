"""Exact emission-only volume rendering of a sorted tet mesh.

The renderer walks tets in circumsphere-power order and, per ray, integrates
the transfer equation across each intersected cell in closed form:

    dC = (1 - a/d) c_in + (a/d - exp(-d)) c_out,   d = sigma * length,
    a  = 1 - exp(-d),
    C  = sum_k w_k dC_k,   w_k = prod_{l<k} (1 - a_l)

with the d -> 0 limit of the coefficients evaluated by series.  Because the
color slope is monochrome (one spatial vector shared by all channels), the
whole pipeline stays in [tets x rays] matrices; colors enter only through two
final reductions.  Written in torch so the same code path provides
reverse-mode gradients for optimization; rendering itself is deterministic
for a fixed thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import sorting
from .cameras import camera_rays, project_points

_FACE_LOCAL = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))
_BIG = 1e30
_SERIES_CUTOFF = 1e-2


@dataclass
class RenderOptions:
    background: tuple = (0.0, 0.0, 0.0)
    early_out: float = 1e-4  # transmittance threshold; 0 disables
    chunk_rays: int = 16384
    prefilter: bool = True
    dtype: object = torch.float64


@dataclass
class RenderAttributes:
    """Per-tet render inputs: density, base color, monochrome color slope,
    and the anchor point of the linear color model."""

    sigma: torch.Tensor  # [T]
    color0: torch.Tensor  # [T, 3]
    color_grad: torch.Tensor  # [T, 3]
    anchor: torch.Tensor  # [T, 3]

    @classmethod
    def from_numpy(cls, sigma, color0, color_grad, anchor, dtype=torch.float64):
        return cls(
            sigma=torch.as_tensor(np.asarray(sigma), dtype=dtype),
            color0=torch.as_tensor(np.asarray(color0), dtype=dtype),
            color_grad=torch.as_tensor(np.asarray(color_grad), dtype=dtype),
            anchor=torch.as_tensor(np.asarray(anchor), dtype=dtype),
        )

    def reorder(self, order):
        idx = torch.as_tensor(np.asarray(order), dtype=torch.long)
        return RenderAttributes(
            self.sigma[idx], self.color0[idx], self.color_grad[idx], self.anchor[idx]
        )


@dataclass
class ImageBuffer:
    pixels: np.ndarray  # [H, W, 3] linear RGB
    transmittance: np.ndarray = None  # [H, W] residual background visibility

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


def tet_geometry(V, tets):
    """Differentiable per-tet geometry from vertex positions.

    Returns a dict with face anchor points and outward normals, centroids,
    circumcenters (Cramer solve with a clamped determinant near degeneracy),
    and raw squared circumradii.
    """
    tv = V[tets]  # [T,4,3]
    idx = torch.tensor(_FACE_LOCAL, dtype=torch.long)
    tri = tv[:, idx]  # [T,4,3,3]
    normals = torch.cross(
        tri[:, :, 1] - tri[:, :, 0], tri[:, :, 2] - tri[:, :, 0], dim=-1
    )
    centroids = tv.mean(dim=1)

    d = tv[:, 1:] - tv[:, :1]  # [T,3,3] rows
    a = 2.0 * d
    rhs = d.square().sum(-1)  # [T,3]
    r1, r2, r3 = a[:, 0], a[:, 1], a[:, 2]
    c23 = torch.cross(r2, r3, dim=-1)
    c31 = torch.cross(r3, r1, dim=-1)
    c12 = torch.cross(r1, r2, dim=-1)
    det = (r1 * c23).sum(-1)
    scale = d.abs().amax(dim=(1, 2)).clamp(min=1e-30)
    floor = 1e-12 * (2.0 * scale) ** 3
    sign = torch.where(det >= 0, torch.ones_like(det), -torch.ones_like(det))
    safe_det = torch.where(det.abs() < floor, sign * floor, det)
    local = (
        c23 * rhs[:, 0:1] + c31 * rhs[:, 1:2] + c12 * rhs[:, 2:3]
    ) / safe_det.unsqueeze(-1)
    circumcenters = tv[:, 0] + local
    radius_sq = local.square().sum(-1)
    return {
        "verts": tv,
        "face_point": tri[:, :, 0],  # [T,4,3]
        "normals": normals,  # [T,4,3] outward
        "centroids": centroids,
        "circumcenters": circumcenters,
        "circumradius_sq": radius_sq,
    }


def segment_coefficients(d):
    """Coefficients (A, B, alpha) of the closed-form cell integral.

    ``A`` weights the entry color, ``B`` the exit color; for small optical
    depth both are evaluated by series to keep relative error ~1e-12.
    """
    alpha = -torch.expm1(-d)
    small = d < _SERIES_CUTOFF
    d_main = d.clamp(min=1e-3)
    a_main = 1.0 - alpha / d_main
    b_main = alpha / d_main - torch.exp(-d)
    d2 = d * d
    d3 = d2 * d
    d4 = d2 * d2
    a_ser = d / 2 - d2 / 6 + d3 / 24 - d4 / 120
    b_ser = d / 2 - d2 / 3 + d3 / 8 - d4 / 30
    return torch.where(small, a_ser, a_main), torch.where(small, b_ser, b_main), alpha


def integrate_segment(sigma, t_in, t_out, c_in, c_out):
    """Premultiplied color contribution and opacity of one segment.

    ``t`` values are Euclidean distances (callers using unnormalized ray
    directions rescale first); ``c_in``/``c_out`` are RGB triples.  Returns
    ``(dC, alpha)`` with the d -> 0 limit handled by series.
    """
    d = float(sigma) * (float(t_out) - float(t_in))
    alpha = -np.expm1(-d)
    if d < _SERIES_CUTOFF:
        a = d / 2 - d**2 / 6 + d**3 / 24 - d**4 / 120
        b = d / 2 - d**2 / 3 + d**3 / 8 - d**4 / 30
    else:
        a = 1.0 - alpha / d
        b = alpha / d - np.exp(-d)
    dc = a * np.asarray(c_in, dtype=np.float64) + b * np.asarray(c_out, dtype=np.float64)
    return dc, float(alpha)


def _ray_chunk(geom, attrs_sorted, origin, dirs, opts, tet_mask=None):
    """Render one chunk of rays against (pre-sorted, optionally masked) tets.

    Returns per-chunk tensors; ``rgb`` excludes the background term.
    """
    if tet_mask is not None:
        face_point = geom["face_point"][tet_mask]
        normals = geom["normals"][tet_mask]
        sigma = attrs_sorted.sigma[tet_mask]
        color0 = attrs_sorted.color0[tet_mask]
        grad = attrs_sorted.color_grad[tet_mask]
        anchor = attrs_sorted.anchor[tet_mask]
    else:
        face_point = geom["face_point"]
        normals = geom["normals"]
        sigma = attrs_sorted.sigma
        color0 = attrs_sorted.color0
        grad = attrs_sorted.color_grad
        anchor = attrs_sorted.anchor

    T = face_point.shape[0]
    R = dirs.shape[0]
    if T == 0:
        zero = torch.zeros(R, 3, dtype=dirs.dtype)
        return {"rgb": zero, "trans": torch.ones(R, dtype=dirs.dtype)}

    num = ((face_point - origin) * normals).sum(-1)  # [T,4]
    den = (normals.reshape(-1, 3) @ dirs.T).reshape(T, 4, R)
    safe_den = torch.where(den == 0.0, torch.ones_like(den), den)
    allt = num.unsqueeze(-1) / safe_den

    neg = torch.full_like(allt, -_BIG)
    pos = torch.full_like(allt, _BIG)
    t_enter = torch.where(den < 0.0, allt, neg).amax(dim=1)  # [T,R]
    t_exit = torch.where(den > 0.0, allt, pos).amin(dim=1)
    parallel_miss = ((den == 0.0) & (num.unsqueeze(-1) < 0.0)).any(dim=1)
    t_in = t_enter.clamp(min=0.0)
    hit = (t_exit > t_in) & (t_exit < _BIG) & ~parallel_miss

    zeros = torch.zeros_like(t_in)
    t_in = torch.where(hit, t_in, zeros)
    t_out = torch.where(hit, t_exit, zeros)

    dir_len = dirs.norm(dim=-1)  # [R]
    d = sigma.unsqueeze(-1) * (t_out - t_in) * dir_len  # [T,R]
    a_c, b_c, alpha = segment_coefficients(d)

    base = color0 + ((origin - anchor) * grad).sum(-1, keepdim=True)  # [T,3]
    slope = grad @ dirs.T  # [T,R]

    one_minus = torch.where(hit, 1.0 - alpha, torch.ones_like(alpha))
    t_incl = torch.cumprod(one_minus, dim=0)
    ones_row = torch.ones(1, R, dtype=t_incl.dtype)
    t_excl = torch.cat([ones_row, t_incl[:-1]], dim=0)
    if opts.early_out > 0.0:
        keep = t_excl >= opts.early_out
    else:
        keep = torch.ones_like(t_excl, dtype=torch.bool)
    w = t_excl * keep

    wab = w * (a_c + b_c)
    rgb = wab.T @ base + (w * (a_c * t_in + b_c * t_out) * slope).sum(dim=0).unsqueeze(-1)
    masked_incl = torch.where(keep, t_incl, torch.ones_like(t_incl))
    trans = masked_incl.amin(dim=0)

    return {
        "rgb": rgb,
        "trans": trans,
        "t_in": t_in,
        "t_out": t_out,
        "depth": d,
        "alpha": alpha,
        "w": w,
        "hit": hit,
        "dir_len": dir_len,
        "sigma": sigma,
        "coef_a": a_c,
        "coef_b": b_c,
        "slope": slope,
        "base": base,
    }


def render_rays(V, tets, order, attrs, origin, dirs, opts=None, valid=None, chunk_callback=None):
    """Render arbitrary rays sharing one origin.

    ``order`` must be the visibility order for ``origin`` (see
    :func:`tetfield.sorting.visibility_order`).  Returns ``(rgb [R,3],
    trans [R])`` torch tensors; gradients flow into ``V`` and the attribute
    tensors.  ``chunk_callback(dict)`` receives the per-chunk matrices for
    loss terms or statistics that need per-segment data.
    """
    opts = opts or RenderOptions()
    geom = tet_geometry(V, torch.as_tensor(np.asarray(tets), dtype=torch.long))
    order_t = torch.as_tensor(np.asarray(order), dtype=torch.long)
    geom = {k: v[order_t] for k, v in geom.items()}
    attrs_sorted = attrs.reorder(order)

    origin_t = torch.as_tensor(np.asarray(origin), dtype=opts.dtype)
    dirs_t = torch.as_tensor(np.asarray(dirs), dtype=opts.dtype) if not torch.is_tensor(dirs) else dirs
    R = dirs_t.shape[0]
    T = geom["face_point"].shape[0]
    chunk = max(64, min(opts.chunk_rays, int(2_000_000 / max(T, 1))))

    bg = torch.as_tensor(opts.background, dtype=opts.dtype)
    rgb_out = []
    trans_out = []
    for lo in range(0, R, chunk):
        hi = min(lo + chunk, R)
        res = _ray_chunk(geom, attrs_sorted, origin_t, dirs_t[lo:hi], opts)
        rgb = res["rgb"] + res["trans"].unsqueeze(-1) * bg
        if chunk_callback is not None and "t_in" in res:
            res["slice"] = slice(lo, hi)
            res["tet_rows"] = np.asarray(order)
            chunk_callback(res)
        rgb_out.append(rgb)
        trans_out.append(res["trans"])
    rgb = torch.cat(rgb_out, dim=0)
    trans = torch.cat(trans_out, dim=0)
    if valid is not None:
        valid_t = torch.as_tensor(np.asarray(valid), dtype=torch.bool)
        rgb = torch.where(valid_t.unsqueeze(-1), rgb, bg.expand_as(rgb))
        trans = torch.where(valid_t, trans, torch.ones_like(trans))
    return rgb, trans


def render_pixel(mesh, attrs, order, ray, opts=None):
    """Composite a single ray; returns ``(rgb [3], transmittance)`` numpy."""
    opts = opts or RenderOptions()
    V = torch.as_tensor(mesh.points, dtype=opts.dtype)
    with torch.no_grad():
        rgb, trans = render_rays(
            V, mesh.tets, order, attrs, ray.origin, ray.dir[None, :], opts
        )
    return rgb[0].numpy(), float(trans[0])


def _row_blocks(cam, order, mesh_points, tets, block_rows):
    """Per-block tet masks from projected vertex bounding boxes (pinhole)."""
    px, py, ok = project_points(cam, mesh_points)
    vert_ok = ok[tets]  # [T,4]
    boundable = vert_ok.all(axis=1)
    px_t = px[tets]
    py_t = py[tets]
    x_lo = np.where(boundable, px_t.min(axis=1), -np.inf)
    x_hi = np.where(boundable, px_t.max(axis=1), np.inf)
    y_lo = np.where(boundable, py_t.min(axis=1), -np.inf)
    y_hi = np.where(boundable, py_t.max(axis=1), np.inf)
    x_visible = (x_hi >= 0) & (x_lo <= cam.width)
    masks = []
    for row0 in range(0, cam.height, block_rows):
        row1 = min(row0 + block_rows, cam.height)
        m = x_visible & (y_hi >= row0) & (y_lo <= row1)
        masks.append((row0, row1, m[np.asarray(order)]))
    return masks


def render_camera(V, tets, attrs, cam, opts=None, chunk_callback=None):
    """Render a full camera image; returns ``(rgb [H,W,3], trans [H,W])``
    torch tensors (differentiable)."""
    opts = opts or RenderOptions()
    tets_arr = np.asarray(tets)
    geom = tet_geometry(V, torch.as_tensor(tets_arr, dtype=torch.long))
    centers = geom["circumcenters"].detach().numpy()
    delta = centers - cam.origin
    power = np.einsum("tc,tc->t", delta, delta) - geom["circumradius_sq"].detach().numpy()
    order = sorting.sort_keys(power)
    order_t = torch.as_tensor(order, dtype=torch.long)
    geom = {k: v[order_t] for k, v in geom.items()}
    attrs_sorted = attrs.reorder(order)

    origin, dirs, valid = camera_rays(cam)
    origin_t = torch.as_tensor(origin, dtype=opts.dtype)
    dirs_t = torch.as_tensor(dirs, dtype=opts.dtype)
    bg = torch.as_tensor(opts.background, dtype=opts.dtype)

    T = len(tets_arr)
    rays_budget = max(64, min(opts.chunk_rays, 2_000_000 // max(T, 1)))
    rows_per_block = max(1, rays_budget // cam.width)
    use_prefilter = opts.prefilter and cam.model.kind == "pinhole"
    blocks = (
        _row_blocks(cam, order, np.asarray(V.detach().numpy(), dtype=np.float64), tets_arr, rows_per_block)
        if use_prefilter
        else [
            (r0, min(r0 + rows_per_block, cam.height), None)
            for r0 in range(0, cam.height, rows_per_block)
        ]
    )

    rgb_parts = []
    trans_parts = []
    for row0, row1, mask in blocks:
        sl = slice(row0 * cam.width, row1 * cam.width)
        tet_mask = torch.as_tensor(mask, dtype=torch.bool) if mask is not None else None
        res = _ray_chunk(geom, attrs_sorted, origin_t, dirs_t[sl], opts, tet_mask=tet_mask)
        rgb = res["rgb"] + res["trans"].unsqueeze(-1) * bg
        if chunk_callback is not None and "t_in" in res:
            res["slice"] = sl
            res["tet_rows"] = np.asarray(order)[mask] if mask is not None else np.asarray(order)
            chunk_callback(res)
        rgb_parts.append(rgb)
        trans_parts.append(res["trans"])
    rgb = torch.cat(rgb_parts, dim=0)
    trans = torch.cat(trans_parts, dim=0)
    if not np.all(valid):
        valid_t = torch.as_tensor(valid, dtype=torch.bool)
        rgb = torch.where(valid_t.unsqueeze(-1), rgb, bg.expand_as(rgb))
        trans = torch.where(valid_t, trans, torch.ones_like(trans))
    return rgb.reshape(cam.height, cam.width, 3), trans.reshape(cam.height, cam.width)


def render_image(mesh, attrs, cam, opts=None):
    """Deterministic inference render of a :class:`TetMesh`; one visibility
    order per camera origin, reused by every pixel."""
    opts = opts or RenderOptions()
    V = torch.as_tensor(mesh.points, dtype=opts.dtype)
    with torch.no_grad():
        rgb, trans = render_camera(V, mesh.tets, attrs, cam, opts)
    return ImageBuffer(
        pixels=rgb.numpy().astype(np.float32),
        transmittance=trans.numpy().astype(np.float32),
    )


def intersect_tet(ray, tet_verts):
    """Entry/exit distances of a ray against one tetrahedron, or ``None``.

    Plane-clipping form: per face, ``t = n.(v - o) / n.d`` with outward
    normals; entry faces have ``n.d < 0``, exit faces ``n.d > 0``; a miss is
    ``t_exit <= max(t_enter, 0)``.
    """
    v = np.asarray(tet_verts, dtype=np.float64)
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.dir, dtype=np.float64)
    t_enter = -np.inf
    t_exit = np.inf
    for f in _FACE_LOCAL:
        p0 = v[f[0]]
        n = np.cross(v[f[1]] - p0, v[f[2]] - p0)
        num = n @ (p0 - o)
        den = n @ d
        if den == 0.0:
            if num < 0.0:
                return None
            continue
        t = num / den
        if den < 0.0:
            t_enter = max(t_enter, t)
        else:
            t_exit = min(t_exit, t)
    if t_exit <= max(t_enter, 0.0):
        return None
    return max(t_enter, 0.0), t_exit
