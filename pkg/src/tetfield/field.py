"""Multiresolution hash-grid radiance field and per-tet attribute heads.

A query takes a tet's center and circumradius, contracts the center into the
unit cube, reads every grid level with trilinear interpolation, and scales
level ``l`` by ``erf(1 / sqrt(8 sigma^2 n_l^2))`` where ``sigma`` is the
query radius in grid coordinates.  Small shallow heads then map the
concatenated features to a density, spherical-harmonics color coefficients,
and a monochrome linear color slope whose magnitude is bounded so colors stay
non-negative inside the circumsphere:

    sigma = exp(h_sigma(b))
    c0    = softplus_beta10(h_sh(b) . Y(view_dir))        per channel
    grad  = (min_channel c0 / R) * h_delta(b) / sqrt(1 + |h_delta(b)|^2)

The slope bound uses the view-evaluated base color so that
``c(p) = c0 + grad . (p - anchor)`` cannot go below zero for
``|p - anchor| <= R`` (the bound is tight exactly on that sphere).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

_SQRT8 = math.sqrt(8.0)
_HASH_PRIMES = (1, 2654435761, 805459861)


def contract(x):
    """Radial contraction mapping all of space into the ball of radius 2:
    identity inside the unit ball, ``(2 - 1/|x|) x/|x|`` outside."""
    norm = x.norm(dim=-1, keepdim=True)
    safe = norm.clamp(min=1.0)
    outside = (2.0 - 1.0 / safe) * x / safe
    return torch.where(norm <= 1.0, x, outside)


def contract_jacobian_norm(x):
    """Operator norm of the contraction Jacobian (largest singular value).

    Inside the unit ball the map is the identity; outside, the tangential
    stretch ``(2s - 1)/s^2`` dominates the radial ``1/s^2``.
    """
    norm = x.norm(dim=-1)
    s = norm.clamp(min=1.0)
    return torch.where(norm <= 1.0, torch.ones_like(norm), (2.0 * s - 1.0) / s.square())


def downweight(radius, n_level):
    """Per-level anti-aliasing attenuation ``erf(1/sqrt(8 r^2 n^2))``.

    ``radius`` is the query radius in grid units (same units whose inverse
    ``n_level`` measures).  Monotonically decreasing in ``radius``; equals 1
    at radius 0 and tends to 0 as the radius grows.
    """
    if not torch.is_tensor(radius):
        radius = torch.as_tensor(radius, dtype=torch.float64)
    r = radius.clamp(min=1e-12)
    return torch.erf(1.0 / (_SQRT8 * r * n_level))


# Real spherical harmonics, positive-sign convention; band 1 is
# sqrt(3/4pi) * (y, z, x).
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
       1.0925484305920792, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
       0.3731763325901154, 0.4570457994644658, 1.445305721320277,
       0.5900435899266435)


def sh_basis(dirs, degree):
    """Real SH basis values for unit directions, bands 0..``degree`` (<= 3)."""
    if not 0 <= degree <= 3:
        raise ValueError("sh degree must be in [0, 3]")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [torch.full_like(x, _C0)]
    if degree >= 1:
        out += [_C1 * y, _C1 * z, _C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            _C2[0] * x * y,
            _C2[1] * y * z,
            _C2[2] * (3.0 * zz - 1.0),
            _C2[3] * x * z,
            _C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            _C3[0] * y * (3.0 * xx - yy),
            _C3[1] * x * y * z,
            _C3[2] * y * (5.0 * zz - 1.0),
            _C3[3] * z * (5.0 * zz - 3.0),
            _C3[4] * x * (5.0 * zz - 1.0),
            _C3[5] * z * (xx - yy),
            _C3[6] * x * (xx - 3.0 * yy),
        ]
    return torch.stack(out, dim=-1)


def num_sh_coeffs(degree):
    return (degree + 1) ** 2


@dataclass
class FieldConfig:
    levels: int = 8
    n_min: int = 16
    n_max: int = 512
    log2_table_size: int = 15
    features: int = 2
    hidden: int = 32
    sh_degree: int = 2
    query_center: str = "centroid"  # or "circumcenter"
    scene_center: tuple = (0.0, 0.0, 0.0)
    scene_radius: float = 1.0

    def resolutions(self):
        if self.levels == 1:
            return [self.n_min]
        growth = (self.n_max / self.n_min) ** (1.0 / (self.levels - 1))
        return [int(math.floor(self.n_min * growth**l)) for l in range(self.levels)]


class HashGrid(nn.Module):
    """Instant-NGP style multilevel feature grid over the unit cube.

    Coarse levels that fit in the table are stored densely; finer levels are
    hashed with the usual prime-XOR scheme.  ``forward`` interpolates all
    levels trilinearly and scales each by its downweighting factor.
    """

    def __init__(self, cfg: FieldConfig, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.resolutions = cfg.resolutions()
        table = 2**cfg.log2_table_size
        self.dense = [(n + 1) ** 3 <= table for n in self.resolutions]
        sizes = [(n + 1) ** 3 if d else table for n, d in zip(self.resolutions, self.dense)]
        self.level_features = nn.ParameterList(
            nn.Parameter(torch.empty(s, cfg.features, dtype=dtype).uniform_(-1e-4, 1e-4))
            for s in sizes
        )

    def _corner_indices(self, i, level):
        n = self.resolutions[level]
        if self.dense[level]:
            side = n + 1
            return (i[..., 0] * side + i[..., 1]) * side + i[..., 2]
        h = i[..., 0] * _HASH_PRIMES[0]
        h = torch.bitwise_xor(h, i[..., 1] * _HASH_PRIMES[1])
        h = torch.bitwise_xor(h, i[..., 2] * _HASH_PRIMES[2])
        return h % self.level_features[level].shape[0]

    def forward(self, u, query_radius):
        """Interpolated features at unit-cube points ``u`` with per-point
        query radii (grid units); returns ``[N, levels * features]``."""
        outs = []
        for level, n in enumerate(self.resolutions):
            scaled = u * n
            i0 = scaled.floor().long().clamp_(min=0, max=n - 1)
            frac = scaled - i0
            feats = self.level_features[level]
            acc = 0.0
            for corner in range(8):
                off = ((corner >> 2) & 1, (corner >> 1) & 1, corner & 1)
                idx = self._corner_indices(
                    i0 + torch.tensor(off, device=u.device, dtype=torch.long), level
                )
                w = 1.0
                for axis in range(3):
                    t = frac[..., axis]
                    w = w * (t if off[axis] else 1.0 - t)
                acc = acc + feats[idx] * w.unsqueeze(-1)
            phi = downweight(query_radius, float(n)).to(u.dtype)
            outs.append(acc * phi.unsqueeze(-1))
        return torch.cat(outs, dim=-1)


def _mlp(n_in, hidden, n_out, dtype):
    return nn.Sequential(
        nn.Linear(n_in, hidden, dtype=dtype),
        nn.ReLU(),
        nn.Linear(hidden, n_out, dtype=dtype),
    )


class RadianceField(nn.Module):
    """Hash grid plus the shallow per-tet attribute heads."""

    def __init__(self, cfg: FieldConfig, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        self.grid = HashGrid(cfg, dtype=dtype)
        n_in = cfg.levels * cfg.features
        self.n_sh = num_sh_coeffs(cfg.sh_degree)
        self.h_sigma = _mlp(n_in, cfg.hidden, 1, dtype)
        self.h_sh = _mlp(n_in, cfg.hidden, 3 * self.n_sh, dtype)
        self.h_delta = _mlp(n_in, cfg.hidden, 3, dtype)

    def grid_parameters(self):
        return list(self.grid.parameters())

    def head_parameters(self):
        return (
            list(self.h_sigma.parameters())
            + list(self.h_sh.parameters())
            + list(self.h_delta.parameters())
        )

    def query(self, centers_world, radii_world):
        """Downweighted grid features at (contracted) world-space centers."""
        center = torch.as_tensor(self.cfg.scene_center, dtype=centers_world.dtype)
        x = (centers_world - center) / self.cfg.scene_radius
        c = contract(x)
        u = (c + 2.0) / 4.0
        jn = contract_jacobian_norm(x)
        # Grid units: the contracted domain [-2, 2] spans one cube side.
        radius_grid = (radii_world / self.cfg.scene_radius) * jn / 4.0
        return self.grid(u, radius_grid)

    def attributes(self, b, radii_world, view_dirs):
        """Per-tet density, base color, and bounded color slope.

        ``radii_world`` must already be clamped (see ``TetMesh.clamped_radii``)
        and ``view_dirs`` unit-normalized.
        """
        sigma = torch.exp(self.h_sigma(b).squeeze(-1))
        coeffs = self.h_sh(b).reshape(-1, 3, self.n_sh)
        y = sh_basis(view_dirs, self.cfg.sh_degree)
        c0 = torch.nn.functional.softplus(
            torch.einsum("ncs,ns->nc", coeffs, y), beta=10.0
        )
        h = self.h_delta(b)
        bound = c0.min(dim=1).values / radii_world.clamp(min=1e-12)
        grad = bound.unsqueeze(-1) * h / torch.sqrt(1.0 + h.square().sum(-1, keepdim=True))
        return sigma, c0, grad


def tet_color_at(c0, grad, anchor, p):
    """Linear per-tet color model: ``c0 + grad . (p - anchor)`` on every
    channel (affine everywhere, meaningful inside the tet)."""
    offset = ((p - anchor) * grad).sum(-1, keepdim=True)
    return c0 + offset
