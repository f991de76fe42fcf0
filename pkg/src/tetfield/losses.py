"""Training losses: L1 + SSIM photometric mix, distortion, weight decay.

SSIM uses an 11x11 Gaussian window (sigma 1.5), edge-replicate padding, and
a per-channel-mean map averaged over all pixels; :func:`ssim_map` is also
what densification back-projects per pixel.  The distortion term follows the
mip-NeRF 360 form applied to density: segment mass is optical depth
``sigma * length`` and midpoints live in normalized ray distance.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


class DimensionMismatchError(ValueError):
    pass


def _gaussian_kernel1d(window, sigma, dtype):
    r = torch.arange(window, dtype=dtype) - (window - 1) / 2.0
    k = torch.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def ssim_map(img_a, img_b, window=11, sigma=1.5, data_range=1.0):
    """Per-pixel SSIM map, shape [H, W] (channel mean)."""
    if img_a.shape != img_b.shape:
        raise DimensionMismatchError(f"{tuple(img_a.shape)} vs {tuple(img_b.shape)}")
    a = img_a.permute(2, 0, 1).unsqueeze(0)  # [1,C,H,W]
    b = img_b.permute(2, 0, 1).unsqueeze(0)
    ch = a.shape[1]
    k1 = _gaussian_kernel1d(window, sigma, a.dtype)
    kx = k1.view(1, 1, 1, -1).expand(ch, 1, 1, window)
    ky = k1.view(1, 1, -1, 1).expand(ch, 1, window, 1)
    half = window // 2

    def blur(x):
        x = F.pad(x, (half, half, half, half), mode="replicate")
        x = F.conv2d(x, kx, groups=ch)
        return F.conv2d(x, ky, groups=ch)

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return (num / den).squeeze(0).mean(dim=0)


def ssim(img_a, img_b, window=11, sigma=1.5, data_range=1.0):
    return ssim_map(img_a, img_b, window, sigma, data_range).mean()


def photometric_loss(render, gt, lambda_ssim=0.2):
    """(1 - l) * L1 + l * (1 - SSIM) between two [H, W, 3] images."""
    if render.shape != gt.shape:
        raise DimensionMismatchError(f"{tuple(render.shape)} vs {tuple(gt.shape)}")
    l1 = (render - gt).abs().mean()
    if lambda_ssim == 0.0:
        return l1
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(render, gt))


def distortion_loss(t_in, t_out, sigma):
    """Distortion of one ray's ordered segments, in the units given.

    ``w_j = sigma_j (t_out_j - t_in_j)``; pairwise term plus the
    intra-segment term ``w^2 len / 3``.
    """
    t_in = torch.as_tensor(np.asarray(t_in, dtype=np.float64))
    t_out = torch.as_tensor(np.asarray(t_out, dtype=np.float64))
    sigma = torch.as_tensor(np.asarray(sigma, dtype=np.float64))
    length = t_out - t_in
    w = sigma * length
    m = 0.5 * (t_in + t_out)
    pair = (w[:, None] * w[None, :] * (m[:, None] - m[None, :]).abs()).sum()
    return float(pair + (w.square() * length).sum() / 3.0)


def distortion_loss_matrix(t_in, t_out, depth, hit):
    """Batched distortion over [tets, rays] matrices in visibility order.

    ``depth`` is the per-segment optical depth (the segment mass); midpoints
    and lengths are normalized per ray by the farthest exit distance, so the
    loss is scale-free.  Segments are assumed sorted by entry distance along
    dim 0 (power order guarantees this).  Returns the mean over rays.
    """
    far = t_out.detach().amax(dim=0).clamp(min=1e-12)  # [R]
    tn_in = t_in / far
    tn_out = t_out / far
    w = torch.where(hit, depth, torch.zeros_like(depth))
    m = 0.5 * (tn_in + tn_out)
    length = tn_out - tn_in
    cum_w = torch.cumsum(w, dim=0) - w
    cum_wm = torch.cumsum(w * m, dim=0) - w * m
    pair = 2.0 * (w * (m * cum_w - cum_wm)).sum(dim=0)
    self_term = (w.square() * length).sum(dim=0) / 3.0
    return (pair + self_term).mean()


def weight_decay(grid):
    """Normalized L2 decay: sum over levels of the mean squared feature."""
    total = 0.0
    for p in grid.level_features:
        total = total + p.square().mean()
    return total


def psnr(render, gt):
    mse = float(((np.asarray(render) - np.asarray(gt)) ** 2).mean())
    if mse <= 0:
        return float("inf")
    return -10.0 * np.log10(mse)
