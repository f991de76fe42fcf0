"""Brute-force reference implementations used as oracles.

Everything here is written independently of the production renderer: rays
are intersected against every tet exhaustively, segments are composited in
per-ray entry-distance order (not power order), and integrals can optionally
be evaluated by numerical quadrature instead of the closed form.  The SSIM
oracle evaluates the windowed statistics per pixel from the definition.

These functions are slow by design and meant for small test scenes and the
self-test command.
"""

from __future__ import annotations

import numpy as np

from .cameras import camera_rays

_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


def ray_segments(points, tets, origin, direction):
    """All (tet_index, t_in, t_out) cut by one ray, ascending in t_in.

    Vectorized plane clipping against every tet; entry times clamp to 0 for
    a ray starting inside a cell.
    """
    v = points[tets]  # [T,4,3]
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    t_enter = np.full(len(tets), -np.inf)
    t_exit = np.full(len(tets), np.inf)
    alive = np.ones(len(tets), dtype=bool)
    for f in _FACES:
        p0 = v[:, f[0]]
        n = np.cross(v[:, f[1]] - p0, v[:, f[2]] - p0)
        num = np.einsum("tc,tc->t", n, p0 - o)
        den = n @ d
        par = den == 0.0
        alive &= ~(par & (num < 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / den
        is_entry = den < 0.0
        is_exit = den > 0.0
        t_enter = np.where(is_entry, np.maximum(t_enter, t), t_enter)
        t_exit = np.where(is_exit, np.minimum(t_exit, t), t_exit)
    t_in = np.maximum(t_enter, 0.0)
    hit = alive & (t_exit > t_in) & np.isfinite(t_exit)
    idx = np.flatnonzero(hit)
    order = np.argsort(t_in[idx], kind="stable")
    idx = idx[order]
    return [(int(k), float(t_in[k]), float(t_exit[k])) for k in idx]


def segment_radiance(sigma, t_in, t_out, c_in, c_out, quadrature_steps=0):
    """(dC, alpha) for one constant-density, linear-color segment.

    With ``quadrature_steps`` > 0 the emission integral is evaluated by a
    midpoint rule instead of the closed form; ``t`` distances are Euclidean.
    """
    length = t_out - t_in
    d = sigma * length
    alpha = -np.expm1(-d)
    c_in = np.asarray(c_in, dtype=np.float64)
    c_out = np.asarray(c_out, dtype=np.float64)
    if quadrature_steps:
        n = int(quadrature_steps)
        h = length / n
        tm = (np.arange(n) + 0.5) * h
        frac = tm / length if length > 0 else np.zeros(n)
        trans = np.exp(-sigma * tm)
        weight = sigma * trans * h  # [n]
        colors = c_in[None, :] * (1.0 - frac[:, None]) + c_out[None, :] * frac[:, None]
        return weight @ colors, alpha
    if d < 1e-2:
        a = d / 2 - d**2 / 6 + d**3 / 24 - d**4 / 120
        b = d / 2 - d**2 / 3 + d**3 / 8 - d**4 / 30
    else:
        a = 1.0 - alpha / d
        b = alpha / d - np.exp(-d)
    return a * c_in + b * c_out, alpha


def render_ray_reference(
    points,
    tets,
    sigma,
    color0,
    color_grad,
    anchor,
    origin,
    direction,
    background=(0.0, 0.0, 0.0),
    early_out=0.0,
    quadrature_steps=0,
):
    """Composite one ray front-to-back in entry-distance order.

    Returns ``(rgb, transmittance, contributions)``; ``contributions`` lists
    ``(tet, t_in, t_out, w * alpha)`` per composited segment, with the same
    early-out semantics as the production renderer.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    dir_len = float(np.linalg.norm(d))
    segs = ray_segments(points, tets, o, d)
    color = np.zeros(3)
    trans = 1.0
    contributions = []
    for k, t_in, t_out in segs:
        if early_out > 0.0 and trans < early_out:
            break
        p_in = o + t_in * d
        p_out = o + t_out * d
        c_in = color0[k] + color_grad[k] @ (p_in - anchor[k])
        c_out = color0[k] + color_grad[k] @ (p_out - anchor[k])
        dc, alpha = segment_radiance(
            sigma[k],
            t_in * dir_len,
            t_out * dir_len,
            c_in,
            c_out,
            quadrature_steps=quadrature_steps,
        )
        color += trans * dc
        contributions.append((k, t_in, t_out, trans * alpha))
        trans *= 1.0 - alpha
    color += trans * np.asarray(background, dtype=np.float64)
    return color, trans, contributions


def render_image_reference(
    points, tets, sigma, color0, color_grad, anchor, cam,
    background=(0.0, 0.0, 0.0), early_out=0.0,
):
    """Exhaustive per-pixel reference render (slow; small images only)."""
    origin, dirs, valid = camera_rays(cam)
    img = np.zeros((cam.height * cam.width, 3))
    trans = np.ones(cam.height * cam.width)
    bg = np.asarray(background, dtype=np.float64)
    for i in range(len(dirs)):
        if not valid[i]:
            img[i] = bg
            continue
        img[i], trans[i], _ = render_ray_reference(
            points, tets, sigma, color0, color_grad, anchor,
            origin, dirs[i], background, early_out,
        )
    return img.reshape(cam.height, cam.width, 3), trans.reshape(cam.height, cam.width)


def _gaussian_kernel(window, sigma):
    r = np.arange(window) - (window - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def ssim_reference(img_a, img_b, window=11, sigma=1.5, data_range=1.0):
    """Direct-formula SSIM: per-pixel Gaussian-window statistics computed
    explicitly, edge-replicate padding, channel-mean map.

    Returns ``(mean_score, map [H, W])``.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    h, w, ch = a.shape
    half = window // 2
    k1d = _gaussian_kernel(window, sigma)
    k2d = np.outer(k1d, k1d)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    pad_a = np.pad(a, ((half, half), (half, half), (0, 0)), mode="edge")
    pad_b = np.pad(b, ((half, half), (half, half), (0, 0)), mode="edge")
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            wa = pad_a[y : y + window, x : x + window]
            wb = pad_b[y : y + window, x : x + window]
            val = 0.0
            for c in range(ch):
                mu_a = np.sum(k2d * wa[:, :, c])
                mu_b = np.sum(k2d * wb[:, :, c])
                var_a = np.sum(k2d * wa[:, :, c] ** 2) - mu_a**2
                var_b = np.sum(k2d * wb[:, :, c] ** 2) - mu_b**2
                cov = np.sum(k2d * wa[:, :, c] * wb[:, :, c]) - mu_a * mu_b
                val += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                    (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
                )
            out[y, x] = val / ch
    return float(out.mean()), out


def distortion_reference(t_in, t_out, sigma):
    """Direct double-loop distortion loss for one ray's segments."""
    t_in = np.asarray(t_in, dtype=np.float64)
    t_out = np.asarray(t_out, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    w = sigma * (t_out - t_in)
    m = 0.5 * (t_in + t_out)
    total = 0.0
    for j in range(len(w)):
        for k in range(len(w)):
            total += w[j] * w[k] * abs(m[j] - m[k])
    total += np.sum(w * w * (t_out - t_in)) / 3.0
    return float(total)
