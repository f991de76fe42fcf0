"""Surface-mesh extraction by peak color contribution thresholding.

A tet's contribution record is the maximum, over all training pixels and
views, of the luminance (Rec. 709) of its weighted color contribution
``w * dC``.  Tets at or above the threshold are kept, grouped into
face-connected components, and each component's boundary triangles are
emitted with outward winding.  The boundary of a face-connected tet union is
closed except at non-manifold pinches (two kept regions meeting only at an
edge or vertex), which the edge audit reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import BOUNDARY
from .render import RenderOptions, render_camera

_LUMA = (0.2126, 0.7152, 0.0722)
_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


class EmptySelectionError(ValueError):
    pass


def peak_contribution(V, tets, attrs_fn, cameras, background=(0.0, 0.0, 0.0), dtype=torch.float64):
    """Per-tet running max of luminance(w * dC) over all pixels and cameras.

    ``attrs_fn(cam)`` supplies the per-camera render attributes.  Early-out
    is disabled so the peak is exact.
    """
    n_tets = len(tets)
    peak = np.zeros(n_tets)
    opts = RenderOptions(background=background, early_out=0.0, dtype=dtype)

    for cam in cameras:
        def callback(res):
            # dC = (A+B) * base + (A t_in + B t_out) * slope; luminance is
            # linear, and the slope term adds equally to all channels.
            lum_base = (
                res["base"][:, 0] * _LUMA[0]
                + res["base"][:, 1] * _LUMA[1]
                + res["base"][:, 2] * _LUMA[2]
            )
            ab = res["coef_a"] + res["coef_b"]
            ramp = res["coef_a"] * res["t_in"] + res["coef_b"] * res["t_out"]
            lum = res["w"] * (ab * lum_base.unsqueeze(-1) + ramp * res["slope"])
            best = lum.amax(dim=1).detach().to(torch.float64).numpy()
            rows = res["tet_rows"]
            np.maximum.at(peak, rows, best)

        with torch.no_grad():
            render_camera(V, tets, attrs_fn(cam), cam, opts, chunk_callback=callback)
    return peak


@dataclass
class SurfaceMesh:
    vertices: np.ndarray  # [n, 3]
    triangles: np.ndarray  # [F, 3] indices into vertices, outward wound
    tri_components: np.ndarray  # [F] component label per triangle
    n_components: int
    closed: list  # per-component closed-edge audit result


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def extract_surface(contribution, mesh, threshold=0.1):
    """Threshold tets, label face-connected components, emit boundaries.

    Raises :class:`EmptySelectionError` when nothing passes the threshold.
    """
    keep = np.asarray(contribution) >= threshold
    kept = np.flatnonzero(keep)
    if len(kept) == 0:
        raise EmptySelectionError(f"no tet reaches contribution {threshold}")

    uf = _UnionFind(mesh.num_tets)
    for t in kept:
        for j in range(4):
            n = int(mesh.neighbors[t, j])
            if n != BOUNDARY and keep[n]:
                uf.union(int(t), n)
    roots = {}
    labels = np.full(mesh.num_tets, -1, dtype=np.int64)
    for t in kept:
        r = uf.find(int(t))
        labels[t] = roots.setdefault(r, len(roots))

    tris = []
    tri_comp = []
    for t in kept:
        for j in range(4):
            n = int(mesh.neighbors[t, j])
            if n == BOUNDARY or not keep[n]:
                f = _FACES[j]
                tris.append([int(mesh.tets[t, f[0]]), int(mesh.tets[t, f[1]]), int(mesh.tets[t, f[2]])])
                tri_comp.append(labels[t])
    tris = np.asarray(tris, dtype=np.int64)
    tri_comp = np.asarray(tri_comp, dtype=np.int64)

    used = np.unique(tris)
    remap = np.full(len(mesh.points), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    closed = []
    for comp in range(len(roots)):
        edges = {}
        for tri in tris[tri_comp == comp]:
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(e), max(e))
                edges[key] = edges.get(key, 0) + 1
        closed.append(all(c == 2 for c in edges.values()))
    return SurfaceMesh(
        vertices=mesh.points[used].copy(),
        triangles=remap[tris],
        tri_components=tri_comp,
        n_components=len(roots),
        closed=closed,
    )
