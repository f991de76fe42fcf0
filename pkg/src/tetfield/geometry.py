"""Point clouds, robust Delaunay tetrahedralization, and mesh derived data.

The tetrahedralization is built incrementally (Bowyer-Watson with a
visibility walk) on top of the exact predicates in :mod:`tetfield.predicates`.
The convex hull is closed off with a single symbolic vertex "at infinity"
rather than a finite enclosing simplex: a finite super-simplex can leave
concavities in the hull after removal, while the symbolic vertex makes hull
coverage exact by construction.  Hull faces of the finished mesh are marked
``BOUNDARY``.

A finished :class:`TetMesh` is immutable; construction is single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .predicates import (
    incircle_on_facet_sos,
    insphere,
    insphere_sos,
    orient3d,
)

BOUNDARY = -1
_INF = -1  # symbolic vertex at infinity (construction only)

# Face j is opposite vertex j; triples are wound so the right-hand normal
# points out of a positively oriented cell.
_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


class GeometryError(Exception):
    pass


class InsufficientPointsError(GeometryError):
    pass


class AllCoplanarError(GeometryError):
    pass


class DegenerateTetError(GeometryError):
    pass


@dataclass(frozen=True)
class Tetra:
    """Record view of one tetrahedron of a :class:`TetMesh`."""

    verts: tuple
    neighbors: tuple
    circumcenter: np.ndarray
    circumradius_sq: float
    centroid: np.ndarray


def circumsphere(verts):
    """Circumcenter and squared circumradius of a single tetrahedron.

    ``verts`` is a (4, 3) array.  Raises :class:`DegenerateTetError` when the
    four points are coplanar within floating-point tolerance.
    """
    v = np.asarray(verts, dtype=np.float64)
    d = v[1:] - v[0]
    a = 2.0 * d
    rhs = np.sum(d * d, axis=1)
    det = np.linalg.det(a)
    scale = np.max(np.abs(d)) or 1.0
    if abs(det) <= 1e-12 * (2.0 * scale) ** 3:
        raise DegenerateTetError("coplanar vertices")
    local = np.linalg.solve(a, rhs)
    center = v[0] + local
    return center, float(local @ local)


def centroid(verts):
    """Arithmetic mean of the four vertices (defined even when degenerate)."""
    return np.asarray(verts, dtype=np.float64).mean(axis=0)


def _circumspheres_bulk(points, tets, fallback_radius_sq):
    """Vectorized circumcenters; near-singular tets fall back to their
    centroid with a sentinel radius (clamped downstream anyway)."""
    v = points[tets]  # [T,4,3]
    d = v[:, 1:] - v[:, :1]
    a = 2.0 * d
    rhs = np.sum(d * d, axis=2)
    det = np.linalg.det(a)
    scale = np.max(np.abs(d), axis=(1, 2))
    scale[scale == 0.0] = 1.0
    bad = np.abs(det) <= 1e-14 * (2.0 * scale) ** 3
    centers = np.empty((len(tets), 3))
    r_sq = np.empty(len(tets))
    good = ~bad
    if np.any(good):
        local = np.linalg.solve(a[good], rhs[good][..., None])[..., 0]
        centers[good] = v[good, 0] + local
        r_sq[good] = np.sum(local * local, axis=1)
    if np.any(bad):
        centers[bad] = v[bad].mean(axis=1)
        r_sq[bad] = fallback_radius_sq
    return centers, r_sq


class TetMesh:
    """Delaunay tetrahedralization with cached per-tet derived quantities.

    Attributes
    ----------
    points : (n, 3) float64 array
    tets : (T, 4) int32 array, positively oriented vertex indices
    neighbors : (T, 4) int32 array; ``neighbors[t, j]`` is the tet across the
        face opposite vertex ``j``, or ``BOUNDARY``
    circumcenters : (T, 3) float64
    circumradius_sq : (T,) float64
    centroids : (T, 3) float64
    vertex_to_tet : (n,) int32; an incident tet per vertex (-1 if unused)
    """

    def __init__(self, points, tets, neighbors):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int32)
        self.neighbors = np.ascontiguousarray(neighbors, dtype=np.int32)
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        self.scene_diameter = float(np.linalg.norm(hi - lo))
        self.circumcenters, self.circumradius_sq = _circumspheres_bulk(
            self.points, self.tets, fallback_radius_sq=self.scene_diameter**2
        )
        self.centroids = self.points[self.tets].mean(axis=1)
        self.vertex_to_tet = np.full(len(self.points), -1, dtype=np.int32)
        for t in range(len(self.tets) - 1, -1, -1):
            self.vertex_to_tet[self.tets[t]] = t

    @property
    def num_tets(self):
        return len(self.tets)

    def tet(self, i):
        return Tetra(
            verts=tuple(int(v) for v in self.tets[i]),
            neighbors=tuple(int(v) for v in self.neighbors[i]),
            circumcenter=self.circumcenters[i].copy(),
            circumradius_sq=float(self.circumradius_sq[i]),
            centroid=self.centroids[i].copy(),
        )

    def clamped_radii(self):
        """Circumradii clamped to the scene bounding diameter, for field
        queries and color-gradient bounds (near-degenerate tets otherwise
        produce unusable radii)."""
        return np.minimum(np.sqrt(self.circumradius_sq), self.scene_diameter)

    def canonical_tets(self):
        """Tets as a set of sorted index 4-tuples (for comparisons)."""
        return {tuple(sorted(int(v) for v in row)) for row in self.tets}

    def face_triples(self):
        """(T, 4, 3) vertex indices of each face, wound outward."""
        t = self.tets
        return np.stack([t[:, list(f)] for f in _FACES], axis=1)


# ---------------------------------------------------------------------------
# Incremental construction


def _collinear_exact(a, b, c):
    F = Fraction
    ux, uy, uz = F(b[0]) - F(a[0]), F(b[1]) - F(a[1]), F(b[2]) - F(a[2])
    vx, vy, vz = F(c[0]) - F(a[0]), F(c[1]) - F(a[1]), F(c[2]) - F(a[2])
    return (
        uy * vz - uz * vy == 0
        and uz * vx - ux * vz == 0
        and ux * vy - uy * vx == 0
    )


class _Builder:
    def __init__(self, pts):
        self.pts = pts  # list of (x, y, z) float tuples
        self.cell_verts = []  # 4-tuples of vertex index or _INF
        self.cell_adj = []  # 4-lists of cell ids
        self.alive = []
        self.free = []
        self.last_finite = -1

    # -- cell bookkeeping

    def _new_cell(self, verts):
        if self.free:
            cid = self.free.pop()
            self.cell_verts[cid] = verts
            self.cell_adj[cid] = [-1, -1, -1, -1]
            self.alive[cid] = True
        else:
            cid = len(self.cell_verts)
            self.cell_verts.append(verts)
            self.cell_adj.append([-1, -1, -1, -1])
            self.alive.append(True)
        return cid

    def _kill(self, cid):
        self.alive[cid] = False
        self.free.append(cid)

    def _is_infinite(self, cid):
        return _INF in self.cell_verts[cid]

    def _facet(self, cid, j):
        v = self.cell_verts[cid]
        f = _FACES[j]
        return (v[f[0]], v[f[1]], v[f[2]])

    # -- predicates

    def _conflict(self, p, pidx, cid):
        v = self.cell_verts[cid]
        try:
            k = v.index(_INF)
        except ValueError:
            pa, pb, pc, pd = (self.pts[i] for i in v)
            return insphere_sos(pa, pb, pc, pd, p, v[0], v[1], v[2], v[3], pidx) > 0
        # Infinite cell: conflict iff p lies strictly beyond the hull facet,
        # or exactly on its plane and inside its circumcircle.  The stored
        # winding of the facet is not canonical, so orient it outward using
        # the off-facet vertex of the inner (always finite) neighbor.
        h = self._facet(cid, k)
        inner = self.cell_adj[cid][k]
        witness = next(
            w for w in self.cell_verts[inner] if w not in h and w != _INF
        )
        ha, hb, hc = self.pts[h[0]], self.pts[h[1]], self.pts[h[2]]
        if orient3d(ha, hb, hc, self.pts[witness]) > 0:
            h = (h[0], h[2], h[1])
            hb, hc = hc, hb
        o = orient3d(ha, hb, hc, p)
        if o != 0:
            return o > 0
        return incircle_on_facet_sos(ha, hb, hc, p, h[0], h[1], h[2], pidx) > 0

    def _locate(self, p):
        """Walk to a cell in conflict with p (always exists)."""
        cid = self.last_finite
        cap = 4 * len(self.cell_verts) + 64
        for step in range(cap):
            v = self.cell_verts[cid]
            moved = False
            for jj in range(4):
                j = (jj + step) % 4
                f = _FACES[j]
                ta, tb, tc = self.pts[v[f[0]]], self.pts[v[f[1]]], self.pts[v[f[2]]]
                if orient3d(ta, tb, tc, p) > 0:
                    nid = self.cell_adj[cid][j]
                    if self._is_infinite(nid):
                        return nid
                    cid = nid
                    moved = True
                    break
            if not moved:
                return cid
        # Defensive fallback; the walk provably terminates on Delaunay meshes.
        for cid in range(len(self.cell_verts)):
            if self.alive[cid] and not self._is_infinite(cid):
                v = self.cell_verts[cid]
                if all(
                    orient3d(
                        self.pts[v[f[0]]], self.pts[v[f[1]]], self.pts[v[f[2]]], p
                    )
                    <= 0
                    for f in _FACES
                ):
                    return cid
        raise GeometryError("point location failed")

    # -- construction

    def init_first_cell(self, order):
        """Pick the first four affinely independent points along ``order``.

        Returns the list of remaining (deferred + rest) indices to insert.
        """
        pts = self.pts
        i0 = order[0]
        rest = list(order[1:])
        i1 = next((i for i in rest if pts[i] != pts[i0]), None)
        if i1 is None:
            raise AllCoplanarError("all points coincide")
        rest.remove(i1)
        i2 = next(
            (i for i in rest if not _collinear_exact(pts[i0], pts[i1], pts[i])), None
        )
        if i2 is None:
            raise AllCoplanarError("all points collinear")
        rest.remove(i2)
        i3 = None
        for i in rest:
            if orient3d(pts[i0], pts[i1], pts[i2], pts[i]) != 0:
                i3 = i
                break
        if i3 is None:
            raise AllCoplanarError("all points coplanar")
        rest.remove(i3)
        if orient3d(pts[i0], pts[i1], pts[i2], pts[i3]) < 0:
            i2, i3 = i3, i2

        c0 = self._new_cell((i0, i1, i2, i3))
        edge_map = {}
        for j in range(4):
            t = self._facet(c0, j)
            nid = self._new_cell((t[0], t[2], t[1], _INF))
            self.cell_adj[nid][3] = c0
            self.cell_adj[c0][j] = nid
            self._glue_lateral(nid, edge_map)
        self.last_finite = c0
        return rest

    def _glue_lateral(self, cid, edge_map):
        """Glue faces 0..2 of a freshly created cell via its boundary edges.

        Face j (apex at slot 3) meets its sibling across the boundary-facet
        edge spanned by the two non-apex vertices other than vertex j.
        """
        v = self.cell_verts[cid]
        for j, edge in ((0, (v[1], v[2])), (1, (v[0], v[2])), (2, (v[0], v[1]))):
            key = (edge[0], edge[1]) if edge[0] <= edge[1] else (edge[1], edge[0])
            other = edge_map.pop(key, None)
            if other is None:
                edge_map[key] = (cid, j)
            else:
                ocid, oj = other
                self.cell_adj[cid][j] = ocid
                self.cell_adj[ocid][oj] = cid

    def insert(self, pidx):
        p = self.pts[pidx]
        seed = self._locate(p)
        for w in self.cell_verts[seed]:
            if w != _INF and self.pts[w] == p:
                return False  # exact duplicate: skip
        conflict = {seed}
        stack = [seed]
        boundary = []  # (facet triple, survivor cell, survivor face)
        while stack:
            cid = stack.pop()
            for j in range(4):
                nid = self.cell_adj[cid][j]
                if nid in conflict:
                    continue
                if self._conflict(p, pidx, nid):
                    conflict.add(nid)
                    stack.append(nid)
                else:
                    mirror = self.cell_adj[nid].index(cid)
                    boundary.append((self._facet(cid, j), nid, mirror))
        for cid in conflict:
            self._kill(cid)
        edge_map = {}
        finite_cell = -1
        for triple, survivor, sface in boundary:
            verts = (triple[0], triple[2], triple[1], pidx)
            if _INF not in triple:
                # The facet's stored winding depends on whether the dying
                # cell was finite; fix the new cell's orientation exactly.
                o = orient3d(
                    self.pts[verts[0]],
                    self.pts[verts[1]],
                    self.pts[verts[2]],
                    p,
                )
                if o < 0:
                    verts = (triple[0], triple[1], triple[2], pidx)
                elif o == 0:
                    raise GeometryError("flat cell in star fill")
                finite = True
            else:
                finite = False
            cid = self._new_cell(verts)
            self.cell_adj[cid][3] = survivor
            self.cell_adj[survivor][sface] = cid
            self._glue_lateral(cid, edge_map)
            if finite:
                finite_cell = cid
        if edge_map:
            raise GeometryError("cavity boundary failed to close")
        self.last_finite = finite_cell
        return True

    def finish(self):
        ids = [
            cid
            for cid in range(len(self.cell_verts))
            if self.alive[cid] and not self._is_infinite(cid)
        ]
        remap = {cid: t for t, cid in enumerate(ids)}
        tets = np.array([self.cell_verts[cid] for cid in ids], dtype=np.int32)
        neighbors = np.full((len(ids), 4), BOUNDARY, dtype=np.int32)
        for t, cid in enumerate(ids):
            for j in range(4):
                nid = self.cell_adj[cid][j]
                if not self._is_infinite(nid):
                    neighbors[t, j] = remap[nid]
        return tets, neighbors


def delaunay(points):
    """Delaunay tetrahedralization of a point set.

    Deterministic for a fixed input order; cospherical degeneracies are
    resolved by index-keyed symbolic perturbation, so the result for point
    sets in general position is independent of input order.  Exact duplicate
    points are skipped (they belong to no tet).
    """
    pts_arr = np.asarray(points, dtype=np.float64)
    if pts_arr.ndim != 2 or pts_arr.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    if not np.all(np.isfinite(pts_arr)):
        raise ValueError("points must be finite")
    if len(pts_arr) < 4:
        raise InsufficientPointsError("need at least 4 points")

    pts = [tuple(row) for row in pts_arr.tolist()]
    b = _Builder(pts)
    rest = b.init_first_cell(list(range(len(pts))))
    for pidx in rest:
        b.insert(pidx)
    tets, neighbors = b.finish()
    return TetMesh(pts_arr, tets, neighbors)


# ---------------------------------------------------------------------------
# Audits


def check_adjacency(mesh):
    """Verify neighbor symmetry and the 3-shared-vertices property.

    Returns a list of violation descriptions (empty when consistent).
    """
    bad = []
    for t in range(mesh.num_tets):
        mine = set(int(v) for v in mesh.tets[t])
        for j in range(4):
            n = int(mesh.neighbors[t, j])
            if n == BOUNDARY:
                continue
            theirs = set(int(v) for v in mesh.tets[n])
            if len(mine & theirs) != 3:
                bad.append(f"tet {t} face {j}: shares {len(mine & theirs)} verts with {n}")
            if t not in mesh.neighbors[n]:
                bad.append(f"tet {t} -> {n} not symmetric")
    return bad


def audit_empty_sphere(mesh, rel_tol=1e-9):
    """Brute-force empty-circumsphere audit.

    Flags candidate violations with a vectorized power test, then confirms
    each candidate with the exact predicate.  Returns a list of
    ``(tet, vertex)`` pairs that are *exactly* inside a foreign circumsphere.
    """
    pts = mesh.points
    violations = []
    for t in range(mesh.num_tets):
        c = mesh.circumcenters[t]
        r_sq = mesh.circumradius_sq[t]
        d_sq = np.sum((pts - c) ** 2, axis=1)
        slack = rel_tol * max(r_sq, 1.0)
        cand = np.flatnonzero(d_sq < r_sq - slack)
        if len(cand) == 0:
            continue
        members = set(int(v) for v in mesh.tets[t])
        quad = [tuple(pts[int(v)]) for v in mesh.tets[t]]
        for v in cand:
            if int(v) in members:
                continue
            if insphere(*quad, tuple(pts[int(v)])) > 0:
                violations.append((t, int(v)))
    return violations


def check_orientation(mesh):
    """Exact positive-orientation check for every tet; returns bad tet ids."""
    pts = mesh.points
    bad = []
    for t in range(mesh.num_tets):
        quad = [tuple(pts[int(v)]) for v in mesh.tets[t]]
        if orient3d(*quad) <= 0:
            bad.append(t)
    return bad


def check_hull_coverage(mesh, samples=200, seed=0, tol=1e-9):
    """Sample random convex combinations of input points and verify each is
    covered by some tet (floating-point test with tolerance)."""
    rng = np.random.default_rng(seed)
    pts = mesh.points
    v = pts[mesh.tets]  # [T,4,3]
    # Outward face normals and offsets for a signed point-in-tet test.
    tri = v[:, [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], :]  # [T,4,3,3]
    n = np.cross(tri[:, :, 1] - tri[:, :, 0], tri[:, :, 2] - tri[:, :, 0])
    scale = np.linalg.norm(n, axis=2) + 1e-300
    misses = 0
    for _ in range(samples):
        picks = rng.integers(0, len(pts), size=4)
        w = rng.dirichlet(np.ones(4))
        p = w @ pts[picks]
        s = np.einsum("tfc,tfc->tf", n, p[None, None, :] - tri[:, :, 0])
        inside = np.all(s <= tol * scale, axis=1)
        if not np.any(inside):
            misses += 1
    return misses
