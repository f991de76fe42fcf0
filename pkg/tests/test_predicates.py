import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tetfield.predicates import (
    _insphere_exact,
    _orient3d_exact,
    incircle_on_facet_sos,
    insphere,
    insphere_sos,
    orient3d,
)

UNIT_TET = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


class TestOrient3d:
    def test_canonical_positive(self):
        assert orient3d(*UNIT_TET) == 1

    def test_coplanar_zero(self):
        assert orient3d((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)) == 0

    def test_swap_flips_sign(self):
        a, b, c, d = UNIT_TET
        assert orient3d(b, a, c, d) == -1
        assert orient3d(a, c, b, d) == -1

    @given(
        st.lists(
            st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
            min_size=12,
            max_size=12,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_filter_agrees_with_exact(self, coords):
        pts = [tuple(coords[i : i + 3]) for i in range(0, 12, 3)]
        assert orient3d(*pts) == _orient3d_exact(*pts)

    def test_near_degenerate_decided_exactly(self):
        # Points nearly coplanar: fast filter must escalate, not guess.
        eps = 1e-300
        a, b, c = (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
        assert orient3d(a, b, c, (0.5, 0.5, eps)) == 1
        assert orient3d(a, b, c, (0.5, 0.5, -eps)) == -1
        assert orient3d(a, b, c, (0.5, 0.5, 0.0)) == 0


class TestInsphere:
    def test_center_inside(self):
        # |e - circumcenter| = 0 < R = sqrt(0.75)
        assert insphere(*UNIT_TET, (0.5, 0.5, 0.5)) == 1

    def test_far_point_outside(self):
        # distance from (10,10,10) to center far exceeds sqrt(0.75)
        assert insphere(*UNIT_TET, (10, 10, 10)) == -1

    def test_vertices_on_sphere(self):
        for v in UNIT_TET:
            assert insphere(*UNIT_TET, v) == 0

    def test_even_permutation_invariant(self, rng):
        for _ in range(200):
            pts = rng.uniform(-1, 1, (5, 3))
            a, b, c, d, e = (tuple(p) for p in pts)
            if orient3d(a, b, c, d) <= 0:
                a, b = b, a
            if orient3d(a, b, c, d) <= 0:
                continue
            s = insphere(a, b, c, d, e)
            assert insphere(b, a, d, c, e) == s
            assert insphere(c, d, a, b, e) == s

    @given(
        st.lists(
            st.floats(-100, 100, allow_nan=False, allow_infinity=False),
            min_size=15,
            max_size=15,
        )
    )
    @settings(max_examples=150, deadline=None)
    def test_filter_agrees_with_exact(self, coords):
        pts = [tuple(coords[i : i + 3]) for i in range(0, 15, 3)]
        if orient3d(*pts[:4]) <= 0:
            pts[0], pts[1] = pts[1], pts[0]
        if orient3d(*pts[:4]) <= 0:
            return
        assert insphere(*pts) == _insphere_exact(*pts)


class TestSymbolicPerturbation:
    # Five points exactly on the unit sphere (integer coordinates).
    COSPHERICAL = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (-1, 0, 0), (0, -1, 0)]

    def _oriented(self):
        a, b, c, d, e = self.COSPHERICAL
        idx = [0, 1, 2, 3, 4]
        if orient3d(a, b, c, d) < 0:
            a, b = b, a
            idx[0], idx[1] = idx[1], idx[0]
        assert orient3d(a, b, c, d) > 0
        return (a, b, c, d, e), idx

    def test_cospherical_resolved(self):
        (a, b, c, d, e), idx = self._oriented()
        assert insphere(a, b, c, d, e) == 0
        out = insphere_sos(a, b, c, d, e, *idx)
        assert out in (1, -1)

    def test_deterministic(self):
        (a, b, c, d, e), idx = self._oriented()
        r1 = insphere_sos(a, b, c, d, e, *idx)
        r2 = insphere_sos(a, b, c, d, e, *idx)
        assert r1 == r2

    def test_argument_order_invariance(self):
        # Even permutations of the sphere-defining quadruple leave the
        # perturbed outcome unchanged (same point set, same indices).
        (a, b, c, d, e), idx = self._oriented()
        r1 = insphere_sos(a, b, c, d, e, *idx)
        r2 = insphere_sos(b, a, d, c, e, idx[1], idx[0], idx[3], idx[2], idx[4])
        r3 = insphere_sos(c, d, a, b, e, idx[2], idx[3], idx[0], idx[1], idx[4])
        assert r1 == r2 == r3


class TestIncircleOnFacet:
    def test_inside_outside(self):
        tri = ((0, 0, 0), (1, 0, 0), (0, 1, 0))
        assert incircle_on_facet_sos(*tri, (0.4, 0.4, 0.0), 0, 1, 2, 3) == 1
        assert incircle_on_facet_sos(*tri, (4.0, 4.0, 0.0), 0, 1, 2, 3) == -1

    def test_winding_independent(self):
        tri = ((0, 0, 0), (1, 0, 0), (0, 1, 0))
        p = (0.4, 0.4, 0.0)
        a = incircle_on_facet_sos(tri[0], tri[1], tri[2], p, 0, 1, 2, 3)
        b = incircle_on_facet_sos(tri[0], tri[2], tri[1], p, 0, 2, 1, 3)
        assert a == b == 1

    def test_cocircular_resolved(self):
        quad = ((1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, -1, 0))
        out = incircle_on_facet_sos(*quad, 0, 1, 2, 3)
        assert out in (1, -1)

    def test_tilted_plane(self):
        # Same test on a tilted plane; integer coordinates keep the four
        # points exactly coplanar.
        tri = ((0, 0, 0), (2, 0, 2), (0, 2, 2))
        inside = (0.5, 0.5, 1.0)  # = affine combination in the plane
        assert incircle_on_facet_sos(*tri, inside, 0, 1, 2, 3) == 1
