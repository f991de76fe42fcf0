import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tetfield.geometry import delaunay
from tetfield.reference import ray_segments
from tetfield.sorting import (
    float_keys_to_uint64,
    power_key,
    power_keys,
    sort_keys,
    visibility_order,
)

UNIT_TET = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], dtype=float)


class TestPowerKey:
    def test_origin_on_circumsphere(self):
        mesh = delaunay(UNIT_TET)
        # (0,0,0) is a tet vertex, hence on the circumsphere: power 0.
        assert power_key(mesh.circumcenters[0], mesh.circumradius_sq[0], (0, 0, 0)) == pytest.approx(0.0)

    def test_outside_origin(self):
        mesh = delaunay(UNIT_TET)
        # |(2,0,0) - (.5,.5,.5)|^2 - 0.75 = 2.75 - 0.75
        assert power_key(mesh.circumcenters[0], mesh.circumradius_sq[0], (2, 0, 0)) == pytest.approx(2.0)

    def test_circumcenter_origin(self):
        mesh = delaunay(UNIT_TET)
        assert power_key(
            mesh.circumcenters[0], mesh.circumradius_sq[0], mesh.circumcenters[0]
        ) == pytest.approx(-0.75)

    def test_vectorized_matches_scalar(self, rng):
        pts = rng.uniform(-1, 1, (40, 3))
        mesh = delaunay(pts)
        origin = rng.normal(size=3)
        keys = power_keys(mesh, origin)
        for t in range(mesh.num_tets):
            assert keys[t] == pytest.approx(
                power_key(mesh.circumcenters[t], mesh.circumradius_sq[t], origin)
            )


class TestSortKeys:
    def test_empty(self):
        assert sort_keys(np.array([])).tolist() == []

    def test_sorted_is_identity(self):
        keys = np.array([-5.0, -1.0, 0.0, 2.0, 7.5])
        assert sort_keys(keys).tolist() == [0, 1, 2, 3, 4]

    def test_large_random_vs_comparison_sort(self, rng):
        keys = rng.uniform(-1e6, 1e6, 1_000_000)
        perm = sort_keys(keys)
        oracle = np.argsort(keys, kind="stable")
        assert np.array_equal(perm, oracle)

    def test_signed_zero_and_denormals(self):
        keys = np.array([0.0, -0.0, 5e-324, -5e-324, 1.0, -1.0, 0.0])
        perm = sort_keys(keys)
        oracle = np.argsort(keys, kind="stable")
        assert np.array_equal(perm, oracle)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            sort_keys(np.array([1.0, np.nan]))

    @given(
        st.lists(
            st.floats(allow_nan=False, allow_infinity=False, width=64),
            max_size=200,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_stable_comparison_sort(self, values):
        keys = np.array(values, dtype=np.float64)
        assert np.array_equal(sort_keys(keys), np.argsort(keys, kind="stable"))

    def test_mapping_monotone(self, rng):
        keys = np.sort(rng.normal(size=1000) * 10.0**rng.integers(-300, 300, 1000))
        u = float_keys_to_uint64(keys)
        assert (np.diff(u.astype(object)) >= 0).all()


class TestVisibilityOrder:
    def test_single_tet(self):
        mesh = delaunay(UNIT_TET)
        assert visibility_order(mesh, (5, 5, 5)).tolist() == [0]

    def test_two_stacked_tets(self):
        # Two tets sharing the z=0 triangle; origin below sees the lower
        # tet first.  Powers computed analytically: both circumcenters sit
        # on the z axis symmetric about 0.
        pts = np.array(
            [(1, 0, 0), (-0.5, 0.86602540378, 0), (-0.5, -0.86602540378, 0),
             (0, 0, 1), (0, 0, -1)],
            dtype=float,
        )
        mesh = delaunay(pts)
        assert mesh.num_tets == 2
        origin = np.array([0.0, 0.0, -5.0])
        order = visibility_order(mesh, origin)
        first = mesh.tets[order[0]]
        assert 4 in first  # the tet containing the bottom apex is nearer

    def test_rigid_invariance(self, rng):
        pts = rng.uniform(-1, 1, (50, 3))
        mesh = delaunay(pts)
        origin = rng.normal(size=3) * 3
        base = visibility_order(mesh, origin)

        theta = 0.7
        rot = np.array(
            [
                [np.cos(theta), -np.sin(theta), 0],
                [np.sin(theta), np.cos(theta), 0],
                [0, 0, 1],
            ]
        )
        shift = np.array([2.5, -1.0, 0.3])
        mesh2 = delaunay(pts @ rot.T + shift)
        moved = visibility_order(mesh2, rot @ origin + shift)
        # Same topology (general position) and same order.
        assert np.array_equal(base, moved)

    def test_per_ray_entry_order_consistency(self, rng):
        pts = rng.uniform(-1, 1, (60, 3))
        mesh = delaunay(pts)
        origin = np.array([0.1, -0.2, 3.0])
        order = visibility_order(mesh, origin)
        rank = np.empty(mesh.num_tets, dtype=np.int64)
        rank[order] = np.arange(mesh.num_tets)
        for _ in range(300):
            d = rng.normal(size=3)
            segs = ray_segments(mesh.points, mesh.tets, origin, d)
            for (k1, t1, _), (k2, t2, _) in zip(segs, segs[1:]):
                if t2 - t1 > 1e-9:
                    assert rank[k1] < rank[k2]
