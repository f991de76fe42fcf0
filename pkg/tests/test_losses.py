import numpy as np
import pytest
import torch

from tetfield.field import FieldConfig, HashGrid
from tetfield.losses import (
    DimensionMismatchError,
    distortion_loss,
    distortion_loss_matrix,
    photometric_loss,
    psnr,
    ssim,
    ssim_map,
    weight_decay,
)
from tetfield.reference import distortion_reference, ssim_reference


def _img(arr):
    return torch.as_tensor(np.asarray(arr, dtype=np.float64))


class TestPhotometric:
    def test_identical_images_zero(self, rng):
        img = _img(rng.uniform(0, 1, (16, 16, 3)))
        assert float(photometric_loss(img, img)) == pytest.approx(0.0, abs=1e-12)

    def test_l1_term(self):
        a = _img(np.zeros((8, 8, 3)))
        b = _img(np.ones((8, 8, 3)))
        assert float(photometric_loss(b, a, lambda_ssim=0.0)) == pytest.approx(1.0)

    def test_mix_weights(self, rng):
        a = _img(rng.uniform(0, 1, (16, 16, 3)))
        b = _img(rng.uniform(0, 1, (16, 16, 3)))
        l1 = float((a - b).abs().mean())
        s = float(ssim(a, b))
        expected = 0.8 * l1 + 0.2 * (1 - s)
        assert float(photometric_loss(a, b, lambda_ssim=0.2)) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            photometric_loss(_img(np.zeros((8, 8, 3))), _img(np.zeros((9, 8, 3))))


class TestSSIM:
    def test_checkerboard_vs_inverse_matches_oracle(self):
        board = np.indices((8, 8)).sum(axis=0) % 2
        a = np.repeat(board[..., None], 3, axis=2).astype(np.float64)
        b = 1.0 - a
        mine = float(ssim(_img(a), _img(b)))
        oracle, _ = ssim_reference(a, b)
        assert mine == pytest.approx(oracle, rel=1e-10)

    def test_random_images_match_oracle(self, rng):
        a = rng.uniform(0, 1, (20, 14, 3))
        b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        mine = float(ssim(_img(a), _img(b)))
        oracle, omap = ssim_reference(a, b)
        assert mine == pytest.approx(oracle, rel=1e-9)
        mymap = ssim_map(_img(a), _img(b)).numpy()
        assert np.abs(mymap - omap).max() < 1e-9

    def test_self_similarity_is_one(self, rng):
        a = rng.uniform(0, 1, (16, 16, 3))
        assert float(ssim(_img(a), _img(a))) == pytest.approx(1.0, abs=1e-9)


class TestDistortion:
    def test_zero_density(self):
        assert distortion_loss([0.0, 1.0], [1.0, 2.0], [0.0, 0.0]) == 0.0

    def test_single_segment(self):
        # (1/3) w^2 len with w = sigma len
        sigma, t0, t1 = 2.0, 0.2, 0.7
        w = sigma * (t1 - t0)
        expected = w * w * (t1 - t0) / 3.0
        assert distortion_loss([t0], [t1], [sigma]) == pytest.approx(expected, rel=1e-12)

    def test_two_segment_example(self):
        # Equal masses w=1 at midpoints 0.25 and 0.75: pairwise term
        # 2 * w^2 * 0.5, self terms (1/3) w^2 len each.
        t_in = [0.0, 0.5]
        t_out = [0.5, 1.0]
        sigma = [2.0, 2.0]  # w = 2 * 0.5 = 1
        expected = 2 * 1 * 1 * 0.5 + 2 * (1 * 1 * 0.5) / 3.0
        assert distortion_loss(t_in, t_out, sigma) == pytest.approx(expected, rel=1e-12)

    def test_matches_double_loop_reference(self, rng):
        t0 = np.sort(rng.uniform(0, 1, 12))
        lens = rng.uniform(0.01, 0.08, 12)
        t1 = t0 + lens
        sigma = rng.uniform(0, 3, 12)
        assert distortion_loss(t0, t1, sigma) == pytest.approx(
            distortion_reference(t0, t1, sigma), rel=1e-12
        )

    def test_matrix_form_matches_reference(self, rng):
        # Disjoint ascending segments per ray, as a Delaunay walk produces.
        T, R = 9, 5
        gaps = rng.uniform(0.01, 0.1, (T, R))
        lens = rng.uniform(0.01, 0.05, (T, R))
        t1 = np.cumsum(gaps + lens, axis=0)
        t0 = t1 - lens
        sigma = rng.uniform(0, 3.0, (T, R))
        hit = rng.uniform(size=(T, R)) > 0.3
        depth = sigma * lens
        loss = float(
            distortion_loss_matrix(
                torch.as_tensor(t0), torch.as_tensor(t1),
                torch.as_tensor(depth), torch.as_tensor(hit),
            )
        )
        per_ray = []
        for r in range(R):
            mask = hit[:, r]
            far = t1[:, r].max()
            tn0 = t0[mask, r] / far
            tn1 = t1[mask, r] / far
            w = depth[mask, r]
            m = 0.5 * (tn0 + tn1)
            pair = sum(
                w[j] * w[k] * abs(m[j] - m[k]) for j in range(len(w)) for k in range(len(w))
            )
            self_t = np.sum(w * w * (tn1 - tn0)) / 3.0
            per_ray.append(pair + self_t)
        assert loss == pytest.approx(np.mean(per_ray), rel=1e-9)


class TestWeightDecay:
    def test_zero_grid(self):
        grid = HashGrid(FieldConfig(levels=2, n_min=4, n_max=8, log2_table_size=8), dtype=torch.float64)
        with torch.no_grad():
            for p in grid.level_features:
                p.zero_()
        assert float(weight_decay(grid)) == 0.0

    def test_constant_two(self):
        grid = HashGrid(FieldConfig(levels=1, n_min=4, n_max=4, log2_table_size=8), dtype=torch.float64)
        with torch.no_grad():
            for p in grid.level_features:
                p.fill_(2.0)
        assert float(weight_decay(grid)) == pytest.approx(4.0)

    def test_matches_bruteforce(self, rng):
        grid = HashGrid(FieldConfig(levels=3, n_min=4, n_max=16, log2_table_size=8), dtype=torch.float64)
        with torch.no_grad():
            for p in grid.level_features:
                p.copy_(torch.as_tensor(rng.normal(size=tuple(p.shape))))
        expected = sum(float((p.detach() ** 2).mean()) for p in grid.level_features)
        assert float(weight_decay(grid)) == pytest.approx(expected, rel=1e-12)


class TestPSNR:
    def test_known_value(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)

    def test_identical_infinite(self):
        a = np.ones((4, 4, 3))
        assert psnr(a, a) == float("inf")
