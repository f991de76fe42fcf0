import math

import numpy as np
import pytest
import torch

from tetfield.field import (
    FieldConfig,
    HashGrid,
    RadianceField,
    contract,
    contract_jacobian_norm,
    downweight,
    num_sh_coeffs,
    sh_basis,
    tet_color_at,
)


def fibonacci_sphere(n):
    """Low-discrepancy unit directions for quasi-Monte Carlo on the sphere."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1
    )


class TestContract:
    def test_identity_inside(self):
        x = torch.tensor([[0.3, 0.0, 0.0]], dtype=torch.float64)
        assert torch.allclose(contract(x), x)

    def test_outside_formula(self):
        x = torch.tensor([[4.0, 0.0, 0.0]], dtype=torch.float64)
        assert torch.allclose(contract(x), torch.tensor([[1.75, 0.0, 0.0]], dtype=torch.float64))

    def test_norm_bounded_by_two(self, rng):
        x = torch.tensor(rng.normal(size=(500, 3)) * 100, dtype=torch.float64)
        out = contract(x).norm(dim=-1)
        assert (out < 2.0).all()
        big = torch.tensor([[1e12, 0.0, 0.0]], dtype=torch.float64)
        assert contract(big).norm(dim=-1).item() == pytest.approx(2.0, abs=1e-9)

    def test_jacobian_norm_matches_autograd(self):
        for radius in (0.5, 1.5, 4.0):
            x = torch.tensor([[radius, 0.0, 0.0]], dtype=torch.float64, requires_grad=True)
            jac = torch.autograd.functional.jacobian(lambda v: contract(v).squeeze(0), x)
            jac = jac.squeeze()
            top = torch.linalg.matrix_norm(jac, ord=2)
            assert contract_jacobian_norm(x.detach()).item() == pytest.approx(top.item(), rel=1e-9)


class TestDownweight:
    def test_zero_radius_is_one(self):
        assert downweight(torch.tensor([0.0]), 16.0).item() == pytest.approx(1.0)

    def test_erf_one_point(self):
        # 8 r^2 n^2 = 1  =>  factor = erf(1)
        n = 16.0
        r = 1.0 / (2.0 * math.sqrt(2.0) * n)
        assert downweight(torch.tensor([r], dtype=torch.float64), n).item() == pytest.approx(
            math.erf(1.0), rel=1e-12
        )

    def test_large_radius_vanishes(self):
        assert downweight(torch.tensor([1e12], dtype=torch.float64), 512.0).item() == pytest.approx(
            0.0, abs=1e-12
        )

    def test_strictly_decreasing(self):
        r = torch.linspace(1e-4, 2.0, 300, dtype=torch.float64)
        phi = downweight(r, 64.0)
        assert (phi[1:] < phi[:-1]).all()


class TestSHBasis:
    def test_dc_value(self):
        y = sh_basis(torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64), 0)
        assert y.shape == (1, 1)
        assert y[0, 0].item() == pytest.approx(0.28209479177387814)

    def test_band1_at_z(self):
        y = sh_basis(torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64), 1)[0]
        c = math.sqrt(3.0 / (4.0 * math.pi))
        # band 1 is proportional to (y, z, x)
        assert y[1].item() == pytest.approx(0.0, abs=1e-15)
        assert y[2].item() == pytest.approx(c)
        assert y[3].item() == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_orthonormal_quasi_monte_carlo(self, degree):
        dirs = torch.tensor(fibonacci_sphere(100_000), dtype=torch.float64)
        y = sh_basis(dirs, degree)
        gram = (y.T @ y) / len(dirs) * 4 * math.pi
        eye = torch.eye(num_sh_coeffs(degree), dtype=torch.float64)
        assert (gram - eye).abs().max().item() < 1e-3


class TestHashGrid:
    def test_zero_features_zero_output(self):
        cfg = FieldConfig(levels=3, n_min=4, n_max=16, log2_table_size=10)
        grid = HashGrid(cfg, dtype=torch.float64)
        with torch.no_grad():
            for p in grid.level_features:
                p.zero_()
        u = torch.rand(20, 3, dtype=torch.float64)
        out = grid(u, torch.zeros(20, dtype=torch.float64))
        assert out.abs().max().item() == 0.0

    def test_lattice_point_returns_entry(self):
        cfg = FieldConfig(levels=1, n_min=4, n_max=4, log2_table_size=12, features=2)
        grid = HashGrid(cfg, dtype=torch.float64)
        n = grid.resolutions[0]
        assert grid.dense[0]
        ix, iy, iz = 2, 1, 3
        u = torch.tensor([[ix / n, iy / n, iz / n]], dtype=torch.float64)
        out = grid(u, torch.zeros(1, dtype=torch.float64))
        side = n + 1
        flat = (ix * side + iy) * side + iz
        expected = grid.level_features[0][flat].detach()
        assert torch.allclose(out[0], expected)

    def test_toy_grid_manual_interpolation(self):
        # Two levels with controlled features: compare against hand-rolled
        # trilinear interpolation plus the per-level erf factor.
        cfg = FieldConfig(levels=2, n_min=2, n_max=4, log2_table_size=12, features=1)
        grid = HashGrid(cfg, dtype=torch.float64)
        gen = torch.Generator().manual_seed(0)
        with torch.no_grad():
            for p in grid.level_features:
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64))
        u = torch.tensor([[0.3, 0.55, 0.71]], dtype=torch.float64)
        radius = torch.tensor([0.05], dtype=torch.float64)
        out = grid(u, radius)

        expected = []
        for level, n in enumerate(grid.resolutions):
            side = n + 1
            feats = grid.level_features[level].detach().numpy().reshape(side, side, side)
            s = u.numpy()[0] * n
            i0 = np.floor(s).astype(int)
            f = s - i0
            acc = 0.0
            for cx in (0, 1):
                for cy in (0, 1):
                    for cz in (0, 1):
                        w = (
                            (f[0] if cx else 1 - f[0])
                            * (f[1] if cy else 1 - f[1])
                            * (f[2] if cz else 1 - f[2])
                        )
                        acc += w * feats[i0[0] + cx, i0[1] + cy, i0[2] + cz]
            phi = math.erf(1.0 / math.sqrt(8.0 * (0.05 * n) ** 2))
            expected.append(acc * phi)
        assert np.allclose(out.detach().numpy()[0], expected, rtol=1e-12)

    def test_gradients_flow_to_query_point(self):
        cfg = FieldConfig(levels=2, n_min=4, n_max=8, log2_table_size=10)
        grid = HashGrid(cfg, dtype=torch.float64)
        u = torch.rand(5, 3, dtype=torch.float64, requires_grad=True)
        out = grid(u, torch.full((5,), 0.01, dtype=torch.float64))
        out.sum().backward()
        assert torch.isfinite(u.grad).all()


class TestAttributes:
    def _field(self):
        cfg = FieldConfig(levels=3, n_min=4, n_max=16, log2_table_size=10, hidden=16, sh_degree=2)
        return RadianceField(cfg, dtype=torch.float64)

    def test_zero_sigma_head_gives_unit_density(self):
        f = self._field()
        with torch.no_grad():
            for p in f.h_sigma.parameters():
                p.zero_()
        b = torch.randn(7, f.cfg.levels * f.cfg.features, dtype=torch.float64)
        dirs = torch.tensor([[0.0, 0.0, 1.0]] * 7, dtype=torch.float64)
        sigma, _, _ = f.attributes(b, torch.ones(7, dtype=torch.float64), dirs)
        assert torch.allclose(sigma, torch.ones(7, dtype=torch.float64))

    def test_zero_delta_head_gives_zero_gradient(self):
        f = self._field()
        with torch.no_grad():
            for p in f.h_delta.parameters():
                p.zero_()
        b = torch.randn(7, f.cfg.levels * f.cfg.features, dtype=torch.float64)
        dirs = torch.tensor([[0.0, 0.0, 1.0]] * 7, dtype=torch.float64)
        _, _, grad = f.attributes(b, torch.ones(7, dtype=torch.float64), dirs)
        assert grad.abs().max().item() == 0.0

    def test_gradient_saturates_at_bound(self):
        f = self._field()
        with torch.no_grad():
            f.h_delta[2].weight.zero_()
            f.h_delta[2].bias.copy_(torch.tensor([1e9, 0.0, 0.0], dtype=torch.float64))
        b = torch.randn(4, f.cfg.levels * f.cfg.features, dtype=torch.float64)
        dirs = torch.tensor([[0.0, 0.0, 1.0]] * 4, dtype=torch.float64)
        radii = torch.rand(4, dtype=torch.float64) + 0.2
        sigma, c0, grad = f.attributes(b, radii, dirs)
        bound = c0.min(dim=1).values / radii
        assert torch.allclose(grad.norm(dim=-1), bound, rtol=1e-9)

    def test_color_nonnegative_on_bounding_sphere(self, rng):
        f = self._field()
        n = 10_000
        b = torch.tensor(rng.normal(size=(n, f.cfg.levels * f.cfg.features)) * 3, dtype=torch.float64)
        dirs = torch.tensor(rng.normal(size=(n, 3)), dtype=torch.float64)
        dirs = dirs / dirs.norm(dim=-1, keepdim=True)
        radii = torch.tensor(rng.uniform(0.05, 2.0, n), dtype=torch.float64)
        sigma, c0, grad = f.attributes(b, radii, dirs)
        anchor = torch.zeros(n, 3, dtype=torch.float64)
        u = torch.tensor(rng.normal(size=(n, 3)), dtype=torch.float64)
        u = u / u.norm(dim=-1, keepdim=True)
        p = anchor + radii.unsqueeze(-1) * u
        colors = tet_color_at(c0, grad, anchor, p)
        assert colors.min().item() >= -1e-6
        assert (sigma > 0).all()

    def test_bound_tight_at_sphere(self):
        # c0 = (0.5, 0.5, 0.5) with a saturated slope along u drives the
        # color to exactly 0 at p = anchor - R u.
        c0 = torch.tensor([[0.5, 0.5, 0.5]], dtype=torch.float64)
        radius = torch.tensor([2.0], dtype=torch.float64)
        u = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        grad = (c0.min(dim=1).values / radius).unsqueeze(-1) * u  # fully saturated
        anchor = torch.zeros(1, 3, dtype=torch.float64)
        p = anchor - radius.unsqueeze(-1) * u
        colors = tet_color_at(c0, grad, anchor, p)
        assert torch.allclose(colors, torch.zeros(1, 3, dtype=torch.float64), atol=1e-15)

    def test_query_gradcheck(self):
        cfg = FieldConfig(levels=2, n_min=4, n_max=8, log2_table_size=8, hidden=8, sh_degree=1)
        f = RadianceField(cfg, dtype=torch.float64)
        centers = torch.tensor([[0.2, -0.3, 0.5], [1.4, 0.2, -0.6]], dtype=torch.float64)
        radii = torch.tensor([0.1, 0.4], dtype=torch.float64)

        def loss_fn():
            b = f.query(centers, radii)
            dirs = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], dtype=torch.float64)
            sigma, c0, grad = f.attributes(b, radii, dirs)
            return (sigma.sum() + c0.sum() + grad.sum())

        loss = loss_fn()
        params = list(f.parameters())
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        checked = 0
        for p, g in zip(params, grads):
            if g is None or g.abs().max() == 0:
                continue
            idx = torch.argmax(g.abs())
            h = 1e-6
            with torch.no_grad():
                flat = p.view(-1)
                orig = flat[idx].item()
                flat[idx] = orig + h
                lp = loss_fn().item()
                flat[idx] = orig - h
                lm = loss_fn().item()
                flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            assert fd == pytest.approx(g.view(-1)[idx].item(), rel=1e-4, abs=1e-10)
            checked += 1
        assert checked >= 4
