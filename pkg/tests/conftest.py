import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_scene(seed=3, n_points=40, density=(0.1, 3.0)):
    """Random mesh with valid per-tet attributes (shared by render tests)."""
    from tetfield.geometry import delaunay

    gen = np.random.default_rng(seed)
    pts = gen.uniform(-1, 1, (n_points, 3))
    mesh = delaunay(pts)
    t = mesh.num_tets
    sigma = gen.uniform(*density, t)
    color0 = gen.uniform(0.1, 1.0, (t, 3))
    d = gen.normal(size=(t, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    bound = color0.min(axis=1) / np.clip(mesh.clamped_radii(), 1e-9, None)
    grad = 0.5 * bound[:, None] * d
    return mesh, sigma, color0, grad
