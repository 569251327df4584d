import numpy as np
import pytest

from conftest import check_grad
from opacity_field.autodiff import Tensor, default_dtype, sum_
from opacity_field.integration import (
    assemble_volume_image,
    build_feature_patch,
    compute_alphas,
    final_transmittance,
    integrate_features,
)


def test_telescoping_identity():
    rng = np.random.default_rng(0)
    sigma = rng.exponential(2.0, size=(10_000, 64)) * (rng.random((10_000, 1)) < 0.9)
    delta = rng.uniform(0.0, 0.1, size=(10_000, 64))
    with default_dtype(np.float64):
        alpha, T = compute_alphas(sigma, delta)
    closed = 1 - np.exp(-(sigma * delta).sum(axis=1))
    assert np.abs(alpha.data.sum(axis=1) - closed).max() < 1e-6
    assert np.all(np.diff(T.data, axis=1) <= 0)
    np.testing.assert_allclose(alpha.data.sum(axis=1) + final_transmittance(sigma, delta), 1.0, atol=1e-12)


def test_edge_cases():
    a, T = compute_alphas(np.zeros((2, 5)), np.full((2, 5), 0.3))
    assert np.all(a.data == 0) and np.all(T.data == 1)
    a, _ = compute_alphas(np.array([[1e6, 1e6, 1.0]]), np.array([[1.0, 1.0, 1.0]]))
    np.testing.assert_allclose(a.data, [[1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        compute_alphas(np.array([-1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        compute_alphas(np.array([1.0, 2.0]), np.array([1.0]))


def test_alpha_gradient():
    rng = np.random.default_rng(1)
    s = rng.uniform(0.1, 3.0, size=(3, 6))
    d = rng.uniform(0.05, 0.3, size=(3, 6))
    w = rng.normal(size=(3, 6))
    assert check_grad(lambda x: sum_(compute_alphas(x, d)[0] * w), s) < 1e-5


def test_feature_integration_and_gradient():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 0.2, size=(4, 5))
    f = rng.normal(size=(4, 5, 3))
    out = integrate_features(Tensor(a), Tensor(f))
    np.testing.assert_allclose(out.data, np.einsum("rn,rnc->rc", a, f), rtol=1e-5, atol=1e-7)
    assert check_grad(lambda x, y: sum_(integrate_features(x, y) ** 2), a, f) < 1e-5
    with pytest.raises(ValueError):
        integrate_features(Tensor(a), Tensor(f[:, :4]))


def test_feature_patch_layout():
    rng = np.random.default_rng(3)
    P, K, N, C = 2, 4, 5, 3
    a = rng.uniform(0, 0.3, size=(P, K * K, N))
    f = rng.normal(size=(P, K * K, N, C))
    maps = build_feature_patch(Tensor(a), Tensor(f), K)
    assert maps.F_c.shape == (P, C, K, K) and maps.F_d.shape == (P, N, K, K) and maps.K == K
    r, c = 2, 3
    np.testing.assert_allclose(maps.F_d.data[1, :, r, c], a[1, r * K + c], rtol=1e-6)
    np.testing.assert_allclose(maps.F_c.data[1, :, r, c], a[1, r * K + c] @ f[1, r * K + c], rtol=1e-5)
    np.testing.assert_allclose(maps.coarse_alpha.data[:, 0], np.clip(a.sum(-1), 0, 1).reshape(P, K, K), rtol=1e-6)
    assert assemble_volume_image(maps).shape == (P, C + N, K, K)
    with pytest.raises(ValueError):
        build_feature_patch(Tensor(a), Tensor(f), 3)
