import numpy as np
import pytest

from opacity_field.autodiff import Tensor, backward, mean, tape_scope
from opacity_field.camera import default_rig
from opacity_field.carving import ShapeFromSilhouette
from opacity_field.field import FieldConfig
from opacity_field.model import ModelConfig, OpacityFieldModel
from opacity_field.renderer import RECEPTIVE_RADIUS, ConvRenderer, GatedConv, RendererConfig, composite, render_patch


def _maps(rng, P=2, C=6, N=8, K=16):
    Fc = Tensor(rng.normal(size=(P, C, K, K)).astype(np.float32))
    Fd = Tensor(rng.uniform(0, 0.2, size=(P, N, K, K)).astype(np.float32))
    ca = Tensor(np.clip(Fd.data.sum(1, keepdims=True), 0, 1))
    return Fc, Fd, ca


def test_residual_head_is_zero_at_init():
    rng = np.random.default_rng(0)
    r = ConvRenderer(6, 8, RendererConfig(8), seed=3)
    for _ in range(3):
        Fc, Fd, ca = _maps(rng)
        out = render_patch(Fc, Fd, ca, r)
        assert out.alpha.data.tobytes() == ca.data.tobytes()
        assert out.F.shape == (2, 3, 16, 16)
        assert np.all((out.F.data > 0) & (out.F.data < 1))


def test_composite_formula():
    F = np.full((1, 3, 2, 2), 0.2, np.float32)
    a = np.full((1, 1, 2, 2), 0.25, np.float32)
    np.testing.assert_allclose(composite(F, a, (1.0, 0.0, 0.5)).data[0, :, 0, 0], [0.8, 0.05, 0.425], rtol=1e-6)


def test_renderer_rejects_bad_inputs():
    rng = np.random.default_rng(1)
    r = ConvRenderer(6, 8, RendererConfig(4))
    Fc, Fd, ca = _maps(rng, K=6)
    with pytest.raises(ValueError, match="multiple"):
        r(Fc, Fd, ca)
    Fc, Fd, ca = _maps(rng, N=7)
    with pytest.raises(ValueError, match="channels"):
        r(Fc, Fd, ca)
    with pytest.raises(ValueError):
        GatedConv(3, 4, 3, rng)(Tensor(np.zeros((1, 2, 4, 4))))
    with pytest.raises(ValueError):
        RendererConfig(0)


def test_receptive_field_is_bounded():
    rng = np.random.default_rng(2)
    r = ConvRenderer(4, 4, RendererConfig(4), seed=0)
    r.opacity.out.weight.data[:] = rng.normal(size=r.opacity.out.weight.shape)
    Fc, Fd, ca = _maps(rng, P=1, C=4, N=4, K=32)
    base = r(Fc, Fd, ca)
    Fc2 = Fc.data.copy()
    Fc2[0, :, 16, 16] += 5.0
    moved = r(Tensor(Fc2), Fd, ca)
    diff = np.abs(moved.F.data - base.F.data).max(axis=(0, 1)) + np.abs(moved.alpha.data - base.alpha.data)[0, 0]
    rows, cols = np.nonzero(diff > 0)
    assert np.abs(rows - 16).max() <= RECEPTIVE_RADIUS and np.abs(cols - 16).max() <= RECEPTIVE_RADIUS


def test_renderer_gradients_reach_both_branches():
    rng = np.random.default_rng(3)
    r = ConvRenderer(6, 8, RendererConfig(4))
    Fc, Fd, ca = _maps(rng, P=1)
    with tape_scope():
        out = r(Fc, Fd, ca)
        backward(mean(out.composite) + mean(out.alpha))
    assert np.any(r.radiance.enc0.feature.weight.grad != 0)
    assert np.any(r.opacity.out.weight.grad != 0)


@pytest.fixture(scope="module")
def small_model(tiny_dataset):
    _, views = tiny_dataset
    cfg = ModelConfig(K=32, n_coarse=8, n_fine=8, field=FieldConfig(4, 2, 16, 3, 6), seed=0)
    model = OpacityFieldModel(cfg)
    rng = np.random.default_rng(0)
    for name, p in model.renderer.named_parameters():
        p.data = p.data + rng.normal(scale=0.05, size=p.shape).astype(p.dtype)
    sfs = ShapeFromSilhouette(resolution=32).fit([v.alpha for v in views], [v.view for v in views])
    view = default_rig(resolution=64).base_views[1]
    return model, view, sfs.transform([view])[0]


def test_full_frame_matches_patchwise_in_interior(small_model):
    model, view, bounds = small_model
    full = model.render_image(view, bounds)
    ref = model.render_image_patchwise(view, bounds)
    K, m = model.config.K, RECEPTIVE_RADIUS
    interior = np.zeros((view.height, view.width), bool)
    for r0 in range(0, view.height, K):
        for c0 in range(0, view.width, K):
            interior[r0 + m:r0 + K - m, c0 + m:c0 + K - m] = True
    interior &= bounds.valid
    assert interior.any()
    assert np.abs(full["F"] - ref["F"])[interior].max() < 1e-3
    assert np.abs(full["alpha"] - ref["alpha"])[interior].max() < 1e-3
    assert np.all(full["alpha"][~bounds.valid] == 0)


def test_pixelwise_mode_uses_coarse_alpha(tiny_dataset):
    _, views = tiny_dataset
    cfg = ModelConfig(K=16, n_coarse=8, n_fine=0, field=FieldConfig(4, 2, 16, 3, 6), use_renderer=False)
    model = OpacityFieldModel(cfg)
    from opacity_field.carving import full_range_bounds
    from opacity_field.sampling import partition_patches

    view = views[0].view
    patches = partition_patches(view, full_range_bounds(view), 16)[:1]
    vol = model.volume(patches)
    out = model.render_maps(vol.fine, vol.premult_fine)
    np.testing.assert_array_equal(out.alpha.data, vol.fine.coarse_alpha.data)
    assert not hasattr(model, "renderer")
    assert default_rig().steps_per_lap == 80
