import numpy as np
import pytest

from opacity_field.camera import CameraView, default_rig, generate_rays, look_at
from opacity_field.scene import (
    AnalyticScene,
    CallableComponent,
    GaussianBlob,
    fuzzy_sphere,
    generate_dataset,
    homogeneous_slab,
    load_dataset,
    oracle_render,
    render_rays,
    save_dataset,
    view_schedule,
)


def _small_view(res=12, eye=(0.0, 0.0, -3.0)):
    return CameraView(1.25 * res, 1.25 * res, res / 2, res / 2, res, res, look_at(eye))


def test_empty_scene_is_transparent():
    scene = AnalyticScene([CallableComponent(lambda x: np.zeros(x.shape[:-1]))])
    gt = oracle_render(scene, _small_view(), 256)
    assert np.all(gt.alpha == 0) and np.all(gt.foreground == 0)


def test_too_few_samples_rejected():
    with pytest.raises(ValueError):
        oracle_render(fuzzy_sphere(), _small_view(), 128)


@pytest.mark.parametrize("s", [0.3, 1.0, 4.0])
def test_slab_matches_beer_lambert(s):
    scene = homogeneous_slab(s)
    view = _small_view(res=8, eye=(0.4, 0.7, -3.0))
    rays = generate_rays(view)
    alpha, premult = render_rays(scene, rays.origins, rays.directions, 1024)
    from opacity_field.camera import intersect_aabb

    t0, t1, hit = intersect_aabb(rays.origins, rays.directions, *scene.bounds)
    expected = np.where(hit, 1 - np.exp(-s * (t1 - t0)), 0.0)
    np.testing.assert_allclose(alpha, expected, atol=1e-4)
    np.testing.assert_allclose(premult[hit] / alpha[hit, None], np.tile([0.8, 0.4, 0.2], (hit.sum(), 1)), atol=1e-9)


def test_exponential_falloff_closed_form():
    # sigma = s * exp(-k z) along +z; optical depth from z=-1 to 1 is s/k (e^k - e^-k)
    s, k = 1.5, 2.0
    scene = AnalyticScene([CallableComponent(lambda x: s * np.exp(-k * x[..., 2]))], ((-1,) * 3, (1,) * 3))
    alpha, _ = render_rays(scene, np.array([[0.0, 0.0, -3.0]]), np.array([[0.0, 0.0, 1.0]]), 1024)
    assert alpha[0] == pytest.approx(1 - np.exp(-s / k * (np.exp(k) - np.exp(-k))), abs=1e-4)


def test_gaussian_blob_self_convergence():
    scene = AnalyticScene([GaussianBlob((0.1, -0.1, 0.0), 0.25, 12.0)])
    view = _small_view(res=16, eye=(1.0, 0.5, -2.8))
    a = oracle_render(scene, view, 1024).alpha
    b = oracle_render(scene, view, 2048).alpha
    assert np.abs(a - b).max() < 1e-4


def test_density_scaling_is_monotone():
    scene = fuzzy_sphere()
    view = _small_view(res=16)
    a1 = oracle_render(scene, view, 256).alpha
    a2 = oracle_render(scene.scaled(2.0), view, 256).alpha
    assert np.all(a2 >= a1 - 1e-12)


def test_density_invariants():
    scene = fuzzy_sphere()
    x = np.random.default_rng(0).uniform(-2, 2, size=(5000, 3))
    d = np.tile([0.0, 0.0, 1.0], (5000, 1))
    sigma, rgb = scene.density_and_color(x, d)
    assert np.all(sigma >= 0)
    assert np.all((rgb >= 0) & (rgb <= 1))
    outside = np.any(np.abs(x) > 1.25, axis=1)
    assert np.all(sigma[outside] == 0)


def test_symmetric_scene_is_turntable_invariant():
    # axis-centred camera looking along the rotation axis sees a rotated copy of a symmetric ball
    from opacity_field.camera import TurntableRig, propagate_extrinsics
    from opacity_field.scene import ball

    view = CameraView(20.0, 20.0, 8.0, 8.0, 16, 16, look_at((0.0, -3.0, 0.0), up=(0.0, 0.0, 1.0)))
    rig = TurntableRig((view,), 80, (0.0, -1.0, 0.0), (0.0, 0.0, 0.0))
    scene = AnalyticScene([GaussianBlob((0.0, 0.0, 0.0), 0.3, 8.0)])
    a0 = oracle_render(scene, view, 256).alpha
    for j in (7, 20, 53):
        aj = oracle_render(scene, propagate_extrinsics(rig, 0, j), 256).alpha
        assert np.abs(aj - a0).max() < 1e-3
    assert ball().name == "ball"


def test_generate_dataset_counts_and_determinism(tmp_path):
    rig = default_rig(resolution=8)
    steps = [(i, j) for i in range(2) for j in range(3)]
    a = generate_dataset(fuzzy_sphere(), rig, steps, 256)
    b = generate_dataset(fuzzy_sphere(), rig, steps, 256, threads=2)
    assert len(a) == 6
    for x, y in zip(a, b):
        assert x.alpha.tobytes() == y.alpha.tobytes()
        assert x.foreground.tobytes() == y.foreground.tobytes()
    assert [(v.camera, v.step) for v in a] == steps
    assert len(view_schedule(rig, 8)) == 8
    assert len(set(view_schedule(rig, 8))) == 8


@pytest.mark.parametrize("bits", [8, 16])
def test_dataset_round_trip(tmp_path, tiny_dataset, bits):
    rig, views = tiny_dataset
    save_dataset(tmp_path, views, rig, alpha_bits=bits)
    back = load_dataset(tmp_path)
    tol = 0.5 / (255 if bits == 8 else 65535) + 1e-12
    for v, w in zip(views, back):
        assert np.abs(v.alpha - w.alpha).max() <= tol
        assert np.abs(v.foreground - w.foreground).max() <= 0.5 / 255 + 1e-12
        np.testing.assert_allclose(v.view.extrinsics, w.view.extrinsics)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
