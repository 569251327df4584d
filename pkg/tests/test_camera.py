import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opacity_field.camera import (
    BehindCamera,
    CameraView,
    TurntableRig,
    default_rig,
    generate_rays,
    intersect_aabb,
    look_at,
    project,
    propagate_extrinsics,
)


@pytest.fixture
def view():
    return CameraView(50.0, 55.0, 16.0, 12.0, 32, 24, look_at((0.3, -0.5, -3.0)))


def test_invalid_cameras_rejected():
    with pytest.raises(ValueError):
        CameraView(-1.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        CameraView(1.0, 1.0, 5.0, 1.0, 4, 4)
    bad = np.eye(4)
    bad[0, 0] = 2.0
    with pytest.raises(ValueError):
        CameraView(1.0, 1.0, 1.0, 1.0, 4, 4, bad)


def test_principal_pixel_ray_is_optical_axis():
    v = CameraView(40.0, 40.0, 10.5, 8.5, 21, 17, look_at((1.0, 2.0, -3.0)))
    r = generate_rays(v, rows=[8], cols=[10])
    np.testing.assert_allclose(r.directions[0], v.pose[:3, 2], atol=1e-12)


def test_rays_unit_and_round_trip(view):
    rays = generate_rays(view)
    np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-12)
    for t in (0.5, 2.0, 7.0):
        uv, z = project(view, rays.origins + t * rays.directions)
        centers = rays.pixels[:, ::-1] + 0.5
        np.testing.assert_allclose(uv, centers, atol=1e-6)
        assert np.all(z > 0)


def test_adjacent_pixels_differ_in_camera_x_only(view):
    r = generate_rays(view, rows=[5], cols=[7, 8])
    d_cam = r.directions @ view.rotation.T
    d_cam = d_cam / d_cam[:, 2:3]
    assert d_cam[1, 0] - d_cam[0, 0] == pytest.approx(1.0 / view.fx)
    assert d_cam[1, 1] == pytest.approx(d_cam[0, 1])


def test_block_bounds_checked(view):
    with pytest.raises(IndexError):
        generate_rays(view, rows=[view.height])


def test_project_on_axis_and_behind(view):
    p = view.center + 2.5 * view.pose[:3, 2]
    uv, z = project(view, p)
    np.testing.assert_allclose(uv, [view.cx, view.cy], atol=1e-9)
    assert z == pytest.approx(2.5)
    with pytest.raises(BehindCamera):
        project(view, view.center - view.pose[:3, 2])
    uv, z = project(view, np.stack([p, view.center - view.pose[:3, 2]]))
    assert np.isnan(uv[1]).all() and z[1] < 0


def test_step_zero_and_angle():
    rig = default_rig()
    assert propagate_extrinsics(rig, 1, 0) is rig.base_views[1]
    assert rig.step_angle_deg == 4.5
    np.testing.assert_array_equal(rig.step_transform(0), np.eye(4))


def test_step_out_of_range():
    rig = default_rig()
    for j in (-1, 80):
        with pytest.raises(ValueError):
            propagate_extrinsics(rig, 0, j)


def test_half_lap_twice_is_identity():
    rig = default_rig()
    v40 = propagate_extrinsics(rig, 0, 40)
    back = rig.step_transform(40) @ v40.pose
    np.testing.assert_allclose(back, rig.base_views[0].pose, atol=1e-9)


def test_full_lap_composition():
    rig = default_rig()
    A = np.eye(4)
    for _ in range(rig.steps_per_lap):
        A = rig.step_transform(1) @ A
    np.testing.assert_allclose(A, np.eye(4), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 79), st.integers(0, 79))
def test_composition_associativity(j, k):
    rig = default_rig()
    direct = rig.step_transform((j + k) % 80)
    composed = rig.step_transform(j) @ rig.step_transform(k)
    np.testing.assert_allclose(direct, composed, atol=1e-9)
    R = propagate_extrinsics(rig, 0, j).rotation
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_propagation_is_one_product_on_pose():
    rig = default_rig()
    v = propagate_extrinsics(rig, 1, 13)
    np.testing.assert_allclose(v.pose, rig.step_transform(13) @ rig.base_views[1].pose, atol=1e-12)


def test_rig_json_round_trip(tmp_path):
    rig = default_rig(resolution=48)
    path = tmp_path / "rig.json"
    rig.save(path)
    d = json.loads(path.read_text())
    assert set(d) == {"steps_per_lap", "axis", "center", "cameras"}
    assert len(d["cameras"][0]["T0"]) == 16
    back = TurntableRig.load(path)
    for a, b in zip(rig.base_views, back.base_views):
        np.testing.assert_array_equal(a.extrinsics, b.extrinsics)
    with pytest.raises(ValueError, match="missing key"):
        TurntableRig.from_json({"cameras": []})


def test_aabb_slab():
    o = np.array([[0.0, 0.0, -5.0], [0.0, 3.0, -5.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    t0, t1, hit = intersect_aabb(o, d, (-1, -1, -1), (1, 1, 1))
    assert hit.tolist() == [True, False]
    assert (t0[0], t1[0]) == (4.0, 6.0)
