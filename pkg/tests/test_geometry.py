import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from urbanscene.geometry import (
    EPSILON_DEPTH, CameraIntrinsics, CameraPoint, DepthTooSmall, DisparityTooSmall, MapPoint, camera_to_map,
    camera_to_map_array, map_to_camera_array, normalize_angle, project, rotate2d, unproject, unproject_array,
)
from urbanscene.localization import EgoPose

RIG = CameraIntrinsics(f_u=1000.0, b_prime=0.4, c_u=0.0, c_v=0.0, width=1024, height=768)


def test_project_hand_example():
    u, d = project(CameraPoint(20.0, 2.0), RIG)
    assert (u, d) == pytest.approx((100.0, 20.0))


def test_optical_axis_maps_to_principal_column(cam):
    u, d = project(CameraPoint(5.0, 0.0), cam)
    assert u == pytest.approx(512.0)
    assert d == pytest.approx(80.0)


def test_rig_baseline_disparity():
    assert project(CameraPoint(4.0, 0.0), RIG)[1] == pytest.approx(100.0)


def test_unproject_hand_example():
    p = unproject(100.0, 20.0, RIG)
    assert (p.x_north_cam, p.x_east_cam) == pytest.approx((20.0, 2.0))


def test_unproject_principal_column(cam):
    assert unproject(cam.c_u, 7.3, cam).x_east_cam == 0.0


def test_depth_and_disparity_guards(cam):
    with pytest.raises(DepthTooSmall):
        project(CameraPoint(EPSILON_DEPTH, 1.0), cam)
    with pytest.raises(DisparityTooSmall):
        unproject(10.0, 0.5, cam)
    with pytest.raises(DisparityTooSmall):
        unproject_array([10.0, 20.0], [3.0, 0.2], cam)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(f_u=-1.0, b_prime=0.4, c_u=0, c_v=0, width=10, height=10)
    assert CameraIntrinsics.default(fast=True).scale == pytest.approx(0.25)


def test_camera_to_map_examples():
    p = CameraPoint(10.0, 2.0)
    assert camera_to_map(p, EgoPose(MapPoint(0, 0), 0.0)).as_array() == pytest.approx([10, 2])
    assert camera_to_map(p, EgoPose(MapPoint(0, 0), math.pi / 2)).as_array() == pytest.approx([-2, 10])
    q = camera_to_map(CameraPoint(10.0, 0.0), EgoPose(MapPoint(5, 5), math.pi))
    assert q.as_array() == pytest.approx([-5, 5])
    r = camera_to_map(CameraPoint(10.0, 2.0), EgoPose(MapPoint(100, 200), math.pi / 2))
    assert r.as_array() == pytest.approx([98, 210])


def test_rotate2d_examples():
    p = MapPoint(1.0, 0.0)
    assert rotate2d(0.0, p) == p
    assert rotate2d(math.pi / 2, p).as_array() == pytest.approx([0.0, 1.0], abs=1e-15)


def test_normalize_angle_range():
    assert normalize_angle(math.pi) == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert normalize_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


valid_north = st.floats(min_value=0.51, max_value=500.0)
any_east = st.floats(min_value=-200.0, max_value=200.0)
angles = st.floats(min_value=-math.pi, max_value=math.pi)
coords = st.floats(min_value=-1e3, max_value=1e3)


@given(valid_north, any_east)
def test_round_trip_property(north, east):
    cam = CameraIntrinsics.default()
    u, d = project(CameraPoint(north, east), cam)
    if d <= 0.5:  # beyond the disparity guard; nothing to round-trip
        return
    back = unproject(u, d, cam)
    assert abs(back.x_north_cam - north) < 1e-9
    assert abs(back.x_east_cam - east) < 1e-9


@given(angles, coords, coords)
def test_rotation_inverse_and_norm(theta, n, e):
    p = MapPoint(n, e)
    q = rotate2d(theta, p)
    assert abs(math.hypot(q.north, q.east) - math.hypot(n, e)) < 1e-12 * max(1.0, abs(n) + abs(e))
    back = rotate2d(-theta, q)
    assert back.as_array() == pytest.approx(p.as_array(), abs=1e-12 * max(1.0, abs(n) + abs(e)))


@given(valid_north, valid_north)
def test_disparity_decreasing_in_depth(z1, z2):
    cam = CameraIntrinsics.default()
    if z1 == z2:
        return
    near, far = sorted((z1, z2))
    assert project(CameraPoint(near, 0.0), cam)[1] > project(CameraPoint(far, 0.0), cam)[1]


def test_camera_to_map_isometry_bulk(rng):
    pts = rng.uniform(-50, 50, size=(300, 2))
    for theta in rng.uniform(-math.pi, math.pi, size=20):
        pos = rng.uniform(-100, 100, size=2)
        m = camera_to_map_array(pts, pos, theta)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d1 = np.linalg.norm(m[:, None] - m[None], axis=-1)
        assert np.max(np.abs(d0 - d1)) < 1e-9
        assert np.max(np.abs(map_to_camera_array(m, pos, theta) - pts)) < 1e-9


def test_array_and_scalar_paths_agree(cam, rng):
    u = rng.uniform(0, cam.width, 50)
    d = rng.uniform(1, 100, 50)
    arr = unproject_array(u, d, cam)
    for k in range(50):
        p = unproject(u[k], d[k], cam)
        assert arr[k] == pytest.approx([p.x_north_cam, p.x_east_cam])
