import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptdet3d.geometry import (
    Box3D, GeometryError, Intrinsics, UnprojectableBox, box3d_corners, iou3d, iou3d_mc, make_rays,
    pixel_rays, project_box, random_rotation, rot6d_to_matrix, rotation_y, rotation_z,
)

from conftest import random_box, random_overlapping_pair


# --- rays ---

def test_pixel_rays_examples():
    K = Intrinsics(1.0, 1.0, 0.0, 0.0, 10, 10)
    assert pixel_rays(K, 0.0, 0.0).tolist() == [0.0, 0.0]
    K2 = Intrinsics(2.0, 2.0, 0.0, 0.0, 10, 10)
    assert pixel_rays(K2, 4.0, 2.0).tolist() == [2.0, 1.0]
    K3 = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    assert pixel_rays(K3, 320.0, 240.0).tolist() == [0.0, 0.0]


def test_make_rays_matches_inverse_calibration(camera):
    rays = make_rays(camera, 6, 8)
    assert rays.shape == (6, 8, 2)
    Kinv = np.linalg.inv(camera.matrix())
    u = (3 + 0.5) * camera.width / 8
    v = (2 + 0.5) * camera.height / 6
    r = Kinv @ [u, v, 1.0]
    np.testing.assert_allclose(rays[2, 3], r[:2] / r[2], rtol=0, atol=1e-12)


@pytest.mark.parametrize("s", [2, 3])
def test_make_rays_zoom_consistency(camera, s):
    np.testing.assert_allclose(make_rays(camera, 12, 16), make_rays(camera.scaled(s), 12, 16), atol=1e-12)


def test_make_rays_rejects_invalid():
    with pytest.raises(GeometryError):
        Intrinsics(0.0, 1.0, 0.0, 0.0, 10, 10)
    with pytest.raises(GeometryError):
        Intrinsics(1.0, 1.0, 20.0, 0.0, 10, 10)
    with pytest.raises(GeometryError):
        make_rays(Intrinsics(1.0, 1.0, 0.0, 0.0, 10, 10), 0, 4)


# --- rotations ---

def test_rot6d_examples():
    assert np.array_equal(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))
    assert np.array_equal(rot6d_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3))


@pytest.mark.parametrize("v", [[0, 0, 0, 0, 1, 0], [1, 2, 3, 2, 4, 6]])
def test_rot6d_degenerate(v):
    with pytest.raises(GeometryError):
        rot6d_to_matrix(v)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_rot6d_orthonormal(v):
    v = np.asarray(v)
    a, b = v[:3], v[3:]
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(np.cross(a, b)) < 1e-3:
        return
    R = rot6d_to_matrix(v)
    assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-6
    assert abs(np.linalg.det(R) - 1) <= 1e-6


# --- corners ---

def test_corners_unit_cube():
    c = box3d_corners(Box3D([0, 0, 0], [1, 1, 1]))
    assert {tuple(p) for p in c} == set(itertools.product([-0.5, 0.5], repeat=3))
    # sign-lattice order
    assert c[0].tolist() == [-0.5, -0.5, -0.5] and c[1].tolist() == [-0.5, -0.5, 0.5]
    assert c[7].tolist() == [0.5, 0.5, 0.5]


def test_corners_offset_box():
    c = box3d_corners(Box3D([0, 0, 5], [2, 2, 2]))
    assert set(c[:, 2].tolist()) == {4.0, 6.0}


def test_corners_yaw_90_is_axis_permutation():
    b = Box3D([0, 0, 0], [1, 2, 3], rotation_y(np.pi / 2))
    got = {tuple(np.round(p, 12) + 0.0) for p in box3d_corners(b)}
    ref = {(sx * 1.5, sy * 1.0, sz * 0.5) for sx, sy, sz in itertools.product([-1, 1], repeat=3)}
    assert got == ref


# --- IoU ---

def test_iou_examples():
    a = Box3D([0, 0, 5], [1, 1, 1])
    assert iou3d(a, a) == 1.0
    assert iou3d(a, Box3D([10, 0, 5], [1, 1, 1])) == 0.0
    assert abs(iou3d(a, Box3D([0.5, 0, 5], [1, 1, 1])) - 1 / 3) <= 1e-9


def _aabb_iou(a: Box3D, b: Box3D) -> float:
    lo = np.maximum(a.center - a.dims / 2, b.center - b.dims / 2)
    hi = np.minimum(a.center + a.dims / 2, b.center + b.dims / 2)
    inter = np.prod(np.clip(hi - lo, 0, None))
    return inter / (a.volume + b.volume - inter)


def test_iou_axis_aligned_closed_form(rng):
    for _ in range(200):
        a = Box3D(rng.normal(size=3) * 0.5, rng.uniform(0.3, 2, 3))
        b = Box3D(rng.normal(size=3) * 0.5, rng.uniform(0.3, 2, 3))
        assert abs(iou3d(a, b) - _aabb_iou(a, b)) <= 1e-9


def test_iou_rotated_about_shared_axis_matches_2d_polygon(rng):
    """Yaw-only boxes sharing y extents: IoU reduces to a 2D polygon intersection (shapely oracle)."""
    shapely = pytest.importorskip("shapely.geometry")

    def footprint(b):
        c = box3d_corners(b)
        return shapely.Polygon([(c[i, 0], c[i, 2]) for i in (0, 1, 5, 4)])

    for _ in range(50):
        h = rng.uniform(0.5, 2)
        a = Box3D([*rng.normal(size=1) * 0.3, 0, 5 + rng.normal() * 0.3], [rng.uniform(.5, 2), h, rng.uniform(.5, 2)],
                  rotation_y(rng.uniform(-np.pi, np.pi)))
        b = Box3D([*rng.normal(size=1) * 0.3, 0, 5 + rng.normal() * 0.3], [rng.uniform(.5, 2), h, rng.uniform(.5, 2)],
                  rotation_y(rng.uniform(-np.pi, np.pi)))
        pa, pb = footprint(a), footprint(b)
        inter = pa.intersection(pb).area
        expect = inter / (pa.area + pb.area - inter)
        assert abs(iou3d(a, b) - expect) <= 1e-9


def test_iou_degenerate_is_zero():
    a = Box3D([0, 0, 5], [1, 1, 1])
    assert iou3d(a, Box3D([0, 0, 5], [1, 1, 1e-7])) == 0.0


def test_iou_properties(rng):
    for _ in range(100):
        a, b = random_box(rng), random_box(rng)
        v = iou3d(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou3d(b, a)
        assert abs(iou3d(a, a) - 1.0) <= 1e-12
        R0, t0 = random_rotation(rng), rng.normal(size=3) * 3
        assert abs(iou3d(a.transformed(R0, t0), b.transformed(R0, t0)) - v) <= 1e-9


def test_iou_matches_monte_carlo(rng):
    for i in range(30):
        a, b = random_overlapping_pair(rng)
        assert abs(iou3d(a, b) - iou3d_mc(a, b, 200_000, seed=i)) <= 0.01


def test_iou_mc_exact_cases():
    a = Box3D([0, 0, 5], [1, 2, 3], rotation_z(0.3))
    assert iou3d_mc(a, a, 1000, seed=7) == 1.0
    assert iou3d_mc(a, Box3D([10, 0, 5], [1, 1, 1]), 1000, seed=7) == 0.0
    off = iou3d_mc(Box3D([0, 0, 5], [1, 1, 1]), Box3D([0.5, 0, 5], [1, 1, 1]), 200_000, seed=3)
    assert abs(off - 1 / 3) <= 0.01


# --- projection ---

def test_project_examples():
    K = Intrinsics(100.0, 100.0, 0.0, 0.0, 100, 100)
    uv = project_box(K, Box3D([0, 0, 5], [1, 1, 1]))
    np.testing.assert_allclose(uv.mean(axis=0), [0, 0], atol=1e-12)
    from promptdet3d.geometry import project_points
    assert project_points(K, np.array([[1.0, 0.0, 2.0]]))[0, 0] == 50.0


def test_project_rotated_box_by_hand():
    K = Intrinsics(200.0, 180.0, 64.0, 48.0, 128, 96)
    b = Box3D([0.5, -0.2, 6.0], [1.0, 2.0, 3.0], rotation_y(np.pi / 2))
    uv = project_box(K, b)
    # yaw 90 deg maps local (x, y, z) to (z, y, -x)
    for i, (sx, sy, sz) in enumerate(itertools.product([-1, 1], repeat=3)):
        lx, ly, lz = 0.5 * sx, 1.0 * sy, 1.5 * sz
        X, Y, Z = 0.5 + lz, -0.2 + ly, 6.0 - lx
        np.testing.assert_allclose(uv[i], [200 * X / Z + 64, 180 * Y / Z + 48], atol=1e-9)


def test_project_behind_camera():
    K = Intrinsics(100.0, 100.0, 0.0, 0.0, 100, 100)
    with pytest.raises(UnprojectableBox):
        project_box(K, Box3D([0, 0, 0.2], [1, 1, 1]))


def test_box_validation():
    with pytest.raises(GeometryError):
        Box3D([0, 0, 1], [1, 0, 1])
    with pytest.raises(GeometryError):
        Box3D([0, 0, 1], [1, 1, 1], np.diag([1.0, 1.0, -1.0]))
