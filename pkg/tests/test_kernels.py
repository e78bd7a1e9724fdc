import numpy as np
import pytest

from promptdet3d import _pykernels
from promptdet3d import kernels
from promptdet3d.geometry import make_rays, Intrinsics, random_rotation

from conftest import random_box

try:
    from promptdet3d import _kernels
except ImportError:  # extension not built
    _kernels = None

compiled = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@compiled
def test_intersection_backends_agree(rng):
    for _ in range(300):
        a, b = random_box(rng), random_box(rng)
        args = (a.center, a.rotation, a.dims, b.center, b.rotation, b.dims)
        assert abs(_kernels.box_intersection_volume(*args) - _pykernels.box_intersection_volume(*args)) <= 1e-12


@pytest.mark.parametrize("impl", [_pykernels, _kernels] if _kernels else [_pykernels])
def test_intersection_contained_box(impl):
    # small box strictly inside a big one: volume of the small one
    v = impl.box_intersection_volume([0, 0, 0], np.eye(3), [0.5, 0.5, 0.5], [0.1, 0, 0], random_rotation(np.random.default_rng(0)), [5, 5, 5])
    assert abs(v - 0.125) <= 1e-12


@pytest.mark.parametrize("impl", [_pykernels, _kernels] if _kernels else [_pykernels])
def test_raycast_hits_axis_aligned_box(impl):
    depth, index, face = impl.raycast_cuboids(np.array([[0.0, 1.0]]), np.array([[0.0, 0.0]]),
                                              np.array([[0.0, 0.0, 5.0]]), np.eye(3)[None], np.array([[1.0, 1.0, 2.0]]))
    assert depth[0, 0] == 4.0 and index[0, 0] == 0 and face[0, 0] == 4  # -z face
    assert np.isinf(depth[0, 1]) and index[0, 1] == -1


@compiled
def test_raycast_backends_agree(rng):
    K = Intrinsics(90.0, 90.0, 64.0, 48.0, 128, 96)
    rays = make_rays(K, 96, 128)
    boxes = [random_box(rng, spread=1.5, center=(0, 0, 6)) for _ in range(6)]
    args = (rays[..., 0], rays[..., 1], np.stack([b.center for b in boxes]),
            np.stack([b.rotation for b in boxes]), np.stack([b.dims for b in boxes]))
    d1, i1, f1 = _pykernels.raycast_cuboids(*args)
    d2, i2, f2 = _kernels.raycast_cuboids(*args)
    assert np.array_equal(i1, i2) and np.array_equal(f1, f2)
    hit = np.isfinite(d1)
    assert hit.any()
    np.testing.assert_allclose(d1[hit], d2[hit], rtol=0, atol=1e-12)
