import numpy as np
import pytest

from aquasplat.projection import (TILE_SIZE, build_tiles, kernel_value,
                                  project_cloud, tile_ranges)
from aquasplat.scene import Camera, GaussianCloud
from conftest import make_camera, make_cloud


def one_gaussian(pos, log_scale=np.log(0.1)):
    shc = np.zeros((1, 3, 16))
    return GaussianCloud(np.array([pos], dtype=float),
                         np.full((1, 3), log_scale),
                         np.array([[1.0, 0, 0, 0]]),
                         np.zeros(1), shc)


def test_project_on_axis():
    cam = Camera(np.eye(3), np.zeros(3), 100, 100, 50, 50, 100, 100)
    proj = project_cloud(one_gaussian([0, 0, 2]), cam)
    assert len(proj) == 1
    assert np.allclose(proj.mean2d[0], [50, 50])
    assert np.isclose(proj.depth[0], 2.0)


def test_project_covariance_dilation():
    cam = Camera(np.eye(3), np.zeros(3), 100, 100, 50, 50, 100, 100)
    proj = project_cloud(one_gaussian([0, 0, 2], log_scale=np.log(0.1)), cam)
    # J Sigma J^T = (100/2)^2 * 0.01 I = 25 I, plus the 0.3 low-pass floor
    assert np.allclose(proj.cov2d[0], 25.3 * np.eye(2), atol=1e-9)


def test_project_behind_camera_culled():
    cam = Camera(np.eye(3), np.zeros(3), 100, 100, 50, 50, 100, 100)
    assert len(project_cloud(one_gaussian([0, 0, -1]), cam)) == 0
    assert len(project_cloud(one_gaussian([0, 0, 0.005]), cam)) == 0


def test_project_offscreen_culled():
    cam = Camera(np.eye(3), np.zeros(3), 100, 100, 50, 50, 100, 100)
    assert len(project_cloud(one_gaussian([50, 0, 2]), cam)) == 0


def test_kernel_values():
    inv = np.linalg.inv(25.0 * np.eye(2))
    assert np.isclose(kernel_value(np.array([10.0, 10.0]), inv,
                                   np.array([10.0, 10.0])), 1.0)
    v = kernel_value(np.array([0.0, 0.0]), inv, np.array([3.0, 4.0]))
    assert np.isclose(v, np.exp(-0.5))
    far = kernel_value(np.array([0.0, 0.0]), inv, np.array([20.0, 20.0]))
    assert far < np.exp(-4.5)


def test_depth_independent_of_intrinsics(rng):
    cloud = make_cloud(10, rng)
    a = project_cloud(cloud, make_camera(64, 48, f=60.0))
    b = project_cloud(cloud, make_camera(64, 48, f=45.0))
    ia = {i: d for i, d in zip(a.index, a.depth)}
    ib = {i: d for i, d in zip(b.index, b.depth)}
    shared = set(ia) & set(ib)
    assert shared
    for i in shared:
        assert ia[i] == ib[i]


def test_projection_linearity(rng):
    # shrinking the focal lengths by k scales principal-point offsets and
    # the pre-dilation covariance square roots by k
    cloud = make_cloud(8, rng)
    k = 0.5
    a = project_cloud(cloud, make_camera(128, 96, f=80.0))
    b = project_cloud(cloud, make_camera(128, 96, f=80.0 * k))
    common = sorted(set(a.index) & set(b.index))
    for i in common:
        ia = list(a.index).index(i)
        ib = list(b.index).index(i)
        off_a = a.mean2d[ia] - np.array([64, 48])
        off_b = b.mean2d[ib] - np.array([64, 48])
        assert np.allclose(off_b, k * off_a, atol=1e-9)
        ca = a.cov2d[ia] - 0.3 * np.eye(2)
        cb = b.cov2d[ib] - 0.3 * np.eye(2)
        assert np.allclose(cb, k * k * ca, rtol=1e-9, atol=1e-12)


def test_tiles_empty_scene():
    cam = make_camera(64, 48)
    cloud = one_gaussian([0, 0, -5])
    proj = project_cloud(cloud, cam)
    tiles = build_tiles(proj, cam)
    assert tiles.tile_starts[-1] == 0
    assert all(len(tiles.entries(tx, ty)) == 0
               for ty in range(tiles.tiles_y) for tx in range(tiles.tiles_x))


def test_tiles_containment():
    cam = make_camera(64, 48, f=40.0)
    # small footprint near pixel (8, 8): only tile (0, 0) lists it
    cloud = one_gaussian([-0.6, -0.4, 1.0], log_scale=np.log(0.02))
    proj = project_cloud(cloud, cam)
    assert len(proj) == 1
    assert proj.radius[0] < 7.0
    tiles = build_tiles(proj, cam)
    hits = [(tx, ty) for ty in range(tiles.tiles_y)
            for tx in range(tiles.tiles_x) if len(tiles.entries(tx, ty))]
    assert hits == [(0, 0)]


def test_tiles_sorted_by_depth():
    cam = make_camera(32, 32, f=30.0)
    shc = np.zeros((2, 3, 16))
    cloud = GaussianCloud(np.array([[0.0, 0, 2.0], [0.0, 0, 1.0]]),
                          np.full((2, 3), np.log(0.05)),
                          np.tile([1.0, 0, 0, 0], (2, 1)),
                          np.zeros(2), shc)
    proj = project_cloud(cloud, cam)
    tiles = build_tiles(proj, cam)
    ent = tiles.entries(0, 0)
    assert len(ent) == 2
    depths = proj.depth[ent]
    assert depths[0] < depths[1]


def test_tiles_match_bruteforce(rng):
    cam = make_camera(80, 64, f=50.0)
    cloud = make_cloud(40, rng)
    proj = project_cloud(cloud, cam)
    tiles = build_tiles(proj, cam)
    tiles_x, tiles_y, x0, y0, x1, y1 = tile_ranges(proj, cam)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            want = sorted(j for j in range(len(proj))
                          if x0[j] <= tx < x1[j] and y0[j] <= ty < y1[j])
            got = sorted(tiles.entries(tx, ty).tolist())
            assert got == want
            # and the stored order is depth order
            ent = tiles.entries(tx, ty)
            assert np.all(np.diff(proj.depth[ent]) >= 0)


def test_global_sort_breaks_ties_by_index():
    cam = make_camera(32, 32, f=30.0)
    shc = np.zeros((3, 3, 16))
    cloud = GaussianCloud(np.array([[0.1, 0, 2.0], [-0.1, 0, 2.0],
                                    [0.0, 0.1, 2.0]]),
                          np.full((3, 3), np.log(0.05)),
                          np.tile([1.0, 0, 0, 0], (3, 1)),
                          np.zeros(3), shc)
    proj = project_cloud(cloud, cam)
    assert list(proj.index) == [0, 1, 2]
