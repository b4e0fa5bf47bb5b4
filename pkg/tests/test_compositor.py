import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aquasplat.compositor import composite_pixel, render
from aquasplat.medium import MediumNetwork, MediumSample
from aquasplat.projection import build_tiles, project_cloud
from aquasplat.scene import GaussianCloud, GaussianScene
from conftest import constant_medium, make_camera, make_cloud, make_scene


def test_empty_pixel_is_pure_medium():
    med = MediumSample(np.array([0.2, 0.3, 0.4]), np.ones(3), np.ones(3))
    full, clear, medium, depth, t = composite_pixel([], np.zeros((0, 3)), [],
                                                    med)
    assert np.array_equal(full, [0.2, 0.3, 0.4])
    assert np.all(clear == 0) and depth == 0 and t == 1.0


def test_single_gaussian_closed_form():
    med = constant_medium(0.5, 0.5, 0.5)
    full, clear, *_ = composite_pixel([0.99], [[1.0, 1, 1]], [2.0], med)
    e1 = math.exp(-1.0)
    want = 0.99 * e1 + 0.5 * (1 - e1) + 0.01 * 0.5 * e1
    assert np.allclose(full, want, atol=1e-12)
    assert np.allclose(clear, 0.99)


def test_unsorted_depths_rejected():
    med = constant_medium()
    with pytest.raises(ValueError):
        composite_pixel([0.5, 0.5], np.ones((2, 3)), [2.0, 1.0], med)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2 ** 31 - 1))
def test_partition_of_unity(n, seed):
    # with sigma_attn == sigma_bs and unit colors the object, segment, and
    # infinity weights sum to exactly 1 (full sums, termination disabled)
    rng = np.random.default_rng(seed)
    alphas = rng.uniform(0, 0.999, n)
    depths = np.sort(rng.uniform(0.01, 8.0, n))
    sig = rng.uniform(0.05, 2.0, 3)
    med = MediumSample(np.ones(3), sig, sig)
    full, *_ = composite_pixel(alphas, np.ones((n, 3)), depths, med,
                               t_stop=0.0)
    assert np.abs(full - 1.0).max() < 1e-12


def test_early_termination_bound(rng):
    # the production default drops at most t_stop of total weight
    for _ in range(50):
        n = int(rng.integers(8, 64))
        alphas = rng.uniform(0.3, 0.999, n)
        depths = np.sort(rng.uniform(0.01, 8.0, n))
        sig = rng.uniform(0.05, 2.0, 3)
        med = MediumSample(np.ones(3), sig, sig)
        full, *_ = composite_pixel(alphas, np.ones((n, 3)), depths, med)
        assert np.abs(full - 1.0).max() <= 1e-4 + 1e-12


def test_monotone_transmittance_and_bounds(rng):
    n = 32
    alphas = rng.uniform(0, 0.999, n)
    colors = rng.uniform(0, 1, (n, 3))
    depths = np.sort(rng.uniform(0.01, 6.0, n))
    sig = rng.uniform(0.1, 1.0, 3)
    med = MediumSample(rng.uniform(0.1, 1.0, 3), sig, sig)
    full, clear, medium, depth, t = composite_pixel(alphas, colors, depths,
                                                    med, t_stop=0.0)
    # boundedness: all colors <= 1 and c_med <= 1 with tied sigmas
    assert np.all(full <= 1.0 + 1e-12)
    assert np.all(full >= 0) and np.all(clear >= 0) and np.all(medium >= 0)
    assert 0.0 <= t <= 1.0


def test_render_matches_reference_walk(rng):
    scene = make_scene(n=10, seed=4)
    cam = make_camera(48, 32, f=40.0)
    out = render(scene, cam)
    proj = project_cloud(scene.gaussians, cam)
    tiles = build_tiles(proj, cam)
    med = scene.medium.sample(cam.pixel_ray_directions())
    for py, px in [(0, 0), (5, 7), (16, 31), (31, 47), (20, 20)]:
        ent = tiles.entries(px // 16, py // 16)
        d = np.array([px, py], dtype=float) - proj.mean2d[ent]
        q = np.einsum("ni,nij,nj->n", d, proj.inv_cov2d[ent], d)
        alphas = proj.opacity[ent] * np.exp(-0.5 * np.maximum(q, 0))
        pix_med = MediumSample(med.c_med[py, px], med.sigma_attn[py, px],
                               med.sigma_bs[py, px])
        full, clear, medium, depth, t = composite_pixel(
            alphas, proj.color[ent], proj.depth[ent], pix_med)
        assert np.allclose(out.full[py, px], full, atol=1e-12)
        assert np.allclose(out.clear[py, px], clear, atol=1e-12)
        assert np.allclose(out.medium_only[py, px], medium, atol=1e-12)
        assert np.isclose(out.depth[py, px], depth, atol=1e-12)
        assert np.isclose(out.transmittance[py, px], t, atol=1e-12)


def test_transparent_scene_renders_medium(rng):
    scene = make_scene(n=8, seed=1)
    scene.gaussians.opacity_logits[:] = -30.0
    cam = make_camera(32, 24, f=30.0)
    out = render(scene, cam)
    med = scene.medium.sample(cam.pixel_ray_directions())
    assert np.abs(out.full - med.c_med).max() < 1e-6
    assert np.allclose(out.transmittance, 1.0)


def test_medium_scale_zero_identity():
    scene = make_scene(n=10, seed=2)
    cam = make_camera(40, 32, f=36.0)
    out = render(scene, cam, medium_scale=0.0)
    med = scene.medium.sample(cam.pixel_ray_directions())
    rhs = out.clear + out.transmittance[:, :, None] * med.c_med
    assert np.abs(out.full - rhs).max() < 1e-12


def test_clear_is_medium_independent():
    scene = make_scene(n=10, seed=3)
    cam = make_camera(40, 32, f=36.0)
    a = render(scene, cam, medium_scale=1.0)
    b = render(scene, cam, medium_scale=7.0)
    assert np.array_equal(a.clear, b.clear)
    scene_no = GaussianScene(scene.gaussians, None, scene.scene_extent)
    c = render(scene_no, cam)
    assert np.array_equal(a.clear, c.clear)
    assert np.array_equal(c.full, c.clear)
    assert np.all(c.medium_only == 0)


def test_output_invariants(rng):
    scene = make_scene(n=20, seed=5)
    cam = make_camera(64, 48, f=50.0)
    out = render(scene, cam)
    for img in (out.full, out.clear, out.medium_only):
        assert np.all(np.isfinite(img)) and np.all(img >= 0)
    assert np.all((out.transmittance >= 0) & (out.transmittance <= 1))
    assert np.all(out.depth >= 0)


def test_resolution_doubling_consistency():
    # doubling the resolution and intrinsics keeps the same pixel rays; the
    # only difference is the fixed 0.3 px^2 dilation, so colors stay close
    scene = make_scene(n=15, seed=6)
    lo = make_camera(32, 24, f=30.0)
    hi = lo.scaled(2.0)
    a = render(scene, lo)
    b = render(scene, hi)
    diff = np.abs(b.full[::2, ::2] - a.full)
    assert diff.mean() < 0.02


def test_sh_degree_override():
    scene = make_scene(n=8, seed=7)
    a = render(scene, make_camera(32, 24), sh_degree=0)
    scene.active_sh_degree = 0
    b = render(scene, make_camera(32, 24))
    assert np.array_equal(a.full, b.full)


def test_normalized_depth():
    from aquasplat.compositor import normalized_depth
    scene = make_scene(n=10, seed=2)
    scene.gaussians.positions[:, 2] = 2.0
    cam = make_camera(40, 32, f=36.0)
    out = render(scene, cam)
    norm = normalized_depth(out)
    covered = out.transmittance < 0.9
    # where splats land, the weighted mean depth is the common plane depth
    assert np.abs(norm[covered] - 2.0).max() < 0.35
    assert np.all(norm[out.transmittance >= 1.0 - 1e-12] == 0)
