"""Front-to-back compositing interleaved with closed-form medium segments.

Per pixel, with depth-sorted Gaussians (s_0 = 0, T_1 = 1):

    full = sum_i T_i a_i c_i exp(-sattn s_i)
         + sum_i T_i c_med [exp(-sbs s_{i-1}) - exp(-sbs s_i)]
         + T_{N+1} c_med exp(-sbs s_N)

with T_{i+1} = T_i (1 - a_i), componentwise over RGB. The three sums are a
partition of unity when sattn = sbs and all colors are 1. `clear` drops both
attenuation and medium (the restored scene), `medium_only` keeps only the
medium sums, and depth is unnormalized alpha-blended depth.

Entries with alpha < 1/255 are skipped; the walk stops once T < 1e-4, also
dropping the beyond-the-last-Gaussian term (bounded error < 1e-4).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .medium import MediumSample
from .projection import ProjectedGaussians, TileIndex, build_tiles, project_cloud
from .scene import Camera, GaussianScene

ALPHA_SKIP = _kernels.ALPHA_SKIP
ALPHA_CLAMP = _kernels.ALPHA_CLAMP
T_STOP = _kernels.T_STOP


@dataclass
class RenderOutput:
    full: np.ndarray            # (H, W, 3)
    clear: np.ndarray           # (H, W, 3) restoration
    medium_only: np.ndarray     # (H, W, 3)
    depth: np.ndarray           # (H, W) alpha-blended camera-space z
    transmittance: np.ndarray   # (H, W) object transmittance after the walk


@dataclass
class RenderCache:
    """Forward state reused by the backward pass (and by finite-difference
    loops that perturb only one stage)."""

    proj: ProjectedGaussians
    tiles: TileIndex
    sh_degree: Optional[int]
    medium_scale: float
    t_stop: float
    med: Optional[MediumSample]          # unscaled, (H, W, 3) each
    med_images: Optional[tuple]          # scaled float64 (c, sattn, sbs)
    med_activations: Optional[tuple]     # MLP forward state for backward
    rays_enc: Optional[np.ndarray]       # (H*W, 25) medium encoding
    t_final: np.ndarray
    n_proc: np.ndarray


def composite_pixel(alphas: np.ndarray, colors: np.ndarray, depths: np.ndarray,
                    med: MediumSample, medium_scale: float = 1.0,
                    t_stop: float = T_STOP):
    """Reference single-pixel walk; the tiled kernels must match it.

    alphas (N,), colors (N, 3), depths (N,) ascending. Returns
    (full, clear, medium, depth, t_final).
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(np.diff(depths) < 0):
        raise ValueError("depths must be sorted ascending")
    sa = medium_scale * np.asarray(med.sigma_attn, dtype=np.float64)
    sb = medium_scale * np.asarray(med.sigma_bs, dtype=np.float64)
    cm = np.asarray(med.c_med, dtype=np.float64)

    T = 1.0
    full = np.zeros(3)
    clear = np.zeros(3)
    medium = np.zeros(3)
    depth_out = 0.0
    prev_b = np.ones(3)
    stopped = False
    for a, c, s in zip(alphas, colors, depths):
        if T < t_stop:
            stopped = True
            break
        b = np.exp(-sb * s)
        medium += T * cm * (prev_b - b)
        prev_b = b
        if a < ALPHA_SKIP:
            continue
        a = min(a, ALPHA_CLAMP)
        w = T * a
        full += w * c * np.exp(-sa * s)
        clear += w * c
        depth_out += w * s
        T *= 1.0 - a
    if not stopped:
        medium += T * cm * prev_b
    full = full + medium
    return full, clear, medium, depth_out, T


def normalized_depth(out: RenderOutput, eps: float = 1e-6) -> np.ndarray:
    """Alpha-weight-normalized depth: depth / sum(T_i a_i). The raw blend
    under-reports depth where the background transmittance stays high."""
    weight = 1.0 - out.transmittance
    return np.where(weight > eps, out.depth / np.maximum(weight, eps), 0.0)


def _medium_images(scene: GaussianScene, cam: Camera, medium_scale: float,
                   rays_enc: Optional[np.ndarray] = None):
    """Per-pixel medium triple as float64 (H, W, 3) kernel inputs."""
    net = scene.medium
    if rays_enc is None:
        dirs = cam.pixel_ray_directions(dtype=net.dtype)
        rays_enc = np.ascontiguousarray(dirs.reshape(-1, 3))
        from .medium import encode_directions
        rays_enc = encode_directions(rays_enc, dtype=net.dtype)
    acts = net._forward(rays_enc)
    h1, h2, zc, za, zb = acts
    from .medium import _sigmoid, _softplus
    shape = (cam.height, cam.width, 3)
    med = MediumSample(
        c_med=_sigmoid(zc).reshape(shape).astype(np.float64),
        sigma_attn=_softplus(za).reshape(shape).astype(np.float64),
        sigma_bs=_softplus(zb).reshape(shape).astype(np.float64))
    images = (np.ascontiguousarray(med.c_med),
              np.ascontiguousarray(medium_scale * med.sigma_attn),
              np.ascontiguousarray(medium_scale * med.sigma_bs))
    return med, images, acts, rays_enc


def _run_forward(proj: ProjectedGaussians, tiles: TileIndex, cam: Camera,
                 med_images, has_medium: bool, t_stop: float = T_STOP):
    H, W = cam.height, cam.width
    full = np.zeros((H, W, 3))
    clear = np.zeros((H, W, 3))
    medium = np.zeros((H, W, 3))
    depth_img = np.zeros((H, W))
    t_final = np.ones((H, W))
    n_proc = np.zeros((H, W), dtype=np.int32)
    if has_medium:
        cimg, aimg, bimg = med_images
    else:
        cimg = aimg = bimg = np.zeros((1, 1, 3))
    invcov = np.ascontiguousarray(
        np.stack([proj.inv_cov2d[:, 0, 0], proj.inv_cov2d[:, 0, 1],
                  proj.inv_cov2d[:, 1, 1]], axis=1)) if len(proj) else \
        np.zeros((0, 3))
    _kernels.forward(tiles.tile_starts, tiles.tile_entries, tiles.tiles_x,
                     np.ascontiguousarray(proj.mean2d), invcov,
                     np.ascontiguousarray(proj.opacity),
                     np.ascontiguousarray(proj.color),
                     np.ascontiguousarray(proj.depth),
                     cimg, aimg, bimg, has_medium, t_stop,
                     full, clear, medium, depth_img, t_final, n_proc)
    return RenderOutput(full, clear, medium, depth_img, t_final), n_proc, invcov


def render(scene: GaussianScene, cam: Camera, medium_scale: float = 1.0,
           sh_degree: Optional[int] = None,
           rays_enc: Optional[np.ndarray] = None,
           want_cache: bool = False, t_stop: float = T_STOP):
    """Render a view. medium_scale rescales both extinction coefficients
    (1 reproduces the model; 0 removes the medium's falloff so
    full = clear + T_final * c_med). Returns RenderOutput, and the forward
    cache when want_cache is set."""
    if sh_degree is None:
        sh_degree = scene.active_sh_degree
    proj = project_cloud(scene.gaussians, cam, sh_degree=sh_degree)
    tiles = build_tiles(proj, cam)
    has_medium = scene.medium is not None
    if has_medium:
        med, med_images, med_acts, rays_enc = _medium_images(
            scene, cam, medium_scale, rays_enc)
    else:
        med, med_images, med_acts = None, None, None
    out, n_proc, _ = _run_forward(proj, tiles, cam, med_images, has_medium,
                                  t_stop)
    if not want_cache:
        return out
    cache = RenderCache(proj=proj, tiles=tiles, sh_degree=sh_degree,
                        medium_scale=medium_scale, t_stop=t_stop, med=med,
                        med_images=med_images, med_activations=med_acts,
                        rays_enc=rays_enc, t_final=out.transmittance,
                        n_proc=n_proc)
    return out, cache
