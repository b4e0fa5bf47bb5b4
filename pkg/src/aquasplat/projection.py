"""EWA projection of 3D Gaussians into a camera and 16x16 tile binning.

Depth is camera-space metric z (the medium terms exponentiate sigma * depth,
which needs metric distance, not NDC). The 2D covariance gets a +0.3 px^2
low-pass dilation on the diagonal to avoid sub-pixel aliasing and singular
footprints. The frame uses one global stable depth sort shared by all tiles;
ties break by scene index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scene import Camera, GaussianCloud, covariance_of, sh_color

TILE_SIZE = 16
NEAR_PLANE = 0.01
COV2D_DILATION = 0.3


@dataclass
class ProjectedGaussians:
    """Screen-space Gaussians surviving the near-plane and frustum cull,
    sorted by (depth, scene index). All arrays share leading length M."""

    index: np.ndarray      # (M,) int32 row into the scene cloud
    mean2d: np.ndarray     # (M, 2) pixels
    cov2d: np.ndarray      # (M, 2, 2) pixels^2, after dilation
    inv_cov2d: np.ndarray  # (M, 2, 2)
    depth: np.ndarray      # (M,) camera-space z
    radius: np.ndarray     # (M,) pixels, 3 sigma of the major axis
    color: np.ndarray      # (M, 3) from sh_color at this view
    opacity: np.ndarray    # (M,) sigmoid(opacity_logit)
    t_cam: np.ndarray      # (M, 3) camera-space centers (cached for backward)

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class TileIndex:
    """Per-tile lists of projected-Gaussian rows, depth-ascending.

    Entries for tile t are tile_entries[tile_starts[t]:tile_starts[t+1]];
    values index into the ProjectedGaussians arrays.
    """

    tiles_x: int
    tiles_y: int
    tile_starts: np.ndarray   # (tiles_x*tiles_y + 1,) int64
    tile_entries: np.ndarray  # (total,) int32

    def entries(self, tx: int, ty: int) -> np.ndarray:
        t = ty * self.tiles_x + tx
        return self.tile_entries[self.tile_starts[t]:self.tile_starts[t + 1]]


def project_cloud(cloud: GaussianCloud, cam: Camera,
                  sh_degree: Optional[int] = None) -> ProjectedGaussians:
    """Project every Gaussian; culled rows (behind the near plane or with a
    3-sigma box off screen) are dropped. Output is depth-sorted."""
    pos = np.asarray(cloud.positions, dtype=np.float64)
    R, trans = cam.rotation, cam.translation
    t = pos @ R.T + trans
    in_front = t[:, 2] > NEAR_PLANE

    tz = np.where(in_front, t[:, 2], 1.0)
    mean2d = np.stack([cam.fx * t[:, 0] / tz + cam.cx,
                       cam.fy * t[:, 1] / tz + cam.cy], axis=1)

    J = np.zeros((len(pos), 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * t[:, 0] / tz ** 2
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * t[:, 1] / tz ** 2

    sigma = covariance_of(cloud)
    V = np.einsum("ij,njk,lk->nil", R, sigma, R)  # R Sigma R^T
    cov2d = np.einsum("nij,njk,nlk->nil", J, V, J)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))

    on_screen = ((mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius <= cam.width - 1)
                 & (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius <= cam.height - 1))
    keep = in_front & on_screen & (det > 1e-12)
    idx = np.nonzero(keep)[0]

    order = np.argsort(t[idx, 2], kind="stable")  # ties keep scene order
    idx = idx[order]

    inv = np.empty((len(idx), 2, 2))
    d = det[idx]
    inv[:, 0, 0] = cov2d[idx, 1, 1] / d
    inv[:, 1, 1] = cov2d[idx, 0, 0] / d
    inv[:, 0, 1] = inv[:, 1, 0] = -cov2d[idx, 0, 1] / d

    dirs = pos[idx] - cam.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    kept_cloud = GaussianCloud(cloud.positions[idx], cloud.log_scales[idx],
                               cloud.rotations[idx], cloud.opacity_logits[idx],
                               cloud.sh_coeffs[idx])
    color = sh_color(kept_cloud, dirs, degree=sh_degree)

    from .medium import _sigmoid
    opac = _sigmoid(np.asarray(cloud.opacity_logits, dtype=np.float64)[idx])

    return ProjectedGaussians(
        index=idx.astype(np.int32), mean2d=mean2d[idx], cov2d=cov2d[idx],
        inv_cov2d=inv, depth=t[idx, 2], radius=radius[idx], color=color,
        opacity=opac, t_cam=t[idx])


def kernel_value(mean2d: np.ndarray, inv_cov2d: np.ndarray,
                 pixel: np.ndarray) -> np.ndarray:
    """Gaussian falloff exp(-0.5 d^T inv_cov d) at pixel coordinates."""
    d = np.asarray(pixel, dtype=np.float64) - mean2d
    q = np.einsum("...i,...ij,...j->...", d, inv_cov2d, d)
    return np.exp(-0.5 * q)


def tile_ranges(proj: ProjectedGaussians, cam: Camera):
    """Inclusive-exclusive tile spans [x0, x1) x [y0, y1) per Gaussian."""
    tiles_x = (cam.width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (cam.height + TILE_SIZE - 1) // TILE_SIZE
    x0 = np.clip(np.floor((proj.mean2d[:, 0] - proj.radius) / TILE_SIZE), 0, tiles_x).astype(np.int64)
    y0 = np.clip(np.floor((proj.mean2d[:, 1] - proj.radius) / TILE_SIZE), 0, tiles_y).astype(np.int64)
    x1 = np.clip(np.floor((proj.mean2d[:, 0] + proj.radius) / TILE_SIZE) + 1, 0, tiles_x).astype(np.int64)
    y1 = np.clip(np.floor((proj.mean2d[:, 1] + proj.radius) / TILE_SIZE) + 1, 0, tiles_y).astype(np.int64)
    return tiles_x, tiles_y, x0, y0, x1, y1


def build_tiles(proj: ProjectedGaussians, cam: Camera) -> TileIndex:
    """Bin projected Gaussians into every 16x16 tile their 3-sigma box
    overlaps. Lists inherit the global depth order."""
    tiles_x, tiles_y, x0, y0, x1, y1 = tile_ranges(proj, cam)
    ntiles = tiles_x * tiles_y
    w = np.maximum(x1 - x0, 0)
    h = np.maximum(y1 - y0, 0)
    n = w * h
    total = int(n.sum())
    if total == 0:
        return TileIndex(tiles_x, tiles_y,
                         np.zeros(ntiles + 1, dtype=np.int64),
                         np.empty(0, dtype=np.int32))
    rows = np.repeat(np.arange(len(proj)), n)
    offs = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    wr = w[rows]
    tiles = (y0[rows] + offs // wr) * tiles_x + x0[rows] + offs % wr
    order = np.argsort(tiles, kind="stable")  # within a tile, row order = depth order
    entries = rows[order].astype(np.int32)
    starts = np.zeros(ntiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tiles, minlength=ntiles), out=starts[1:])
    return TileIndex(tiles_x, tiles_y, starts, entries)
