"""Scene representation: Gaussian cloud, camera, and the combined scene.

Gaussians are stored struct-of-arrays for vectorized math. Scales are kept
in log space (covariance stays positive definite by construction) and
opacities as pre-sigmoid logits, so optimizer steps are unconstrained.
Quaternions may drift off unit norm during optimization; every covariance /
rotation read renormalizes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sh
from .medium import MediumNetwork

DEFAULT_SH_DEGREE = 3


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Return unit quaternions, (..., 4) in (w, x, y, z) order."""
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("degenerate (near-zero) quaternion")
    return q / n


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) -> rotation matrices (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class GaussianCloud:
    """Optimizable Gaussian primitives, one row per Gaussian.

    positions: (N, 3) world units
    log_scales: (N, 3) log of per-axis standard deviation
    rotations: (N, 4) quaternions (w, x, y, z), unit after each optimizer step
    opacity_logits: (N,) pre-sigmoid opacity
    sh_coeffs: (N, 3, K) per-channel SH coefficients, K = (degree+1)^2
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        if not (len(self.log_scales) == len(self.rotations)
                == len(self.opacity_logits) == len(self.sh_coeffs) == n):
            raise ValueError("Gaussian field row counts disagree")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[2]))) - 1

    @property
    def dtype(self):
        return self.positions.dtype

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(*(np.ascontiguousarray(a, dtype=dtype) for a in (
            self.positions, self.log_scales, self.rotations,
            self.opacity_logits, self.sh_coeffs)))

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.log_scales.copy(),
                             self.rotations.copy(), self.opacity_logits.copy(),
                             self.sh_coeffs.copy())


def covariance_of(cloud: GaussianCloud) -> np.ndarray:
    """3D covariances R diag(exp(2 log_scale)) R^T, (N, 3, 3).

    Symmetric positive definite by construction; eigenvalues are
    exp(2 log_scale) up to rotation.
    """
    q = normalize_quaternions(np.asarray(cloud.rotations, dtype=np.float64))
    R = quat_to_rotmat(q)
    s = np.exp(np.asarray(cloud.log_scales, dtype=np.float64))
    M = R * s[:, None, :]
    return M @ np.swapaxes(M, -1, -2)


def sh_color(cloud: GaussianCloud, view_dirs: np.ndarray,
             degree: Optional[int] = None) -> np.ndarray:
    """Per-Gaussian RGB from SH coefficients and unit view directions.

    view_dirs: (N, 3) or (3,) broadcast to all rows. A +0.5 offset is added
    and the result floored at 0 so compositing colors stay nonnegative.
    """
    if degree is None:
        degree = cloud.sh_degree
    degree = min(degree, cloud.sh_degree)
    dirs = np.broadcast_to(np.asarray(view_dirs, dtype=np.float64),
                           (len(cloud), 3))
    basis = sh.sh_basis(dirs, degree)  # (N, K)
    coeffs = np.asarray(cloud.sh_coeffs, dtype=np.float64)[:, :, :basis.shape[1]]
    rgb = 0.5 + np.einsum("nck,nk->nc", coeffs, basis)
    return np.maximum(rgb, 0.0)


@dataclass
class Camera:
    """Pinhole view: world-to-camera rotation/translation plus intrinsics."""

    rotation: np.ndarray    # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("camera pose has wrong shape")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (err={err:.2e})")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def pixel_ray_directions(self, dtype=np.float64) -> np.ndarray:
        """Unit world-space ray directions, one per pixel, (H, W, 3).

        Pixels are sampled at integer coordinates (x, y) with x along width.
        """
        xs = np.arange(self.width, dtype=np.float64)
        ys = np.arange(self.height, dtype=np.float64)
        u = (xs[None, :] - self.cx) / self.fx
        v = (ys[:, None] - self.cy) / self.fy
        d_cam = np.stack([np.broadcast_to(u, (self.height, self.width)),
                          np.broadcast_to(v, (self.height, self.width)),
                          np.ones((self.height, self.width))], axis=-1)
        d_world = d_cam @ self.rotation  # R^T d per pixel
        d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
        return np.ascontiguousarray(d_world, dtype=dtype)

    def scaled(self, factor: float) -> "Camera":
        """Same view at a resolution scaled by `factor`."""
        return Camera(self.rotation, self.translation,
                      self.fx * factor, self.fy * factor,
                      self.cx * factor, self.cy * factor,
                      max(1, int(round(self.width * factor))),
                      max(1, int(round(self.height * factor))))


@dataclass
class GaussianScene:
    """Gaussians plus the medium network. `medium` is None for the
    medium-free ablation (plain splatting)."""

    gaussians: GaussianCloud
    medium: Optional[MediumNetwork]
    scene_extent: float = 1.0
    active_sh_degree: Optional[int] = None  # None renders the full degree

    def __post_init__(self):
        if len(self.gaussians) == 0:
            raise ValueError("scene must contain at least one Gaussian")
        if not self.scene_extent > 0:
            raise ValueError("scene_extent must be positive")


def scene_extent_from_cameras(cameras) -> float:
    """Radius of the bounding sphere of the camera centers."""
    centers = np.stack([c.center for c in cameras])
    radius = float(np.linalg.norm(centers - centers.mean(0), axis=1).max())
    return max(radius, 1e-6)
