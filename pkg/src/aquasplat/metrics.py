"""Image-quality scoring (PSNR / SSIM) and scene evaluation reports."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import losses
from .compositor import render
from .scene import Camera, GaussianScene

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit-range images, capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def ssim_metric(a: np.ndarray, b: np.ndarray) -> float:
    """Same windowed SSIM as the loss module, gradients disabled."""
    return losses.ssim(a, b)


def evaluate(scene: GaussianScene, cameras: Sequence[Camera],
             gt_images: Sequence[np.ndarray],
             clear_gt: Optional[Sequence[np.ndarray]] = None,
             names: Optional[Sequence[str]] = None) -> dict:
    """Per-view and mean PSNR/SSIM of full renders against ground truth;
    adds a restoration block (clear renders vs clear ground truth) when
    clear_gt is given. Report: {per_view: [...], mean: {...}}."""
    if len(cameras) != len(gt_images):
        raise ValueError("view/image count mismatch")
    if clear_gt is not None and len(clear_gt) != len(cameras):
        raise ValueError("view/clear-image count mismatch")
    per_view = []
    for i, (cam, gt) in enumerate(zip(cameras, gt_images)):
        out = render(scene, cam)
        full = np.clip(out.full, 0.0, 1.0)
        row = {
            "view": names[i] if names else i,
            "psnr": psnr(full, gt),
            "ssim": ssim_metric(full, gt),
        }
        if clear_gt is not None:
            clear = np.clip(out.clear, 0.0, 1.0)
            row["restoration_psnr"] = psnr(clear, clear_gt[i])
            row["restoration_ssim"] = ssim_metric(clear, clear_gt[i])
        per_view.append(row)
    keys = [k for k in per_view[0] if k != "view"]
    mean = {k: float(np.mean([r[k] for r in per_view])) for k in keys}
    return {"per_view": per_view, "mean": mean}
