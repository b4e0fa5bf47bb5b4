"""Training losses: plain and weight-regularized L1/L2/D-SSIM.

The regularized family applies a stop-gradient pixel weight
w = 1 / (prediction + eps) that boosts dark regions; the weight is a
constant during differentiation. SSIM uses the standard 11x11 Gaussian
window (sigma 1.5), K1 = 0.01, K2 = 0.03 at unit dynamic range, averaged
over valid windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEFAULT_EPSILON = 1e-3
DEFAULT_LAMBDA = 0.2


class PixelLoss(str, Enum):
    L1 = "l1"
    L2 = "l2"
    REG_L1 = "regl1"
    REG_L2 = "regl2"


class FrameLoss(str, Enum):
    DSSIM = "dssim"
    REG_DSSIM = "regdssim"


@dataclass
class LossConfig:
    lam: float = DEFAULT_LAMBDA           # frame-loss mixing weight
    epsilon: float = DEFAULT_EPSILON      # weight-map floor
    pixel_loss: PixelLoss = PixelLoss.REG_L2
    frame_loss: FrameLoss = FrameLoss.REG_DSSIM

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.pixel_loss = PixelLoss(self.pixel_loss)
        self.frame_loss = FrameLoss(self.frame_loss)

    @classmethod
    def from_preset(cls, preset: str, lam: float = DEFAULT_LAMBDA,
                    epsilon: float = DEFAULT_EPSILON) -> "LossConfig":
        """Parse names like "regl2+regdssim" or "l1+dssim"."""
        try:
            pixel, frame = preset.lower().split("+")
            return cls(lam=lam, epsilon=epsilon, pixel_loss=PixelLoss(pixel),
                       frame_loss=FrameLoss(frame))
        except ValueError:
            raise ValueError(f"unknown loss preset {preset!r}") from None


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray  # d value / d prediction, same shape


def weight_map(prediction: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Stop-gradient pixel weights 1 / (prediction + eps)."""
    return 1.0 / (np.asarray(prediction, dtype=np.float64) + epsilon)


def _check_shapes(prediction, target):
    if prediction.shape != target.shape:
        raise ValueError("prediction/target shape mismatch")


def l2(prediction: np.ndarray, target: np.ndarray) -> LossOutput:
    _check_shapes(prediction, target)
    r = prediction - target
    return LossOutput(float(np.mean(r * r)), 2.0 * r / r.size)


def l1(prediction: np.ndarray, target: np.ndarray) -> LossOutput:
    _check_shapes(prediction, target)
    r = prediction - target
    return LossOutput(float(np.mean(np.abs(r))), np.sign(r) / r.size)


def reg_l2(prediction: np.ndarray, target: np.ndarray,
           epsilon: float = DEFAULT_EPSILON) -> LossOutput:
    _check_shapes(prediction, target)
    w = weight_map(prediction, epsilon)
    r = w * (prediction - target)
    return LossOutput(float(np.mean(r * r)), 2.0 * w * r / r.size)


def reg_l1(prediction: np.ndarray, target: np.ndarray,
           epsilon: float = DEFAULT_EPSILON) -> LossOutput:
    _check_shapes(prediction, target)
    w = weight_map(prediction, epsilon)
    r = w * (prediction - target)
    return LossOutput(float(np.mean(np.abs(r))), w * np.sign(r) / r.size)


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2
    w = np.exp(-(x * x) / (2 * sigma * sigma))
    return w / w.sum()


_WINDOW = _gaussian_window()
_HALF = SSIM_WINDOW // 2


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Separable windowed mean over valid (fully inside) windows.

    img is (H, W, C); output (H-10, W-10, C).
    """
    out = correlate1d(img, _WINDOW, axis=0, mode="constant")
    out = correlate1d(out, _WINDOW, axis=1, mode="constant")
    return out[_HALF:-_HALF, _HALF:-_HALF]


def _filter_valid_adjoint(gmap: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _filter_valid: scatters a valid-window map back to image
    size (window is symmetric, so the adjoint is the same correlation on a
    zero-embedded map)."""
    z = np.zeros(shape, dtype=np.float64)
    z[_HALF:-_HALF, _HALF:-_HALF] = gmap
    z = correlate1d(z, _WINDOW, axis=0, mode="constant")
    z = correlate1d(z, _WINDOW, axis=1, mode="constant")
    return z


def ssim(a: np.ndarray, b: np.ndarray, with_grad: bool = False):
    """Mean SSIM over valid windows, per channel. Returns the scalar, or
    (scalar, d ssim / d a) when with_grad is set."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a)
    mu_b = _filter_valid(b)
    e_aa = _filter_valid(a * a)
    e_bb = _filter_valid(b * b)
    e_ab = _filter_valid(a * b)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + c1
    n2 = 2 * cov + c2
    d1 = mu_a * mu_a + mu_b * mu_b + c1
    d2 = var_a + var_b + c2
    smap = (n1 * n2) / (d1 * d2)
    value = float(smap.mean())
    if not with_grad:
        return value
    # s depends on a through mu_a, E[a^2], E[ab]
    scale = 1.0 / smap.size
    d_mu = scale * (2 * mu_b * (n2 - n1) / (d1 * d2)
                    - 2 * mu_a * smap * (1 / d1 - 1 / d2))
    d_eaa = scale * (-smap / d2)
    d_eab = scale * (2 * n1 / (d1 * d2))
    grad = (_filter_valid_adjoint(d_mu, a.shape)
            + _filter_valid_adjoint(d_eaa, a.shape) * 2 * a
            + _filter_valid_adjoint(d_eab, a.shape) * b)
    return value, grad


def dssim(a: np.ndarray, b: np.ndarray) -> LossOutput:
    value, grad = ssim(a, b, with_grad=True)
    return LossOutput((1.0 - value) / 2.0, -0.5 * grad.reshape(a.shape))


def reg_dssim(prediction: np.ndarray, target: np.ndarray,
              epsilon: float = DEFAULT_EPSILON) -> LossOutput:
    """D-SSIM of the weighted pair (W p, W t); W = weight_map(prediction) is
    a constant in differentiation, so the gradient flows only through the
    first argument's non-weight factor."""
    _check_shapes(prediction, target)
    w = weight_map(prediction, epsilon)
    value, grad = ssim(w * prediction, w * target, with_grad=True)
    return LossOutput((1.0 - value) / 2.0,
                      -0.5 * grad.reshape(prediction.shape) * w)


def combined_loss(prediction: np.ndarray, target: np.ndarray,
                  config: LossConfig | None = None) -> LossOutput:
    """(1 - lambda) * pixel loss + lambda * frame loss."""
    if config is None:
        config = LossConfig()
    pixel_fns = {
        PixelLoss.L1: lambda: l1(prediction, target),
        PixelLoss.L2: lambda: l2(prediction, target),
        PixelLoss.REG_L1: lambda: reg_l1(prediction, target, config.epsilon),
        PixelLoss.REG_L2: lambda: reg_l2(prediction, target, config.epsilon),
    }
    frame_fns = {
        FrameLoss.DSSIM: lambda: dssim(prediction, target),
        FrameLoss.REG_DSSIM: lambda: reg_dssim(prediction, target,
                                               config.epsilon),
    }
    p = pixel_fns[config.pixel_loss]()
    f = frame_fns[config.frame_loss]()
    lam = config.lam
    return LossOutput((1 - lam) * p.value + lam * f.value,
                      (1 - lam) * p.grad + lam * f.grad)
