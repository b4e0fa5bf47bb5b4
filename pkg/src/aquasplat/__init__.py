"""Differentiable Gaussian splatting with an analytically integrated
scattering-medium term: rendering in water/fog, restoration of the clear
scene, training, fog simulation, metrics, and an HTTP render service."""

from .compositor import RenderOutput, composite_pixel, render
from .fogsim import FogParams, apply_fog, make_benchmark
from .gradients import GradientBuffers, backward, check_gradients
from .losses import FrameLoss, LossConfig, LossOutput, PixelLoss, combined_loss
from .medium import MediumNetwork, MediumSample
from .metrics import evaluate, psnr, ssim_metric
from .projection import ProjectedGaussians, TileIndex, build_tiles, \
    kernel_value, project_cloud
from .scene import Camera, GaussianCloud, GaussianScene, covariance_of, sh_color
from .sceneio import load_scene, read_image, save_scene, white_balance, \
    write_image
from .trainer import AdamState, TrainConfig, Trainer, initialize_scene, \
    random_scene

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Camera", "FogParams", "FrameLoss", "GaussianCloud",
    "GaussianScene", "GradientBuffers", "LossConfig", "LossOutput",
    "MediumNetwork", "MediumSample", "PixelLoss", "ProjectedGaussians",
    "RenderOutput", "TileIndex", "TrainConfig", "Trainer", "apply_fog",
    "backward", "build_tiles", "check_gradients", "combined_loss",
    "composite_pixel", "covariance_of", "evaluate", "initialize_scene",
    "kernel_value", "load_scene", "make_benchmark", "project_cloud", "psnr",
    "random_scene", "read_image", "render", "save_scene", "sh_color",
    "ssim_metric", "white_balance", "write_image",
]
