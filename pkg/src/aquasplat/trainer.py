"""Optimization loop: per-group Adam, densification by accumulated
screen-space gradient norms, opacity-threshold pruning, periodic opacity
resets, and medium-optimizer moment resets on every refinement event.

Parameters are stored float32; gradient accumulation and Adam arithmetic
run in float64 before casting back, so runs are bit-reproducible at any
thread count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .compositor import render
from .gradients import GradientBuffers, backward
from .losses import LossConfig, combined_loss
from .medium import MediumNetwork, encode_directions
from .scene import (Camera, GaussianCloud, GaussianScene,
                    normalize_quaternions, quat_to_rotmat,
                    scene_extent_from_cameras)
from . import sh

log = logging.getLogger("aquasplat.trainer")

GAUSSIAN_GROUPS = ("positions", "log_scales", "rotations", "opacity_logits",
                   "sh_coeffs")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS_GAUSSIAN = 1e-15
ADAM_EPS_MEDIUM = 1e-8


@dataclass
class TrainConfig:
    iterations: int = 5000
    lr_position: float = 1.6e-4        # scaled by scene_extent, decayed x0.01
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    lr_medium: float = 1e-3
    position_lr_decay: float = 0.01    # final/initial lr ratio over the run
    loss: LossConfig = field(default_factory=LossConfig)
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop: Optional[int] = None  # default: iterations // 2
    densify_grad_threshold: float = 2e-4
    split_scale_threshold: float = 0.01  # fraction of scene_extent
    split_count: int = 2
    split_scale_shrink: float = 1.6
    prune_interval: int = 100
    prune_opacity_threshold: float = 0.5
    opacity_reset_interval: int = 500
    opacity_reset_value: float = 0.5
    sh_warmup_interval: int = 1000
    medium_scale: float = 1.0
    log_interval: int = 50
    eval_interval: int = 500
    checkpoint_interval: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.densify_stop is None:
            self.densify_stop = self.iterations // 2
        for name in ("densify_interval", "prune_interval",
                     "opacity_reset_interval", "sh_warmup_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.prune_opacity_threshold < 1:
            raise ValueError("prune threshold must be in (0, 1)")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros(param.shape), np.zeros(param.shape))

    def update(self, param: np.ndarray, grad: np.ndarray, lr: float,
               eps: float) -> None:
        self.step += 1
        g = np.asarray(grad, dtype=np.float64)
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * g
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * g * g
        mhat = self.m / (1 - ADAM_BETA1 ** self.step)
        vhat = self.v / (1 - ADAM_BETA2 ** self.step)
        new = param.astype(np.float64) - lr * mhat / (np.sqrt(vhat) + eps)
        param[...] = new.astype(param.dtype)


@dataclass
class DensifyStats:
    norm: np.ndarray   # sum over pixels/steps of scaled 2D-mean grad norms
    count: np.ndarray  # steps in which the Gaussian was visible

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def accumulate(self, buffers: GradientBuffers) -> None:
        self.norm += buffers.densify_norm
        self.count += buffers.densify_count


class Trainer:
    """Single-writer training loop over one scene."""

    def __init__(self, scene: GaussianScene, config: TrainConfig,
                 rng: np.random.Generator):
        self.scene = scene
        self.config = config
        self.rng = rng
        self.step = 0
        self.gauss_states: Dict[str, AdamState] = {
            name: AdamState.like(getattr(scene.gaussians, name))
            for name in GAUSSIAN_GROUPS}
        self.medium_states: Dict[str, AdamState] = {}
        if scene.medium is not None:
            self.medium_states = {k: AdamState.like(v)
                                  for k, v in scene.medium.params.items()}
        self.stats = DensifyStats.zeros(len(scene.gaussians))
        self._enc_cache: Dict[int, np.ndarray] = {}

    # -- learning-rate schedule --

    def _position_lr(self) -> float:
        cfg = self.config
        t = min(self.step / max(cfg.iterations, 1), 1.0)
        return cfg.lr_position * self.scene.scene_extent \
            * cfg.position_lr_decay ** t

    def _active_sh_degree(self) -> int:
        full = self.scene.gaussians.sh_degree
        return min(self.step // self.config.sh_warmup_interval, full)

    def _rays_for(self, view_index: int, cam: Camera) -> Optional[np.ndarray]:
        if self.scene.medium is None:
            return None
        enc = self._enc_cache.get(view_index)
        if enc is None:
            dirs = cam.pixel_ray_directions().reshape(-1, 3)
            enc = encode_directions(dirs, dtype=self.scene.medium.dtype)
            self._enc_cache[view_index] = enc
        return enc

    # -- single optimization step --

    def train_step(self, cam: Camera, target: np.ndarray,
                   view_index: int = -1) -> float:
        cfg = self.config
        rays = self._rays_for(view_index, cam) if view_index >= 0 else None
        out, cache = render(self.scene, cam, medium_scale=cfg.medium_scale,
                            sh_degree=self._active_sh_degree(),
                            rays_enc=rays, want_cache=True)
        loss = combined_loss(out.full, target, cfg.loss)
        if not math.isfinite(loss.value):
            raise FloatingPointError(
                f"non-finite loss at step {self.step}: value={loss.value}, "
                f"gaussians={len(self.scene.gaussians)}")
        buffers = backward(self.scene, cam, loss.grad,
                           medium_scale=cfg.medium_scale,
                           sh_degree=self._active_sh_degree(), cache=cache)
        self.stats.accumulate(buffers)
        self._apply_updates(buffers)
        self.step += 1
        return loss.value

    def _apply_updates(self, buffers: GradientBuffers) -> None:
        cfg = self.config
        cloud = self.scene.gaussians
        lrs = {"positions": self._position_lr(),
               "log_scales": cfg.lr_log_scale,
               "rotations": cfg.lr_rotation,
               "opacity_logits": cfg.lr_opacity,
               "sh_coeffs": cfg.lr_sh}
        grads = {"positions": buffers.d_positions,
                 "log_scales": buffers.d_log_scales,
                 "rotations": buffers.d_rotations,
                 "opacity_logits": buffers.d_opacity_logits,
                 "sh_coeffs": buffers.d_sh_coeffs}
        for name in GAUSSIAN_GROUPS:
            self.gauss_states[name].update(getattr(cloud, name), grads[name],
                                           lrs[name], ADAM_EPS_GAUSSIAN)
        cloud.rotations[...] = normalize_quaternions(
            cloud.rotations.astype(np.float64)).astype(cloud.rotations.dtype)
        if buffers.medium is not None:
            net = self.scene.medium
            for name, state in self.medium_states.items():
                state.update(net.params[name], buffers.medium[name],
                             cfg.lr_medium, ADAM_EPS_MEDIUM)

    # -- refinement --

    def densify_and_prune(self) -> dict:
        """Split/duplicate high-gradient Gaussians, prune low-opacity ones,
        zero the new optimizer rows, reset medium Adam moments, clear stats."""
        cfg = self.config
        cloud = self.scene.gaussians
        n = len(cloud)
        avg = self.stats.norm / np.maximum(self.stats.count, 1)
        hot = avg > cfg.densify_grad_threshold
        world_scale = np.exp(cloud.log_scales.astype(np.float64)).max(axis=1)
        split = hot & (world_scale > cfg.split_scale_threshold
                       * self.scene.scene_extent)
        dup = hot & ~split

        pieces = {name: [getattr(cloud, name)[~split]]
                  for name in GAUSSIAN_GROUPS}
        row_keep = ~split

        n_children = 0
        if np.any(split):
            parents = np.nonzero(split)[0]
            q = normalize_quaternions(
                cloud.rotations[parents].astype(np.float64))
            R = quat_to_rotmat(q)
            s = np.exp(cloud.log_scales[parents].astype(np.float64))
            for _ in range(cfg.split_count):
                xi = self.rng.standard_normal((len(parents), 3))
                offs = np.einsum("nij,nj->ni", R, s * xi)
                pieces["positions"].append(
                    (cloud.positions[parents].astype(np.float64) + offs
                     ).astype(cloud.positions.dtype))
                pieces["log_scales"].append(
                    (cloud.log_scales[parents].astype(np.float64)
                     - np.log(cfg.split_scale_shrink)
                     ).astype(cloud.log_scales.dtype))
                pieces["rotations"].append(cloud.rotations[parents].copy())
                pieces["opacity_logits"].append(
                    cloud.opacity_logits[parents].copy())
                pieces["sh_coeffs"].append(cloud.sh_coeffs[parents].copy())
            n_children = cfg.split_count * len(parents)
        n_dup = int(dup.sum())
        if n_dup:
            for name in GAUSSIAN_GROUPS:
                pieces[name].append(getattr(cloud, name)[dup].copy())

        new_cloud = GaussianCloud(*(np.concatenate(pieces[name], axis=0)
                                    for name in GAUSSIAN_GROUPS))
        n_new = n_children + n_dup

        # optimizer rows: surviving rows keep their moments, new rows zero
        for name, state in self.gauss_states.items():
            state.m = np.concatenate(
                [state.m[row_keep],
                 np.zeros((n_new,) + state.m.shape[1:])], axis=0)
            state.v = np.concatenate(
                [state.v[row_keep],
                 np.zeros((n_new,) + state.v.shape[1:])], axis=0)

        # prune everything below the opacity threshold
        from .medium import _sigmoid
        opac = _sigmoid(new_cloud.opacity_logits.astype(np.float64))
        keep = opac >= cfg.prune_opacity_threshold
        n_pruned = int((~keep).sum())
        if not np.any(keep):
            raise RuntimeError("pruning removed every Gaussian; the scene is "
                               "degenerate")
        new_cloud = GaussianCloud(*(getattr(new_cloud, name)[keep]
                                    for name in GAUSSIAN_GROUPS))
        for state in self.gauss_states.values():
            state.m = state.m[keep]
            state.v = state.v[keep]

        self.scene.gaussians = new_cloud
        for state in self.medium_states.values():
            state.m = np.zeros_like(state.m)
            state.v = np.zeros_like(state.v)
            state.step = 0
        self.stats = DensifyStats.zeros(len(new_cloud))
        report = {"split": int(split.sum()), "children": n_children,
                  "duplicated": n_dup, "pruned": n_pruned,
                  "total": len(new_cloud)}
        return report

    def reset_opacity(self) -> None:
        cloud = self.scene.gaussians
        value = self.config.opacity_reset_value
        logit = math.log(value / (1.0 - value))
        cloud.opacity_logits[...] = logit
        state = self.gauss_states["opacity_logits"]
        state.m = np.zeros_like(state.m)
        state.v = np.zeros_like(state.v)

    # -- full loop --

    def train(self, views: Sequence[Tuple[Camera, np.ndarray]],
              heldout: Sequence[Tuple[Camera, np.ndarray]] = (),
              checkpoint_dir=None) -> None:
        cfg = self.config
        order = []
        while self.step < cfg.iterations:
            if not order:
                order = list(self.rng.permutation(len(views)))
            vi = order.pop()
            cam, target = views[vi]
            loss = self.train_step(cam, target, view_index=vi)
            s = self.step  # already incremented
            in_window = cfg.densify_start <= s <= cfg.densify_stop
            if in_window and s % cfg.densify_interval == 0:
                report = self.densify_and_prune()
                log.info("step=%d densify split=%d dup=%d pruned=%d total=%d",
                         s, report["split"], report["duplicated"],
                         report["pruned"], report["total"])
            if in_window and s % cfg.opacity_reset_interval == 0:
                self.reset_opacity()
                log.info("step=%d opacity_reset=%.2f", s,
                         cfg.opacity_reset_value)
            if s % cfg.log_interval == 0 or s == cfg.iterations:
                log.info("step=%d loss=%.6f gaussians=%d", s, loss,
                         len(self.scene.gaussians))
            if heldout and (s % cfg.eval_interval == 0 or s == cfg.iterations):
                from .metrics import psnr
                cam_h, img_h = heldout[0]
                out = render(self.scene, cam_h,
                             medium_scale=cfg.medium_scale)
                value = psnr(np.clip(out.full, 0, 1), img_h)
                log.info("step=%d heldout_psnr=%.3f", s, value)
            if checkpoint_dir and cfg.checkpoint_interval > 0 \
                    and s % cfg.checkpoint_interval == 0:
                from pathlib import Path
                from .sceneio import save_scene
                path = Path(checkpoint_dir) / f"step_{s:06d}"
                save_scene(path, self.scene)
                log.info("step=%d checkpoint=%s", s, path)


# ---------------------------------------------------------------------------
# initialization


OPACITY_INIT = 0.1


def initialize_scene(points: np.ndarray, colors: Optional[np.ndarray] = None,
                     cameras: Optional[Sequence[Camera]] = None,
                     with_medium: bool = True,
                     sh_degree: int = 3,
                     rng: Optional[np.random.Generator] = None,
                     dtype=np.float32) -> GaussianScene:
    """One Gaussian per seed point: color from the point color via the
    inverse SH offset, isotropic log-scale from the mean distance to the 3
    nearest neighbors, opacity 0.1."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValueError("need a nonempty (N, 3) point array")
    if rng is None:
        rng = np.random.default_rng(0)
    n = len(points)
    if colors is None:
        colors = np.full((n, 3), 0.5)
    else:
        colors = np.asarray(colors, dtype=np.float64)
        if colors.max() > 1.0:
            colors = colors / 255.0
    if n > 1:
        k = min(4, n)
        dist, _ = cKDTree(points).query(points, k=k)
        mean_dist = dist[:, 1:].mean(axis=1)
    else:
        mean_dist = np.array([0.0])
    if np.all(mean_dist <= 0):
        raise ValueError("degenerate point set: all neighbor distances zero")
    mean_dist = np.maximum(mean_dist, 1e-7)
    log_scales = np.repeat(np.log(mean_dist)[:, None], 3, axis=1)
    nb = sh.num_bases(sh_degree)
    shc = np.zeros((n, 3, nb))
    shc[:, :, 0] = (colors - 0.5) / sh.C0
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    opacity = np.full(n, math.log(OPACITY_INIT / (1 - OPACITY_INIT)))
    cloud = GaussianCloud(
        positions=points.astype(dtype),
        log_scales=log_scales.astype(dtype),
        rotations=rotations.astype(dtype),
        opacity_logits=opacity.astype(dtype),
        sh_coeffs=shc.astype(dtype))
    if cameras:
        extent = scene_extent_from_cameras(cameras)
    else:
        center = points.mean(0)
        extent = max(float(np.linalg.norm(points - center, axis=1).max()),
                     1e-6)
    medium = MediumNetwork.initialize(rng, dtype=dtype) if with_medium else None
    return GaussianScene(cloud, medium, scene_extent=extent)


def random_scene(n: int, bbox_min, bbox_max,
                 rng: np.random.Generator, with_medium: bool = True,
                 sh_degree: int = 3, dtype=np.float32) -> GaussianScene:
    """Uniform random initialization inside a box, for synthetic runs."""
    lo = np.asarray(bbox_min, dtype=np.float64)
    hi = np.asarray(bbox_max, dtype=np.float64)
    points = rng.uniform(lo, hi, size=(n, 3))
    colors = rng.uniform(0.2, 0.8, size=(n, 3))
    return initialize_scene(points, colors, with_medium=with_medium,
                            sh_degree=sh_degree, rng=rng, dtype=dtype)
