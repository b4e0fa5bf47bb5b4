"""Scattering-medium simulation and benchmark synthesis.

Foggy images come from the revised image formation model

    I = O exp(-beta_d z) + b_inf (1 - exp(-beta_b z))

applied per pixel and channel to a clear image and its depth map. The
easy/hard presets plus a synthetic textured-plane dataset (clear views,
analytic depth, COLMAP poses and seed points) form the quantitative
benchmark for restoration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .scene import Camera

PRESETS = {
    "easy": dict(beta_d=(0.6, 0.6, 0.6), beta_b=(0.6, 0.6, 0.6),
                 b_inf=(0.5, 0.5, 0.5)),
    "hard": dict(beta_d=(0.8, 0.8, 0.8), beta_b=(0.6, 0.6, 0.6),
                 b_inf=(0.5, 0.5, 0.5)),
}


@dataclass
class FogParams:
    beta_d: np.ndarray  # (3,) direct-attenuation coefficients, 1/depth unit
    beta_b: np.ndarray  # (3,) backscatter coefficients, 1/depth unit
    b_inf: np.ndarray   # (3,) backscatter color at infinite distance

    def __post_init__(self):
        self.beta_d = np.asarray(self.beta_d, dtype=np.float64)
        self.beta_b = np.asarray(self.beta_b, dtype=np.float64)
        self.b_inf = np.asarray(self.b_inf, dtype=np.float64)
        if np.any(self.beta_d < 0) or np.any(self.beta_b < 0):
            raise ValueError("attenuation coefficients must be nonnegative")
        if np.any((self.b_inf < 0) | (self.b_inf > 1)):
            raise ValueError("b_inf must lie in [0, 1]")

    @classmethod
    def preset(cls, name: str) -> "FogParams":
        if name not in PRESETS:
            raise ValueError(f"unknown fog preset {name!r}")
        return cls(**PRESETS[name])

    def to_dict(self) -> dict:
        return {"beta_d": self.beta_d.tolist(), "beta_b": self.beta_b.tolist(),
                "b_inf": self.b_inf.tolist()}


def apply_fog(clear: np.ndarray, depth: np.ndarray, params: FogParams) -> np.ndarray:
    """Synthesize the in-medium image; output clamped to [0, 1]."""
    clear = np.asarray(clear, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 3 and depth.shape[2] == 1:
        depth = depth[:, :, 0]
    if clear.shape[:2] != depth.shape:
        raise ValueError("clear/depth shape mismatch")
    if np.any(depth < 0):
        raise ValueError("depth must be nonnegative")
    z = depth[:, :, None]
    direct = clear * np.exp(-params.beta_d * z)
    backscatter = params.b_inf * (1.0 - np.exp(-params.beta_b * z))
    return np.clip(direct + backscatter, 0.0, 1.0)


def invert_fog(foggy: np.ndarray, depth: np.ndarray, params: FogParams) -> np.ndarray:
    """Closed-form inversion (exact where apply_fog did not clamp)."""
    z = np.asarray(depth, dtype=np.float64)[:, :, None]
    backscatter = params.b_inf * (1.0 - np.exp(-params.beta_b * z))
    return (np.asarray(foggy, dtype=np.float64) - backscatter) * np.exp(params.beta_d * z)


def make_benchmark(clear_dir, depth_dir, out_dir, preset: str) -> dict:
    """Fog every clear view and write a manifest recording the parameters
    and the clear ground truth for restoration scoring.

    clear_dir holds PNG views; depth_dir holds matching <stem>.npy depth
    maps in the same units the renderer's depth uses (camera-space z).
    """
    from .sceneio import read_image, write_image

    clear_dir, depth_dir = Path(clear_dir), Path(depth_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = FogParams.preset(preset)
    views = []
    images = sorted(clear_dir.glob("*.png"))
    if not images:
        raise FileNotFoundError(f"no PNG views in {clear_dir}")
    for img_path in images:
        depth_path = depth_dir / (img_path.stem + ".npy")
        if not depth_path.exists():
            raise FileNotFoundError(f"missing depth map {depth_path}")
        clear = read_image(img_path)
        depth = np.load(depth_path)
        foggy = apply_fog(clear, depth, params)
        out_path = out_dir / img_path.name
        write_image(out_path, foggy)
        views.append({"image": str(out_path), "depth": str(depth_path),
                      "clear": str(img_path)})
    manifest = {"preset": preset, "params": params.to_dict(), "views": views,
                "clamped_to_unit_range": True}
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


# ---------------------------------------------------------------------------
# synthetic textured-plane dataset


def plane_texture(u: np.ndarray, v: np.ndarray, low_light: float = 1.0) -> np.ndarray:
    """Smooth multi-frequency RGB texture on plane coordinates (world
    units); values in (0.03, 0.97) before the low-light scale."""
    r = 0.45 + 0.28 * np.sin(2.3 * u + 0.8) * np.cos(1.7 * v) \
        + 0.14 * np.sin(5.1 * u * v + 1.0)
    g = 0.50 + 0.24 * np.cos(1.9 * u - 1.2) * np.sin(2.6 * v + 0.4) \
        + 0.12 * np.cos(4.3 * u + 2.0 * v)
    b = 0.40 + 0.30 * np.sin(1.3 * u + 2.9 * v) \
        + 0.10 * np.sin(3.7 * v - 0.6)
    tex = np.stack([r, g, b], axis=-1)
    return np.clip(tex, 0.03, 0.97) * low_light


@dataclass
class PlaneDataset:
    cameras: List[Camera]
    names: List[str]
    clear: List[np.ndarray]   # (H, W, 3) linear
    depth: List[np.ndarray]   # (H, W) camera-space z
    points: np.ndarray        # (P, 3) plane samples for initialization
    point_colors: np.ndarray  # (P, 3) in [0, 1]


def make_plane_dataset(n_views: int = 20, width: int = 400, height: int = 300,
                       plane_z: float = 3.0, n_points: int = 2500,
                       seed: int = 0, low_light: float = 1.0) -> PlaneDataset:
    """Textured plane at z = plane_z viewed by axis-aligned cameras with
    lateral and dolly offsets. The dolly spread makes the in-medium
    appearance of a surface point vary across views, which a medium-free
    model cannot explain away.
    """
    rng = np.random.default_rng(seed)
    fx = fy = 0.75 * width
    cams, names, clears, depths = [], [], [], []
    for i in range(n_views):
        ang = 2 * np.pi * i / n_views
        cx_w = 0.22 * np.cos(ang)
        cy_w = 0.18 * np.sin(ang)
        cz_w = -0.55 + 1.1 * (i / max(n_views - 1, 1))
        center = np.array([cx_w, cy_w, cz_w])
        cam = Camera(np.eye(3), -center, fx, fy, width / 2, height / 2,
                     width, height)
        z = plane_z - cz_w
        xs = (np.arange(width) - cam.cx) / fx
        ys = (np.arange(height) - cam.cy) / fy
        u = cx_w + z * xs[None, :]
        v = cy_w + z * ys[:, None]
        clear = plane_texture(np.broadcast_to(u, (height, width)),
                              np.broadcast_to(v, (height, width)), low_light)
        cams.append(cam)
        names.append(f"view_{i:03d}")
        clears.append(clear)
        depths.append(np.full((height, width), z))
    half_u = 1.15 * (plane_z + 0.55) * (width / 2) / fx + 0.25
    half_v = 1.15 * (plane_z + 0.55) * (height / 2) / fy + 0.25
    pu = rng.uniform(-half_u, half_u, n_points)
    pv = rng.uniform(-half_v, half_v, n_points)
    points = np.column_stack([pu, pv, np.full(n_points, plane_z)])
    colors = plane_texture(pu, pv, low_light)
    return PlaneDataset(cams, names, clears, depths, points, colors)


def write_plane_dataset(dataset: PlaneDataset, root) -> Dict[str, Path]:
    """Write clear PNGs, depth .npy files, and a COLMAP text model."""
    from .colmap import write_colmap_text
    from .sceneio import write_image

    root = Path(root)
    img_dir = root / "images"
    depth_dir = root / "depth"
    sparse_dir = root / "sparse" / "0"
    for d in (img_dir, depth_dir, sparse_dir):
        d.mkdir(parents=True, exist_ok=True)
    for name, img, depth in zip(dataset.names, dataset.clear, dataset.depth):
        write_image(img_dir / f"{name}.png", img)
        np.save(depth_dir / f"{name}.npy", depth.astype(np.float32))
    write_colmap_text(sparse_dir, dataset.cameras,
                      [f"{n}.png" for n in dataset.names],
                      dataset.points,
                      (dataset.point_colors * 255).astype(np.uint8))
    return {"images": img_dir, "depth": depth_dir, "sparse": sparse_dir}
