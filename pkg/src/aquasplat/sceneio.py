"""Scene persistence and image I/O.

Checkpoints are directories holding gaussians.ply (binary little-endian,
de-facto splat property layout so third-party viewers open them), an
optional medium.bin sidecar (magic header + dimension table + float32
parameters), and meta.json. Parameters are stored float32; save/load of a
float32 scene is bit-exact.

Images are 8-bit PNG, decoded sRGB -> linear on read and encoded back on
write; all in-memory math is linear.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .medium import ENCODING_DEGREE, PARAM_SPECS, MediumNetwork
from .scene import GaussianCloud, GaussianScene

MEDIUM_MAGIC = b"AQSPMED1"
MEDIUM_VERSION = 1


# ---------------------------------------------------------------------------
# images


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c,
                    1.055 * np.power(c, 1 / 2.4) - 0.055)


def read_image(path) -> np.ndarray:
    """PNG -> linear float64 (H, W, 3) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr)


def write_image(path, image: np.ndarray) -> None:
    """Linear [0, 1] -> 8-bit sRGB PNG. 2D arrays are written grayscale."""
    image = np.asarray(image, dtype=np.float64)
    srgb = linear_to_srgb(image)
    data = np.round(srgb * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    """Deterministic in-memory PNG encoding of a linear image."""
    import io
    image = np.asarray(image, dtype=np.float64)
    srgb = linear_to_srgb(image)
    data = np.round(srgb * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(data, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def white_balance(image: np.ndarray, clip_fraction: float = 0.005) -> np.ndarray:
    """Divide each channel by its (1 - clip_fraction) quantile (nearest
    rank on the sorted values) and clamp to [0, 1], clipping the brightest
    extreme-noise pixels."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError("expected (H, W, C) image")
    out = np.empty_like(image)
    n = image.shape[0] * image.shape[1]
    rank = min(n - 1, max(0, int(np.ceil((1.0 - clip_fraction) * n)) - 1))
    for c in range(image.shape[2]):
        vals = np.sort(image[:, :, c], axis=None)
        divisor = vals[rank]
        if divisor <= 0:
            raise ValueError(f"channel {c} is degenerate (quantile 0)")
        out[:, :, c] = image[:, :, c] / divisor
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# PLY


def _ply_property_names(n_rest: int):
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def write_ply(path, cloud: GaussianCloud) -> None:
    n = len(cloud)
    k = cloud.sh_coeffs.shape[2]
    n_rest = 3 * (k - 1)
    names = _ply_property_names(n_rest)
    dc = cloud.sh_coeffs[:, :, 0]
    rest = cloud.sh_coeffs[:, :, 1:].reshape(n, n_rest)  # channel-major
    cols = [cloud.positions, np.zeros((n, 3), dtype=np.float32), dc, rest,
            cloud.opacity_logits.reshape(n, 1), cloud.log_scales,
            cloud.rotations]
    data = np.concatenate([np.asarray(c, dtype=np.float32) for c in cols],
                          axis=1)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {p}" for p in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        header = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            line = line.decode("ascii").strip()
            header.append(line)
            if line == "end_header":
                break
        if header[0] != "ply" or header[1] != "format binary_little_endian 1.0":
            raise ValueError("not a binary little-endian PLY")
        n = None
        props = []
        for line in header:
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property"):
                _, typ, name = line.split()
                if typ != "float":
                    raise ValueError(f"unsupported property type {typ}")
                props.append(name)
        if n is None:
            raise ValueError("PLY lacks a vertex element")
        n_rest = sum(1 for p in props if p.startswith("f_rest_"))
        expected = _ply_property_names(n_rest)
        if props != expected:
            raise ValueError("unexpected PLY property layout")
        payload = f.read()
        want = n * len(props) * 4
        if len(payload) < want:
            raise ValueError("truncated PLY payload")
        if len(payload) > want:
            raise ValueError("trailing bytes after PLY payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(n, len(props))
    k = n_rest // 3 + 1
    sh = np.empty((n, 3, k), dtype=np.float32)
    sh[:, :, 0] = data[:, 6:9]
    sh[:, :, 1:] = data[:, 9:9 + n_rest].reshape(n, 3, k - 1)
    off = 9 + n_rest
    return GaussianCloud(
        positions=data[:, 0:3].copy(),
        log_scales=data[:, off + 1:off + 4].copy(),
        rotations=data[:, off + 4:off + 8].copy(),
        opacity_logits=data[:, off].copy(),
        sh_coeffs=sh)


# ---------------------------------------------------------------------------
# medium sidecar


def write_medium(path, net: MediumNetwork) -> None:
    with open(path, "wb") as f:
        f.write(MEDIUM_MAGIC)
        f.write(struct.pack("<II", MEDIUM_VERSION, ENCODING_DEGREE))
        f.write(struct.pack("<I", len(PARAM_SPECS)))
        for name, shape in PARAM_SPECS:
            encoded = name.encode("ascii")
            f.write(struct.pack("<B", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
        for name, _ in PARAM_SPECS:
            f.write(np.ascontiguousarray(net.params[name],
                                         dtype="<f4").tobytes())


def read_medium(path) -> MediumNetwork:
    with open(path, "rb") as f:
        if f.read(len(MEDIUM_MAGIC)) != MEDIUM_MAGIC:
            raise ValueError("bad medium sidecar magic")
        version, degree = struct.unpack("<II", f.read(8))
        if version != MEDIUM_VERSION:
            raise ValueError(f"unsupported medium sidecar version {version}")
        if degree != ENCODING_DEGREE:
            raise ValueError(f"unsupported encoding degree {degree}")
        (n_tensors,) = struct.unpack("<I", f.read(4))
        specs = []
        for _ in range(n_tensors):
            (ln,) = struct.unpack("<B", f.read(1))
            name = f.read(ln).decode("ascii")
            (nd,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{nd}I", f.read(4 * nd))
            specs.append((name, dims))
        if [(n, s) for n, s in specs] != [(n, s) for n, s in PARAM_SPECS]:
            raise ValueError("medium sidecar dimension table mismatch")
        params = {}
        for name, dims in specs:
            count = int(np.prod(dims))
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError("truncated medium sidecar")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if f.read(1):
            raise ValueError("trailing bytes in medium sidecar")
    return MediumNetwork(params)


# ---------------------------------------------------------------------------
# checkpoints


def save_scene(path, scene: GaussianScene) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_ply(path / "gaussians.ply", scene.gaussians.astype(np.float32))
    has_medium = scene.medium is not None
    if has_medium:
        write_medium(path / "medium.bin", scene.medium)
    meta = {"format": "aquasplat-checkpoint", "version": 1,
            "scene_extent": float(scene.scene_extent),
            "sh_degree": int(scene.gaussians.sh_degree),
            "has_medium": has_medium}
    with open(path / "meta.json", "w") as f:
        json.dump(meta, f, indent=2)


def load_scene(path) -> GaussianScene:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{path} is not a checkpoint (no meta.json)")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("format") != "aquasplat-checkpoint" or meta.get("version") != 1:
        raise ValueError("unrecognized checkpoint format/version")
    cloud = read_ply(path / "gaussians.ply")
    medium = None
    if meta.get("has_medium"):
        medium = read_medium(path / "medium.bin")
    return GaussianScene(cloud, medium, scene_extent=meta["scene_extent"])
