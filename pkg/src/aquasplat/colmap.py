"""COLMAP sparse-model I/O (binary and text, bit-exact per the public
format). Only distortion-free models map onto our pinhole camera; anything
else raises with the model named."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .scene import Camera

CAMERA_MODEL_IDS = {0: ("SIMPLE_PINHOLE", 3), 1: ("PINHOLE", 4),
                    2: ("SIMPLE_RADIAL", 4), 3: ("RADIAL", 5),
                    4: ("OPENCV", 8), 5: ("OPENCV_FISHEYE", 8),
                    6: ("FULL_OPENCV", 12), 7: ("FOV", 5),
                    8: ("SIMPLE_RADIAL_FISHEYE", 4),
                    9: ("RADIAL_FISHEYE", 5), 10: ("THIN_PRISM_FISHEYE", 12)}
CAMERA_MODEL_NAMES = {name: (mid, n) for mid, (name, n) in CAMERA_MODEL_IDS.items()}
SUPPORTED_MODELS = ("SIMPLE_PINHOLE", "PINHOLE")


class UnsupportedCameraModel(ValueError):
    pass


class ColmapFormatError(ValueError):
    pass


def qvec_to_rotmat(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_qvec(R: np.ndarray) -> np.ndarray:
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = R.flat
    K = np.array([
        [Rxx - Ryy - Rzz, 0, 0, 0],
        [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
        [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
        [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz]]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q *= -1
    return q


@dataclass
class SparseModel:
    cameras: List[Camera]          # one per view, pose + intrinsics resolved
    names: List[str]               # image names aligned with cameras
    points: np.ndarray             # (P, 3) float64
    colors: np.ndarray             # (P, 3) uint8


def _read_bytes(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ColmapFormatError(f"truncated file while reading {what}")
    return data


def _model_dir(path) -> Path:
    path = Path(path)
    for candidate in (path, path / "sparse" / "0", path / "sparse"):
        if (candidate / "cameras.bin").exists() or \
                (candidate / "cameras.txt").exists():
            return candidate
    raise FileNotFoundError(f"no COLMAP model under {path}")


def read_colmap(path) -> SparseModel:
    """Read a sparse reconstruction (binary preferred, text fallback)."""
    d = _model_dir(path)
    binary = (d / "cameras.bin").exists()
    ext = ".bin" if binary else ".txt"
    for stem in ("cameras", "images", "points3D"):
        if not (d / f"{stem}{ext}").exists():
            raise FileNotFoundError(f"missing {stem}{ext} in {d}")
    if binary:
        intr = _read_cameras_bin(d / "cameras.bin")
        views = _read_images_bin(d / "images.bin")
        points, colors = _read_points_bin(d / "points3D.bin")
    else:
        intr = _read_cameras_txt(d / "cameras.txt")
        views = _read_images_txt(d / "images.txt")
        points, colors = _read_points_txt(d / "points3D.txt")
    views.sort(key=lambda v: v[0])
    cameras, names = [], []
    for name, qvec, tvec, cam_id in views:
        if cam_id not in intr:
            raise ColmapFormatError(f"image {name} references unknown camera "
                                    f"{cam_id}")
        fx, fy, cx, cy, w, h = intr[cam_id]
        cameras.append(Camera(qvec_to_rotmat(qvec), np.asarray(tvec), fx, fy,
                              cx, cy, w, h))
        names.append(name)
    return SparseModel(cameras, names, points, colors)


def _intrinsics_from(model_name: str, params, width: int, height: int):
    if model_name == "PINHOLE":
        fx, fy, cx, cy = params
    elif model_name == "SIMPLE_PINHOLE":
        f, cx, cy = params
        fx = fy = f
    else:
        raise UnsupportedCameraModel(
            f"camera model {model_name} is not supported (only "
            f"{', '.join(SUPPORTED_MODELS)})")
    return float(fx), float(fy), float(cx), float(cy), int(width), int(height)


def _read_cameras_bin(path) -> Dict[int, tuple]:
    out = {}
    with open(path, "rb") as f:
        (n,) = struct.unpack("<Q", _read_bytes(f, 8, "camera count"))
        for _ in range(n):
            cam_id, model_id = struct.unpack("<ii", _read_bytes(f, 8, "camera header"))
            w, h = struct.unpack("<QQ", _read_bytes(f, 16, "camera size"))
            if model_id not in CAMERA_MODEL_IDS:
                raise ColmapFormatError(f"unknown camera model id {model_id}")
            name, n_params = CAMERA_MODEL_IDS[model_id]
            params = struct.unpack(f"<{n_params}d",
                                   _read_bytes(f, 8 * n_params, "camera params"))
            out[cam_id] = _intrinsics_from(name, params, w, h)
        if f.read(1):
            raise ColmapFormatError("trailing bytes in cameras.bin")
    return out


def _read_images_bin(path) -> list:
    views = []
    with open(path, "rb") as f:
        (n,) = struct.unpack("<Q", _read_bytes(f, 8, "image count"))
        for _ in range(n):
            (_image_id,) = struct.unpack("<i", _read_bytes(f, 4, "image id"))
            qvec = struct.unpack("<4d", _read_bytes(f, 32, "qvec"))
            tvec = struct.unpack("<3d", _read_bytes(f, 24, "tvec"))
            (cam_id,) = struct.unpack("<i", _read_bytes(f, 4, "camera id"))
            chars = bytearray()
            while True:
                c = _read_bytes(f, 1, "image name")
                if c == b"\x00":
                    break
                chars.extend(c)
            (n_pts,) = struct.unpack("<Q", _read_bytes(f, 8, "point2D count"))
            _read_bytes(f, 24 * n_pts, "points2D")
            views.append((chars.decode("utf-8"), qvec, tvec, cam_id))
        if f.read(1):
            raise ColmapFormatError("trailing bytes in images.bin")
    return views


def _read_points_bin(path):
    xyz, rgb = [], []
    with open(path, "rb") as f:
        (n,) = struct.unpack("<Q", _read_bytes(f, 8, "point count"))
        for _ in range(n):
            _read_bytes(f, 8, "point id")
            xyz.append(struct.unpack("<3d", _read_bytes(f, 24, "point xyz")))
            rgb.append(struct.unpack("<3B", _read_bytes(f, 3, "point rgb")))
            _read_bytes(f, 8, "point error")
            (track,) = struct.unpack("<Q", _read_bytes(f, 8, "track length"))
            _read_bytes(f, 8 * track, "track")
        if f.read(1):
            raise ColmapFormatError("trailing bytes in points3D.bin")
    return (np.asarray(xyz, dtype=np.float64).reshape(-1, 3),
            np.asarray(rgb, dtype=np.uint8).reshape(-1, 3))


def _data_lines(path):
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line


def _read_cameras_txt(path) -> Dict[int, tuple]:
    out = {}
    for line in _data_lines(path):
        parts = line.split()
        cam_id, model = int(parts[0]), parts[1]
        w, h = int(parts[2]), int(parts[3])
        if model not in CAMERA_MODEL_NAMES:
            raise ColmapFormatError(f"unknown camera model {model}")
        params = [float(p) for p in parts[4:]]
        if len(params) != CAMERA_MODEL_NAMES[model][1]:
            raise ColmapFormatError(f"bad parameter count for {model}")
        out[cam_id] = _intrinsics_from(model, params, w, h)
    return out


def _read_images_txt(path) -> list:
    # two lines per image; the second (2D points) may be empty
    views = []
    expecting_points = False
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if line.startswith("#"):
                continue
            if expecting_points:
                expecting_points = False
                continue
            if not line:
                continue
            parts = line.split()
            if len(parts) < 10:
                raise ColmapFormatError("short image header line")
            qvec = tuple(float(p) for p in parts[1:5])
            tvec = tuple(float(p) for p in parts[5:8])
            cam_id = int(parts[8])
            name = parts[9]
            views.append((name, qvec, tvec, cam_id))
            expecting_points = True
    return views


def _read_points_txt(path):
    xyz, rgb = [], []
    for line in _data_lines(path):
        parts = line.split()
        xyz.append([float(p) for p in parts[1:4]])
        rgb.append([int(p) for p in parts[4:7]])
    return (np.asarray(xyz, dtype=np.float64).reshape(-1, 3),
            np.asarray(rgb, dtype=np.uint8).reshape(-1, 3))


def _camera_rows(cameras: Sequence[Camera]):
    rows = []
    for i, cam in enumerate(cameras):
        q = rotmat_to_qvec(cam.rotation)
        rows.append((i + 1, q, cam.translation, cam))
    return rows


def write_colmap_text(out_dir, cameras: Sequence[Camera], names: Sequence[str],
                      points: np.ndarray, colors: np.ndarray) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _camera_rows(cameras)
    with open(out_dir / "cameras.txt", "w") as f:
        f.write("# Camera list with one line of data per camera:\n")
        f.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for cid, _, _, cam in rows:
            f.write(f"{cid} PINHOLE {cam.width} {cam.height} "
                    f"{float(cam.fx)!r} {float(cam.fy)!r} "
                    f"{float(cam.cx)!r} {float(cam.cy)!r}\n")
    with open(out_dir / "images.txt", "w") as f:
        f.write("# Image list with two lines of data per image:\n")
        f.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        f.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for cid, q, t, _ in rows:
            f.write(f"{cid} {float(q[0])!r} {float(q[1])!r} "
                    f"{float(q[2])!r} {float(q[3])!r} {float(t[0])!r} "
                    f"{float(t[1])!r} {float(t[2])!r} {cid} "
                    f"{names[cid - 1]}\n\n")
    with open(out_dir / "points3D.txt", "w") as f:
        f.write("# 3D point list with one line of data per point:\n")
        f.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n")
        for i, (p, c) in enumerate(zip(points, colors)):
            f.write(f"{i + 1} {float(p[0])!r} {float(p[1])!r} "
                    f"{float(p[2])!r} "
                    f"{int(c[0])} {int(c[1])} {int(c[2])} 0.0\n")


def write_colmap_binary(out_dir, cameras: Sequence[Camera], names: Sequence[str],
                        points: np.ndarray, colors: np.ndarray) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _camera_rows(cameras)
    with open(out_dir / "cameras.bin", "wb") as f:
        f.write(struct.pack("<Q", len(rows)))
        for cid, _, _, cam in rows:
            f.write(struct.pack("<ii", cid, 1))  # PINHOLE
            f.write(struct.pack("<QQ", cam.width, cam.height))
            f.write(struct.pack("<4d", cam.fx, cam.fy, cam.cx, cam.cy))
    with open(out_dir / "images.bin", "wb") as f:
        f.write(struct.pack("<Q", len(rows)))
        for cid, q, t, _ in rows:
            f.write(struct.pack("<i", cid))
            f.write(struct.pack("<4d", *q))
            f.write(struct.pack("<3d", *t))
            f.write(struct.pack("<i", cid))
            f.write(names[cid - 1].encode("utf-8") + b"\x00")
            f.write(struct.pack("<Q", 0))
    with open(out_dir / "points3D.bin", "wb") as f:
        f.write(struct.pack("<Q", len(points)))
        for i, (p, c) in enumerate(zip(points, colors)):
            f.write(struct.pack("<q", i + 1))
            f.write(struct.pack("<3d", *p))
            f.write(struct.pack("<3B", int(c[0]), int(c[1]), int(c[2])))
            f.write(struct.pack("<d", 0.0))
            f.write(struct.pack("<Q", 0))
