"""HTTP render service: pose in, PNG frame out.

Stateless requests render against an immutable scene snapshot; loading a
new scene swaps the snapshot atomically. A bounded worker semaphore caps
concurrent renders while /health stays responsive on its own thread.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import numpy as np

from .compositor import render
from .scene import Camera, GaussianScene
from .sceneio import encode_png

MODES = ("full", "clear", "medium", "depth")
DEFAULT_MAX_PIXELS = 2_000_000
MAX_DIMENSION = 16384

# published response schema for GET /scene
SCENE_SCHEMA = {
    "type": "object",
    "required": ["gaussian_count", "scene_extent", "has_medium",
                 "default_camera", "modes"],
    "properties": {
        "gaussian_count": {"type": "integer", "minimum": 1},
        "scene_extent": {"type": "number", "exclusiveMinimum": 0},
        "has_medium": {"type": "boolean"},
        "modes": {"type": "array", "items": {"enum": list(MODES)}},
        "default_camera": {
            "type": "object",
            "required": ["pose", "fx", "fy", "cx", "cy", "width", "height"],
            "properties": {
                "pose": {"type": "array", "minItems": 16, "maxItems": 16,
                         "items": {"type": "number"}},
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "cx": {"type": "number"},
                "cy": {"type": "number"},
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
            },
        },
    },
}


class RenderService:
    def __init__(self, scene: Optional[GaussianScene] = None,
                 max_pixels: int = DEFAULT_MAX_PIXELS, max_workers: int = 4):
        self._scene = scene
        self._lock = threading.Lock()
        self._render_slots = threading.BoundedSemaphore(max_workers)
        self.max_pixels = max_pixels

    # scene snapshot handling -------------------------------------------------

    def load_scene(self, scene: GaussianScene) -> None:
        with self._lock:
            self._scene = scene

    def snapshot(self) -> Optional[GaussianScene]:
        with self._lock:
            return self._scene

    # endpoint logic ----------------------------------------------------------

    def scene_info(self) -> dict:
        scene = self.snapshot()
        if scene is None:
            raise ServiceError(503, "no scene loaded")
        return {
            "gaussian_count": len(scene.gaussians),
            "scene_extent": scene.scene_extent,
            "has_medium": scene.medium is not None,
            "default_camera": _default_camera(scene),
            "modes": list(MODES),
        }

    def render_frame(self, body: bytes):
        scene = self.snapshot()
        if scene is None:
            raise ServiceError(503, "no scene loaded")
        try:
            req = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ServiceError(400, "body is not valid JSON")
        try:
            pose = np.asarray(req["pose"], dtype=np.float64).reshape(4, 4)
            fx = float(req["fx"])
            fy = float(req["fy"])
            cx = float(req["cx"])
            cy = float(req["cy"])
            width = int(req["width"])
            height = int(req["height"])
            mode = req.get("mode", "full")
            medium_scale = float(req.get("medium_scale", 1.0))
        except (KeyError, TypeError, ValueError):
            raise ServiceError(400, "malformed render request")
        if mode not in MODES:
            raise ServiceError(400, f"unknown mode {mode!r}")
        if width < 1 or height < 1 or fx <= 0 or fy <= 0:
            raise ServiceError(400, "bad camera parameters")
        if width * height > self.max_pixels or width > MAX_DIMENSION \
                or height > MAX_DIMENSION:
            raise ServiceError(413, "requested resolution exceeds the cap")
        R = pose[:3, :3]
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-3:
            raise ServiceError(400, "pose rotation is not orthonormal")
        # re-orthonormalize within the accepted tolerance for the strict
        # Camera invariant
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        cam = Camera(R, pose[:3, 3], fx, fy, cx, cy, width, height)
        with self._render_slots:
            out = render(scene, cam, medium_scale=medium_scale)
        headers = {}
        if mode == "depth":
            depth = out.depth
            inv = np.where(depth > 1e-12, 1.0 / np.maximum(depth, 1e-12), 0.0)
            lo, hi = float(inv.min()), float(inv.max())
            headers["X-Depth-Inv-Min"] = repr(lo)
            headers["X-Depth-Inv-Max"] = repr(hi)
            if hi > lo:
                gray = (inv - lo) / (hi - lo)
            else:
                gray = np.zeros_like(inv)
            png = _encode_gray_linear(gray)
        else:
            img = {"full": out.full, "clear": out.clear,
                   "medium": out.medium_only}[mode]
            png = encode_png(np.clip(img, 0.0, 1.0))
        return png, headers


def _encode_gray_linear(gray: np.ndarray) -> bytes:
    # depth visualizations are plain intensity ramps, no sRGB transfer
    import io
    from PIL import Image
    data = np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _default_camera(scene: GaussianScene) -> dict:
    center = scene.gaussians.positions.astype(np.float64).mean(axis=0)
    distance = max(2.0 * scene.scene_extent, 1.0)
    position = center - np.array([0.0, 0.0, distance])
    pose = np.eye(4)
    pose[:3, 3] = -position  # world-to-camera with identity rotation
    width, height = 640, 480
    return {
        "pose": [float(v) for v in pose.reshape(-1)],
        "fx": 0.75 * width, "fy": 0.75 * width,
        "cx": width / 2, "cy": height / 2,
        "width": width, "height": height,
    }


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class _Handler(BaseHTTPRequestHandler):
    service: RenderService = None  # injected by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: bytes, content_type: str,
              headers: Optional[dict] = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, err: ServiceError):
        self._send(err.status, json.dumps({"error": err.message}).encode(),
                   "application/json")

    def do_GET(self):
        if self.path == "/health":
            self._send(200, b"ok", "text/plain")
        elif self.path == "/scene":
            try:
                info = self.service.scene_info()
            except ServiceError as e:
                self._send_error(e)
                return
            self._send(200, json.dumps(info).encode(), "application/json")
        else:
            self._send(404, b'{"error": "not found"}', "application/json")

    def do_POST(self):
        if self.path != "/render":
            self._send(404, b'{"error": "not found"}', "application/json")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            png, headers = self.service.render_frame(body)
        except ServiceError as e:
            self._send_error(e)
            return
        self._send(200, png, "image/png", headers)


def make_server(service: RenderService, port: int,
                host: str = "127.0.0.1") -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(scene: GaussianScene, port: int,
                  max_pixels: int = DEFAULT_MAX_PIXELS) -> None:
    service = RenderService(scene, max_pixels=max_pixels)
    server = make_server(service, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
