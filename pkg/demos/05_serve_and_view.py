#!/usr/bin/env python3
"""Serve a quick scene for the browser viewer.

Creates a toy checkpoint, starts the HTTP render service on port 8090, and
prints the URL to open with the viewer in frontend/ (run `npm run build`
there once, then open index.html?server=http://127.0.0.1:8090).

Ctrl-C stops the server.
"""

import tempfile
from pathlib import Path

import numpy as np

from aquasplat.fogsim import make_plane_dataset
from aquasplat.sceneio import save_scene
from aquasplat.service import serve_forever
from aquasplat.trainer import initialize_scene

ds = make_plane_dataset(n_views=6, width=200, height=150, n_points=900)
scene = initialize_scene(ds.points, ds.point_colors, ds.cameras,
                         rng=np.random.default_rng(0))
ckpt = Path(tempfile.mkdtemp()) / "ckpt"
save_scene(ckpt, scene)
print(f"checkpoint: {ckpt}")
print("serving on http://127.0.0.1:8090 — endpoints: /health /scene /render")
print("viewer: frontend/index.html?server=http://127.0.0.1:8090")
serve_forever(scene, 8090)
