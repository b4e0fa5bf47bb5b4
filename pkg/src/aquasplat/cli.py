"""Operator entry point.

Subcommands: train, render, simulate-fog, eval, grad-check, serve.
Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure. A JSON config
file may supply any flag's default; explicit flags win. Every subcommand is
deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class DataError(Exception):
    pass


def _build_parser(defaults: dict) -> _Parser:
    p = _Parser(prog="aquasplat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.add_argument("--config", help="JSON file of flag defaults")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=0,
                        help="cap numba worker threads (0 = library default)")
        return sp

    t = add("train", help="optimize a scene on a COLMAP dataset")
    t.add_argument("--data", required=True, help="COLMAP sparse model dir")
    t.add_argument("--images", help="image dir (default: <data>/images)")
    t.add_argument("--out", required=True, help="output checkpoint dir")
    t.add_argument("--iters", type=int, default=5000)
    t.add_argument("--loss", default="regl2+regdssim",
                   help="pixel+frame preset, e.g. regl2+regdssim or l1+dssim")
    t.add_argument("--no-medium", action="store_true",
                   help="ablation: train plain splatting without the medium")
    t.add_argument("--holdout", type=int, default=0,
                   help="hold out every Nth view (0 = train on all)")
    t.add_argument("--white-balance", action="store_true",
                   help="white-balance images on load (0.5%% clip)")
    t.add_argument("--sh-degree", type=int, default=3)
    t.add_argument("--densify-start", type=int, default=None)
    t.add_argument("--densify-stop", type=int, default=None)
    t.add_argument("--densify-interval", type=int, default=None)
    t.add_argument("--opacity-reset-interval", type=int, default=None)
    t.add_argument("--lr-medium", type=float, default=None)
    t.add_argument("--lr-opacity", type=float, default=None)
    t.add_argument("--checkpoint-interval", type=int, default=None,
                   help="save <out>/checkpoints/step_N every N steps")

    r = add("render", help="render a checkpoint from a camera")
    r.add_argument("--scene", required=True)
    r.add_argument("--camera", required=True,
                   help="camera JSON file, or a view index (with --data)")
    r.add_argument("--data", help="COLMAP dir for index cameras")
    r.add_argument("--mode", default="full",
                   choices=["full", "clear", "medium", "depth"])
    r.add_argument("--medium-scale", type=float, default=1.0)
    r.add_argument("--out", required=True)

    f = add("simulate-fog", help="synthesize foggy images from clear + depth")
    f.add_argument("--clear", required=True, help="dir of clear PNG views")
    f.add_argument("--depth", required=True, help="dir of <view>.npy depth maps")
    f.add_argument("--preset", required=True, choices=["easy", "hard"])
    f.add_argument("--out", required=True)

    e = add("eval", help="score a checkpoint against ground truth")
    e.add_argument("--scene", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--images", help="image dir (default: <data>/images)")
    e.add_argument("--clear-gt", help="clear ground-truth dir for restoration")
    e.add_argument("--holdout", type=int, default=0)
    e.add_argument("--split", default="all", choices=["all", "train", "heldout"])
    e.add_argument("--white-balance", action="store_true")
    e.add_argument("--out", required=True)

    g = add("grad-check", help="finite-difference check of all gradients")
    g.add_argument("--tolerance", type=float, default=1e-5)

    s = add("serve", help="serve a checkpoint over HTTP")
    s.add_argument("--scene", required=True)
    s.add_argument("--port", type=int, default=8090)
    s.add_argument("--max-pixels", type=int, default=2_000_000)

    for sp in sub.choices.values():
        sp.set_defaults(**{k: v for k, v in defaults.items()
                           if k in {a.dest for a in sp._actions}})
    return p


def _load_config_defaults(argv) -> dict:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
        else:
            continue
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: cannot read config {path}: {e}", file=sys.stderr)
            sys.exit(EXIT_DATA)
        if not isinstance(cfg, dict):
            print("error: config must be a JSON object", file=sys.stderr)
            sys.exit(EXIT_DATA)
        return {k.replace("-", "_"): v for k, v in cfg.items()}
    return {}


def _dataset_views(args, need_images=True):
    """Load the COLMAP model plus (optionally) its images, honoring the
    holdout split. Returns (model, images or None, indices dict)."""
    from .colmap import read_colmap
    from .sceneio import read_image, white_balance

    model = read_colmap(args.data)
    n = len(model.cameras)
    if n == 0:
        raise DataError("dataset has no views")
    holdout = getattr(args, "holdout", 0) or 0
    held = set(range(0, n, holdout)) if holdout > 1 else set()
    idx = {"train": [i for i in range(n) if i not in held],
           "heldout": sorted(held), "all": list(range(n))}
    images = None
    if need_images:
        img_dir = Path(args.images) if args.images else Path(args.data) / "images"
        if not img_dir.is_dir():
            raise DataError(f"image directory {img_dir} not found")
        images = []
        for name in model.names:
            path = img_dir / name
            if not path.exists():
                raise DataError(f"missing image {path}")
            img = read_image(path)
            if getattr(args, "white_balance", False):
                img = white_balance(img)
            images.append(img)
    return model, images, idx


def _cmd_train(args) -> int:
    from .losses import LossConfig
    from .sceneio import save_scene
    from .trainer import TrainConfig, Trainer, initialize_scene

    model, images, idx = _dataset_views(args)
    rng = np.random.default_rng(args.seed)
    scene = initialize_scene(model.points, model.colors, model.cameras,
                             with_medium=not args.no_medium,
                             sh_degree=args.sh_degree, rng=rng)
    overrides = {}
    for flag, field in (("densify_start", "densify_start"),
                        ("densify_stop", "densify_stop"),
                        ("densify_interval", "densify_interval"),
                        ("opacity_reset_interval", "opacity_reset_interval"),
                        ("lr_medium", "lr_medium"),
                        ("lr_opacity", "lr_opacity"),
                        ("checkpoint_interval", "checkpoint_interval")):
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    config = TrainConfig(iterations=args.iters,
                         loss=LossConfig.from_preset(args.loss), **overrides)
    trainer = Trainer(scene, config, rng)
    views = [(model.cameras[i], images[i]) for i in idx["train"]]
    heldout = [(model.cameras[i], images[i]) for i in idx["heldout"]]
    if args.iters > 0:
        ckpt_dir = Path(args.out) / "checkpoints" \
            if config.checkpoint_interval > 0 else None
        trainer.train(views, heldout=heldout, checkpoint_dir=ckpt_dir)
    save_scene(args.out, scene)
    log = logging.getLogger("aquasplat.cli")
    log.info("checkpoint=%s gaussians=%d", args.out, len(scene.gaussians))
    return EXIT_OK


def _camera_from_json(path):
    from .scene import Camera
    with open(path) as f:
        spec = json.load(f)
    pose = np.asarray(spec["pose"], dtype=np.float64).reshape(4, 4)
    return Camera(pose[:3, :3], pose[:3, 3], spec["fx"], spec["fy"],
                  spec["cx"], spec["cy"], spec["width"], spec["height"])


def _cmd_render(args) -> int:
    from .compositor import render
    from .sceneio import load_scene, write_image

    scene = load_scene(args.scene)
    if args.camera.lstrip("-").isdigit():
        if not args.data:
            raise DataError("index cameras need --data")
        from .colmap import read_colmap
        model = read_colmap(args.data)
        i = int(args.camera)
        if not 0 <= i < len(model.cameras):
            raise DataError(f"camera index {i} out of range "
                            f"(0..{len(model.cameras) - 1})")
        cam = model.cameras[i]
    else:
        cam = _camera_from_json(args.camera)
    out = render(scene, cam, medium_scale=args.medium_scale)
    if args.mode == "depth":
        depth = out.depth
        inv = np.where(depth > 1e-12, 1.0 / np.maximum(depth, 1e-12), 0.0)
        lo, hi = inv.min(), inv.max()
        gray = (inv - lo) / (hi - lo) if hi > lo else np.zeros_like(inv)
        from PIL import Image
        Image.fromarray(np.round(gray * 255).astype(np.uint8), "L").save(args.out)
    else:
        img = {"full": out.full, "clear": out.clear,
               "medium": out.medium_only}[args.mode]
        write_image(args.out, np.clip(img, 0.0, 1.0))
    return EXIT_OK


def _cmd_simulate_fog(args) -> int:
    from .fogsim import make_benchmark
    make_benchmark(args.clear, args.depth, args.out, args.preset)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .metrics import evaluate
    from .sceneio import load_scene, read_image

    scene = load_scene(args.scene)
    model, images, idx = _dataset_views(args)
    sel = idx[args.split]
    if not sel:
        raise DataError(f"split {args.split!r} selects no views")
    cams = [model.cameras[i] for i in sel]
    gts = [images[i] for i in sel]
    names = [model.names[i] for i in sel]
    clear = None
    if args.clear_gt:
        gt_dir = Path(args.clear_gt)
        clear = []
        for name in names:
            path = gt_dir / name
            if not path.exists():
                raise DataError(f"missing clear ground truth {path}")
            clear.append(read_image(path))
    report = evaluate(scene, cams, gts, clear_gt=clear, names=names)
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report["mean"], indent=2))
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    from .gradients import check_gradients
    report = check_gradients(seed=args.seed, tolerance=args.tolerance)
    for name, row in report["groups"].items():
        print(f"group={name} max_rel_err={row['max_rel_err']:.3e} "
              f"n={row['n_params']}")
    print(f"passed={report['passed']} worst={report['worst']:.3e}")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def _cmd_serve(args) -> int:
    from .sceneio import load_scene
    from .service import serve_forever

    port = args.port
    env_port = os.environ.get("AQUASPLAT_PORT")
    if env_port is not None:
        try:
            port = int(env_port)
        except ValueError:
            raise DataError(f"AQUASPLAT_PORT={env_port!r} is not an integer")
    scene = load_scene(args.scene)
    print(f"serving {args.scene} on port {port}", flush=True)
    serve_forever(scene, port, max_pixels=args.max_pixels)
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "render": _cmd_render,
    "simulate-fog": _cmd_simulate_fog,
    "eval": _cmd_eval,
    "grad-check": _cmd_grad_check,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s",
                        stream=sys.stdout)
    defaults = _load_config_defaults(argv)
    parser = _build_parser(defaults)
    args = parser.parse_args(argv)
    if args.threads:
        import numba
        numba.set_num_threads(max(1, min(args.threads,
                                         numba.config.NUMBA_NUM_THREADS)))
    try:
        return _COMMANDS[args.command](args)
    except (DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RuntimeError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
