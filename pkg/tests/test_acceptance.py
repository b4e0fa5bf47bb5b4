"""Acceptance suite. One test per criterion; each prints a PASS/FAIL line.

The quantitative anchor (criteria 6-8) drives the simulated-fog pipeline
end to end through the CLI: plane dataset -> fog synthesis -> training ->
held-out evaluation. Training budgets are sized for a 2-core CI box; the
runtime targets quoted alongside are desktop-calibrated and reported, not
asserted.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from aquasplat.cli import main as cli_main
from aquasplat.compositor import composite_pixel, render
from aquasplat.fogsim import make_plane_dataset, write_plane_dataset
from aquasplat.gradients import check_gradients
from aquasplat.losses import reg_l2, ssim
from aquasplat.medium import MediumSample
from aquasplat.metrics import psnr


def report(criterion: str, passed: bool, detail: str):
    print(f"\n[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


# -- criterion 1: telescoping medium identity ------------------------------


def test_criterion_1_telescoping_identity():
    rng = np.random.default_rng(10)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(0, 16))
        depths = np.sort(rng.uniform(0.01, 5.0, n))
        med = MediumSample(rng.uniform(0.05, 0.95, 3),
                           rng.uniform(0.05, 2.0, 3),
                           rng.uniform(0.05, 2.0, 3))
        full, *_ = composite_pixel(np.zeros(n), np.ones((n, 3)), depths, med)
        worst = max(worst, np.abs(full - med.c_med).max())
    dt = time.time() - t0
    report("criterion 1 (alpha=0 pixels render c_med)", worst <= 1e-6,
           f"max abs err {worst:.2e} over 1000 pixels in {dt:.2f}s")


# -- criterion 2: partition of unity ---------------------------------------


def test_criterion_2_partition_of_unity():
    rng = np.random.default_rng(11)
    t0 = time.time()
    worst_exact = 0.0
    worst_truncated = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        alphas = rng.uniform(0.0, 0.999, n)
        depths = np.sort(rng.uniform(0.01, 10.0, n))
        sig = rng.uniform(0.05, 2.0, 3)
        med = MediumSample(np.ones(3), sig, sig)
        full, *_ = composite_pixel(alphas, np.ones((n, 3)), depths, med,
                                   t_stop=0.0)
        worst_exact = max(worst_exact, np.abs(full - 1.0).max())
        full_t, *_ = composite_pixel(alphas, np.ones((n, 3)), depths, med)
        worst_truncated = max(worst_truncated, np.abs(full_t - 1.0).max())
    dt = time.time() - t0
    # early termination (T < 1e-4) intentionally drops <= 1e-4 of the unit
    # weight; the identity itself holds to machine precision on full sums
    assert worst_truncated <= 1e-4 + 1e-9, worst_truncated
    report("criterion 2 (partition of unity)", worst_exact <= 1e-6,
           f"max |full-1| {worst_exact:.2e} (full sums), "
           f"{worst_truncated:.2e} with default termination, "
           f"200 scenes in {dt:.2f}s")


# -- criterion 3: closed-form pixel ----------------------------------------


def test_criterion_3_closed_form_pixel():
    med = MediumSample(np.full(3, 0.5), np.full(3, 0.5), np.full(3, 0.5))
    full, *_ = composite_pixel([0.99], [[1.0, 1.0, 1.0]], [2.0], med)
    e1 = math.exp(-1.0)
    want = 0.99 * e1 + 0.5 * (1.0 - e1) + 0.01 * 0.5 * e1
    err = np.abs(full - want).max()
    report("criterion 3 (N=1 closed form)", err <= 1e-6,
           f"got {full[0]:.9f}, expected {want:.9f} (0.682100), err {err:.1e}")


# -- criterion 4: gradient oracle ------------------------------------------


def test_criterion_4_gradient_oracle():
    t0 = time.time()
    rep = check_gradients(seed=0, tolerance=1e-5, h=1e-4)
    dt = time.time() - t0
    groups = {"positions", "log_scales", "rotations", "opacity_logits",
              "sh_coeffs"} | {f"medium.{n}" for n, _ in
                              __import__("aquasplat.medium",
                                         fromlist=["PARAM_SPECS"]).PARAM_SPECS}
    covered = groups <= set(rep["groups"])
    report("criterion 4 (gradient oracle, 8 Gaussians 16x16)",
           rep["passed"] and covered and dt < 60.0,
           f"worst rel err {rep['worst']:.2e} over {len(rep['groups'])} "
           f"groups in {dt:.1f}s (< 60s)")


# -- criterion 5: loss suite -----------------------------------------------


def test_criterion_5_loss_suite():
    v = reg_l2(np.array([[0.1]]), np.array([[0.2]]), 1e-3).value
    want = (0.1 / 0.101) ** 2
    ok_regl2 = abs(v - want) <= 1e-9

    a = np.random.default_rng(12).random((24, 24, 3))
    ok_identity = ssim(a, a) == 1.0

    c1 = 1e-4
    const = ssim(np.full((16, 16, 3), 0.5), np.full((16, 16, 3), 0.25))
    closed = (2 * 0.5 * 0.25 + c1) / (0.5 ** 2 + 0.25 ** 2 + c1)
    ok_const = abs(const - closed) <= 1e-6

    # gradient agreement is covered exhaustively in test_losses at 1e-6
    from test_losses import test_loss_gradients_match_fd
    test_loss_gradients_match_fd(np.random.default_rng(13))

    report("criterion 5 (loss suite)",
           ok_regl2 and ok_identity and ok_const,
           f"reg_l2 {v:.9f} (want {want:.9f}); ssim(identical)=1; "
           f"constant-image ssim {const:.7f} vs closed form {closed:.7f}; "
           "loss FD checks at 1e-6 pass")


# -- criteria 6-8: simulated-fog benchmark ---------------------------------

BENCH_VIEWS = 20
BENCH_W, BENCH_H = 400, 300
BENCH_POINTS = 4000
MAIN_ITERS = 650
MAIN_RESET = 150
ABLATION_ITERS = 150
ABLATION_SEEDS = (0, 1, 2)


def _train_args(data_root, out_dir, iters, seed, loss="regl2+regdssim",
                extra=()):
    return ["train", "--data", str(data_root / "sparse" / "0"),
            "--images", str(data_root / "foggy"),
            "--out", str(out_dir), "--iters", str(iters),
            "--holdout", "5", "--seed", str(seed), "--loss", loss,
            # short-run schedule: one opacity reset, then polish; the
            # narrow window keeps the 0.5-threshold prune from emptying a
            # scene that is still ramping up from the 0.1 init
            "--densify-start", str(MAIN_RESET),
            "--densify-stop", str(MAIN_RESET),
            "--opacity-reset-interval", str(MAIN_RESET), *extra]


@pytest.fixture(scope="module")
def fog_benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    ds = make_plane_dataset(n_views=BENCH_VIEWS, width=BENCH_W,
                            height=BENCH_H, n_points=BENCH_POINTS, seed=0)
    paths = write_plane_dataset(ds, root)
    code = cli_main(["simulate-fog", "--clear", str(paths["images"]),
                     "--depth", str(paths["depth"]), "--preset", "easy",
                     "--out", str(root / "foggy")])
    assert code == 0
    return root


def _eval_heldout(root, ckpt, out_name):
    out = root / out_name
    code = cli_main(["eval", "--scene", str(ckpt),
                     "--data", str(root / "sparse" / "0"),
                     "--images", str(root / "foggy"),
                     "--clear-gt", str(root / "images"),
                     "--holdout", "5", "--split", "heldout",
                     "--out", str(out)])
    assert code == 0
    return json.loads(out.read_text())["mean"]


@pytest.fixture(scope="module")
def trained_medium(fog_benchmark):
    t0 = time.time()
    code = cli_main(_train_args(fog_benchmark, fog_benchmark / "ckpt_med",
                                MAIN_ITERS, seed=0))
    assert code == 0
    return fog_benchmark / "ckpt_med", time.time() - t0


def test_criterion_6_fog_round_trip(fog_benchmark, trained_medium):
    ckpt, train_time = trained_medium
    mean = _eval_heldout(fog_benchmark, ckpt, "report_med.json")
    ok = mean["restoration_psnr"] >= 25.0 and mean["psnr"] >= 30.0
    report("criterion 6 (fog benchmark round trip)", ok,
           f"held-out full PSNR {mean['psnr']:.2f} dB (>= 30), restoration "
           f"{mean['restoration_psnr']:.2f} dB (>= 25); {MAIN_ITERS} iters "
           f"at {BENCH_W}x{BENCH_H} took {train_time / 60:.1f} min on this "
           "2-core box (desktop target < 15 min)")


def test_criterion_7_medium_ablation(fog_benchmark, trained_medium):
    ckpt_med, _ = trained_medium
    code = cli_main(_train_args(fog_benchmark, fog_benchmark / "ckpt_nomed",
                                MAIN_ITERS, seed=0, extra=("--no-medium",)))
    assert code == 0
    with_med = _eval_heldout(fog_benchmark, ckpt_med, "r_med.json")
    without = _eval_heldout(fog_benchmark, fog_benchmark / "ckpt_nomed",
                            "r_nomed.json")
    gap = with_med["psnr"] - without["psnr"]
    report("criterion 7 (medium ablation trend)", gap >= 2.0,
           f"full-render PSNR with medium {with_med['psnr']:.2f} dB vs "
           f"without {without['psnr']:.2f} dB (gap {gap:.2f} >= 2)")


def test_criterion_8_loss_ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("lowlight")
    ds = make_plane_dataset(n_views=BENCH_VIEWS, width=BENCH_W,
                            height=BENCH_H, n_points=BENCH_POINTS, seed=0,
                            low_light=0.25)
    paths = write_plane_dataset(ds, root)
    code = cli_main(["simulate-fog", "--clear", str(paths["images"]),
                     "--depth", str(paths["depth"]), "--preset", "easy",
                     "--out", str(root / "foggy")])
    assert code == 0
    means = {}
    for preset in ("regl2+regdssim", "l1+dssim"):
        scores = []
        for seed in ABLATION_SEEDS:
            out = root / f"ckpt_{preset.replace('+', '_')}_{seed}"
            code = cli_main(_train_args(root, out, ABLATION_ITERS, seed,
                                        loss=preset))
            assert code == 0
            mean = _eval_heldout(root, out, f"rep_{preset}_{seed}.json")
            scores.append(mean["psnr"])
        means[preset] = float(np.mean(scores))
    ours = means["regl2+regdssim"]
    base = means["l1+dssim"]
    report("criterion 8 (loss ablation trend, 3-seed means)", ours >= base,
           f"RegL2+RegDSSIM {ours:.3f} dB vs L1+DSSIM {base:.3f} dB "
           f"(low-light fog benchmark, {ABLATION_ITERS} iters/seed)")


# -- criterion 9: I/O -------------------------------------------------------


def test_criterion_9_io():
    import tempfile
    from pathlib import Path

    from test_scene_io import (synthetic_model, test_checkpoint_roundtrip_bit_exact,
                               test_colmap_roundtrip_field_exact)
    from aquasplat.colmap import write_colmap_binary, write_colmap_text
    from aquasplat.sceneio import white_balance

    rng = np.random.default_rng(14)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "t").mkdir()
        (tmp / "b").mkdir()
        test_colmap_roundtrip_field_exact(tmp / "t", rng, write_colmap_text)
        test_colmap_roundtrip_field_exact(tmp / "b", rng, write_colmap_binary)
        (tmp / "c").mkdir()
        test_checkpoint_roundtrip_bit_exact(tmp / "c")

    worst = 0.0
    for i in range(1000):
        img = np.random.default_rng(i).random((10, 10, 3))
        out = white_balance(img, 0.005)
        for c in range(3):
            vals = np.sort(img[:, :, c].ravel())
            divisor = vals[int(np.ceil(0.995 * 100)) - 1]
            want = np.clip(img[:, :, c] / divisor, 0, 1)
            worst = max(worst, np.abs(out[:, :, c] - want).max())
    report("criterion 9 (I/O round trips)", worst == 0.0,
           "COLMAP text/binary field-exact; PLY+sidecar bit-exact; "
           f"white-balance matches the sort oracle on 1000 images "
           f"(max err {worst:.1e})")


# -- criterion 10: determinism + render speed --------------------------------


def test_criterion_10_determinism_and_speed(tmp_path):
    ds = make_plane_dataset(n_views=4, width=96, height=72, n_points=200,
                            seed=0)
    paths = write_plane_dataset(ds, tmp_path / "plane")
    code = cli_main(["simulate-fog", "--clear", str(paths["images"]),
                     "--depth", str(paths["depth"]), "--preset", "easy",
                     "--out", str(tmp_path / "plane" / "foggy")])
    assert code == 0

    env_base = {**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)}
    blobs = []
    for threads in ("1", "2"):
        out = tmp_path / f"ckpt_t{threads}"
        env = {**env_base, "NUMBA_NUM_THREADS": threads,
               "OMP_NUM_THREADS": threads}
        cmd = [sys.executable, "-m", "aquasplat.cli", "train",
               "--data", str(tmp_path / "plane" / "sparse" / "0"),
               "--images", str(tmp_path / "plane" / "foggy"),
               "--out", str(out), "--iters", "30", "--seed", "3",
               "--densify-start", "5", "--densify-stop", "24",
               "--densify-interval", "6", "--opacity-reset-interval", "5"]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        blobs.append((out / "gaussians.ply").read_bytes()
                     + (out / "medium.bin").read_bytes())
    identical = blobs[0] == blobs[1]

    # soft render-speed target, measured and reported (not asserted)
    from aquasplat.trainer import random_scene
    scene = random_scene(10_000, (-3, -3, 2), (3, 3, 6),
                         np.random.default_rng(0))
    from conftest import make_camera
    cam = make_camera(640, 480, f=480.0)
    render(scene, cam)  # warm the kernels
    t0 = time.time()
    render(scene, cam)
    frame_ms = (time.time() - t0) * 1e3
    report("criterion 10 (determinism + speed)", identical,
           f"checkpoints bit-identical across 1 vs 2 threads; 10k-Gaussian "
           f"640x480 frame {frame_ms:.0f} ms on this box (soft desktop "
           "target 250 ms on 8 threads; regression-tracked)")
