import numpy as np
import pytest

from aquasplat.colmap import (ColmapFormatError, UnsupportedCameraModel,
                              read_colmap, rotmat_to_qvec, qvec_to_rotmat,
                              write_colmap_binary, write_colmap_text)
from aquasplat.medium import MediumNetwork
from aquasplat.scene import Camera, GaussianScene, quat_to_rotmat
from aquasplat.sceneio import (load_scene, read_image, read_medium, read_ply,
                               save_scene, white_balance, write_image,
                               write_medium, write_ply)
from conftest import make_cloud, make_scene


def synthetic_model(rng, n_views=2, n_points=10):
    cams, names = [], []
    for i in range(n_views):
        q = rng.normal(0, 1, 4)
        q /= np.linalg.norm(q)
        R = quat_to_rotmat(q[None])[0]
        cams.append(Camera(R, rng.normal(0, 1, 3), 50.0 + i, 55.0 + i,
                           32.0, 24.0, 64, 48))
        names.append(f"img_{i:02d}.png")
    points = rng.normal(0, 2, (n_points, 3))
    colors = rng.integers(0, 256, (n_points, 3)).astype(np.uint8)
    return cams, names, points, colors


@pytest.mark.parametrize("writer", [write_colmap_text, write_colmap_binary])
def test_colmap_roundtrip_field_exact(tmp_path, rng, writer):
    cams, names, points, colors = synthetic_model(rng)
    writer(tmp_path, cams, names, points, colors)
    model = read_colmap(tmp_path)
    assert model.names == names
    assert np.array_equal(model.points, points)
    assert np.array_equal(model.colors, colors)
    for got, want in zip(model.cameras, cams):
        # pose goes through a quaternion; float64 repr keeps text exact too
        assert np.abs(got.rotation - want.rotation).max() < 1e-12
        assert np.abs(got.translation - want.translation).max() < 1e-12
        assert (got.fx, got.fy, got.cx, got.cy) == (want.fx, want.fy,
                                                    want.cx, want.cy)
        assert (got.width, got.height) == (want.width, want.height)


def test_colmap_empty_points(tmp_path, rng):
    cams, names, _, _ = synthetic_model(rng, n_points=0)
    write_colmap_binary(tmp_path, cams, names, np.zeros((0, 3)),
                        np.zeros((0, 3), dtype=np.uint8))
    model = read_colmap(tmp_path)
    assert model.points.shape == (0, 3)


def test_colmap_unsupported_model(tmp_path, rng):
    cams, names, points, colors = synthetic_model(rng)
    write_colmap_text(tmp_path, cams, names, points, colors)
    txt = (tmp_path / "cameras.txt").read_text()
    (tmp_path / "cameras.txt").write_text(
        txt.replace("PINHOLE", "OPENCV").replace(
            "1 OPENCV 64 48 50.0 55.0 32.0 24.0",
            "1 OPENCV 64 48 50.0 55.0 32.0 24.0 0.0 0.0 0.0 0.0"))
    with pytest.raises(UnsupportedCameraModel) as err:
        read_colmap(tmp_path)
    assert "OPENCV" in str(err.value)


def test_colmap_truncated_binary(tmp_path, rng):
    cams, names, points, colors = synthetic_model(rng)
    write_colmap_binary(tmp_path, cams, names, points, colors)
    raw = (tmp_path / "points3D.bin").read_bytes()
    (tmp_path / "points3D.bin").write_bytes(raw[:-5])
    with pytest.raises(ColmapFormatError):
        read_colmap(tmp_path)


def test_colmap_trailing_garbage(tmp_path, rng):
    cams, names, points, colors = synthetic_model(rng)
    write_colmap_binary(tmp_path, cams, names, points, colors)
    with open(tmp_path / "cameras.bin", "ab") as f:
        f.write(b"junk")
    with pytest.raises(ColmapFormatError):
        read_colmap(tmp_path)


def test_qvec_roundtrip(rng):
    for _ in range(20):
        q = rng.normal(0, 1, 4)
        q /= np.linalg.norm(q)
        R = qvec_to_rotmat(q)
        q2 = rotmat_to_qvec(R)
        assert np.abs(qvec_to_rotmat(q2) - R).max() < 1e-12


def test_white_balance_constant_channel():
    img = np.full((10, 10, 3), 0.5)
    assert np.allclose(white_balance(img), 1.0)


def test_white_balance_matches_sort_oracle(rng):
    img = rng.random((25, 40, 3))
    out = white_balance(img, clip_fraction=0.005)
    n = 25 * 40
    for c in range(3):
        vals = np.sort(img[:, :, c].ravel())
        divisor = vals[int(np.ceil(0.995 * n)) - 1]
        want = np.clip(img[:, :, c] / divisor, 0, 1)
        assert np.allclose(out[:, :, c], want)


def test_white_balance_clips_top_fraction(rng):
    # 1000 distinct values, 0.5% clip: exactly the top 5 hit the ceiling
    vals = rng.permutation(np.linspace(0.1, 0.9, 1000))
    img = np.repeat(vals.reshape(25, 40)[:, :, None], 3, axis=2)
    out = white_balance(img, clip_fraction=0.005)
    assert (out[:, :, 0] == 1.0).sum() == 6  # top 5 clipped + the divisor
    assert (out[:, :, 0] > 1.0).sum() == 0


def test_white_balance_idempotent_up_to_clamp(rng):
    img = rng.random((20, 20, 3))
    once = white_balance(img)
    twice = white_balance(once)
    assert np.abs(once - twice).max() < 1e-12 or np.all(twice <= once + 1e-12)


def test_white_balance_degenerate_channel():
    img = np.zeros((8, 8, 3))
    with pytest.raises(ValueError):
        white_balance(img)


def test_png_roundtrip_quantization(tmp_path, rng):
    img = rng.random((16, 16, 3))
    write_image(tmp_path / "a.png", img)
    back = read_image(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() < 0.005  # 8-bit sRGB quantization


def test_ply_roundtrip_bit_exact(tmp_path, rng):
    cloud = make_cloud(32, rng).astype(np.float32)
    write_ply(tmp_path / "g.ply", cloud)
    back = read_ply(tmp_path / "g.ply")
    for f in ("positions", "log_scales", "rotations", "opacity_logits",
              "sh_coeffs"):
        assert np.array_equal(getattr(cloud, f), getattr(back, f)), f
    header = (tmp_path / "g.ply").read_bytes().split(b"end_header")[0]
    assert b"element vertex 32" in header


def test_ply_rejects_trailing_and_truncated(tmp_path, rng):
    cloud = make_cloud(4, rng).astype(np.float32)
    write_ply(tmp_path / "g.ply", cloud)
    raw = (tmp_path / "g.ply").read_bytes()
    (tmp_path / "bad.ply").write_bytes(raw + b"x")
    with pytest.raises(ValueError):
        read_ply(tmp_path / "bad.ply")
    (tmp_path / "short.ply").write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        read_ply(tmp_path / "short.ply")


def test_medium_sidecar_roundtrip(tmp_path, rng):
    net = MediumNetwork.initialize(rng, dtype=np.float32)
    write_medium(tmp_path / "m.bin", net)
    back = read_medium(tmp_path / "m.bin")
    for k in net.params:
        assert np.array_equal(net.params[k], back.params[k])


def test_medium_sidecar_rejects_corruption(tmp_path, rng):
    net = MediumNetwork.initialize(rng, dtype=np.float32)
    write_medium(tmp_path / "m.bin", net)
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "bad_magic.bin").write_bytes(b"WRONGMAG" + raw[8:])
    with pytest.raises(ValueError):
        read_medium(tmp_path / "bad_magic.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-10])
    with pytest.raises(ValueError):
        read_medium(tmp_path / "short.bin")
    (tmp_path / "long.bin").write_bytes(raw + b"\x00")
    with pytest.raises(ValueError):
        read_medium(tmp_path / "long.bin")


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    scene = make_scene(n=16, seed=9)
    scene32 = GaussianScene(scene.gaussians.astype(np.float32),
                            scene.medium.astype(np.float32),
                            scene_extent=2.5)
    save_scene(tmp_path / "ckpt", scene32)
    back = load_scene(tmp_path / "ckpt")
    for f in ("positions", "log_scales", "rotations", "opacity_logits",
              "sh_coeffs"):
        assert np.array_equal(getattr(scene32.gaussians, f),
                              getattr(back.gaussians, f))
    for k in scene32.medium.params:
        assert np.array_equal(scene32.medium.params[k], back.medium.params[k])
    assert back.scene_extent == 2.5


def test_checkpoint_without_medium(tmp_path):
    scene = make_scene(n=4, seed=1, with_medium=False)
    save_scene(tmp_path / "ckpt", scene)
    back = load_scene(tmp_path / "ckpt")
    assert back.medium is None
