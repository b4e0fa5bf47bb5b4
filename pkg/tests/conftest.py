import numpy as np
import pytest

from aquasplat.medium import MediumNetwork, MediumSample
from aquasplat.scene import Camera, GaussianCloud, GaussianScene


def make_cloud(n, rng, z_range=(2.0, 3.0), opacity=(-0.5, 1.5), sh_bases=16):
    pos = np.column_stack([rng.uniform(-0.8, 0.8, n),
                           rng.uniform(-0.8, 0.8, n),
                           rng.uniform(*z_range, n)])
    log_scales = rng.uniform(np.log(0.08), np.log(0.3), (n, 3))
    q = rng.normal(0, 1, (n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    shc = np.zeros((n, 3, sh_bases))
    shc[:, :, 0] = rng.uniform(-0.2, 0.9, (n, 3))
    if sh_bases > 1:
        shc[:, :, 1:] = rng.normal(0, 0.05, (n, 3, sh_bases - 1))
    return GaussianCloud(pos, log_scales, q,
                         rng.uniform(*opacity, n), shc)


def make_scene(n=12, seed=0, with_medium=True, **cloud_kwargs):
    rng = np.random.default_rng(seed)
    cloud = make_cloud(n, rng, **cloud_kwargs)
    medium = MediumNetwork.initialize(rng, dtype=np.float64) if with_medium \
        else None
    return GaussianScene(cloud, medium, scene_extent=1.0)


def make_camera(width=64, height=48, f=60.0):
    return Camera(np.eye(3), np.zeros(3), f, f, width / 2, height / 2,
                  width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_scene():
    return make_scene()


@pytest.fixture
def camera():
    return make_camera()


def constant_medium(c=0.5, sa=0.5, sb=0.5):
    return MediumSample(np.full(3, float(c)), np.full(3, float(sa)),
                        np.full(3, float(sb)))
