import math

import numpy as np
import pytest

from aquasplat.medium import (ENCODING_DEGREE, PARAM_SPECS, MediumNetwork,
                              encode_directions)


def zero_network():
    return MediumNetwork({name: np.zeros(shape)
                          for name, shape in PARAM_SPECS})


def random_dirs(rng, n=64):
    d = rng.normal(0, 1, (n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_zero_network_fixed_point():
    net = zero_network()
    s = net.sample(np.array([0.3, -0.5, 0.81]) / np.linalg.norm([0.3, -0.5, 0.81]))
    assert np.allclose(s.c_med, 0.5)
    assert np.allclose(s.sigma_attn, math.log(2))
    assert np.allclose(s.sigma_bs, math.log(2))


def test_constant_network_is_direction_invariant(rng):
    net = MediumNetwork.initialize(rng, dtype=np.float64)
    for name in net.params:
        if name.startswith("w"):
            net.params[name][:] = 0.0
    net.params["bc"][:] = [0.1, -0.2, 0.3]
    net.params["ba"][:] = [0.5, 0.0, -0.5]
    out = net.sample(random_dirs(rng, 32))
    assert np.allclose(out.c_med, out.c_med[0])
    assert np.allclose(out.sigma_attn, out.sigma_attn[0])
    assert np.allclose(out.sigma_bs, out.sigma_bs[0])


def test_output_ranges(rng):
    net = MediumNetwork.initialize(rng, dtype=np.float64)
    for name in net.params:
        net.params[name] *= 5.0  # push activations around
    s = net.sample(random_dirs(rng, 256))
    assert np.all((s.c_med > 0) & (s.c_med < 1))
    assert np.all(s.sigma_attn > 0) and np.all(s.sigma_bs > 0)
    assert np.all(np.isfinite(s.sigma_attn)) and np.all(np.isfinite(s.sigma_bs))


def test_batched_equals_sequential(rng):
    # BLAS picks different kernels for batch and single rows, so agreement
    # is to rounding, not bitwise; repeat-call determinism is exact below
    net = MediumNetwork.initialize(rng, dtype=np.float64)
    dirs = random_dirs(rng, 16)
    batch = net.sample(dirs)
    for i, d in enumerate(dirs):
        single = net.sample(d)
        assert np.allclose(batch.c_med[i], single.c_med, atol=1e-12, rtol=0)
        assert np.allclose(batch.sigma_attn[i], single.sigma_attn,
                           atol=1e-12, rtol=0)
        assert np.allclose(batch.sigma_bs[i], single.sigma_bs,
                           atol=1e-12, rtol=0)


def test_determinism(rng):
    net = MediumNetwork.initialize(rng, dtype=np.float32)
    d = random_dirs(np.random.default_rng(1), 8)
    a = net.sample(d)
    b = net.sample(d)
    assert np.array_equal(a.c_med, b.c_med)


def test_encoding_feature_count(rng):
    enc = encode_directions(random_dirs(rng, 10))
    assert enc.shape == (10, (ENCODING_DEGREE + 1) ** 2)
    assert enc.shape[1] == 25


def test_zero_upstream_zero_gradients(rng):
    net = MediumNetwork.initialize(rng, dtype=np.float64)
    dirs = random_dirs(rng, 12)
    z = np.zeros((12, 3))
    grads = net.gradients(dirs, z, z, z)
    for k, g in grads.items():
        assert np.all(g == 0), k


def test_zero_network_head_bias_gradient():
    # sigmoid'(0) = 0.25: upstream on the red medium color lands on the red
    # head bias scaled by exactly that
    net = zero_network()
    dirs = np.array([[0.0, 0.0, 1.0]])
    up = np.zeros((1, 3))
    up[0, 0] = 2.0
    grads = net.gradients(dirs, up, np.zeros((1, 3)), np.zeros((1, 3)))
    assert np.isclose(grads["bc"][0], 2.0 * 0.25)
    assert grads["bc"][1] == 0 and grads["bc"][2] == 0
    # softplus'(0) = 0.5 on the extinction heads
    grads = net.gradients(dirs, np.zeros((1, 3)), up, np.zeros((1, 3)))
    assert np.isclose(grads["ba"][0], 2.0 * 0.5)


def test_gradients_match_finite_differences(rng):
    net = MediumNetwork.initialize(rng, dtype=np.float64)
    dirs = random_dirs(rng, 6)
    up_c = rng.normal(0, 1, (6, 3))
    up_a = rng.normal(0, 1, (6, 3))
    up_b = rng.normal(0, 1, (6, 3))
    grads = net.gradients(dirs, up_c, up_a, up_b)

    def loss():
        s = net.sample(dirs)
        return float(np.sum(s.c_med * up_c) + np.sum(s.sigma_attn * up_a)
                     + np.sum(s.sigma_bs * up_b))

    h = 1e-4
    rng_pick = np.random.default_rng(3)
    for name in net.params:
        flat = net.params[name].reshape(-1)
        for i in rng_pick.choice(flat.size, size=min(10, flat.size),
                                 replace=False):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm = loss()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            a = grads[name].reshape(-1)[i]
            assert abs(a - fd) < 1e-5 * max(1.0, abs(a)), (name, i)


def test_misshaped_parameters_rejected():
    params = {name: np.zeros(shape) for name, shape in PARAM_SPECS}
    params["w1"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        MediumNetwork(params)
