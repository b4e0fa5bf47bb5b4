"""Direction-conditioned medium field.

A small MLP maps an SH encoding of the pixel ray direction to the medium
triple (c_med, sigma_attn, sigma_bs): two sigmoid hidden layers of 128
units, then a sigmoid head for the medium color and softplus heads for the
two extinction coefficients. The field is queried exactly once per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.special import expit

from . import sh

ENCODING_DEGREE = 4            # 25 directional features
HIDDEN = 128

# (name, shape) in serialization order
PARAM_SPECS = (
    ("w1", (HIDDEN, sh.num_bases(ENCODING_DEGREE))),
    ("b1", (HIDDEN,)),
    ("w2", (HIDDEN, HIDDEN)),
    ("b2", (HIDDEN,)),
    ("wc", (3, HIDDEN)),
    ("bc", (3,)),
    ("wa", (3, HIDDEN)),
    ("ba", (3,)),
    ("wb", (3, HIDDEN)),
    ("bb", (3,)),
)


@dataclass
class MediumSample:
    """Per-pixel medium triple; components are strictly positive and
    c_med lies in (0, 1) by the head activations."""

    c_med: np.ndarray       # (..., 3) in (0, 1)
    sigma_attn: np.ndarray  # (..., 3) in (0, inf), inverse world units
    sigma_bs: np.ndarray    # (..., 3) in (0, inf), inverse world units


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class MediumNetwork:
    """Parameter container plus forward / reverse-mode evaluation."""

    def __init__(self, params: Dict[str, np.ndarray]):
        for name, shape in PARAM_SPECS:
            if name not in params or params[name].shape != shape:
                raise ValueError(f"medium parameter {name} missing or misshaped")
        self.params = {k: np.ascontiguousarray(params[k]) for k, _ in PARAM_SPECS}

    @classmethod
    def initialize(cls, rng: np.random.Generator, dtype=np.float32) -> "MediumNetwork":
        """Uniform +-1/sqrt(fan_in) weights, zero biases.

        Zero biases put the initial medium at c_med ~ 0.5 and
        sigma ~ softplus(0) = ln 2: a visible fog the gradients can correct.
        """
        params = {}
        for name, shape in PARAM_SPECS:
            if name.startswith("b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                bound = 1.0 / np.sqrt(shape[1])
                params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return cls(params)

    @property
    def dtype(self):
        return self.params["w1"].dtype

    def astype(self, dtype) -> "MediumNetwork":
        return MediumNetwork({k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "MediumNetwork":
        return MediumNetwork({k: v.copy() for k, v in self.params.items()})

    # ---- evaluation ----

    def _forward(self, encoded: np.ndarray):
        p = self.params
        h1 = _sigmoid(encoded @ p["w1"].T + p["b1"])
        h2 = _sigmoid(h1 @ p["w2"].T + p["b2"])
        zc = h2 @ p["wc"].T + p["bc"]
        za = h2 @ p["wa"].T + p["ba"]
        zb = h2 @ p["wb"].T + p["bb"]
        return h1, h2, zc, za, zb

    def sample(self, dirs: np.ndarray) -> MediumSample:
        """Evaluate the medium triple for unit directions (..., 3)."""
        dirs = np.asarray(dirs)
        flat = dirs.reshape(-1, 3)
        enc = sh.sh_basis(flat.astype(self.dtype), ENCODING_DEGREE)
        _, _, zc, za, zb = self._forward(enc)
        lead = dirs.shape[:-1]
        return MediumSample(
            c_med=_sigmoid(zc).reshape(lead + (3,)),
            sigma_attn=_softplus(za).reshape(lead + (3,)),
            sigma_bs=_softplus(zb).reshape(lead + (3,)),
        )

    def sample_encoded(self, enc: np.ndarray) -> MediumSample:
        """Like `sample` but from a precomputed SH encoding (P, 25)."""
        _, _, zc, za, zb = self._forward(enc)
        return MediumSample(_sigmoid(zc), _softplus(za), _softplus(zb))

    def gradients(self, dirs: np.ndarray, d_c_med: np.ndarray,
                  d_sigma_attn: np.ndarray, d_sigma_bs: np.ndarray,
                  encoded: np.ndarray | None = None,
                  activations=None) -> Dict[str, np.ndarray]:
        """Exact reverse-mode parameter gradients for a batch of directions.

        Upstream derivatives are wrt the sample's outputs, shaped (..., 3).
        `activations` may carry the forward pass already computed for the
        same encoding. Gradients are accumulated in float64.
        """
        if encoded is None:
            flat = np.asarray(dirs).reshape(-1, 3)
            encoded = sh.sh_basis(flat.astype(self.dtype), ENCODING_DEGREE)
        p = self.params
        if activations is None:
            activations = self._forward(encoded)
        h1, h2, zc, za, zb = activations
        dc = np.asarray(d_c_med, dtype=np.float64).reshape(-1, 3)
        da = np.asarray(d_sigma_attn, dtype=np.float64).reshape(-1, 3)
        db = np.asarray(d_sigma_bs, dtype=np.float64).reshape(-1, 3)

        sc = _sigmoid(zc)
        gzc = (dc * (sc * (1.0 - sc))).astype(encoded.dtype)
        gza = (da * _sigmoid(za)).astype(encoded.dtype)   # softplus' = sigmoid
        gzb = (db * _sigmoid(zb)).astype(encoded.dtype)

        grads = {}
        grads["wc"] = (gzc.T @ h2).astype(np.float64)
        grads["bc"] = gzc.sum(0).astype(np.float64)
        grads["wa"] = (gza.T @ h2).astype(np.float64)
        grads["ba"] = gza.sum(0).astype(np.float64)
        grads["wb"] = (gzb.T @ h2).astype(np.float64)
        grads["bb"] = gzb.sum(0).astype(np.float64)

        dh2 = gzc @ p["wc"] + gza @ p["wa"] + gzb @ p["wb"]
        gz2 = dh2 * (h2 * (1.0 - h2))
        grads["w2"] = (gz2.T @ h1).astype(np.float64)
        grads["b2"] = gz2.sum(0).astype(np.float64)

        dh1 = gz2 @ p["w2"]
        gz1 = dh1 * (h1 * (1.0 - h1))
        grads["w1"] = (gz1.T @ encoded).astype(np.float64)
        grads["b1"] = gz1.sum(0).astype(np.float64)
        return grads


def encode_directions(dirs: np.ndarray, dtype=np.float32) -> np.ndarray:
    """SH encoding used by the medium network, (..., 3) -> (..., 25)."""
    return sh.sh_basis(np.asarray(dirs, dtype=dtype), ENCODING_DEGREE)
