"""Real spherical harmonics basis up to degree 4.

Used both for the view-dependent Gaussian colors (degree <= 3 by default)
and for the directional encoding of the medium network (degree 4, 25
features). Basis ordering is (l, m) with m = -l..l, matching the usual
splatting convention.
"""

from __future__ import annotations

import numpy as np

# degree-0 constant, 1 / (2 sqrt(pi))
C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)
C4 = (2.5033429417967046, -1.7701307697799304, 0.9461746957575601,
      -0.6690465435572892, 0.10578554691520431, -0.6690465435572892,
      0.47308734787878004, -1.7701307697799304, 0.6258357354491761)

MAX_DEGREE = 4


def num_bases(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis for unit directions.

    dirs: (..., 3) unit vectors. Returns (..., (degree+1)**2).
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported SH degree {degree}")
    dirs = np.asarray(dirs)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (num_bases(degree),), dtype=dirs.dtype)
    out[..., 0] = C0
    if degree < 1:
        return out
    out[..., 1] = -C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = -C1 * x
    if degree < 2:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[..., 4] = C2[0] * xy
    out[..., 5] = C2[1] * yz
    out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = C2[3] * xz
    out[..., 8] = C2[4] * (xx - yy)
    if degree < 3:
        return out
    out[..., 9] = C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = C3[1] * xy * z
    out[..., 11] = C3[2] * y * (4.0 * zz - xx - yy)
    out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = C3[4] * x * (4.0 * zz - xx - yy)
    out[..., 14] = C3[5] * z * (xx - yy)
    out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    if degree < 4:
        return out
    out[..., 16] = C4[0] * xy * (xx - yy)
    out[..., 17] = C4[1] * yz * (3.0 * xx - yy)
    out[..., 18] = C4[2] * xy * (7.0 * zz - 1.0)
    out[..., 19] = C4[3] * yz * (7.0 * zz - 3.0)
    out[..., 20] = C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
    out[..., 21] = C4[5] * xz * (7.0 * zz - 3.0)
    out[..., 22] = C4[6] * (xx - yy) * (7.0 * zz - 1.0)
    out[..., 23] = C4[7] * xz * (xx - 3.0 * yy)
    out[..., 24] = C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Ambient-space gradient of each basis function wrt the direction.

    Returns (..., (degree+1)**2, 3). Callers composing with a normalized
    direction must apply the tangential projector (I - d d^T) / r themselves.
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported SH degree {degree}")
    dirs = np.asarray(dirs)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    g = np.zeros(dirs.shape[:-1] + (num_bases(degree), 3), dtype=dirs.dtype)
    if degree < 1:
        return g
    g[..., 1, 1] = -C1
    g[..., 2, 2] = C1
    g[..., 3, 0] = -C1
    if degree < 2:
        return g
    xx, yy, zz = x * x, y * y, z * z
    g[..., 4, 0] = C2[0] * y
    g[..., 4, 1] = C2[0] * x
    g[..., 5, 1] = C2[1] * z
    g[..., 5, 2] = C2[1] * y
    g[..., 6, 0] = -2.0 * C2[2] * x
    g[..., 6, 1] = -2.0 * C2[2] * y
    g[..., 6, 2] = 4.0 * C2[2] * z
    g[..., 7, 0] = C2[3] * z
    g[..., 7, 2] = C2[3] * x
    g[..., 8, 0] = 2.0 * C2[4] * x
    g[..., 8, 1] = -2.0 * C2[4] * y
    if degree < 3:
        return g
    g[..., 9, 0] = 6.0 * C3[0] * x * y
    g[..., 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
    g[..., 10, 0] = C3[1] * y * z
    g[..., 10, 1] = C3[1] * x * z
    g[..., 10, 2] = C3[1] * x * y
    g[..., 11, 0] = -2.0 * C3[2] * x * y
    g[..., 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
    g[..., 11, 2] = 8.0 * C3[2] * y * z
    g[..., 12, 0] = -6.0 * C3[3] * x * z
    g[..., 12, 1] = -6.0 * C3[3] * y * z
    g[..., 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    g[..., 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
    g[..., 13, 1] = -2.0 * C3[4] * x * y
    g[..., 13, 2] = 8.0 * C3[4] * x * z
    g[..., 14, 0] = 2.0 * C3[5] * x * z
    g[..., 14, 1] = -2.0 * C3[5] * y * z
    g[..., 14, 2] = C3[5] * (xx - yy)
    g[..., 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
    g[..., 15, 1] = -6.0 * C3[6] * x * y
    if degree < 4:
        return g
    g[..., 16, 0] = C4[0] * y * (3.0 * xx - yy)
    g[..., 16, 1] = C4[0] * x * (xx - 3.0 * yy)
    g[..., 17, 0] = 6.0 * C4[1] * x * y * z
    g[..., 17, 1] = C4[1] * z * (3.0 * xx - 3.0 * yy)
    g[..., 17, 2] = C4[1] * y * (3.0 * xx - yy)
    g[..., 18, 0] = C4[2] * y * (7.0 * zz - 1.0)
    g[..., 18, 1] = C4[2] * x * (7.0 * zz - 1.0)
    g[..., 18, 2] = 14.0 * C4[2] * x * y * z
    g[..., 19, 1] = C4[3] * z * (7.0 * zz - 3.0)
    g[..., 19, 2] = C4[3] * y * (21.0 * zz - 3.0)
    g[..., 20, 2] = C4[4] * (140.0 * zz * z - 60.0 * z)
    g[..., 21, 0] = C4[5] * z * (7.0 * zz - 3.0)
    g[..., 21, 2] = C4[5] * x * (21.0 * zz - 3.0)
    g[..., 22, 0] = 2.0 * C4[6] * x * (7.0 * zz - 1.0)
    g[..., 22, 1] = -2.0 * C4[6] * y * (7.0 * zz - 1.0)
    g[..., 22, 2] = 14.0 * C4[6] * z * (xx - yy)
    g[..., 23, 0] = C4[7] * z * (3.0 * xx - 3.0 * yy)
    g[..., 23, 1] = -6.0 * C4[7] * x * y * z
    g[..., 23, 2] = C4[7] * x * (xx - 3.0 * yy)
    g[..., 24, 0] = C4[8] * (4.0 * x * xx - 12.0 * x * yy)
    g[..., 24, 1] = C4[8] * (4.0 * y * yy - 12.0 * xx * y)
    return g
