"""Real spherical harmonics up to degree 3 (splatting sign convention)."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

VALID_H = (1, 4, 9, 16)
OFFSET = 0.5


def degree_for(h: int) -> int:
    if h not in VALID_H:
        raise ValueError(f"SH coefficient count must be one of {VALID_H}, got {h}")
    return VALID_H.index(h)


def basis(dirs: np.ndarray, h: int) -> np.ndarray:
    """SH basis values for unit directions ``dirs`` of shape (..., 3) -> (..., h)."""
    degree_for(h)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full(x.shape, C0)]
    if h > 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if h > 4:
        xx, yy, zz = x * x, y * y, z * z
        out += [C2[0] * x * y, C2[1] * y * z, C2[2] * (2 * zz - xx - yy),
                C2[3] * x * z, C2[4] * (xx - yy)]
    if h > 9:
        xx, yy, zz = x * x, y * y, z * z
        out += [C3[0] * y * (3 * xx - yy), C3[1] * x * y * z, C3[2] * y * (4 * zz - xx - yy),
                C3[3] * z * (2 * zz - 3 * xx - 3 * yy), C3[4] * x * (4 * zz - xx - yy),
                C3[5] * z * (xx - yy), C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=-1)


def eval_sh(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Evaluate k x h coefficients along one unit direction.

    Returns ``max(0, coeffs @ Y(view_dir) + 0.5)`` as k values.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    view_dir = np.asarray(view_dir, dtype=np.float64)
    if abs(np.linalg.norm(view_dir) - 1.0) > 1e-6:
        raise ValueError("view_dir must be a unit vector")
    y = basis(view_dir, coeffs.shape[-1])
    return np.maximum(coeffs @ y + OFFSET, 0.0)


def value_to_dc(value) -> np.ndarray:
    """Degree-0 coefficient that evaluates to ``value`` in every direction."""
    return (np.asarray(value, dtype=np.float64) - OFFSET) / C0
