"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.spatial.transform import Rotation

from splatcolor.scene import Camera, Scene, look_at

Y00 = 0.28209479177387814
Y1 = 0.4886025119029199


def sh_basis_naive(d, h):
    """Real SH basis in the splatting sign convention, written out term by term."""
    x, y, z = d
    out = [Y00]
    if h >= 4:
        out += [-Y1 * y, Y1 * z, -Y1 * x]
    if h >= 9:
        out += [1.0925484305920792 * x * y, -1.0925484305920792 * y * z,
                0.31539156525252005 * (2 * z * z - x * x - y * y),
                -1.0925484305920792 * x * z, 0.5462742152960396 * (x * x - y * y)]
    if h >= 16:
        out += [-0.5900435899266435 * y * (3 * x * x - y * y), 2.890611442640554 * x * y * z,
                -0.4570457994644658 * y * (4 * z * z - x * x - y * y),
                0.3731763325901154 * z * (2 * z * z - 3 * x * x - 3 * y * y),
                -0.4570457994644658 * x * (4 * z * z - x * x - y * y),
                1.445305721320277 * z * (x * x - y * y),
                -0.5900435899266435 * x * (x * x - 3 * y * y)]
    return np.array(out)


def naive_render(scene: Scene, cam: Camera, coeffs: np.ndarray):
    """Per-splat, whole-image front-to-back blending.

    Returns (image (H, W, k) unclamped, weight sum (H, W), final transmittance
    (H, W), max weight per splat (N,)).
    """
    H, W = cam.height, cam.width
    n = len(scene)
    k = coeffs.shape[1]
    img = np.zeros((H, W, k))
    T = np.ones((H, W))
    wsum = np.zeros((H, W))
    maxw = np.zeros(n)
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    center = -cam.R.T @ cam.t
    items = []
    for i in range(n):
        p = cam.R @ scene.positions[i] + cam.t
        if p[2] <= 0.01:
            continue
        w, x, y, z = scene.rotations[i]
        rot = Rotation.from_quat([x, y, z, w]).as_matrix()
        cov3 = rot @ np.diag(scene.scales[i] ** 2) @ rot.T
        J = np.array([[cam.fx / p[2], 0.0, -cam.fx * p[0] / p[2] ** 2],
                      [0.0, cam.fy / p[2], -cam.fy * p[1] / p[2] ** 2]])
        cov2 = J @ cam.R @ cov3 @ cam.R.T @ J.T
        cov2 = 0.5 * (cov2 + cov2.T) + 0.3 * np.eye(2)
        mean = np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])
        items.append((p[2], i, mean, cov2))
    items.sort(key=lambda it: (it[0], it[1]))
    for depth, i, mean, cov2 in items:
        rx, ry = 3 * math.sqrt(cov2[0, 0]), 3 * math.sqrt(cov2[1, 1])
        inside = ((uu >= math.ceil(mean[0] - rx)) & (uu <= math.floor(mean[0] + rx))
                  & (vv >= math.ceil(mean[1] - ry)) & (vv <= math.floor(mean[1] + ry)))
        inv = np.linalg.inv(cov2)
        du, dv = uu - mean[0], vv - mean[1]
        g = np.exp(-0.5 * (inv[0, 0] * du * du + 2 * inv[0, 1] * du * dv + inv[1, 1] * dv * dv))
        a = np.minimum(0.99, scene.opacities[i] * g)
        a = np.where(inside & (a >= 1 / 255) & (T >= 1e-4), a, 0.0)
        d = scene.positions[i] - center
        d = d / np.linalg.norm(d)
        val = np.maximum(coeffs[i] @ sh_basis_naive(d, coeffs.shape[2]) + 0.5, 0.0)
        w_ = a * T
        img += w_[..., None] * val[None, None, :]
        wsum += w_
        maxw[i] = max(maxw[i], float(w_.max()))
        T = T * (1 - a)
    return img, wsum, T, maxw


def random_scene(rng: np.random.Generator, n: int, h: int = 1, color: bool = True) -> Scene:
    pos = rng.uniform(-1.0, 1.0, (n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    s = rng.uniform(0.03, 0.3, (n, 3))
    a = rng.uniform(0.0, 1.0, n)
    f_y = rng.normal(0, 0.5, (n, h))
    f_c = rng.normal(0, 0.5, (n, 3, h)) if color else None
    return Scene(pos, q, s, a, f_y, f_c, None)


def random_camera(rng: np.random.Generator, cam_id=0, size=64) -> Camera:
    theta = rng.uniform(0, 2 * np.pi)
    eye = (3.0 * np.cos(theta), 3.0 * np.sin(theta), rng.uniform(-1.0, 1.5))
    return look_at(cam_id, eye, tuple(rng.uniform(-0.2, 0.2, 3)), rng.uniform(40, 70), size, size)


def greedy_oracle(sets: dict, k: int):
    """Exhaustive per-step rescoring; returns the picks."""
    ids = sorted(sets)
    best_size = max(len(sets[t]) for t in ids)
    picks = [min(t for t in ids if len(sets[t]) == best_size)]
    covered = set(sets[picks[0]])
    while len(picks) < k:
        scores = {t: Fraction(len(sets[t] - covered), len(sets[t] & covered) + 1)
                  for t in ids if t not in picks}
        top = max(scores.values())
        pick = min(t for t, s in scores.items() if s == top)
        picks.append(pick)
        covered |= sets[pick]
    return picks


def colourfulness_two_pass(rgb: np.ndarray) -> float:
    """Hasler-Suesstrunk with explicit two-pass mean/variance loops over pixels."""
    px = rgb.reshape(-1, 3) * 255.0
    rg = [float(r - g) for r, g, _ in px]
    yb = [float(0.5 * (r + g) - b) for r, g, b in px]
    n = len(rg)
    mrg, myb = sum(rg) / n, sum(yb) / n
    vrg = sum((v - mrg) ** 2 for v in rg) / n
    vyb = sum((v - myb) ** 2 for v in yb) / n
    return math.sqrt(vrg + vyb) + 0.3 * math.sqrt(mrg ** 2 + myb ** 2)
