"""Image losses and gradient-based fitting of opacity, luminance and color
coefficients with frozen splat geometry."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from . import rasterizer as rz
from .imaging import Layout, PlanarImage
from .scene import Camera, Scene, SceneBundle

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _kernel() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    k = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return k / k.sum()


_GAUSS = _kernel()


def _blur(x: np.ndarray) -> np.ndarray:
    # zero-padded "same" filtering; with a symmetric kernel it is its own adjoint
    return correlate1d(correlate1d(x, _GAUSS, axis=0, mode="constant"), _GAUSS, axis=1, mode="constant")


def _as_array(img) -> np.ndarray:
    arr = img.data if isinstance(img, PlanarImage) else np.asarray(img)
    arr = np.asarray(arr, dtype=np.float64)
    return arr[:, :, None] if arr.ndim == 2 else arr


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM with an 11x11 Gaussian window (sigma 1.5)."""
    x, y = _as_array(x), _as_array(y)
    _check_pair(x, y)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return _ssim_parts(x, y)[0]


def _ssim_parts(x, y):
    mx, my = _blur(x), _blur(y)
    exx, eyy, exy = _blur(x * x), _blur(y * y), _blur(x * y)
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (exy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2)


def loss_l1(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def loss_dssim(a, b) -> float:
    """(1 - SSIM) / 2, SSIM averaged over pixels and channels."""
    return float((1.0 - ssim_map(a, b).mean()) / 2.0)


def combined_loss(render: np.ndarray, target: np.ndarray, lambda_dssim: float):
    """Value, L1, D-SSIM and d(loss)/d(render) of (1-l)*L1 + l*D-SSIM."""
    x, y = _as_array(render), _as_array(target)
    _check_pair(x, y)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    n = x.size
    diff = x - y
    l1 = float(np.abs(diff).mean())
    s, (mx, my, a1, a2, b1, b2) = _ssim_parts(x, y)
    dssim = float((1.0 - s.mean()) / 2.0)
    # d mean(S) / d{mx, exx, exy}, pushed back through the (self-adjoint) blur
    inv = 1.0 / (b1 * b2)
    d_a1 = a2 * inv
    d_a2 = a1 * inv
    d_b1 = -s / b1
    d_b2 = -s / b2
    d_mx = 2 * my * (d_a1 - d_a2) + 2 * mx * (d_b1 - d_b2)
    grad_s = (_blur(d_mx) + 2 * x * _blur(d_b2) + 2 * y * _blur(d_a2)) / n
    grad = (1 - lambda_dssim) * np.sign(diff) / n - lambda_dssim * 0.5 * grad_s
    value = (1 - lambda_dssim) * l1 + lambda_dssim * dssim
    return value, l1, dssim, grad


# ------------------------------------------------------------------ backward

def blend_backward(layers: rz.Layers, bl: rz.Blend, values: np.ndarray,
                   grad_img: np.ndarray, want_alpha: bool = True):
    """Gradients of a scalar loss w.r.t. per-splat values (N, k) and opacities (N,).

    ``grad_img`` is d(loss)/d(unclamped composite), shape (H, W, k).
    """
    n, k = values.shape
    d_values = np.zeros((n, k))
    d_alpha = np.zeros(n)
    if not layers.n_entries:
        return d_values, d_alpha
    g = grad_img.reshape(-1, k)[layers.pixels][layers.row]   # (E, k)
    for c in range(k):
        d_values[:, c] = np.bincount(layers.ids, weights=bl.weights * g[:, c], minlength=n)
    if want_alpha:
        v = values[layers.ids]                                # (E, k)
        cw = bl.weights[:, None] * v
        cs = np.cumsum(cw, axis=0)
        last = layers.start + layers.counts - 1
        after = cs[last][layers.row] - cs                     # contributions behind each entry
        d_a = np.einsum("ek,ek->e", v * bl.trans_before[:, None] - after / (1.0 - bl.alpha)[:, None], g)
        live = (bl.alpha > 0) & ~bl.capped
        d_alpha = np.bincount(layers.ids, weights=np.where(live, d_a * layers.gauss, 0.0), minlength=n)
    return d_values, d_alpha


def _coeff_grad(d_values: np.ndarray, raw: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return np.where(raw >= 0, d_values, 0.0)[:, :, None] * basis[:, None, :]


def _clamp_mask(img: np.ndarray) -> np.ndarray:
    return (img >= 0.0) & (img <= 1.0)


def grad_color(scene: Scene, camera: Camera, target, lambda_dssim: float = 0.2) -> np.ndarray:
    """Analytic d(loss)/d(F_c) for one view, shape (N, 3, h)."""
    if scene.f_c is None:
        raise rz.MissingColorError("scene has no color coefficients (F_c)")
    layers = rz.build_layers(scene, camera)
    bl = rz.blend(layers, scene.opacities)
    vals, raw, basis = rz.splat_values(scene.f_c, layers.view_dirs)
    img = rz.composite(layers, bl, vals)
    _, _, _, g = combined_loss(np.clip(img, 0, 1), _as_array(target), lambda_dssim)
    d_vals, _ = blend_backward(layers, bl, vals, g * _clamp_mask(img), want_alpha=False)
    return _coeff_grad(d_vals, raw, basis)


def color_loss(scene: Scene, camera: Camera, target, lambda_dssim: float = 0.2) -> float:
    img = rz.render_color(scene, camera)
    return combined_loss(img.data, _as_array(target), lambda_dssim)[0]


# ------------------------------------------------------------------ fitting

@dataclass
class FitConfig:
    iterations: int = 30_000
    lr: Dict[str, float] = field(default_factory=lambda: {"f_y": 0.01, "alpha": 0.02, "f_c": 0.01})
    lambda_dssim: float = 0.2
    groups: Tuple[str, ...] = ("f_y", "alpha")
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError("lambda_dssim must lie in [0, 1]")
        self.groups = tuple(self.groups)
        unknown = set(self.groups) - {"f_y", "alpha", "f_c"}
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")


@dataclass
class FitReport:
    trace: List[Tuple[int, float, float, float]]
    final_l1: List[float]
    final_dssim: List[float]
    wall_time: float

    @property
    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.trace])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "l1", "dssim"])
            for it, loss, l1, ds in self.trace:
                w.writerow([it, repr(loss), repr(l1), repr(ds)])


class Adam:
    def __init__(self, lr: float, shape, betas=(0.9, 0.999), eps=1e-15):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the update to subtract from the parameters."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


def _targets(views: Sequence, cams: Sequence[Camera], layout: Layout) -> List[np.ndarray]:
    if len(views) == 0:
        raise ValueError("no views to fit against")
    if len(views) != len(cams):
        raise ValueError(f"{len(views)} views for {len(cams)} cameras")
    out = []
    for img, cam in zip(views, cams):
        if isinstance(img, PlanarImage) and img.layout is not layout:
            raise ValueError(f"expected {layout.value} views, got {img.layout.value}")
        arr = _as_array(img)
        if arr.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"view for camera {cam.id} has shape {arr.shape[:2]}")
        out.append(arr)
    return out


def fit_luminance(bundle: SceneBundle, views: Sequence, cfg: FitConfig) -> Tuple[Scene, FitReport]:
    """Fit luminance coefficients and/or opacity to grayscale training views."""
    bad = set(cfg.groups) - {"f_y", "alpha"}
    if bad:
        raise ValueError(f"fit_luminance optimizes only f_y/alpha, got {sorted(bad)}")
    scene = bundle.scene
    cams = bundle.cameras
    targets = _targets(views, cams, Layout.LUMINANCE1)
    start = time.perf_counter()
    layers = [rz.build_layers(scene, c) for c in cams]
    f_y = scene.f_y.copy()
    alpha = scene.opacities.copy()
    opt_fy = Adam(cfg.lr.get("f_y", 0.0), f_y.shape) if "f_y" in cfg.groups else None
    opt_a = Adam(cfg.lr.get("alpha", 0.0), alpha.shape) if "alpha" in cfg.groups else None
    rng = np.random.default_rng(cfg.seed)
    trace = []

    def forward(t):
        bl = rz.blend(layers[t], alpha)
        vals, raw, basis = rz.splat_values(f_y[:, None, :], layers[t].view_dirs)
        img = rz.composite(layers[t], bl, vals)
        return bl, vals, raw, basis, img

    for it in range(cfg.iterations):
        t = int(rng.integers(len(cams)))
        bl, vals, raw, basis, img = forward(t)
        loss, l1, ds, g = combined_loss(np.clip(img, 0, 1), targets[t], cfg.lambda_dssim)
        trace.append((it, loss, l1, ds))
        d_vals, d_alpha = blend_backward(layers[t], bl, vals, g * _clamp_mask(img),
                                         want_alpha=opt_a is not None)
        if opt_fy is not None:
            f_y = f_y - opt_fy.step(_coeff_grad(d_vals, raw, basis)[:, 0, :])
        if opt_a is not None:
            step = opt_a.step(d_alpha * alpha * (1 - alpha))
            alpha = np.where(step == 0, alpha, _sigmoid(_logit(alpha) - step))

    final_l1, final_ds = [], []
    for t in range(len(cams)):
        img = forward(t)[-1]
        _, l1, ds, _ = combined_loss(np.clip(img, 0, 1), targets[t], cfg.lambda_dssim)
        final_l1.append(l1)
        final_ds.append(ds)
    out = scene.replace(f_y=f_y, opacities=alpha)
    return out, FitReport(trace, final_l1, final_ds, time.perf_counter() - start)


def fit_color(bundle: SceneBundle, views: Sequence, cfg: FitConfig) -> Tuple[Scene, FitReport]:
    """Fit F_c (initialized to zero) to pseudo ground-truth color views.

    Geometry, opacity and F_y are frozen; the blending weights of every
    camera are therefore constant and precomputed as sparse matrices.
    """
    scene = bundle.scene
    cams = bundle.cameras
    targets = _targets(views, cams, Layout.RGB3)
    start = time.perf_counter()
    frozen = {k: getattr(scene, k).copy() for k in ("positions", "rotations", "scales", "opacities", "f_y")}
    per_cam = []
    for cam in cams:
        layers = rz.build_layers(scene, cam)
        wm = rz.weight_matrix(layers, rz.blend(layers, scene.opacities))
        per_cam.append((wm, wm.T.tocsr(), rz.splat_values(np.zeros((len(scene), 3, scene.h)),
                                                          layers.view_dirs)[2]))
    f_c = np.zeros((len(scene), 3, scene.h))
    opt = Adam(cfg.lr.get("f_c", 0.0), f_c.shape)
    rng = np.random.default_rng(cfg.seed)
    trace = []

    def forward(t):
        wm, _, basis = per_cam[t]
        raw = np.einsum("nkh,nh->nk", f_c, basis) + 0.5
        img = (wm @ np.maximum(raw, 0.0)).reshape(cams[t].height, cams[t].width, 3)
        return raw, basis, img

    for it in range(cfg.iterations):
        t = int(rng.integers(len(cams)))
        raw, basis, img = forward(t)
        loss, l1, ds, g = combined_loss(np.clip(img, 0, 1), targets[t], cfg.lambda_dssim)
        trace.append((it, loss, l1, ds))
        d_vals = per_cam[t][1] @ (g * _clamp_mask(img)).reshape(-1, 3)
        f_c = f_c - opt.step(_coeff_grad(d_vals, raw, basis))

    final_l1, final_ds = [], []
    for t in range(len(cams)):
        img = forward(t)[2]
        _, l1, ds, _ = combined_loss(np.clip(img, 0, 1), targets[t], cfg.lambda_dssim)
        final_l1.append(l1)
        final_ds.append(ds)
    out = scene.replace(f_c=f_c)
    for k, before in frozen.items():
        if not np.array_equal(getattr(out, k), before):
            raise AssertionError(f"fit_color modified frozen parameter {k}")
    return out, FitReport(trace, final_l1, final_ds, time.perf_counter() - start)
