"""Evaluation metrics: color diversity index, warped ab-consistency,
colourfulness, PSNR and the square-root-normalized hue histogram."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .imaging import Layout, PixelMask, PlanarImage, rgb_array_to_lab


class NoValidPixelsError(ValueError):
    pass


def _rgb(img: PlanarImage) -> np.ndarray:
    if not isinstance(img, PlanarImage) or img.layout is not Layout.RGB3:
        raise ValueError("expected an RGB3 image")
    return np.asarray(img.data, dtype=np.float64)


def _to_8bit(arr: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.int64)


def color_bin_counts(images: Sequence[PlanarImage], bins_per_channel: int = 8) -> np.ndarray:
    """Pooled 3-D RGB histogram over 0-255 values, flattened to bins**3 counts."""
    if len(images) == 0:
        raise ValueError("no images")
    counts = np.zeros(bins_per_channel ** 3, np.int64)
    for img in images:
        q = _to_8bit(_rgb(img)).reshape(-1, 3) * bins_per_channel // 256
        idx = (q[:, 0] * bins_per_channel + q[:, 1]) * bins_per_channel + q[:, 2]
        counts += np.bincount(idx, minlength=bins_per_channel ** 3)
    return counts


def cdi(images: Sequence[PlanarImage], bins_per_channel: int = 8, threshold: int = 100) -> float:
    """Fraction of RGB bins whose pooled pixel count strictly exceeds ``threshold``."""
    counts = color_bin_counts(images, bins_per_channel)
    return float(np.count_nonzero(counts > threshold) / counts.size)


FlowPair = Union[PlanarImage, Tuple[PlanarImage, PixelMask]]


def _flow_and_mask(item: FlowPair) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(item, PlanarImage):
        flow, mask = item, item.mask
    else:
        flow, mask = item
    if flow.layout is not Layout.FLOW2:
        raise ValueError("flow must be a Flow2 image")
    bits = np.ones(flow.data.shape[:2], bool) if mask is None else mask.bits
    return np.asarray(flow.data, dtype=np.float64), bits


def _ab(img: PlanarImage) -> np.ndarray:
    if img.layout is Layout.LAB3:
        ab = np.asarray(img.data[..., 1:], dtype=np.float64)
    else:
        ab = rgb_array_to_lab(_rgb(img))[..., 1:]
    return (ab + 128.0) / 255.0


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) ``img`` at in-bounds float coordinates."""
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def pair_errors(frame_a: PlanarImage, frame_b: PlanarImage, flow: FlowPair) -> np.ndarray:
    """Per-valid-pixel squared ab error between ``frame_a`` and ``frame_b`` warped back along ``flow``."""
    fl, valid = _flow_and_mask(flow)
    ab_a, ab_b = _ab(frame_a), _ab(frame_b)
    h, w = ab_a.shape[:2]
    if fl.shape[:2] != (h, w) or ab_b.shape[:2] != (h, w):
        raise ValueError("flow and frame dimensions differ")
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    x = uu + fl[..., 0]
    y = vv + fl[..., 1]
    valid = valid & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    warped = bilinear_sample(ab_b, x[valid], y[valid])
    return ((ab_a[valid] - warped) ** 2).mean(axis=1)


def warped_consistency(frames: Sequence[PlanarImage], flows: Sequence[FlowPair], delta: int) -> float:
    """Mean squared ab error over frame pairs (t, t + delta).

    ``flows[t]`` maps pixels of frame t into frame t + delta; a,b are mapped
    to [0, 1] by (x + 128) / 255 before differencing.
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    n_pairs = len(frames) - delta
    if n_pairs < 1:
        raise ValueError(f"need at least {delta + 1} frames, got {len(frames)}")
    if len(flows) < n_pairs:
        raise ValueError(f"need {n_pairs} flows, got {len(flows)}")
    errs = [pair_errors(frames[t], frames[t + delta], flows[t]) for t in range(n_pairs)]
    errs = np.concatenate(errs)
    if errs.size == 0:
        raise NoValidPixelsError("no valid pixels in any frame pair")
    return float(errs.mean())


def colorfulness(img: PlanarImage) -> float:
    """Hasler-Suesstrunk colourfulness on the 0-255 scale."""
    arr = _rgb(img).reshape(-1, 3) * 255.0
    rg = arr[:, 0] - arr[:, 1]
    yb = 0.5 * (arr[:, 0] + arr[:, 1]) - arr[:, 2]
    return float(np.sqrt(rg.var() + yb.var()) + 0.3 * np.sqrt(rg.mean() ** 2 + yb.mean() ** 2))


def psnr(a: PlanarImage, b: PlanarImage) -> float:
    x, y = np.asarray(a.data, np.float64), np.asarray(b.data, np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse < 1e-10:
        return 100.0
    return float(min(100.0, 10.0 * np.log10(1.0 / mse)))


def hue_counts(images: Sequence[PlanarImage], min_saturation: float = 0.05) -> np.ndarray:
    """Per-degree hue counts over pixels with HSV saturation above ``min_saturation``."""
    if len(images) == 0:
        raise ValueError("no images")
    counts = np.zeros(360, np.int64)
    for img in images:
        arr = _rgb(img).reshape(-1, 3)
        mx = arr.max(axis=1)
        delta = mx - arr.min(axis=1)
        sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
        keep = sat > min_saturation
        r, g, b = arr[keep].T
        mx, d = mx[keep], delta[keep]
        hue = np.where(mx == r, ((g - b) / d) % 6.0,
                       np.where(mx == g, (b - r) / d + 2.0, (r - g) / d + 4.0)) * 60.0
        counts += np.bincount(np.floor(hue).astype(np.int64) % 360, minlength=360)
    return counts


def hue_histogram(images: Sequence[PlanarImage], min_saturation: float = 0.05) -> np.ndarray:
    """sqrt(count) per degree, scaled so the largest bin is 1 (all zeros if no chromatic pixel)."""
    w = np.sqrt(hue_counts(images, min_saturation).astype(np.float64))
    top = w.max()
    return w / top if top > 0 else w


@dataclass
class MetricsReport:
    cdi: float
    short_consistency: Optional[float]
    long_consistency: Optional[float]
    colorfulness: float
    psnr_db: Optional[float]
    hue_histogram: list
    extra: Optional[dict] = None

    def __post_init__(self):
        if not 0.0 <= self.cdi <= 1.0:
            raise ValueError("cdi must lie in [0, 1]")
        if len(self.hue_histogram) != 360:
            raise ValueError("hue histogram must have 360 bins")

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def write_histogram_csv(weights: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "weight"])
        for i, val in enumerate(weights):
            w.writerow([i, repr(float(val))])
