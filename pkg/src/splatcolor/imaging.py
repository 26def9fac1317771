"""Planar image containers, sRGB/CIELAB conversion and PNG/PFM file I/O.

Samples are kept as floats in [0, 1] inside the package; 8-bit quantization
happens only when writing PNG files.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image


class ContractError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class ImageDecodeError(ValueError):
    """Raised for malformed or unsupported image files."""


class Layout(enum.Enum):
    LUMINANCE1 = "Luminance1"
    RGB3 = "RGB3"
    LAB3 = "Lab3"
    DEPTH1 = "Depth1"
    FLOW2 = "Flow2"

    @property
    def channels(self) -> int:
        return {"Luminance1": 1, "RGB3": 3, "Lab3": 3, "Depth1": 1, "Flow2": 2}[self.value]


@dataclass(frozen=True)
class PixelMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ContractError(f"mask must be 2-D, got shape {bits.shape}")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class PlanarImage:
    """An H x W x C raster; ``data`` is made read-only on construction."""

    data: np.ndarray
    layout: Layout
    mask: Optional[PixelMask] = field(default=None, compare=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.result_type(self.data, np.float32))
        if data.ndim == 2:
            data = data[:, :, None]
        c = self.layout.channels
        if data.ndim != 3 or data.shape[2] != c:
            raise ContractError(f"{self.layout.value} needs shape (H, W, {c}), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ContractError("image samples must be finite")
        lo, hi = _RANGES.get(self.layout, (None, None))
        if lo is not None:
            if data.size and (data.min() < lo or data.max() > hi):
                raise ContractError(
                    f"{self.layout.value} samples outside [{lo}, {hi}]: "
                    f"min={data.min()!r} max={data.max()!r}")
        if self.layout is Layout.DEPTH1 and data.size:
            bad = (data < 0) & (data != -1.0)
            if bad.any():
                raise ContractError("Depth1 samples must be >= 0 or the -1 sentinel")
        if self.mask is not None and (self.mask.height, self.mask.width) != data.shape[:2]:
            raise ContractError("mask dimensions do not match image")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, PlanarImage):
            return NotImplemented
        return self.layout is other.layout and np.array_equal(self.data, other.data)

    __hash__ = None


_RANGES = {
    Layout.LUMINANCE1: (0.0, 1.0),
    Layout.RGB3: (0.0, 1.0),
}


def luminance(data) -> PlanarImage:
    return PlanarImage(np.asarray(data, dtype=np.float64), Layout.LUMINANCE1)


def rgb(data) -> PlanarImage:
    return PlanarImage(np.asarray(data, dtype=np.float64), Layout.RGB3)


def _require(img: PlanarImage, layout: Layout) -> None:
    if not isinstance(img, PlanarImage) or img.layout is not layout:
        got = getattr(getattr(img, "layout", None), "value", type(img).__name__)
        raise ContractError(f"expected {layout.value} image, got {got}")


# sRGB primaries to XYZ (IEC 61966-2-1), D65 white
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_array_to_lab(arr: np.ndarray) -> np.ndarray:
    """Array form of :func:`rgb_to_lab` for (..., 3) float arrays in [0, 1]."""
    arr = np.asarray(arr, dtype=np.float64)
    xyz = _srgb_to_linear(arr) @ _RGB_TO_XYZ.T
    fx, fy, fz = (_f(xyz[..., i] / _WHITE[i]) for i in range(3))
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    lab[..., 0] = np.clip(lab[..., 0], 0.0, 100.0)
    lab[..., 1:] = np.clip(lab[..., 1:], -128.0, 127.0)
    return lab


def lab_array_to_rgb(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx) * _WHITE[0], _f_inv(fy) * _WHITE[1], _f_inv(fz) * _WHITE[2]], axis=-1)
    return np.clip(_linear_to_srgb(xyz @ _XYZ_TO_RGB.T), 0.0, 1.0)


def rgb_to_lab(img: PlanarImage) -> PlanarImage:
    """sRGB (D65) to CIE L*a*b*. L is clipped to [0, 100], a/b to [-128, 127]."""
    _require(img, Layout.RGB3)
    return PlanarImage(rgb_array_to_lab(img.data), Layout.LAB3)


def lab_to_rgb(img: PlanarImage) -> PlanarImage:
    _require(img, Layout.LAB3)
    return PlanarImage(lab_array_to_rgb(img.data), Layout.RGB3)


def to_grayscale(img: PlanarImage) -> PlanarImage:
    """CIE lightness rescaled to [0, 1] (L*/100), not Rec.601 luma."""
    _require(img, Layout.RGB3)
    return PlanarImage(rgb_to_lab(img).data[:, :, :1] / 100.0, Layout.LUMINANCE1)


def gray_to_rgb(img: PlanarImage) -> PlanarImage:
    """Neutral RGB image whose lightness equals the luminance channel."""
    _require(img, Layout.LUMINANCE1)
    lab = np.zeros(img.data.shape[:2] + (3,))
    lab[..., 0] = img.data[..., 0] * 100.0
    return PlanarImage(lab_array_to_rgb(lab), Layout.RGB3)


# ---------------------------------------------------------------- file I/O

def write_image(img: PlanarImage, path) -> None:
    """PNG for Luminance1/RGB3 (8-bit), PFM for everything else."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        if img.layout not in (Layout.LUMINANCE1, Layout.RGB3):
            raise ContractError(f"PNG cannot hold {img.layout.value}; use .pfm")
        q = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        mode = "L" if img.layout is Layout.LUMINANCE1 else "RGB"
        Image.fromarray(q[:, :, 0] if mode == "L" else q, mode=mode).save(path, format="PNG")
    elif path.suffix.lower() == ".pfm":
        _write_pfm(img, path)
    else:
        raise ContractError(f"unsupported image extension: {path.suffix}")


def read_image(path, layout: Optional[Layout] = None) -> PlanarImage:
    """Read a PNG or PFM file.

    ``layout`` selects the interpretation of PFM payloads (Depth1 or
    Luminance1 for one channel, Flow2 or RGB3 for three); PNGs are always
    Luminance1 or RGB3.
    """
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return _read_pfm(path, layout)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc
    if mode == "L":
        out = PlanarImage(arr.astype(np.float64)[:, :, None] / 255.0, Layout.LUMINANCE1)
    elif mode == "RGB":
        out = PlanarImage(arr.astype(np.float64) / 255.0, Layout.RGB3)
    else:
        raise ImageDecodeError(f"{path}: unsupported PNG mode {mode!r} (need 8-bit L or RGB)")
    if layout is not None and out.layout is not layout:
        raise ImageDecodeError(f"{path}: expected {layout.value}, file holds {out.layout.value}")
    return out


def _write_pfm(img: PlanarImage, path: Path) -> None:
    data = np.asarray(img.data, dtype=np.float32)
    if img.layout is Layout.FLOW2:
        valid = np.ones(data.shape[:2], np.float32) if img.mask is None else img.mask.bits.astype(np.float32)
        data = np.concatenate([data, valid[:, :, None]], axis=2)
    if data.shape[2] not in (1, 3):
        raise ContractError(f"PFM holds 1 or 3 channels, got {data.shape[2]}")
    header = b"Pf\n" if data.shape[2] == 1 else b"PF\n"
    h, w = data.shape[:2]
    buf = io.BytesIO()
    buf.write(header)
    buf.write(f"{w} {h}\n".encode("ascii"))
    buf.write(b"-1.0\n")
    buf.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())
    path.write_bytes(buf.getvalue())


def _read_pfm(path: Path, layout: Optional[Layout]) -> PlanarImage:
    raw = path.read_bytes()
    try:
        header, dims, scale, payload = raw.split(b"\n", 3)
        channels = {b"Pf": 1, b"PF": 3}[header.strip()]
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except (ValueError, KeyError) as exc:
        raise ImageDecodeError(f"{path}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * channels * 4
    if len(payload) != need:
        raise ImageDecodeError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32).reshape(h, w, channels)[::-1]
    if channels == 1:
        layout = layout or Layout.DEPTH1
        if layout not in (Layout.DEPTH1, Layout.LUMINANCE1):
            raise ImageDecodeError(f"{path}: one-channel PFM cannot be {layout.value}")
        return PlanarImage(data.copy(), layout)
    layout = layout or Layout.FLOW2
    if layout is Layout.FLOW2:
        return PlanarImage(data[:, :, :2].copy(), Layout.FLOW2, mask=PixelMask(data[:, :, 2] > 0.5))
    if layout in (Layout.RGB3, Layout.LAB3):
        return PlanarImage(data.copy(), layout)
    raise ImageDecodeError(f"{path}: three-channel PFM cannot be {layout.value}")
