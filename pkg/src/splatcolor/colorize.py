"""Colorizer contracts, built-in colorizers, base-view calibration and
propagation of base-view colors to every training view.

A *single colorizer* maps ``(luminance image, view id) -> RGB image``. A
*reference colorizer* maps ``(luminance image, references, view id) -> RGB``.
Only the oracle may look at the view id.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence

import numpy as np

from . import rasterizer as rz
from .imaging import (Layout, PlanarImage, lab_array_to_rgb, read_image, rgb_array_to_lab,
                      to_grayscale)
from .scene import SceneBundle


class SingleColorizer(Protocol):
    def __call__(self, gray: PlanarImage, view_id: int) -> PlanarImage: ...


class ReferenceColorizer(Protocol):
    def __call__(self, gray: PlanarImage, references: Sequence[PlanarImage],
                 view_id: int) -> PlanarImage: ...


class ColorizerError(ValueError):
    pass


def _check_gray(gray: PlanarImage) -> None:
    if not isinstance(gray, PlanarImage) or gray.layout is not Layout.LUMINANCE1:
        raise ColorizerError("colorizer input must be a Luminance1 image")


# ----------------------------------------------------------------- built-ins

class OracleColorizer:
    """Renders the bundle's ground-truth colors at the requested camera.

    Usable both as a single and as a reference colorizer; references are
    ignored. Renders are cached per view id.
    """

    def __init__(self, bundle: SceneBundle):
        if bundle.scene.gt_colors is None:
            raise ColorizerError("oracle colorizer needs a bundle with ground-truth colors")
        self._scene = bundle.scene.with_gt_as_color()
        self._bundle = bundle
        self._cache: Dict[int, PlanarImage] = {}

    def __call__(self, gray, references=None, view_id: Optional[int] = None) -> PlanarImage:
        if view_id is None and not isinstance(references, (list, tuple)):
            view_id, references = references, None
        _check_gray(gray)
        if view_id not in self._cache:
            self._cache[view_id] = rz.render_color(self._scene, self._bundle.camera(view_id))
        out = self._cache[view_id]
        if (out.height, out.width) != (gray.height, gray.width):
            raise ColorizerError("input size does not match the oracle camera")
        return out


def oracle_colorizer(bundle: SceneBundle) -> OracleColorizer:
    return OracleColorizer(bundle)


def view_hash(view_id: int) -> float:
    """Deterministic pseudo-random value in [-1, 1] for a view id."""
    digest = hashlib.sha256(f"view:{int(view_id)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") / float(2 ** 64 - 1) * 2.0 - 1.0


def rotate_chroma(lab: np.ndarray, angle: float) -> np.ndarray:
    out = np.array(lab, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    a, b = lab[..., 1], lab[..., 2]
    out[..., 1] = c * a - s * b
    out[..., 2] = s * a + c * b
    return out


def hue_bias_colorizer(base: SingleColorizer, strength: float) -> SingleColorizer:
    """Wrap ``base`` and rotate its chroma by ``strength * view_hash(view_id)`` radians."""

    def colorize(gray: PlanarImage, view_id: int) -> PlanarImage:
        out = base(gray, view_id)
        if strength == 0:
            return out
        lab = rgb_array_to_lab(out.data)
        return PlanarImage(lab_array_to_rgb(rotate_chroma(lab, strength * view_hash(view_id))),
                           Layout.RGB3)

    colorize.strength = strength
    return colorize


def chroma_table(references: Sequence[PlanarImage], bins: int) -> np.ndarray:
    """Mean (a, b) per lightness bin over all reference pixels, shape (bins, 2).

    Empty bins copy the nearest non-empty bin; equidistant ties take the
    lower bin.
    """
    if len(references) == 0:
        raise ColorizerError("reference colorizer needs at least one reference view")
    sums = np.zeros((bins, 2))
    counts = np.zeros(bins)
    for ref in references:
        if ref.layout is not Layout.RGB3:
            raise ColorizerError("references must be RGB3 images")
        lab = rgb_array_to_lab(ref.data).reshape(-1, 3)
        idx = lightness_bin(lab[:, 0], bins)
        counts += np.bincount(idx, minlength=bins)
        for c in (0, 1):
            sums[:, c] += np.bincount(idx, weights=lab[:, c + 1], minlength=bins)
    filled = np.flatnonzero(counts > 0)
    table = np.zeros((bins, 2))
    table[filled] = sums[filled] / counts[filled, None]
    # nearest filled bin; argmin returns the first (lower) of equidistant candidates
    nearest = filled[np.argmin(np.abs(np.arange(bins)[:, None] - filled[None, :]), axis=1)]
    return table[nearest]


def lightness_bin(L: np.ndarray, bins: int) -> np.ndarray:
    return np.clip(np.floor(np.asarray(L) / 100.0 * bins).astype(np.int64), 0, bins - 1)


def lut_reference_colorizer(bins: int = 64) -> ReferenceColorizer:
    """Lightness-to-chroma lookup built from the reference views.

    The output keeps the input lightness and takes (a, b) from the table.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")

    def colorize(gray: PlanarImage, references: Sequence[PlanarImage], view_id: int = -1) -> PlanarImage:
        _check_gray(gray)
        table = chroma_table(references, bins)
        L = gray.data[:, :, 0] * 100.0
        lab = np.empty(L.shape + (3,))
        lab[..., 0] = L
        lab[..., 1:] = table[lightness_bin(L, bins)]
        return PlanarImage(lab_array_to_rgb(lab), Layout.RGB3)

    colorize.bins = bins
    return colorize


class ExternalColorizer:
    """Serves pre-computed colorized views ``view_{t}.png`` from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ColorizerError(f"external colorizer directory not found: {self.directory}")

    def __call__(self, gray, references=None, view_id: Optional[int] = None) -> PlanarImage:
        if view_id is None and not isinstance(references, (list, tuple)):
            view_id, references = references, None
        _check_gray(gray)
        path = self.directory / f"view_{view_id}.png"
        if not path.exists():
            raise ColorizerError(f"missing external view {path}")
        out = read_image(path, Layout.RGB3)
        if (out.height, out.width) != (gray.height, gray.width):
            raise ColorizerError(f"{path} has size {out.width}x{out.height}, expected {gray.width}x{gray.height}")
        return out


_SPEC = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")


def parse_colorizer(spec: str, bundle: Optional[SceneBundle] = None, role: str = "single"):
    """Build a colorizer from ``oracle | hue_bias(s) | lut(bins) | external(dir)``.

    ``hue_bias`` wraps the oracle and is a single colorizer; ``lut`` is a
    reference colorizer only.
    """
    m = _SPEC.match(spec)
    if not m:
        raise ValueError(f"bad colorizer spec {spec!r}")
    name, arg = m.group(1), m.group(2)
    if name == "oracle":
        if bundle is None:
            raise ValueError("oracle colorizer needs the scene bundle")
        return oracle_colorizer(bundle)
    if name == "hue_bias":
        if role != "single":
            raise ValueError("hue_bias is a single-view colorizer")
        return hue_bias_colorizer(parse_colorizer("oracle", bundle), float(arg))
    if name == "lut":
        if role != "reference":
            raise ValueError("lut is a reference colorizer")
        return lut_reference_colorizer(int(arg) if arg else 64)
    if name == "external":
        if not arg:
            raise ValueError("external(dir) needs a directory")
        return ExternalColorizer(arg.strip())
    raise ValueError(f"unknown colorizer {name!r}")


# ------------------------------------------------------------- the two steps

@dataclass(frozen=True)
class ColorizedViewSet:
    base_ids: tuple
    base_initial: tuple
    base_calibrated: tuple
    view_ids: tuple
    propagated: tuple


def initial_base_colorize(colorizer: SingleColorizer, base_views: Sequence[PlanarImage],
                          base_ids: Sequence[int]) -> List[PlanarImage]:
    if len(base_views) < 1:
        raise ValueError("need at least one base view")
    return [colorizer(g, int(t)) for g, t in zip(base_views, base_ids)]


def global_calibrate(phi: ReferenceColorizer, initial: Sequence[PlanarImage],
                     base_ids: Sequence[int], passes: int = 1) -> List[PlanarImage]:
    """Average each base view with its recolorization against the other base views.

    Every view in a pass reads the same input set. With a single base view
    there is nothing to reference and the set is returned unchanged.
    """
    views = list(initial)
    if len(views) < 2:
        return views
    for _ in range(passes):
        nxt = []
        for k, img in enumerate(views):
            others = views[:k] + views[k + 1:]
            recolored = phi(to_grayscale(img), others, int(base_ids[k]))
            nxt.append(PlanarImage(0.5 * (img.data + recolored.data), Layout.RGB3))
        views = nxt
    return views


def propagate(phi: ReferenceColorizer, gray_views: Sequence[PlanarImage], view_ids: Sequence[int],
              references: Sequence[PlanarImage]) -> List[PlanarImage]:
    """Colorize every training view against the full calibrated reference set."""
    if len(gray_views) < 1 or len(references) < 1:
        raise ValueError("propagation needs at least one view and one reference")
    refs = list(references)
    return [phi(g, refs, int(t)) for g, t in zip(gray_views, view_ids)]


def mean_chroma(img: PlanarImage) -> np.ndarray:
    return rgb_array_to_lab(img.data)[..., 1:].reshape(-1, 2).mean(axis=0)


def chroma_spread(images: Sequence[PlanarImage]) -> float:
    """Spread of per-image mean (a, b): sqrt of the summed per-axis variances."""
    means = np.array([mean_chroma(im) for im in images])
    return float(np.sqrt(means.var(axis=0).sum()))
