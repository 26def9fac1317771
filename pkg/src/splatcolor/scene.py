"""Gaussian splat scenes, pinhole cameras, the scene JSON format and a
synthetic 360-degree ring scene generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import sh
from .imaging import lab_array_to_rgb, rgb_array_to_lab


class SchemaError(ValueError):
    """Scene file or in-memory bundle violates the scene schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianSplat:
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    f_y: np.ndarray
    f_c: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Scene:
    """Struct-of-arrays splat set. Splat ids are row indices and never change.

    ``rotations`` are (w, x, y, z) unit quaternions, ``f_y`` is (N, h),
    ``f_c`` and ``gt_colors`` are (N, 3, h) when present.
    """

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    f_y: np.ndarray
    f_c: Optional[np.ndarray] = None
    gt_colors: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(np.asarray(self.positions).reshape(-1, 3))
        for name, shape in (("positions", (n, 3)), ("rotations", (n, 4)), ("scales", (n, 3)),
                            ("opacities", (n,))):
            arr = _frozen(getattr(self, name)).reshape(shape)
            object.__setattr__(self, name, arr)
        f_y = _frozen(self.f_y)
        object.__setattr__(self, "f_y", f_y if f_y.ndim == 2 else f_y.reshape(n, -1))
        for name in ("f_c", "gt_colors"):
            val = getattr(self, name)
            if val is not None:
                val = _frozen(val)
                object.__setattr__(self, name, val if val.ndim == 3 else val.reshape(n, 3, -1))
        self.validate()

    def validate(self) -> None:
        norms = np.linalg.norm(self.rotations, axis=1)
        for mask, field_name, msg in (
                (np.abs(norms - 1.0) > 1e-6, "q", "quaternion is not unit length"),
                (~np.all(self.scales > 0, axis=1), "s", "scales must be positive"),
                ((self.opacities < 0) | (self.opacities > 1), "opacity", "not in [0, 1]")):
            bad = np.flatnonzero(mask)
            if bad.size:
                raise SchemaError(f"splats[{bad[0]}].{field_name}", msg)
        for name in ("positions", "rotations", "scales", "opacities", "f_y"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SchemaError(name, "values must be finite")
        h = self.f_y.shape[1]
        if h not in sh.VALID_H:
            raise SchemaError("splats[*].f_y", f"coefficient count {h} not in {sh.VALID_H}")
        for name in ("f_c", "gt_colors"):
            val = getattr(self, name)
            if val is not None and val.shape[2] != h:
                raise SchemaError(f"splats[*].{name}", f"has h={val.shape[2]}, f_y has h={h}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def h(self) -> int:
        return self.f_y.shape[1]

    def splat(self, i: int) -> GaussianSplat:
        return GaussianSplat(self.positions[i], self.rotations[i], self.scales[i],
                             float(self.opacities[i]), self.f_y[i],
                             None if self.f_c is None else self.f_c[i])

    def replace(self, **changes) -> "Scene":
        return replace(self, **changes)

    def with_gt_as_color(self) -> "Scene":
        if self.gt_colors is None:
            raise ValueError("scene has no ground-truth colors")
        return self.replace(f_c=self.gt_colors)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return all(_opt_equal(getattr(self, f), getattr(other, f)) for f in
                   ("positions", "rotations", "scales", "opacities", "f_y", "f_c", "gt_colors"))

    __hash__ = None


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``R``, ``t`` map world points to camera space
    (x right, y down, z forward). Pixel centers sit at integer coordinates."""

    id: int
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R).reshape(3, 3))
        object.__setattr__(self, "t", _frozen(self.t).reshape(3))
        where = f"cameras[id={self.id}]"
        if not (self.fx > 0 and self.fy > 0):
            raise SchemaError(where, "focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise SchemaError(where, "image size must be positive")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise SchemaError(f"{where}.R", "rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def scaled(self, fx_factor: float) -> "Camera":
        return replace(self, fx=self.fx * fx_factor)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (self.id, self.fx, self.fy, self.cx, self.cy, self.width, self.height) == \
            (other.id, other.fx, other.fy, other.cx, other.cy, other.width, other.height) \
            and np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    __hash__ = None


def look_at(cam_id: int, eye, target, fov_deg: float, width: int, height: int,
            up=(0.0, 0.0, 1.0)) -> Camera:
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    return Camera(cam_id, f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height, R, -R @ eye)


@dataclass(frozen=True, eq=False)
class SceneBundle:
    scene: Scene
    cameras: tuple
    test_cameras: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "test_cameras", tuple(self.test_cameras))
        if len(self.cameras) < 1:
            raise SchemaError("cameras", "at least one training camera is required")
        ids = [c.id for c in self.cameras + self.test_cameras]
        if len(set(ids)) != len(ids):
            raise SchemaError("cameras", "camera ids must be unique")

    def camera(self, cam_id: int) -> Camera:
        for cam in self.cameras + self.test_cameras:
            if cam.id == cam_id:
                return cam
        raise KeyError(cam_id)

    def replace(self, **changes) -> "SceneBundle":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, SceneBundle):
            return NotImplemented
        return self.scene == other.scene and list(self.cameras) == list(other.cameras) \
            and list(self.test_cameras) == list(other.test_cameras)

    __hash__ = None


# ------------------------------------------------------------------ JSON

def _camera_to_json(cam: Camera) -> dict:
    return {"id": cam.id, "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "w": cam.width, "h": cam.height, "R": cam.R.ravel().tolist(), "t": cam.t.tolist()}


def bundle_to_json(bundle: SceneBundle) -> dict:
    sc = bundle.scene
    splats = []
    for i in range(len(sc)):
        rec = {"x": sc.positions[i].tolist(), "q": sc.rotations[i].tolist(),
               "s": sc.scales[i].tolist(), "alpha": float(sc.opacities[i]),
               "f_y": sc.f_y[i].tolist()}
        if sc.f_c is not None:
            rec["f_c"] = sc.f_c[i].tolist()
        splats.append(rec)
    out = {"splats": splats,
           "cameras": [_camera_to_json(c) for c in bundle.cameras],
           "test_cameras": [_camera_to_json(c) for c in bundle.test_cameras]}
    if sc.gt_colors is not None:
        out["gt_colors"] = sc.gt_colors.tolist()
    return out


def save_scene(bundle: SceneBundle, path) -> None:
    text = json.dumps(bundle_to_json(bundle), allow_nan=False, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def _vec(rec: dict, key: str, n: Optional[int], where: str) -> list:
    if key not in rec:
        raise SchemaError(f"{where}.{key}", "missing field")
    val = rec[key]
    if not isinstance(val, list) or (n is not None and len(val) != n):
        raise SchemaError(f"{where}.{key}", f"expected list of {n if n is not None else 'h'} numbers")
    for v in val:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"{where}.{key}", f"non-finite or non-numeric entry {v!r}")
    return val


def _num(rec: dict, key: str, where: str) -> float:
    return _vec({key: [rec[key]]} if key in rec else {}, key, 1, where)[0]


def _camera_from_json(rec, where: str) -> Camera:
    if not isinstance(rec, dict):
        raise SchemaError(where, "camera must be an object")
    for key in ("id", "w", "h"):
        if not isinstance(rec.get(key), int) or isinstance(rec.get(key), bool):
            raise SchemaError(f"{where}.{key}", "integer required")
    fx, fy, cx, cy = (_num(rec, k, where) for k in ("fx", "fy", "cx", "cy"))
    R = _vec(rec, "R", 9, where)
    t = _vec(rec, "t", 3, where)
    try:
        return Camera(rec["id"], fx, fy, cx, cy, rec["w"], rec["h"], R, t)
    except SchemaError as exc:
        raise SchemaError(where, str(exc)) from None


def bundle_from_json(doc: dict) -> SceneBundle:
    if not isinstance(doc, dict) or not isinstance(doc.get("splats"), list):
        raise SchemaError("splats", "top-level 'splats' list required")
    cols = {k: [] for k in ("x", "q", "s", "alpha", "f_y", "f_c")}
    has_fc = None
    for i, rec in enumerate(doc["splats"]):
        where = f"splats[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(where, "splat must be an object")
        cols["x"].append(_vec(rec, "x", 3, where))
        cols["q"].append(_vec(rec, "q", 4, where))
        cols["s"].append(_vec(rec, "s", 3, where))
        alpha = _num({"opacity": rec["alpha"]} if "alpha" in rec else {}, "opacity", where)
        if not 0.0 <= alpha <= 1.0:
            raise SchemaError(f"{where}.opacity", f"{alpha!r} not in [0, 1]")
        cols["alpha"].append(alpha)
        f_y = _vec(rec, "f_y", None, where)
        if len(f_y) not in sh.VALID_H:
            raise SchemaError(f"{where}.f_y", f"length {len(f_y)} not in {sh.VALID_H}")
        if cols["f_y"] and len(f_y) != len(cols["f_y"][0]):
            raise SchemaError(f"{where}.f_y", "all splats must share the same h")
        cols["f_y"].append(f_y)
        if has_fc is None:
            has_fc = "f_c" in rec
        if ("f_c" in rec) != has_fc:
            raise SchemaError(f"{where}.f_c", "f_c must be present on all splats or none")
        if has_fc:
            fc = rec["f_c"]
            if not isinstance(fc, list) or len(fc) != 3:
                raise SchemaError(f"{where}.f_c", "expected 3 rows")
            cols["f_c"].append([_vec({"f_c": row}, "f_c", len(f_y), where) for row in fc])
    n = len(doc["splats"])
    gt = doc.get("gt_colors")
    if gt is not None:
        gt = np.asarray(gt, dtype=np.float64)
        if gt.ndim != 3 or gt.shape[:2] != (n, 3):
            raise SchemaError("gt_colors", f"expected shape ({n}, 3, h), got {gt.shape}")
    h = len(cols["f_y"][0]) if n else 1
    scene = Scene(np.reshape(cols["x"], (n, 3)), np.reshape(cols["q"], (n, 4)),
                  np.reshape(cols["s"], (n, 3)), np.asarray(cols["alpha"], dtype=np.float64),
                  np.reshape(cols["f_y"], (n, h)),
                  np.reshape(cols["f_c"], (n, 3, h)) if has_fc else None, gt)
    cams = [_camera_from_json(c, f"cameras[{i}]") for i, c in enumerate(doc.get("cameras", []))]
    tests = [_camera_from_json(c, f"test_cameras[{i}]") for i, c in enumerate(doc.get("test_cameras", []))]
    return SceneBundle(scene, cams, tests)


def load_scene(path) -> SceneBundle:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from exc
    return bundle_from_json(doc)


# ------------------------------------------------------------ synthetic ring

def _ring_palette() -> tuple:
    """Twelve distinct warm colors cycling through three lightness bands
    (L* 35 / 55 / 75), so every arc of the ring shows a similar color mix
    and lightness identifies the band."""
    i = np.arange(12)
    hue = np.deg2rad(np.array([20.0, 60.0, 100.0])[i % 3] + (i // 3 - 1.5) * 8.0)
    lab = np.stack([np.array([35.0, 55.0, 75.0])[i % 3], 45 * np.cos(hue), 45 * np.sin(hue)], axis=1)
    return tuple(tuple(round(float(c), 4) for c in row) for row in lab_array_to_rgb(lab))


DEFAULT_PALETTE = _ring_palette()


@dataclass
class SynthSpec:
    n_objects: int = 12
    splats_per_object: int = 40
    palette: Sequence[Sequence[float]] = DEFAULT_PALETTE
    n_cameras: int = 24
    n_test_cameras: int = 8
    orbit_radius: float = 4.0
    camera_height: float = 1.0
    scene_radius: float = 1.2
    cluster_radius: float = 0.3
    scale_range: tuple = (0.08, 0.15)
    opacity_range: tuple = (0.75, 0.98)
    color_jitter: float = 0.03
    width: int = 128
    height: int = 128
    fov_deg: float = 45.0
    sh_degree: int = 0


def object_layout(spec: SynthSpec, seed: int):
    """Object centers and base colors used by :func:`synth_ring_scene`."""
    rng = np.random.default_rng(seed)
    return _object_layout(spec, rng)


def _object_layout(spec: SynthSpec, rng: np.random.Generator):
    n = spec.n_objects
    angles = 2 * np.pi * (np.arange(n) + rng.uniform(-0.25, 0.25, n)) / n
    radii = spec.scene_radius * rng.uniform(0.35, 1.0, n)
    heights = rng.uniform(-0.2, 0.3, n)
    centers = np.stack([radii * np.cos(angles), radii * np.sin(angles), heights], axis=1)
    palette = np.asarray(spec.palette, dtype=np.float64)
    colors = palette[np.arange(n) % len(palette)]
    return centers, colors


def synth_ring_scene(spec: SynthSpec, seed: int) -> SceneBundle:
    if spec.n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    if spec.n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    if spec.splats_per_object < 1:
        raise ValueError("splats_per_object must be >= 1")
    rng = np.random.default_rng(seed)
    centers, base_colors = _object_layout(spec, rng)
    m = spec.splats_per_object
    n = spec.n_objects * m
    # uniform in the ball: direction * r * cbrt(u)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = spec.cluster_radius * np.cbrt(rng.uniform(0.0, 1.0, n)) * 0.999
    positions = np.repeat(centers, m, axis=0) + dirs * r[:, None]
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    base = rng.uniform(*spec.scale_range, size=(n, 1))
    scales = base * rng.uniform(0.7, 1.3, size=(n, 3))
    opacities = rng.uniform(*spec.opacity_range, size=n)
    colors = np.repeat(base_colors, m, axis=0) + rng.uniform(-1, 1, size=(n, 3)) * spec.color_jitter
    colors = np.clip(colors, 0.02, 0.98)
    lum = rgb_array_to_lab(colors)[:, 0] / 100.0
    h = (spec.sh_degree + 1) ** 2
    f_y = np.zeros((n, h))
    f_y[:, 0] = sh.value_to_dc(lum)
    gt = np.zeros((n, 3, h))
    gt[:, :, 0] = sh.value_to_dc(colors)
    scene = Scene(positions, quats, scales, opacities, f_y, None, gt)
    cams = _ring_cameras(spec, 0, spec.n_cameras, 0.0, spec.camera_height)
    tests = _ring_cameras(spec, spec.n_cameras, spec.n_test_cameras, 0.5,
                          spec.camera_height * 0.8)
    return SceneBundle(scene, cams, tests)


def _ring_cameras(spec: SynthSpec, first_id: int, count: int, phase: float, height: float):
    cams = []
    for k in range(count):
        theta = 2 * np.pi * (k + phase) / count
        eye = (spec.orbit_radius * np.cos(theta), spec.orbit_radius * np.sin(theta), height)
        cams.append(look_at(first_id + k, eye, (0.0, 0.0, 0.0), spec.fov_deg,
                            spec.width, spec.height))
    return cams
