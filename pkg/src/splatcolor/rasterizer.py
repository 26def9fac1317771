"""CPU splat rasterizer.

Splats are sorted once per image by camera-space depth (ties by id) and
alpha-blended front to back at every pixel inside their 3-sigma footprint.
Everything that does not depend on opacity or color is gathered into a
:class:`Layers` table per camera, so fitting loops with frozen geometry only
redo the blending arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp

from . import sh
from .imaging import Layout, PixelMask, PlanarImage
from .scene import Camera, Scene

Z_NEAR = 0.01
DILATION = 0.3
ALPHA_CAP = 0.99
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4
TAU_VIS = 1e-3
DEPTH_EPS = 1e-4
OCCLUSION_TOL = 0.01


class MissingColorError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectedSplat:
    id: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    footprint: Tuple[int, int, int, int]  # (u_min, v_min, u_max, v_max), inclusive; empty if min > max


@dataclass(frozen=True)
class VisibilitySet:
    camera_id: int
    members: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(set(int(m) for m in self.members))))

    def as_set(self) -> frozenset:
        return frozenset(self.members)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


@dataclass(frozen=True)
class _Projection:
    ids: np.ndarray       # (M,) splat ids in front of the near plane
    means: np.ndarray     # (M, 2)
    covs: np.ndarray      # (M, 2, 2), dilated
    depths: np.ndarray    # (M,)
    boxes: np.ndarray     # (M, 4) int: u_min, v_min, u_max, v_max (clipped)


def _project(scene: Scene, camera: Camera) -> _Projection:
    p_cam = camera.to_camera(scene.positions)
    keep = np.flatnonzero(p_cam[:, 2] > Z_NEAR)
    p = p_cam[keep]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    rot = quat_to_matrix(scene.rotations[keep])
    s2 = scene.scales[keep] ** 2
    cov3 = np.einsum("nij,nj,nkj->nik", rot, s2, rot)
    cov_cam = np.einsum("ij,njk,lk->nil", camera.R, cov3, camera.R)
    J = np.zeros((len(keep), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    cov2 = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    cov2 = 0.5 * (cov2 + np.transpose(cov2, (0, 2, 1)))
    cov2[:, 0, 0] += DILATION
    cov2[:, 1, 1] += DILATION
    means = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1)
    rx = 3.0 * np.sqrt(cov2[:, 0, 0])
    ry = 3.0 * np.sqrt(cov2[:, 1, 1])
    boxes = np.stack([
        np.maximum(np.ceil(means[:, 0] - rx), 0),
        np.maximum(np.ceil(means[:, 1] - ry), 0),
        np.minimum(np.floor(means[:, 0] + rx), camera.width - 1),
        np.minimum(np.floor(means[:, 1] + ry), camera.height - 1),
    ], axis=1)
    # far off-screen splats can overflow int conversion; clamp first
    boxes = np.clip(boxes, -1, max(camera.width, camera.height)).astype(np.int64)
    return _Projection(keep, means, cov2, z, boxes)


def project(scene: Scene, camera: Camera) -> List[ProjectedSplat]:
    pr = _project(scene, camera)
    return [ProjectedSplat(int(pr.ids[k]), pr.means[k].copy(), pr.covs[k].copy(),
                           float(pr.depths[k]), tuple(int(v) for v in pr.boxes[k]))
            for k in range(len(pr.ids))]


@dataclass(frozen=True)
class Layers:
    """Depth-ordered (pixel, splat) pairs for one camera, grouped by pixel.

    Entries ``start[r] : start[r] + counts[r]`` belong to flat pixel
    ``pixels[r]`` in front-to-back order; ``row`` maps each entry back to
    its pixel group.
    """

    width: int
    height: int
    n_splats: int
    pixels: np.ndarray
    start: np.ndarray
    counts: np.ndarray
    row: np.ndarray
    ids: np.ndarray
    gauss: np.ndarray
    depth: np.ndarray
    view_dirs: np.ndarray  # (N, 3) camera-center-to-splat unit vectors

    @property
    def n_entries(self) -> int:
        return self.ids.size


def build_layers(scene: Scene, camera: Camera) -> Layers:
    pr = _project(scene, camera)
    n = len(scene)
    dirs = scene.positions - camera.center
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    e_int, e_flt = np.zeros(0, np.int64), np.zeros(0)
    empty = Layers(camera.width, camera.height, n, e_int, e_int, e_int, e_int, e_int, e_flt, e_flt, dirs)
    bw = pr.boxes[:, 2] - pr.boxes[:, 0] + 1
    bh = pr.boxes[:, 3] - pr.boxes[:, 1] + 1
    sizes = np.where((bw > 0) & (bh > 0), bw * bh, 0)
    total = int(sizes.sum())
    if total == 0:
        return empty
    # depth rank over all projected splats, ties broken by splat id
    order = np.lexsort((pr.ids, pr.depths))
    rank = np.empty(len(order), np.int64)
    rank[order] = np.arange(len(order))

    k = np.repeat(np.arange(len(sizes)), sizes)
    local = np.arange(total) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    u = pr.boxes[k, 0] + local % bw[k]
    v = pr.boxes[k, 1] + local // bw[k]
    du = u - pr.means[k, 0]
    dv = v - pr.means[k, 1]
    cov = pr.covs[k]
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    power = -0.5 * (cov[:, 1, 1] * du * du - 2.0 * cov[:, 0, 1] * du * dv
                    + cov[:, 0, 0] * dv * dv) / det
    g = np.exp(power)
    # opacity <= 1, so entries below ALPHA_MIN here are skipped for any opacity
    keep = g >= ALPHA_MIN
    k, u, v, g = k[keep], u[keep], v[keep], g[keep]
    if k.size == 0:
        return empty
    pix = v * camera.width + u
    srt = np.lexsort((rank[k], pix))
    k, pix, g = k[srt], pix[srt], g[srt]
    pixels, start, counts = np.unique(pix, return_index=True, return_counts=True)
    row = np.repeat(np.arange(len(pixels)), counts)
    return Layers(camera.width, camera.height, n, pixels, start, counts, row,
                  pr.ids[k], g, pr.depths[k], dirs)


@dataclass(frozen=True)
class Blend:
    alpha: np.ndarray         # effective alpha' per entry (0 where skipped or past the early stop)
    trans_before: np.ndarray  # transmittance in front of each entry
    weights: np.ndarray       # alpha' * T
    final_trans: np.ndarray   # per pixel group
    capped: np.ndarray        # bool, alpha' hit the cap


def _segment_exclusive_logsum(layers: Layers, lg: np.ndarray) -> np.ndarray:
    cs = np.cumsum(lg)
    base = cs[layers.start] - lg[layers.start]
    return cs - lg - base[layers.row]


def blend(layers: Layers, opacities: np.ndarray) -> Blend:
    if not layers.n_entries:
        z = np.zeros(0)
        return Blend(z, z, z, z, np.zeros(0, bool))
    raw = np.asarray(opacities)[layers.ids] * layers.gauss
    a = np.minimum(raw, ALPHA_CAP)
    a[a < ALPHA_MIN] = 0.0
    tb = np.exp(_segment_exclusive_logsum(layers, np.log1p(-a)))
    included = tb >= T_STOP
    a *= included
    weights = a * tb
    final = np.exp(np.add.reduceat(np.log1p(-a), layers.start))
    return Blend(a, tb, weights, final, (raw > ALPHA_CAP) & included)


def splat_values(coeffs: np.ndarray, view_dirs: np.ndarray):
    """Per-splat view-dependent values. coeffs (N, k, h) -> (values (N, k), raw (N, k), basis (N, h))."""
    basis = sh.basis(view_dirs, coeffs.shape[-1])
    raw = np.einsum("nkh,nh->nk", coeffs, basis) + sh.OFFSET
    return np.maximum(raw, 0.0), raw, basis


def composite(layers: Layers, bl: Blend, values: np.ndarray) -> np.ndarray:
    """Blend per-splat values (N, k) into an unclamped (H, W, k) image."""
    k = values.shape[1]
    out = np.zeros((layers.height * layers.width, k))
    if layers.n_entries:
        out[layers.pixels] = np.add.reduceat(bl.weights[:, None] * values[layers.ids], layers.start, axis=0)
    return out.reshape(layers.height, layers.width, k)


def weight_matrix(layers: Layers, bl: Blend) -> sp.csr_matrix:
    """Sparse (H*W, N) matrix of blending weights for fixed opacities."""
    nz = bl.weights > 0
    return sp.csr_matrix((bl.weights[nz], (layers.pixels[layers.row[nz]], layers.ids[nz])),
                         shape=(layers.height * layers.width, layers.n_splats))


def render_luminance(scene: Scene, camera: Camera) -> PlanarImage:
    layers = build_layers(scene, camera)
    vals, _, _ = splat_values(scene.f_y[:, None, :], layers.view_dirs)
    img = composite(layers, blend(layers, scene.opacities), vals)
    return PlanarImage(np.clip(img, 0.0, 1.0), Layout.LUMINANCE1)


def render_color(scene: Scene, camera: Camera) -> PlanarImage:
    if scene.f_c is None:
        raise MissingColorError("scene has no color coefficients (F_c)")
    layers = build_layers(scene, camera)
    vals, _, _ = splat_values(scene.f_c, layers.view_dirs)
    img = composite(layers, blend(layers, scene.opacities), vals)
    return PlanarImage(np.clip(img, 0.0, 1.0), Layout.RGB3)


def _depth_from(layers: Layers, bl: Blend) -> np.ndarray:
    out = np.full(layers.height * layers.width, -1.0)
    if layers.n_entries:
        wsum = np.add.reduceat(bl.weights, layers.start)
        zsum = np.add.reduceat(bl.weights * layers.depth, layers.start)
        ok = wsum >= DEPTH_EPS
        out[layers.pixels[ok]] = zsum[ok] / wsum[ok]
    return out.reshape(layers.height, layers.width)


def render_depth(scene: Scene, camera: Camera) -> PlanarImage:
    layers = build_layers(scene, camera)
    return PlanarImage(_depth_from(layers, blend(layers, scene.opacities)), Layout.DEPTH1)


def exact_flow(scene: Scene, cam_a: Camera, cam_b: Camera) -> Tuple[PlanarImage, PixelMask]:
    """Geometric flow from ``cam_a`` pixels to their reprojection in ``cam_b``.

    Pixels are invalid where ``cam_a`` has no surface, the target falls
    outside ``cam_b``, or ``cam_b`` sees a surface more than 1% nearer or
    farther than the reprojected point (occlusion).
    """
    da = render_depth(scene, cam_a).data[:, :, 0]
    db = render_depth(scene, cam_b).data[:, :, 0]
    h, w = da.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    valid = da > 0
    z = np.where(valid, da, 1.0)
    p_cam = np.stack([(uu - cam_a.cx) / cam_a.fx * z, (vv - cam_a.cy) / cam_a.fy * z, z], -1)
    world = (p_cam - cam_a.t) @ cam_a.R
    pb = cam_b.to_camera(world)
    zb = pb[..., 2]
    in_front = zb > Z_NEAR
    zb_safe = np.where(in_front, zb, 1.0)
    ub = cam_b.fx * pb[..., 0] / zb_safe + cam_b.cx
    vb = cam_b.fy * pb[..., 1] / zb_safe + cam_b.cy
    valid &= in_front & (ub >= 0) & (ub <= cam_b.width - 1) & (vb >= 0) & (vb <= cam_b.height - 1)
    ui = np.clip(np.floor(ub + 0.5).astype(np.int64), 0, cam_b.width - 1)
    vi = np.clip(np.floor(vb + 0.5).astype(np.int64), 0, cam_b.height - 1)
    seen = db[vi, ui]
    valid &= (seen > 0) & (np.abs(seen - zb) <= OCCLUSION_TOL * zb)
    flow = np.where(valid[..., None], np.stack([ub - uu, vb - vv], -1), 0.0)
    mask = PixelMask(valid)
    return PlanarImage(flow, Layout.FLOW2, mask=mask), mask


def max_weights(layers: Layers, bl: Blend) -> np.ndarray:
    """Largest per-pixel blending weight of every splat (0 if never drawn)."""
    out = np.zeros(layers.n_splats)
    if layers.n_entries:
        np.maximum.at(out, layers.ids, bl.weights)
    return out


def visibility(scene: Scene, camera: Camera) -> VisibilitySet:
    layers = build_layers(scene, camera)
    mw = max_weights(layers, blend(layers, scene.opacities))
    return VisibilitySet(camera.id, tuple(np.flatnonzero(mw >= TAU_VIS).tolist()))
