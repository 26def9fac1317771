"""End-to-end colorization pipeline.

Stages exchange data only through files under the output directory, so
running them one by one produces the same bytes as :func:`run_pipeline`.

Output tree::

    bundle.json                 source scene and cameras
    gray/view_{t}.png           grayscale training views
    geometry.json               luminance/opacity fit (+ fit_geometry.csv)
    decomposition.json          base views and coverage
    base_init/ base_calibrated/ propagated/   view_{t}.png
    calibration.json            chroma spread of the base views
    colored.json                color fit (+ fit_color.csv)
    renders/train_{t}.png renders/test_{t}.png
    flows/flow_{a}_{b}.pfm      ground-truth flow, third channel = mask
    report.json hue_histogram.csv hue_histogram.svg coverage.svg
    manifest.json
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import colorize as col
from . import metrics as mt
from . import plot
from . import rasterizer as rz
from .decompose import coverage_report, decompose
from .imaging import Layout, PlanarImage, read_image, write_image
from .optimize import FitConfig, fit_color, fit_luminance
from .scene import SceneBundle, SynthSpec, load_scene, save_scene, synth_ring_scene

STAGES = ("synth", "gray", "fit_geometry", "decompose", "colorize", "fit_color",
          "render", "flows", "metrics", "plot")


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    output_dir: str = "runs/out"
    scene: Optional[str] = None
    synth: dict = field(default_factory=dict)
    seed: int = 0
    K: int = 4
    geometry_iterations: int = 30000
    color_iterations: int = 7000
    lambda_dssim: float = 0.2
    geometry_lr: dict = field(default_factory=lambda: {"f_y": 0.01, "alpha": 0.01})
    geometry_groups: tuple = ("f_y", "alpha")
    color_lr: float = 0.01
    colorizer: str = "oracle"
    reference_colorizer: str = "lut(64)"
    calibration_passes: int = 1
    short_delta: int = 1
    long_delta: int = 10

    def __post_init__(self):
        self.geometry_groups = tuple(self.geometry_groups)
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.K, int) or self.K < 1:
            raise ConfigError("K must be an integer >= 1")
        for name in ("geometry_iterations", "color_iterations", "calibration_passes"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 0:
                raise ConfigError(f"{name} must be an integer >= 0")
        for name in ("short_delta", "long_delta"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be an integer >= 1")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ConfigError("lambda_dssim must lie in [0, 1]")
        unknown = set(self.synth) - {f.name for f in dataclasses.fields(SynthSpec)}
        if unknown:
            raise ConfigError(f"unknown synth fields {sorted(unknown)}")
        if self.scene is None and self.K > self.synth_spec().n_cameras:
            raise ConfigError(f"K={self.K} exceeds the {self.synth_spec().n_cameras} training cameras")

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**self.synth)

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["geometry_groups"] = list(self.geometry_groups)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return PipelineConfig.from_json(doc)


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ------------------------------------------------------------------ helpers

def _out(cfg: PipelineConfig) -> Path:
    return Path(cfg.output_dir)


def _write_json(doc, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_views(images: Sequence[PlanarImage], ids: Sequence[int], directory: Path,
                 prefix: str = "view") -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for img, t in zip(images, ids):
        write_image(img, directory / f"{prefix}_{t}.png")


def _read_views(ids: Sequence[int], directory: Path, layout: Layout,
                prefix: str = "view") -> List[PlanarImage]:
    return [read_image(directory / f"{prefix}_{t}.png", layout) for t in ids]


def _bundle(cfg) -> SceneBundle:
    return load_scene(_out(cfg) / "bundle.json")


def _train_ids(bundle: SceneBundle) -> List[int]:
    return [c.id for c in bundle.cameras]


# ------------------------------------------------------------------- stages

def stage_synth(cfg: PipelineConfig) -> None:
    """Write the source bundle, synthesized or copied from ``cfg.scene``."""
    if cfg.scene is not None:
        bundle = load_scene(cfg.scene)
    else:
        bundle = synth_ring_scene(cfg.synth_spec(), cfg.seed)
    if cfg.K > len(bundle.cameras):
        raise ConfigError(f"K={cfg.K} exceeds the {len(bundle.cameras)} training cameras")
    _out(cfg).mkdir(parents=True, exist_ok=True)
    save_scene(bundle, _out(cfg) / "bundle.json")


def stage_gray(cfg: PipelineConfig) -> None:
    bundle = _bundle(cfg)
    views = [rz.render_luminance(bundle.scene, c) for c in bundle.cameras]
    _write_views(views, _train_ids(bundle), _out(cfg) / "gray")


def stage_fit_geometry(cfg: PipelineConfig) -> None:
    """Fit F_y from zero (and optionally opacity) to the grayscale views."""
    bundle = _bundle(cfg)
    gray = _read_views(_train_ids(bundle), _out(cfg) / "gray", Layout.LUMINANCE1)
    start = bundle.replace(scene=bundle.scene.replace(f_y=np.zeros_like(bundle.scene.f_y)))
    fc = FitConfig(iterations=cfg.geometry_iterations, lr=dict(cfg.geometry_lr),
                   lambda_dssim=cfg.lambda_dssim, groups=cfg.geometry_groups,
                   seed=stage_seed(cfg.seed, "fit_geometry"))
    scene, report = fit_luminance(start, gray, fc)
    save_scene(bundle.replace(scene=scene), _out(cfg) / "geometry.json")
    report.write_csv(_out(cfg) / "fit_geometry.csv")


def stage_decompose(cfg: PipelineConfig) -> None:
    geo = load_scene(_out(cfg) / "geometry.json")
    vis = [rz.visibility(geo.scene, c) for c in geo.cameras]
    dec = decompose(vis, cfg.K)
    doc = dec.to_json()
    doc["coverage"] = coverage_report(dec, vis, len(geo.scene))
    doc["visible_counts"] = {str(v.camera_id): len(v.members) for v in vis}
    _write_json(doc, _out(cfg) / "decomposition.json")


def stage_colorize(cfg: PipelineConfig) -> None:
    """Initial base colorization, calibration and propagation."""
    bundle = _bundle(cfg)
    out = _out(cfg)
    base_ids = _read_json(out / "decomposition.json")["base_view_ids"]
    ids = _train_ids(bundle)
    gray = dict(zip(ids, _read_views(ids, out / "gray", Layout.LUMINANCE1)))
    single = col.parse_colorizer(cfg.colorizer, bundle, role="single")
    phi = col.parse_colorizer(cfg.reference_colorizer, bundle, role="reference")
    initial = col.initial_base_colorize(single, [gray[b] for b in base_ids], base_ids)
    calibrated = col.global_calibrate(phi, initial, base_ids, passes=cfg.calibration_passes)
    propagated = col.propagate(phi, [gray[t] for t in ids], ids, calibrated)
    _write_views(initial, base_ids, out / "base_init")
    _write_views(calibrated, base_ids, out / "base_calibrated")
    _write_views(propagated, ids, out / "propagated")
    _write_json({"base_view_ids": base_ids,
                 "chroma_spread_initial": col.chroma_spread(initial),
                 "chroma_spread_calibrated": col.chroma_spread(calibrated),
                 "mean_chroma_initial": [col.mean_chroma(i).tolist() for i in initial],
                 "mean_chroma_calibrated": [col.mean_chroma(i).tolist() for i in calibrated]},
                out / "calibration.json")


def stage_fit_color(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    geo = load_scene(out / "geometry.json")
    targets = _read_views(_train_ids(geo), out / "propagated", Layout.RGB3)
    fc = FitConfig(iterations=cfg.color_iterations, lr={"f_c": cfg.color_lr},
                   lambda_dssim=cfg.lambda_dssim, groups=("f_c",),
                   seed=stage_seed(cfg.seed, "fit_color"))
    scene, report = fit_color(geo, targets, fc)
    save_scene(geo.replace(scene=scene), out / "colored.json")
    report.write_csv(out / "fit_color.csv")


def stage_render(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    colored = load_scene(out / "colored.json")
    d = out / "renders"
    _write_views([rz.render_color(colored.scene, c) for c in colored.cameras],
                 _train_ids(colored), d, "train")
    _write_views([rz.render_color(colored.scene, c) for c in colored.test_cameras],
                 [c.id for c in colored.test_cameras], d, "test")


def flow_pairs(n: int, deltas: Sequence[int]) -> List[tuple]:
    """Index pairs (t, t + delta) over a sequence of ``n`` frames."""
    pairs = []
    for d in sorted(set(deltas)):
        pairs.extend((t, t + d) for t in range(n - d))
    return sorted(set(pairs))


def stage_flows(cfg: PipelineConfig) -> None:
    """Ground-truth flow between training cameras along the ring order."""
    bundle = _bundle(cfg)
    cams = bundle.cameras
    d = _out(cfg) / "flows"
    d.mkdir(parents=True, exist_ok=True)
    for a, b in flow_pairs(len(cams), (cfg.short_delta, cfg.long_delta)):
        flow, _ = rz.exact_flow(bundle.scene, cams[a], cams[b])
        write_image(flow, d / f"flow_{cams[a].id}_{cams[b].id}.pfm")


def load_flows(directory, ids: Sequence[int], delta: int) -> List[PlanarImage]:
    directory = Path(directory)
    return [read_image(directory / f"flow_{ids[t]}_{ids[t + delta]}.pfm", Layout.FLOW2)
            for t in range(len(ids) - delta)]


def _consistency(frames, flow_dir: Path, ids, delta) -> Optional[float]:
    if len(frames) <= delta:
        return None
    return mt.warped_consistency(frames, load_flows(flow_dir, ids, delta), delta)


def evaluate(frames: Sequence[PlanarImage], tests: Sequence[PlanarImage],
             references: Optional[Sequence[PlanarImage]], flow_dir: Path, ids: Sequence[int],
             short_delta: int, long_delta: int) -> mt.MetricsReport:
    """Metrics for one run: CDI, colourfulness and hue on test views,
    consistency on the training-camera sequence, PSNR against ``references``."""
    psnrs = None
    if references is not None:
        psnrs = [mt.psnr(a, b) for a, b in zip(tests, references)]
    return mt.MetricsReport(
        cdi=mt.cdi(tests),
        short_consistency=_consistency(frames, flow_dir, ids, short_delta),
        long_consistency=_consistency(frames, flow_dir, ids, long_delta),
        colorfulness=float(np.mean([mt.colorfulness(t) for t in tests])),
        psnr_db=None if psnrs is None else float(np.mean(psnrs)),
        hue_histogram=mt.hue_histogram(tests).tolist(),
        extra=None if psnrs is None else {"psnr_per_view": psnrs},
    )


def stage_metrics(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    bundle = _bundle(cfg)
    ids = _train_ids(bundle)
    test_ids = [c.id for c in bundle.test_cameras]
    frames = _read_views(ids, out / "renders", Layout.RGB3, "train")
    tests = _read_views(test_ids, out / "renders", Layout.RGB3, "test")
    truth = bundle.scene.with_gt_as_color() if bundle.scene.gt_colors is not None else None
    gt_frames = gt_tests = None
    if truth is not None:
        gt_frames = [rz.render_color(truth, c) for c in bundle.cameras]
        gt_tests = [rz.render_color(truth, c) for c in bundle.test_cameras]
    if not tests:
        raise ValueError("bundle has no test cameras")
    report = evaluate(frames, tests, gt_tests, out / "flows", ids, cfg.short_delta, cfg.long_delta)
    doc = {"metrics": report.to_json(),
           "calibration": _read_json(out / "calibration.json")}
    if truth is not None:
        doc["ground_truth"] = evaluate(gt_frames, gt_tests, None, out / "flows", ids,
                                       cfg.short_delta, cfg.long_delta).to_json()
    _write_json(doc, out / "report.json")
    mt.write_histogram_csv(report.hue_histogram, out / "hue_histogram.csv")


def stage_plot(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    report = _read_json(out / "report.json")
    (out / "hue_histogram.svg").write_text(plot.hue_histogram_svg(report["metrics"]["hue_histogram"]))
    cov = _read_json(out / "decomposition.json")["coverage"]
    (out / "coverage.svg").write_text(plot.coverage_svg(cov["covered_fraction"], cov["base_view_ids"]))


STAGE_FUNCS: Dict[str, Callable[[PipelineConfig], None]] = {
    "synth": stage_synth, "gray": stage_gray, "fit_geometry": stage_fit_geometry,
    "decompose": stage_decompose, "colorize": stage_colorize, "fit_color": stage_fit_color,
    "render": stage_render, "flows": stage_flows, "metrics": stage_metrics, "plot": stage_plot,
}


# ----------------------------------------------------------------- manifest

def file_inventory(directory) -> Dict[str, str]:
    """sha256 of every file below ``directory`` except the manifest itself."""
    root = Path(directory)
    inv = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            inv[path.relative_to(root).as_posix()] = hashlib.sha256(path.read_bytes()).hexdigest()
    return inv


def inventory_digest(inventory: Dict[str, str]) -> str:
    blob = "\n".join(f"{k} {v}" for k, v in sorted(inventory.items()))
    return hashlib.sha256(blob.encode()).hexdigest()


def _versions() -> dict:
    import PIL
    import scipy
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pillow": PIL.__version__}


@dataclass
class RunManifest:
    config: dict
    timings: Dict[str, float]
    files: Dict[str, str]
    versions: dict
    status: str = "OK"
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    @property
    def content_hash(self) -> str:
        return inventory_digest(self.files)

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["content_hash"] = self.content_hash
        return doc

    def write(self, path) -> None:
        _write_json(self.to_json(), Path(path))

    @classmethod
    def read(cls, path) -> "RunManifest":
        doc = _read_json(Path(path))
        doc.pop("content_hash", None)
        return cls(**doc)


def run_stages(cfg: PipelineConfig, stages: Sequence[str] = STAGES) -> RunManifest:
    """Run ``stages`` in order and write ``manifest.json``.

    A failing stage leaves earlier outputs in place; the manifest is then
    marked FAILED and a :class:`PipelineError` naming the stage is raised.
    """
    cfg.validate()
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    timings: Dict[str, float] = {}
    failure = None
    for name in stages:
        t0 = time.perf_counter()
        try:
            STAGE_FUNCS[name](cfg)
        except Exception as exc:  # noqa: BLE001 - recorded, then re-raised with the stage name
            failure = (name, f"{type(exc).__name__}: {exc}")
            break
        finally:
            timings[name] = time.perf_counter() - t0
    manifest = RunManifest(cfg.to_json(), timings, file_inventory(out), _versions())
    if failure is not None:
        manifest.status, manifest.failed_stage, manifest.error = "FAILED", failure[0], failure[1]
    manifest.write(out / "manifest.json")
    if failure is not None:
        raise PipelineError(*failure)
    return manifest


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    return run_stages(cfg, STAGES)
