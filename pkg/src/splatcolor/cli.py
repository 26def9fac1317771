"""Command-line interface.

Every subcommand accepts ``--config`` plus overrides; failures print a single
``error: <kind>: <message>`` line to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path
from typing import List, Optional

from threadpoolctl import threadpool_limits

from . import metrics as mt
from . import pipeline as pl
from . import plot
from .imaging import Layout, read_image


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


_OVERRIDES = (
    ("--output-dir", "output_dir", str),
    ("--scene", "scene", str),
    ("--seed", "seed", int),
    ("--K", "K", int),
    ("--geometry-iterations", "geometry_iterations", int),
    ("--color-iterations", "color_iterations", int),
    ("--colorizer", "colorizer", str),
    ("--reference-colorizer", "reference_colorizer", str),
    ("--calibration-passes", "calibration_passes", int),
    ("--short-delta", "short_delta", int),
    ("--long-delta", "long_delta", int),
)

_STAGE_COMMANDS = {
    "synth": ("synth",),
    "fit-geometry": ("gray", "fit_geometry"),
    "decompose": ("decompose",),
    "colorize": ("colorize",),
    "fit-color": ("fit_color",),
    "render": ("render",),
    "metrics": ("flows", "metrics"),
    "run": pl.STAGES,
    "plot": ("plot",),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    for flag, dest, typ in _OVERRIDES:
        p.add_argument(flag, dest=dest, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatcolor", description="Colorize grayscale Gaussian splat scenes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in _STAGE_COMMANDS:
        p = sub.add_parser(name)
        _common(p)
        if name == "metrics":
            p.add_argument("--frames-dir", help="directory of *_{id}.png frames in sequence order")
            p.add_argument("--flow-dir", help="directory of flow_{a}_{b}.pfm files")
            p.add_argument("--delta", type=int, default=None)
        if name == "plot":
            p.add_argument("--histogram", help="report.json or hue_histogram.csv")
            p.add_argument("--coverage", help="decomposition.json")
            p.add_argument("--out", help="output SVG path")
    return parser


def config_from_args(args) -> pl.PipelineConfig:
    if args.config:
        cfg = pl.load_config(args.config)
    else:
        cfg = pl.PipelineConfig()
    changes = {dest: getattr(args, dest) for _, dest, _ in _OVERRIDES
               if getattr(args, dest) is not None}
    return cfg.replace(**changes) if changes else cfg


_FRAME = re.compile(r"^.*_(-?\d+)\.png$")


def _frames(directory: Path):
    found = []
    for path in directory.iterdir():
        m = _FRAME.match(path.name)
        if m:
            found.append((int(m.group(1)), path))
    if not found:
        raise CliError("input", f"no *_{{id}}.png frames in {directory}")
    found.sort()
    return [t for t, _ in found], [read_image(p, Layout.RGB3) for _, p in found]


def _metrics_standalone(args) -> dict:
    if not (args.frames_dir and args.flow_dir and args.delta):
        raise CliError("usage", "--frames-dir, --flow-dir and --delta are required together")
    ids, frames = _frames(Path(args.frames_dir))
    flows = pl.load_flows(args.flow_dir, ids, args.delta)
    value = mt.warped_consistency(frames, flows, args.delta)
    return {"delta": args.delta, "consistency": value, "frames": len(frames)}


def _read_histogram(path: Path) -> List[float]:
    if path.suffix == ".csv":
        rows = path.read_text().strip().splitlines()[1:]
        return [float(r.split(",")[1]) for r in rows]
    doc = json.loads(path.read_text())
    if "metrics" in doc:
        doc = doc["metrics"]
    return doc["hue_histogram"]


def _plot_standalone(args) -> dict:
    written = []
    if args.histogram:
        src = Path(args.histogram)
        out = Path(args.out) if args.out else src.with_name("hue_histogram.svg")
        out.write_text(plot.hue_histogram_svg(_read_histogram(src)))
        written.append(str(out))
    if args.coverage:
        src = Path(args.coverage)
        cov = json.loads(src.read_text())["coverage"]
        out = Path(args.out) if args.out and not args.histogram else src.with_name("coverage.svg")
        out.write_text(plot.coverage_svg(cov["covered_fraction"], cov["base_view_ids"]))
        written.append(str(out))
    return {"written": written}


def dispatch(args) -> dict:
    if args.command == "metrics" and (args.frames_dir or args.flow_dir):
        return _metrics_standalone(args)
    if args.command == "plot" and (args.histogram or args.coverage):
        return _plot_standalone(args)
    cfg = config_from_args(args)
    stages = _STAGE_COMMANDS[args.command]
    if args.command == "run":
        manifest = pl.run_pipeline(cfg)
    else:
        manifest = pl.run_stages(cfg, stages)
    result = {"status": manifest.status, "output_dir": cfg.output_dir,
              "content_hash": manifest.content_hash}
    if args.command in ("metrics", "run"):
        result["report"] = str(Path(cfg.output_dir) / "report.json")
    return result


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise CliError("usage", "--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            result = dispatch(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except pl.PipelineError as exc:
        print(f"error: stage={exc.stage}: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 2
    except pl.ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}",
              file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
