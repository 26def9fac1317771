"""Standalone SVG figures: hue histogram and base-view coverage trace."""

from __future__ import annotations

import colorsys
from typing import Sequence
from xml.sax.saxutils import escape


def _hex(rgb) -> str:
    return "#" + "".join(f"{int(round(c * 255)):02x}" for c in rgb)


def hue_histogram_svg(weights: Sequence[float], width: int = 720, height: int = 200) -> str:
    """One bar per degree, filled with its own hue."""
    if len(weights) != 360:
        raise ValueError("hue histogram must have 360 bins")
    bar = width / 360.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect class="frame" x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for i, w in enumerate(weights):
        h = max(0.0, min(1.0, float(w))) * (height - 10)
        parts.append(f'<rect class="bin" x="{i * bar:.3f}" y="{height - h:.3f}" '
                     f'width="{bar:.3f}" height="{h:.3f}" '
                     f'fill="{_hex(colorsys.hsv_to_rgb(i / 360.0, 1.0, 1.0))}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def coverage_svg(covered_fraction: Sequence[float], base_ids: Sequence[int],
                 width: int = 400, height: int = 240) -> str:
    """Covered fraction of splats after each greedy pick."""
    n = len(covered_fraction)
    if n == 0 or n != len(base_ids):
        raise ValueError("need one coverage value per base view")
    pad = 30
    step = (width - 2 * pad) / max(n - 1, 1)

    def xy(i, f):
        return pad + i * step, height - pad - f * (height - 2 * pad)

    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(i, f) for i, f in enumerate(covered_fraction)))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>']
    for i, (f, t) in enumerate(zip(covered_fraction, base_ids)):
        x, y = xy(i, f)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="steelblue"/>')
        parts.append(f'<text x="{x:.2f}" y="{y - 8:.2f}" font-size="10" text-anchor="middle">'
                     f'{escape(str(t))}: {f:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
