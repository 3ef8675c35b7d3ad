"""Minimal hand-rolled SVG emission: BEV scenes and 2D curves.

No plotting library: the outputs are small, deterministic documents whose
structure (stroke classes, legend text) is directly testable.
"""

from __future__ import annotations

import os

import numpy as np

from .geom import Box3, box_corners_bev

LAYER_STYLE = {
    "gt": "#2a9d2a",
    "reference": "#d62728",
    "refined": "#1f77b4",
    "self": "#9467bd",
}
FALLBACK_COLORS = ["#e377c2", "#8c564b", "#ff7f0e", "#17becf"]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def write_svg(path: str, content: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(content)
    os.replace(tmp, path)


def scene_svg(
    frame,
    layers: dict[str, list[Box3]],
    show_points: bool = True,
    span: float = 85.0,
    size: int = 760,
) -> str:
    """Top-down scene: ego cloud dots plus one polygon layer per label source."""
    scale = size / (2 * span)

    def to_px(x, y):
        # ego frame: x right, y up in the image
        return (x + span) * scale, (span - y) * scale

    body = [f'<rect width="{size}" height="{size}" fill="#fbfbf8"/>']
    if show_points and len(frame.ego_cloud):
        pts = frame.ego_cloud[:: max(1, len(frame.ego_cloud) // 1500)]
        dots = []
        for x, y, _ in pts:
            if abs(x) <= span and abs(y) <= span:
                px, py = to_px(x, y)
                dots.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="0.8"/>')
        body.append('<g class="cloud" fill="#b0b0b0">' + "".join(dots) + "</g>")

    legend_y = 24
    names = list(layers)
    for i, name in enumerate(names):
        color = LAYER_STYLE.get(name, FALLBACK_COLORS[i % len(FALLBACK_COLORS)])
        polys = []
        for b in layers[name]:
            cs = box_corners_bev(b)
            pt = " ".join(f"{to_px(x, y)[0]:.1f},{to_px(x, y)[1]:.1f}" for x, y in cs)
            polys.append(f'<polygon points="{pt}"/>')
        body.append(
            f'<g class="{_esc(name)}" fill="none" stroke="{color}" stroke-width="1.6">'
            + "".join(polys)
            + "</g>"
        )
        body.append(
            f'<rect x="12" y="{legend_y - 10}" width="14" height="3" fill="{color}"/>'
            f'<text x="32" y="{legend_y - 4}" font-size="13" font-family="sans-serif">'
            f"{_esc(name)} ({len(layers[name])})</text>"
        )
        legend_y += 18
    body.append(
        f'<text x="12" y="{size - 10}" font-size="11" fill="#666" font-family="sans-serif">'
        f"frame {frame.frame_id}, ego-reference distance {frame.ego_ref_distance:.1f} m</text>"
    )
    return _svg(size, size, body)


def curve_svg(
    series: list[tuple[str, list[float], list[float]]],
    xlabel: str,
    ylabel: str,
    title: str = "",
    width: int = 640,
    height: int = 420,
    y_range: tuple[float, float] | None = (0.0, 1.0),
) -> str:
    """Axis-aligned polyline chart with a legend; one polyline per series."""
    ml, mr, mt, mb = 58, 16, 30, 48
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    x_lo, x_hi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_lo, y_hi = y_range if y_range else ((min(ys_all), max(ys_all)) if ys_all else (0, 1))
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def to_px(x, y):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw, mt + (y_hi - y) / (y_hi - y_lo) * ph

    body = [f'<rect width="{width}" height="{height}" fill="#ffffff"/>']
    body.append(
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>'
    )
    for t in np.linspace(y_lo, y_hi, 5):
        _, py = to_px(x_lo, t)
        body.append(
            f'<line x1="{ml}" y1="{py:.1f}" x2="{ml + pw}" y2="{py:.1f}" stroke="#eee"/>'
            f'<text x="{ml - 8}" y="{py + 4:.1f}" font-size="11" text-anchor="end" font-family="sans-serif">{t:.2f}</text>'
        )
    for t in np.linspace(x_lo, x_hi, 5):
        px, _ = to_px(t, y_lo)
        body.append(
            f'<text x="{px:.1f}" y="{mt + ph + 16}" font-size="11" text-anchor="middle" font-family="sans-serif">{t:g}</text>'
        )
    for i, (label, xs, ys) in enumerate(series):
        color = FALLBACK_COLORS[i % len(FALLBACK_COLORS)] if label not in LAYER_STYLE else LAYER_STYLE[label]
        pts = " ".join(f"{to_px(x, y)[0]:.1f},{to_px(x, y)[1]:.1f}" for x, y in zip(xs, ys))
        body.append(
            f'<polyline class="{_esc(label)}" points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        body.append(
            f'<rect x="{ml + 10}" y="{mt + 10 + 18 * i}" width="14" height="3" fill="{color}"/>'
            f'<text x="{ml + 30}" y="{mt + 16 + 18 * i}" font-size="12" font-family="sans-serif">{_esc(label)}</text>'
        )
    body.append(
        f'<text x="{ml + pw / 2:.0f}" y="{height - 12}" font-size="13" text-anchor="middle" font-family="sans-serif">{_esc(xlabel)}</text>'
    )
    body.append(
        f'<text x="16" y="{mt + ph / 2:.0f}" font-size="13" text-anchor="middle" font-family="sans-serif" '
        f'transform="rotate(-90 16 {mt + ph / 2:.0f})">{_esc(ylabel)}</text>'
    )
    if title:
        body.append(
            f'<text x="{width / 2:.0f}" y="20" font-size="14" text-anchor="middle" font-family="sans-serif">{_esc(title)}</text>'
        )
    return _svg(width, height, body)
