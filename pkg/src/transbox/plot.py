"""Standalone SVG rendering of 2-D embeddings."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .model import EmbeddingModel

__all__ = ["render_svg"]

WIDTH = HEIGHT = 640
MARGIN = 40
# fill colours cycled over concepts; roles use one outline style
PALETTE = ("#e41a1c", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#999999",
           "#66c2a5", "#fc8d62", "#8da0cb")
ROLE_STROKE = "#1f4fd1"


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def render_svg(model: EmbeddingModel, show_roles: bool = True) -> str:
    """Concept boxes as labelled rectangles, role boxes dashed in blue.

    The output depends only on the parameters, so the same model always
    produces the same bytes.
    """
    if model.dim != 2:
        raise ValueError(f"plot2d requires dimension 2 (model has {model.dim})")
    rects = []
    for i, name in enumerate(model.concepts):
        c, o = model.concept_center[i], np.abs(model.concept_offset[i])
        rects.append(("concept", name, c - o, c + o))
    if show_roles:
        for i, name in enumerate(model.roles):
            c, o = model.role_center[i], np.abs(model.role_offset[i])
            rects.append(("role", name, c - o, c + o))
    points = [(name, model.individual_point[i]) for i, name in enumerate(model.individuals)]

    corners = [r[2] for r in rects] + [r[3] for r in rects] + [p for _, p in points]
    if corners:
        lo = np.min(corners, axis=0)
        hi = np.max(corners, axis=0)
    else:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (WIDTH - 2 * MARGIN) / span

    def sx(x):
        return MARGIN + (x - lo[0]) * scale

    def sy(y):
        return HEIGHT - MARGIN - (y - lo[1]) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    # axes through the origin when it is in view
    if lo[0] <= 0 <= hi[0]:
        out.append(f'<line class="axis" x1="{_fmt(sx(0))}" y1="{MARGIN / 2}" x2="{_fmt(sx(0))}" '
                   f'y2="{HEIGHT - MARGIN / 2}" stroke="#cccccc" stroke-width="1"/>')
    if lo[1] <= 0 <= hi[1]:
        out.append(f'<line class="axis" x1="{MARGIN / 2}" y1="{_fmt(sy(0))}" '
                   f'x2="{WIDTH - MARGIN / 2}" y2="{_fmt(sy(0))}" stroke="#cccccc" '
                   f'stroke-width="1"/>')
    k = 0
    for kind, name, a, b in rects:
        x, y = sx(a[0]), sy(b[1])
        w, h = (b[0] - a[0]) * scale, (b[1] - a[1]) * scale
        label = escape(name)
        if kind == "concept":
            colour = PALETTE[k % len(PALETTE)]
            k += 1
            style = f'fill="{colour}" fill-opacity="0.15" stroke="{colour}" stroke-width="1.5"'
        else:
            colour = ROLE_STROKE
            style = (f'fill="{colour}" fill-opacity="0.08" stroke="{colour}" stroke-width="1.5" '
                     f'stroke-dasharray="6 3"')
        out.append(f'<rect class="{kind}" data-name="{label}" x="{_fmt(x)}" y="{_fmt(y)}" '
                   f'width="{_fmt(w)}" height="{_fmt(h)}" {style}/>')
        out.append(f'<text class="{kind}-label" x="{_fmt(x + 3)}" y="{_fmt(y + 12)}" '
                   f'font-family="sans-serif" font-size="11" fill="{colour}">{label}</text>')
    for name, p in points:
        out.append(f'<circle class="individual" data-name="{escape(name)}" cx="{_fmt(sx(p[0]))}" '
                   f'cy="{_fmt(sy(p[1]))}" r="3" fill="black"/>')
        out.append(f'<text class="individual-label" x="{_fmt(sx(p[0]) + 4)}" '
                   f'y="{_fmt(sy(p[1]) - 4)}" font-family="sans-serif" font-size="10">'
                   f'{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
