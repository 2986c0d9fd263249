"""Static SVG rendering of fly trajectories and pen strokes.

Output depends only on the input arrays: coordinates are printed with a
fixed number of decimals and elements are emitted in input order.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class _Canvas:
    def __init__(self, xmin, ymin, xmax, ymax, width, pad=10.0):
        span_x = max(xmax - xmin, 1e-9)
        span_y = max(ymax - ymin, 1e-9)
        self.scale = (width - 2 * pad) / max(span_x, span_y)
        self.xmin, self.ymax, self.pad = xmin, ymax, pad
        self.width = width
        self.height = span_y * self.scale + 2 * pad
        self.items = []

    def pt(self, x, y):
        return self.pad + (x - self.xmin) * self.scale, self.pad + (self.ymax - y) * self.scale

    def polyline(self, xy, color, stroke_width=1.0):
        coords = " ".join("%.2f,%.2f" % self.pt(x, y) for x, y in xy)
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{stroke_width:g}"/>')

    def rect(self, x0, y0, x1, y1):
        ax, ay = self.pt(x0, y1)
        bx, by = self.pt(x1, y0)
        self.items.append(f'<rect x="{ax:.2f}" y="{ay:.2f}" width="{bx - ax:.2f}" height="{by - ay:.2f}" '
                          'fill="none" stroke="black"/>')

    def circle(self, cx, cy, r, fill="none"):
        px, py = self.pt(cx, cy)
        self.items.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r * self.scale:.2f}" '
                          f'fill="{fill}" stroke="black"/>')

    def svg(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.0f}" '
                f'height="{self.height:.0f}" viewBox="0 0 {self.width:.2f} {self.height:.2f}">')
        return "\n".join([head, *self.items, "</svg>"]) + "\n"


def _empty(width):
    log.warning("nothing to render; writing an empty canvas")
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{width:.0f}" '
            f'viewBox="0 0 {width:.2f} {width:.2f}">\n</svg>\n')


def render_trajectories(paths, chamber=None, width=600):
    """One coloured polyline per ``(T, 2)`` path, plus the chamber outline."""
    paths = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in paths]
    paths = [p for p in paths if len(p)]
    if not paths and chamber is None:
        return _empty(width)
    if chamber is not None:
        xmin, ymin, xmax, ymax = chamber.bounds()
    else:
        allp = np.concatenate(paths)
        (xmin, ymin), (xmax, ymax) = allp.min(axis=0), allp.max(axis=0)
    if paths:
        allp = np.concatenate(paths)
        xmin, ymin = min(xmin, allp[:, 0].min()), min(ymin, allp[:, 1].min())
        xmax, ymax = max(xmax, allp[:, 0].max()), max(ymax, allp[:, 1].max())
    else:
        log.warning("no trajectories to render; drawing the chamber only")
    cv = _Canvas(xmin, ymin, xmax, ymax, width)
    if chamber is not None:
        if chamber.shape == "rect":
            cv.rect(-chamber.width / 2, -chamber.height / 2, chamber.width / 2, chamber.height / 2)
        else:
            cv.circle(0.0, 0.0, chamber.radius)
        for cx, cy, r in chamber.objects:
            cv.circle(cx, cy, r, fill="#cccccc")
    for k, p in enumerate(paths):
        cv.polyline(p, PALETTE[k % len(PALETTE)])
    return cv.svg()


def visible_segments(strokes):
    """Pen-down polylines of a ``(T, 3)`` offset sequence.

    Step ``i`` moves the pen from point ``i - 1`` to point ``i`` (the origin
    precedes step 0) and is drawn when ``z[i]`` is 1. Consecutive drawn
    steps form one polyline.
    """
    s = np.asarray(strokes, dtype=np.float64).reshape(-1, 3)
    pts = np.vstack([np.zeros((1, 2)), np.cumsum(s[:, :2], axis=0)])
    on = s[:, 2] > 0.5
    segs = []
    i = 0
    while i < len(on):
        if not on[i]:
            i += 1
            continue
        j = i
        while j < len(on) and on[j]:
            j += 1
        segs.append(pts[i:j + 1])
        i = j
    return segs


def render_strokes(strokes, width=600):
    """Pen strokes as black polylines, one per visible segment."""
    s = np.asarray(strokes, dtype=np.float64).reshape(-1, 3)
    segs = visible_segments(s)
    if not segs:
        return _empty(width)
    allp = np.concatenate(segs)
    (xmin, ymin), (xmax, ymax) = allp.min(axis=0), allp.max(axis=0)
    cv = _Canvas(xmin, ymin, xmax, ymax, width)
    for seg in segs:
        cv.polyline(seg, "black", 1.5)
    return cv.svg()


def write_svg(path, svg):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
