"""Hand-rolled SVG line charts.

Plots here are diagnostics, not publication figures, so the renderer is
a few hundred lines of polylines, ticks and text with no plotting
dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    name: str
    xs: list
    ys: list
    color: str = ""
    dash: str = ""  # e.g. "6,4" for dashed lines
    width: float = 1.6


def _finite(values):
    return [v for v in values if math.isfinite(v)]


def _data_range(series):
    xs = [x for s in series for x in _finite(s.xs)]
    ys = [y for s in series for y in _finite(s.ys)]
    if not xs or not ys:
        raise InputError("no finite data to plot")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    return x_lo, x_hi, y_lo - pad, y_hi + pad


def _ticks(lo, hi, count=5):
    span = hi - lo
    raw = span / max(count - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if span / step <= count + 0.5:
            break
    start = math.ceil(lo / step) * step
    ticks = []
    value = start
    while value <= hi + 1e-12 * span:
        ticks.append(round(value, 12))
        value += step
    return ticks


def _fmt(value):
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return f"{value:g}"


class _Canvas:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, color="#444", width=1.0, dash=""):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{color}" stroke-width="{width}"{dash_attr}/>'
        )

    def polyline(self, points, color, width=1.6, dash=""):
        if len(points) < 2:
            return
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash_attr}/>'
        )

    def text(self, x, y, content, size=12, color="#222", anchor="start"):
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" fill="{color}" '
            f'font-family="sans-serif" text-anchor="{anchor}">{_escape(content)}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def _escape(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _draw_axes(canvas, box, x_range, y_range, x_label, y_label):
    left, top, right, bottom = box
    x_lo, x_hi, y_lo, y_hi = x_range[0], x_range[1], y_range[0], y_range[1]

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (right - left)

    def sy(y):
        return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top)

    canvas.line(left, bottom, right, bottom)
    canvas.line(left, top, left, bottom)
    for tick in _ticks(x_lo, x_hi):
        if x_lo <= tick <= x_hi:
            canvas.line(sx(tick), bottom, sx(tick), bottom + 4)
            canvas.text(sx(tick), bottom + 16, _fmt(tick), size=10, anchor="middle")
    for tick in _ticks(y_lo, y_hi):
        if y_lo <= tick <= y_hi:
            canvas.line(left - 4, sy(tick), left, sy(tick))
            canvas.text(left - 7, sy(tick) + 3.5, _fmt(tick), size=10, anchor="end")
    if x_label:
        canvas.text((left + right) / 2, bottom + 32, x_label, size=11, anchor="middle")
    if y_label:
        canvas.text(left, top - 8, y_label, size=11)
    return sx, sy


def line_chart(path, series, title="", x_label="", y_label="", threshold=None, threshold_label="", size=(880, 520)):
    """One panel of polylines with axes, a legend and an optional
    horizontal dashed reference line."""
    series = [s if isinstance(s, Series) else Series(*s) for s in series]
    if not series:
        raise InputError("line_chart needs at least one series")
    for i, s in enumerate(series):
        if len(s.xs) != len(s.ys):
            raise InputError(f"series {s.name!r} has mismatched x/y lengths")
        if not s.color:
            s.color = PALETTE[i % len(PALETTE)]

    x_lo, x_hi, y_lo, y_hi = _data_range(series)
    if threshold is not None:
        y_lo = min(y_lo, threshold - 0.02 * (y_hi - y_lo))
        y_hi = max(y_hi, threshold + 0.02 * (y_hi - y_lo))

    width, height = size
    canvas = _Canvas(width, height)
    box = (60.0, 44.0, width - 170.0, height - 48.0)
    sx, sy = _draw_axes(canvas, box, (x_lo, x_hi), (y_lo, y_hi), x_label, y_label)

    if title:
        canvas.text(width / 2, 22, title, size=14, anchor="middle")

    if threshold is not None:
        canvas.line(box[0], sy(threshold), box[2], sy(threshold), color="#555", width=1.2, dash="6,4")
        label = threshold_label or f"threshold {_fmt(threshold)}"
        canvas.text(box[2] - 4, sy(threshold) - 5, label, size=10, color="#555", anchor="end")

    for s in series:
        pts = [(sx(x), sy(y)) for x, y in zip(s.xs, s.ys) if math.isfinite(x) and math.isfinite(y)]
        canvas.polyline(pts, s.color, width=s.width, dash=s.dash)

    legend_x = width - 160.0
    legend_y = 56.0
    for s in series:
        canvas.line(legend_x, legend_y - 4, legend_x + 22, legend_y - 4, color=s.color, width=2.4, dash=s.dash)
        canvas.text(legend_x + 28, legend_y, s.name, size=11)
        legend_y += 18

    with open(path, "w", encoding="utf-8") as handle:
        handle.write(canvas.render())


def panel_grid(path, panels, columns=2, panel_size=(420, 260), title=""):
    """A grid of small line panels; each panel is (title, [Series...])."""
    if not panels:
        raise InputError("panel_grid needs at least one panel")
    rows = (len(panels) + columns - 1) // columns
    pw, ph = panel_size
    top_pad = 34 if title else 8
    width = columns * pw + 16
    height = rows * ph + top_pad + 8
    canvas = _Canvas(width, height)
    if title:
        canvas.text(width / 2, 22, title, size=14, anchor="middle")

    for index, (panel_title, series) in enumerate(panels):
        series = [s if isinstance(s, Series) else Series(*s) for s in series]
        for i, s in enumerate(series):
            if not s.color:
                s.color = PALETTE[i % len(PALETTE)]
        col = index % columns
        row = index // columns
        ox = 8 + col * pw
        oy = top_pad + row * ph
        box = (ox + 46.0, oy + 24.0, ox + pw - 12.0, oy + ph - 36.0)
        x_lo, x_hi, y_lo, y_hi = _data_range(series)
        sx, sy = _draw_axes(canvas, box, (x_lo, x_hi), (y_lo, y_hi), "", "")
        canvas.text((box[0] + box[2]) / 2, oy + 14, panel_title, size=11, anchor="middle")
        for s in series:
            pts = [(sx(x), sy(y)) for x, y in zip(s.xs, s.ys) if math.isfinite(x) and math.isfinite(y)]
            canvas.polyline(pts, s.color, width=s.width, dash=s.dash)

    with open(path, "w", encoding="utf-8") as handle:
        handle.write(canvas.render())
