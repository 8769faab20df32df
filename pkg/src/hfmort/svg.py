"""Tiny self-contained SVG charts with byte-stable output.

Coordinates are printed with two decimals and elements are emitted in
input order, so identical inputs give identical files.
"""

from __future__ import annotations

import math
from html import escape

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 150, 20, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _f(v: float) -> str:
    return f"{v:.2f}"


class Canvas:
    def __init__(self, title: str, width: int = W, height: int = H):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<text x="{_f(width / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]

    def line(self, x1, y1, x2, y2, stroke="#333", width=1.0, dash=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" stroke="{stroke}" '
            f'stroke-width="{_f(width)}"{extra}/>'
        )

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def circle(self, x, y, r, fill):
        self.parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{fill}" fill-opacity="0.7"/>')

    def polyline(self, pts, stroke, width=1.5):
        body = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(f'<polyline points="{body}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"/>')

    def text(self, x, y, s, anchor="start", size=11):
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" font-size="{size}">{escape(str(s))}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _scale(lo, hi, a, b):
    span = (hi - lo) or 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _axis_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def bar_chart(title: str, labels, values, xlabel: str = "") -> str:
    """Horizontal bars, first label on top."""
    c = Canvas(title, height=max(H, TOP + BOTTOM + 18 * len(labels)))
    vmax = max([v for v in values if math.isfinite(v)] + [0.0]) or 1.0
    sx = _scale(0.0, vmax, LEFT, c.width - RIGHT)
    band = (c.height - TOP - BOTTOM) / max(1, len(labels))
    for i, (lab, v) in enumerate(zip(labels, values)):
        y = TOP + i * band
        c.rect(LEFT, y + 0.15 * band, sx(v) - LEFT, 0.7 * band, PALETTE[0])
        c.text(LEFT - 6, y + 0.65 * band, lab, anchor="end")
    base = c.height - BOTTOM
    c.line(LEFT, base, c.width - RIGHT, base)
    for t in _axis_ticks(0.0, vmax):
        c.line(sx(t), base, sx(t), base + 4)
        c.text(sx(t), base + 16, f"{t:.3g}", anchor="middle")
    c.text((LEFT + c.width - RIGHT) / 2, c.height - 12, xlabel, anchor="middle")
    return c.render()


def line_chart(title: str, series, xlabel: str = "", ylabel: str = "", diagonal: bool = False) -> str:
    """``series`` is a list of (name, [(x, y), ...]) on the unit square."""
    c = Canvas(title)
    sx = _scale(0.0, 1.0, LEFT, c.width - RIGHT)
    sy = _scale(0.0, 1.0, c.height - BOTTOM, TOP)
    c.line(sx(0), sy(0), sx(1), sy(0))
    c.line(sx(0), sy(0), sx(0), sy(1))
    for t in _axis_ticks(0.0, 1.0):
        c.line(sx(t), sy(0), sx(t), sy(0) + 4)
        c.text(sx(t), sy(0) + 16, f"{t:.1f}", anchor="middle")
        c.line(sx(0) - 4, sy(t), sx(0), sy(t))
        c.text(sx(0) - 6, sy(t) + 4, f"{t:.1f}", anchor="end")
    if diagonal:
        c.line(sx(0), sy(0), sx(1), sy(1), stroke="#999", dash="4,3")
    for k, (name, pts) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        c.polyline([(sx(x), sy(y)) for x, y in pts], color)
        c.line(sx(0.62), sy(0) - 90 + 14 * k, sx(0.68), sy(0) - 90 + 14 * k, stroke=color, width=2)
        c.text(sx(0.70), sy(0) - 86 + 14 * k, name)
    c.text((LEFT + c.width - RIGHT) / 2, c.height - 12, xlabel, anchor="middle")
    c.text(20, (TOP + c.height - BOTTOM) / 2, ylabel, anchor="middle")
    return c.render()


def box_chart(title: str, boxes, ylabel: str = "") -> str:
    """``boxes``: list of (label, whisker_lo, q1, median, q3, whisker_hi, mean)."""
    c = Canvas(title)
    lo = min(b[1] for b in boxes)
    hi = max(b[5] for b in boxes)
    pad = 0.05 * ((hi - lo) or 1.0)
    sy = _scale(lo - pad, hi + pad, c.height - BOTTOM, TOP)
    band = (c.width - LEFT - RIGHT) / len(boxes)
    c.line(LEFT, TOP, LEFT, c.height - BOTTOM)
    for t in _axis_ticks(lo - pad, hi + pad):
        c.line(LEFT - 4, sy(t), LEFT, sy(t))
        c.text(LEFT - 6, sy(t) + 4, f"{t:.3f}", anchor="end")
    for i, (label, wl, q1, med, q3, wh, mean) in enumerate(boxes):
        cx = LEFT + (i + 0.5) * band
        half = 0.25 * band
        c.line(cx, sy(wl), cx, sy(q1))
        c.line(cx, sy(q3), cx, sy(wh))
        c.line(cx - half / 2, sy(wl), cx + half / 2, sy(wl))
        c.line(cx - half / 2, sy(wh), cx + half / 2, sy(wh))
        c.rect(cx - half, sy(q3), 2 * half, sy(q1) - sy(q3), "#c6dbef", stroke="#333")
        c.line(cx - half, sy(med), cx + half, sy(med), stroke="#d62728", width=2)
        c.circle(cx, sy(mean), 3, "#333")
        c.text(cx, c.height - BOTTOM + 16, label, anchor="middle")
    c.text(20, (TOP + c.height - BOTTOM) / 2, ylabel, anchor="middle")
    return c.render()


def beeswarm_chart(title: str, features, points) -> str:
    """``points``: (feature, value, attribution); colour runs blue (low) to red (high) per feature."""
    c = Canvas(title, height=max(H, TOP + BOTTOM + 22 * len(features)))
    vals = [s for _, _, s in points]
    lo, hi = (min(vals), max(vals)) if vals else (-1.0, 1.0)
    sx = _scale(lo, hi, LEFT, c.width - RIGHT)
    band = (c.height - TOP - BOTTOM) / max(1, len(features))
    row = {f: i for i, f in enumerate(features)}
    ranges = {}
    for f, v, _ in points:
        a, b = ranges.get(f, (v, v))
        ranges[f] = (min(a, v), max(b, v))
    counts: dict = {}
    for f, v, s in points:
        a, b = ranges[f]
        t = 0.5 if b == a else (v - a) / (b - a)
        k = counts.get(f, 0)
        counts[f] = k + 1
        jitter = ((k * 37) % 11 - 5) / 5 * 0.3 * band
        color = f"#{int(255 * t):02x}30{int(255 * (1 - t)):02x}"
        c.circle(sx(s), TOP + (row[f] + 0.5) * band + jitter, 2, color)
    for f, i in row.items():
        c.text(LEFT - 6, TOP + (i + 0.5) * band + 4, f, anchor="end")
    if lo <= 0 <= hi:
        c.line(sx(0), TOP, sx(0), c.height - BOTTOM, stroke="#999", dash="3,3")
    c.text((LEFT + c.width - RIGHT) / 2, c.height - 12, "attribution (log-odds)", anchor="middle")
    return c.render()
