"""Tiny deterministic SVG line plots (polylines, markers and text)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 360
MARGIN = {"left": 64, "right": 16, "top": 32, "bottom": 48}
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _range(values):
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def line_plot(series, xlabel: str, ylabel: str, title: str = "", xlim=None, ylim=None) -> str:
    """``series`` is a list of (label, xs, ys); non-finite points are skipped."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    x0, x1 = xlim if xlim is not None else _range(xs_all)
    y0, y1 = ylim if ylim is not None else _range(ys_all)
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{_fmt(px(t))}" y="{_fmt(MARGIN["top"] + ph + 14)}" text-anchor="middle">'
                   f"{t:.3g}</text>")
    for t in _ticks(y0, y1):
        out.append(f'<text x="{_fmt(MARGIN["left"] - 4)}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text class="xlabel" x="{_fmt(MARGIN["left"] + pw / 2)}" y="{HEIGHT - 10}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text class="ylabel" x="14" y="{_fmt(MARGIN["top"] + ph / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 14 {_fmt(MARGIN["top"] + ph / 2)})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        colour = COLOURS[i % len(COLOURS)]
        pts = [(px(x), py(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        if len(pts) > 1:
            coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        for a, b in pts:
            out.append(f'<circle class="point" cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{colour}"/>')
        ly = MARGIN["top"] + 14 + 14 * i
        out.append(f'<text x="{_fmt(MARGIN["left"] + pw - 6)}" y="{ly}" text-anchor="end" fill="{colour}">'
                   f"{escape(label)}</text>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
