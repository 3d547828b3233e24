"""Dependency-free SVG line plots with optional interquartile bands."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 50


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def line_plot(series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """One polyline per series; a translucent band where ``lo``/``hi`` are given."""
    if not series or any(len(s.x) == 0 for s in series):
        raise ValueError("nothing to plot")
    xs = np.concatenate([s.x for s in series])
    ys = np.concatenate([np.concatenate([s.y] + [b for b in (s.lo, s.hi) if b is not None]) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + (np.asarray(x) - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (np.asarray(y) - y0) / (y1 - y0) * ph

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.2f}" y="{TOP + ph + 18}" font-size="11" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{LEFT - 6}" y="{py(t) + 4:.2f}" font-size="11" text-anchor="end">{_fmt(t)}</text>')
        out.append(f'<line x1="{LEFT}" x2="{LEFT + pw}" y1="{py(t):.2f}" y2="{py(t):.2f}" stroke="#ddd"/>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if s.lo is not None and s.hi is not None:
            band = pts(s.x, s.hi) + " " + pts(s.x[::-1], s.lo[::-1])
            out.append(f'<polygon class="band" points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline class="series" points="{pts(s.x, s.y)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.8"><title>{escape(s.label)}</title></polyline>')
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{LEFT + pw + 10}" x2="{LEFT + pw + 30}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 35}" y="{ly + 4}" font-size="11">{escape(s.label)}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{W / 2}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
