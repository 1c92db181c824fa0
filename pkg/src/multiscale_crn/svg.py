"""Minimal self-contained SVG line plots with optional shaded bands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lower: Optional[np.ndarray] = None  # band, drawn when both bounds are given
    upper: Optional[np.ndarray] = None
    color: Optional[str] = None
    dashed: bool = False


def nice_ticks(lo: float, hi: float, n: int = 6) -> list:
    """Round tick positions covering [lo, hi]."""
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def render_svg(series: Sequence[Series], title: str = "", xlabel: str = "t", ylabel: str = "",
               width: int = 720, height: int = 440) -> str:
    if not series:
        raise ValueError("nothing to plot")
    ml, mr, mt, mb = 70, 170, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = [np.asarray(s.y, float) for s in series]
    ys += [np.asarray(s.lower, float) for s in series if s.lower is not None and s.upper is not None]
    ys += [np.asarray(s.upper, float) for s in series if s.lower is not None and s.upper is not None]
    yall = np.concatenate(ys)
    yall = yall[np.isfinite(yall)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(yall.min()), float(yall.max())) if yall.size else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        pad = max(abs(y0) * 0.1, 1.0)
        y0, y1 = y0 - pad, y1 + pad
    else:
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (np.asarray(y, float) - y0) / (y1 - y0) * ph

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{ml + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    # axes and ticks
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333" stroke-width="1"/>')
    for t in nice_ticks(x0, x1):
        if x0 <= t <= x1:
            X = float(px(t))
            out.append(f'<line x1="{X:.2f}" y1="{mt + ph}" x2="{X:.2f}" y2="{mt + ph + 5}" stroke="#333"/>')
            out.append(f'<text x="{X:.2f}" y="{mt + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in nice_ticks(y0, y1):
        if y0 <= t <= y1:
            Y = float(py(t))
            out.append(f'<line x1="{ml - 5}" y1="{Y:.2f}" x2="{ml}" y2="{Y:.2f}" stroke="#333"/>')
            out.append(f'<line x1="{ml}" y1="{Y:.2f}" x2="{ml + pw}" y2="{Y:.2f}" stroke="#eee"/>')
            out.append(f'<text x="{ml - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    # bands first, then lines
    colors = [s.color or PALETTE[i % len(PALETTE)] for i, s in enumerate(series)]
    for s, c in zip(series, colors):
        if s.lower is not None and s.upper is not None:
            x = np.asarray(s.x, float)
            poly = pts(x, s.upper) + " " + pts(x[::-1], np.asarray(s.lower, float)[::-1])
            out.append(f'<polygon points="{poly}" fill="{c}" fill-opacity="0.18" stroke="none"/>')
    for s, c in zip(series, colors):
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline points="{pts(s.x, s.y)}" fill="none" stroke="{c}" stroke-width="1.6"{dash}/>')
    # legend
    lx = ml + pw + 15
    for i, (s, c) in enumerate(zip(series, colors)):
        ly = mt + 10 + 18 * i
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
