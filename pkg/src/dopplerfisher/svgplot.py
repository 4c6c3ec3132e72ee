"""Minimal SVG line plots, written from the same arrays that go to CSV."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#000000")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    style: str = "line"  # line | dashed | dotted | markers
    color: str | None = None


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def _limits(values: list[np.ndarray]) -> tuple[float, float]:
    finite = [v[np.isfinite(v)] for v in values]
    finite = [v for v in finite if v.size]
    if not finite:
        return 0.0, 1.0
    lo = min(float(v.min()) for v in finite)
    hi = max(float(v.max()) for v in finite)
    if hi == lo:
        pad = abs(hi) * 0.05 or 1.0
        return lo - pad, hi + pad
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def _panel_svg(panel: Panel, x0: float, y0: float, w: float, h: float) -> list[str]:
    left, right, top, bottom = 62.0, 12.0, 26.0, 40.0
    pw, ph = w - left - right, h - top - bottom
    xs = [np.asarray(s.x, dtype=float) for s in panel.series]
    ys = [np.asarray(s.y, dtype=float) for s in panel.series]
    xlo, xhi = _limits(xs)
    ylo, yhi = _limits(ys)

    def px(v):
        return x0 + left + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return y0 + top + (yhi - v) / (yhi - ylo) * ph

    out = [f'<rect x="{x0 + left:.1f}" y="{y0 + top:.1f}" width="{pw:.1f}" height="{ph:.1f}" '
           f'fill="none" stroke="#444" stroke-width="0.8"/>',
           f'<text x="{x0 + left + pw / 2:.1f}" y="{y0 + 16:.1f}" text-anchor="middle" '
           f'font-size="12">{escape(panel.title)}</text>',
           f'<text x="{x0 + left + pw / 2:.1f}" y="{y0 + h - 6:.1f}" text-anchor="middle" '
           f'font-size="11">{escape(panel.xlabel)}</text>',
           f'<text x="{x0 + 12:.1f}" y="{y0 + top + ph / 2:.1f}" text-anchor="middle" font-size="11" '
           f'transform="rotate(-90 {x0 + 12:.1f} {y0 + top + ph / 2:.1f})">{escape(panel.ylabel)}</text>']
    for v in _ticks(xlo, xhi):
        out.append(f'<text x="{px(v):.1f}" y="{y0 + top + ph + 14:.1f}" text-anchor="middle" '
                   f'font-size="9">{_fmt_tick(v)}</text>')
    for v in _ticks(ylo, yhi):
        out.append(f'<text x="{x0 + left - 4:.1f}" y="{py(v) + 3:.1f}" text-anchor="end" '
                   f'font-size="9">{_fmt_tick(v)}</text>')
        out.append(f'<line x1="{x0 + left:.1f}" x2="{x0 + left + pw:.1f}" y1="{py(v):.1f}" y2="{py(v):.1f}" '
                   f'stroke="#ddd" stroke-width="0.5"/>')
    for k, (s, x, y) in enumerate(zip(panel.series, xs, ys)):
        color = s.color or PALETTE[k % len(PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = [(px(a), py(b)) for a, b in zip(x[ok], y[ok])]
        if s.style == "markers":
            out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.2" fill="{color}"/>' for a, b in pts)
        elif pts:
            dash = {"dashed": ' stroke-dasharray="6 4"', "dotted": ' stroke-dasharray="2 3"'}.get(s.style, "")
            path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>')
        if s.label:
            ly = y0 + top + 12 + 12 * k
            out.append(f'<text x="{x0 + left + pw - 4:.1f}" y="{ly:.1f}" text-anchor="end" font-size="9" '
                       f'fill="{color}">{escape(s.label)}</text>')
    return out


def write_svg(path, panels: list[Panel], columns: int = 2, panel_size=(360.0, 260.0)) -> None:
    """Lay ``panels`` out on a grid and write a standalone SVG file."""
    columns = max(1, min(columns, len(panels)))
    rows = math.ceil(len(panels) / columns)
    w, h = panel_size
    body = []
    for i, panel in enumerate(panels):
        r, c = divmod(i, columns)
        body.extend(_panel_svg(panel, c * w, r * h, w, h))
    width, height = columns * w, rows * h
    text = "\n".join([f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
                      f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif">',
                      f'<rect width="{width:.0f}" height="{height:.0f}" fill="white"/>', *body, "</svg>", ""])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
