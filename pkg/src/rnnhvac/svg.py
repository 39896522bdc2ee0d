"""Minimal line-chart writer producing standalone SVG without plotting libraries."""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 720, 360
MARGIN = (60, 20, 30, 45)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Render ``{name: (x, y)}`` as one SVG document with a legend."""
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    xs = [np.asarray(x, dtype=float) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=float) for _, y in series.values()]
    nonempty = [(x, y) for x, y in zip(xs, ys) if len(x)]
    if nonempty:
        x_lo = min(float(x.min()) for x, _ in nonempty)
        x_hi = max(float(x.max()) for x, _ in nonempty)
        y_lo = min(float(y.min()) for _, y in nonempty)
        y_hi = max(float(y.max()) for _, y in nonempty)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(y_lo, y_hi):
        out.append(f'<text x="{left - 5}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:.3g}</text>')
    for t in _ticks(x_lo, x_hi):
        out.append(f'<text x="{_fmt(px(t))}" y="{top + ph + 15}" text-anchor="middle">{t:.4g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    for i, (name, x, y) in enumerate(zip(series, xs, ys)):
        color = PALETTE[i % len(PALETTE)]
        if len(x):
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        ly = top + 12 + 14 * i
        out.append(f'<line x1="{left + 8}" y1="{ly - 4}" x2="{left + 26}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + 30}" y="{ly}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_chart(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(line_chart(series, title, xlabel, ylabel))
