"""Standalone log-log SVG charts of risk against budget."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import DomainError
from ..risk import fit_rate

WIDTH, HEIGHT = 720, 480
LEFT, RIGHT, TOP, BOTTOM = 80, 200, 40, 60
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def _f(v: float) -> str:
    return f"{v:.2f}"


def emit_plot(table, path, title: str = "excess risk vs budget") -> Path:
    """Write one polyline per series, its least-squares line and the fitted slope.

    ``table`` maps a series label to ``(n, risk)`` points.  Both axes are
    logarithmic; n ticks sit at powers of 2, risk ticks at powers of 10.
    Nonpositive risks cannot be placed on a log axis and are left out.
    """
    series = {str(k): sorted((float(n), float(r)) for n, r in pts if r > 0 and n > 0)
              for k, pts in dict(table).items()}
    series = {k: v for k, v in series.items() if v}
    if not series:
        raise DomainError("nothing to plot")
    ns = [n for pts in series.values() for n, _ in pts]
    rs = [r for pts in series.values() for _, r in pts]
    x0, x1 = math.floor(math.log2(min(ns))), math.ceil(math.log2(max(ns)))
    y0, y1 = math.floor(math.log10(min(rs))), math.ceil(math.log10(max(rs)))
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(n):
        return LEFT + (math.log2(n) - x0) / (x1 - x0) * pw

    def py(r):
        return TOP + (y1 - math.log10(r)) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{LEFT + pw / 2:.2f}" y="{TOP - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    step = max(1, math.ceil((x1 - x0) / 12))
    for e in range(x0, x1 + 1, step):
        x = px(2.0 ** e)
        out.append(f'<line class="xtick" x1="{_f(x)}" y1="{TOP + ph}" x2="{_f(x)}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{TOP + ph + 18}" text-anchor="middle">2<tspan dy="-5" font-size="9">{e}</tspan></text>')
    for e in range(y0, y1 + 1):
        y = py(10.0 ** e)
        out.append(f'<line class="ytick" x1="{LEFT - 5}" y1="{_f(y)}" x2="{LEFT}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<line x1="{LEFT}" y1="{_f(y)}" x2="{LEFT + pw}" y2="{_f(y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_f(y + 4)}" text-anchor="end">10<tspan dy="-5" font-size="9">{e}</tspan></text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">budget n (log scale)</text>')
    out.append(f'<text x="20" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 20 {TOP + ph / 2:.2f})">excess risk (log scale)</text>')

    for i, (label, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_f(px(n))},{_f(py(r))}" for n, r in pts)
        out.append(f'<polyline class="series" points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for n, r in pts:
            out.append(f'<circle cx="{_f(px(n))}" cy="{_f(py(r))}" r="3" fill="{color}"/>')
        ly = TOP + 10 + 34 * i
        out.append(f'<line class="legend" x1="{LEFT + pw + 15}" y1="{ly}" x2="{LEFT + pw + 35}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 40}" y="{ly + 4}">{escape(label)}</text>')
        if len({n for n, _ in pts}) >= 3:
            fit = fit_rate(pts)
            a, b = pts[0][0], pts[-1][0]
            ya = math.exp(fit.intercept) * a ** fit.slope
            yb = math.exp(fit.intercept) * b ** fit.slope
            out.append(f'<line class="fit" x1="{_f(px(a))}" y1="{_f(py(ya))}" x2="{_f(px(b))}" y2="{_f(py(yb))}" '
                       f'stroke="{color}" stroke-dasharray="5,3"/>')
            out.append(f'<text class="slope" x="{LEFT + pw + 40}" y="{ly + 18}" fill="{color}">'
                       f'slope {fit.slope:.3f}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
