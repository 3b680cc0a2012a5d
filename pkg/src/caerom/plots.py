"""Minimal standalone SVG line charts and label strips."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
W, H = 640, 400
L, R, T, B = 70, 150, 40, 50


def _f(x):
    return f"{x:.2f}"


def _header(title, w=W, h=H):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<text x="{w / 2:.0f}" y="22" text-anchor="middle" font-size="14">'
            f'{escape(title)}</text>']


def line_chart(series, title="", xlabel="", ylabel="", log_y=False):
    """``series`` maps a label to ``(xs, ys)``; non-positive values are dropped on log axes."""
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(float(x), float(y)) for x, y in zip(xs, ys)
                if y is not None and math.isfinite(y) and (not log_y or y > 0)]
        pts[name] = [(x, math.log10(y) if log_y else y) for x, y in keep]
    allp = [p for v in pts.values() for p in v]
    out = _header(title)
    if not allp:
        out.append("</svg>")
        return "\n".join(out) + "\n"
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = W - L - R, H - T - B

    def sx(x):
        return L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return T + ph - (y - y0) / (y1 - y0) * ph

    out.append(f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for i in range(5):
        y = y0 + (y1 - y0) * i / 4
        lab = f"{10 ** y:.3g}" if log_y else f"{y:.3g}"
        out.append(f'<text x="{L - 6}" y="{_f(sy(y) + 4)}" text-anchor="end">{lab}</text>')
        x = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{_f(sx(x))}" y="{T + ph + 18}" text-anchor="middle">'
                   f'{x:.3g}</text>')
    out.append(f'<text x="{L + pw / 2:.0f}" y="{H - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{T + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {T + ph / 2:.0f})">{escape(ylabel)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        if p:
            path = " ".join(f"{_f(sx(x))},{_f(sy(y))}" for x, y in p)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{path}"/>')
        ly = T + 14 + 18 * i
        out.append(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - R + 36}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def label_strip(rows, k, title=""):
    """One horizontal strip per entry of ``rows`` (label -> cluster ids over time)."""
    rows = dict(rows)
    n_rows = max(1, len(rows))
    h = T + B + 30 * n_rows
    out = _header(title, W, h)
    pw = W - L - R
    for r, (name, labels) in enumerate(rows.items()):
        y = T + 30 * r
        n = max(1, len(labels))
        cw = pw / n
        out.append(f'<text x="{L - 6}" y="{y + 17}" text-anchor="end">{escape(name)}</text>')
        for i, lab in enumerate(labels):
            out.append(f'<rect x="{_f(L + i * cw)}" y="{y}" width="{_f(cw + 0.05)}" '
                       f'height="24" fill="{PALETTE[int(lab) % len(PALETTE)]}"/>')
    for l in range(k):
        ly = T + 14 + 18 * l
        out.append(f'<rect x="{W - R + 10}" y="{ly - 8}" width="12" height="12" '
                   f'fill="{PALETTE[l % len(PALETTE)]}"/>')
        out.append(f'<text x="{W - R + 28}" y="{ly + 2}">cluster {l + 1}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
