"""Minimal self-contained SVG charts (line plots and grouped bars)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
W, H = 640, 400
ML, MR, MT, MB = 70, 150, 40, 50


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.2e}"
    return f"{v:.3g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
        f'<text x="{(ML + W - MR) / 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{(MT + H - MB) / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(MT + H - MB) / 2})">{escape(ylabel)}</text>',
    ]
    for v in _ticks(ylo, yhi):
        y = _sy(v, ylo, yhi)
        parts.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_fmt(v)}</text>')
    if xlo is not None:
        for v in _ticks(xlo, xhi):
            x = _sx(v, xlo, xhi)
            parts.append(f'<line x1="{x:.1f}" y1="{H - MB}" x2="{x:.1f}" y2="{H - MB + 4}" stroke="black"/>')
            parts.append(f'<text x="{x:.1f}" y="{H - MB + 16}" text-anchor="middle" font-family="sans-serif" '
                         f'font-size="10">{_fmt(v)}</text>')
    return parts


def _sx(v, lo, hi):
    return ML + (v - lo) / ((hi - lo) or 1.0) * (W - ML - MR)


def _sy(v, lo, hi):
    return H - MB - (v - lo) / ((hi - lo) or 1.0) * (H - MT - MB)


def _legend(parts, labels):
    for i, label in enumerate(labels):
        y = MT + 10 + 18 * i
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{W - MR + 12}" y="{y - 8}" width="12" height="4" fill="{c}"/>')
        parts.append(f'<text x="{W - MR + 30}" y="{y - 2}" font-family="sans-serif" font-size="11">'
                     f'{escape(str(label))}</text>')


def line_chart(series, title="", xlabel="", ylabel="", logy=False):
    """``series``: list of ``(label, xs, ys)``."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [(math.log10(y) if logy else y) for _, _, ys in series for y in ys
              if math.isfinite(y) and (y > 0 or not logy)]
    if not xs_all or not ys_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    xlo, xhi = min(xs_all), max(xs_all)
    ylo, yhi = min(ys_all), max(ys_all)
    if yhi == ylo:
        yhi = ylo + 1.0
    parts = _frame(title, xlabel, ("log10 " if logy else "") + ylabel, xlo, xhi if xhi > xlo else xlo + 1, ylo, yhi)
    for i, (_, xs, ys) in enumerate(series):
        pts = []
        for x, y in zip(xs, ys):
            if not math.isfinite(y) or (logy and y <= 0):
                continue
            yv = math.log10(y) if logy else y
            pts.append(f"{_sx(x, xlo, xhi if xhi > xlo else xlo + 1):.2f},{_sy(yv, ylo, yhi):.2f}")
        parts.append(f'<polyline fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5" '
                     f'points="{" ".join(pts)}"/>')
    _legend(parts, [s[0] for s in series])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(groups, labels, values, title="", xlabel="", ylabel=""):
    """Grouped bars: ``values[j][i]`` is series ``labels[j]`` at group ``groups[i]``."""
    top = max([v for row in values for v in row if math.isfinite(v)] + [1e-12])
    parts = _frame(title, xlabel, ylabel, None, None, 0.0, top)
    ng, ns = len(groups), len(labels)
    span = (W - ML - MR) / max(ng, 1)
    bw = span * 0.8 / max(ns, 1)
    for i, g in enumerate(groups):
        x0 = ML + span * i + span * 0.1
        for j in range(ns):
            v = values[j][i]
            y = _sy(v, 0.0, top)
            parts.append(f'<rect x="{x0 + j * bw:.2f}" y="{y:.2f}" width="{bw:.2f}" height="{H - MB - y:.2f}" '
                         f'fill="{PALETTE[j % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x0 + span * 0.4:.2f}" y="{H - MB + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{escape(str(g))}</text>')
    _legend(parts, labels)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
