"""Minimal static SVG line and heatmap rendering."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def _frame(title, xlabel, ylabel, xlim, ylim, logy, body):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
           'fill="none" stroke="black"/>']
    sx, sy = _scalers(xlim, ylim)
    for v in _ticks(*xlim):
        px = sx(v)
        out.append(f'<line x1="{px:.1f}" y1="{H - BOTTOM}" x2="{px:.1f}" y2="{H - BOTTOM + 5}" '
                   'stroke="black"/>')
        out.append(f'<text x="{px:.1f}" y="{H - BOTTOM + 18}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(*ylim):
        py = sy(v)
        label = _fmt(10 ** v) if logy else _fmt(v)
        out.append(f'<line x1="{LEFT - 5}" y1="{py:.1f}" x2="{LEFT}" y2="{py:.1f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{py + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>')
    out.extend(body)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _scalers(xlim, ylim):
    (x0, x1), (y0, y1) = xlim, ylim
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0

    def sx(v):
        return LEFT + (v - x0) / dx * (W - LEFT - RIGHT)

    def sy(v):
        return H - BOTTOM - (v - y0) / dy * (H - TOP - BOTTOM)

    return sx, sy


def line_svg(series, title="", xlabel="", ylabel="", logy=False) -> str:
    """``series`` is a list of ``(label, xs, ys)``."""
    prepared = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if logy:
            keep = ys > 0
            xs, ys = xs[keep], np.log10(ys[keep])
        keep = np.isfinite(xs) & np.isfinite(ys)
        prepared.append((label, xs[keep], ys[keep]))
    allx = np.concatenate([p[1] for p in prepared]) if prepared else np.zeros(1)
    ally = np.concatenate([p[2] for p in prepared]) if prepared else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    xlim = (float(allx.min()), float(allx.max()))
    ylim = (float(ally.min()), float(ally.max()))
    sx, sy = _scalers(xlim, ylim)
    body = []
    for k, (label, xs, ys) in enumerate(prepared):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, ys))
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = TOP + 16 + 16 * k
        body.append(f'<line x1="{W - 150}" y1="{ly}" x2="{W - 130}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{W - 125}" y="{ly + 4}">{escape(str(label))}</text>')
    return _frame(title, xlabel, ylabel, xlim, ylim, logy, body)


def _color(v: float) -> str:
    # blue -> white -> red
    v = min(max(v, 0.0), 1.0)
    if v < 0.5:
        a = v / 0.5
        r, g, b = int(255 * a), int(255 * a), 255
    else:
        a = (1.0 - v) / 0.5
        r, g, b = 255, int(255 * a), int(255 * a)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(xs, ys, z, title="", xlabel="", ylabel="") -> str:
    """``z[j, i]`` is the value at ``(xs[i], ys[j])`` on a rectilinear grid."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    z = np.asarray(z, dtype=float)
    lo, hi = float(np.nanmin(z)), float(np.nanmax(z))
    span = (hi - lo) or 1.0
    xlim, ylim = (float(xs.min()), float(xs.max())), (float(ys.min()), float(ys.max()))
    sx, sy = _scalers(xlim, ylim)

    def edges(c):
        if c.size == 1:
            return np.array([c[0] - 0.5, c[0] + 0.5])
        mid = 0.5 * (c[1:] + c[:-1])
        return np.concatenate([[c[0]], mid, [c[-1]]])

    ex, ey = edges(xs), edges(ys)
    body = []
    for j in range(ys.size):
        y_top, y_bot = sy(ey[j + 1]), sy(ey[j])
        for i in range(xs.size):
            x_l, x_r = sx(ex[i]), sx(ex[i + 1])
            v = z[j, i]
            fill = "#000000" if not math.isfinite(v) else _color((v - lo) / span)
            body.append(f'<rect x="{x_l:.2f}" y="{y_top:.2f}" width="{x_r - x_l + 0.3:.2f}" '
                        f'height="{y_bot - y_top + 0.3:.2f}" fill="{fill}"/>')
    body.append(f'<text x="{W - RIGHT}" y="{TOP - 6}" text-anchor="end">'
                f'range [{_fmt(lo)}, {_fmt(hi)}]</text>')
    return _frame(title, xlabel, ylabel, xlim, ylim, False, body)
