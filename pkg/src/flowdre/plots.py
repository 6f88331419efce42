"""Minimal self-contained SVG scatter and line plots."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")
SIZE = 480
PAD = 48


def _bounds(arrays, viewport):
    if viewport is not None:
        return viewport
    pts = np.concatenate([np.asarray(a, dtype=float).reshape(-1, 2) for a in arrays])
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if len(pts) == 0:
        return (-1.0, 1.0, -1.0, 1.0)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9) * 0.05
    return (lo[0] - span[0], hi[0] + span[0], lo[1] - span[1], hi[1] + span[1])


def _frame(x0, x1, y0, y1, title):
    inner = SIZE - 2 * PAD
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
           f'viewBox="0 0 {SIZE} {SIZE}">',
           f'<rect width="{SIZE}" height="{SIZE}" fill="white"/>',
           f'<rect x="{PAD}" y="{PAD}" width="{inner}" height="{inner}" fill="none" stroke="black"/>']
    for i in range(5):
        fx = PAD + inner * i / 4
        out.append(f'<text x="{fx:.1f}" y="{SIZE - PAD + 16}" font-size="10" '
                   f'text-anchor="middle">{x0 + (x1 - x0) * i / 4:.3g}</text>')
        out.append(f'<text x="{PAD - 6}" y="{SIZE - fx + 3:.1f}" font-size="10" '
                   f'text-anchor="end">{y0 + (y1 - y0) * i / 4:.3g}</text>')
    if title:
        out.append(f'<text x="{SIZE / 2}" y="{PAD / 2}" font-size="13" '
                   f'text-anchor="middle">{escape(title)}</text>')
    return out


def _mapper(x0, x1, y0, y1):
    inner = SIZE - 2 * PAD

    def to_px(P):
        P = np.asarray(P, dtype=float)
        px = PAD + (P[:, 0] - x0) / (x1 - x0) * inner
        py = SIZE - PAD - (P[:, 1] - y0) / (y1 - y0) * inner
        return px, py
    return to_px


def _legend(labels):
    out = []
    for i, label in enumerate(labels):
        y = PAD + 14 + 14 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<circle cx="{SIZE - PAD - 90}" cy="{y - 4}" r="4" fill="{color}"/>')
        out.append(f'<text x="{SIZE - PAD - 82}" y="{y}" font-size="11">{escape(label)}</text>')
    return out


def scatter_svg(path, sets, title: str = "", viewport=None, max_points: int = 2000) -> None:
    """``sets`` is a list of ``(label, points[n x 2])``; points beyond 2D are projected."""
    arrays = [np.asarray(p, dtype=float)[:max_points, :2] for _, p in sets]
    x0, x1, y0, y1 = _bounds(arrays, viewport)
    to_px = _mapper(x0, x1, y0, y1)
    out = _frame(x0, x1, y0, y1, title)
    for i, P in enumerate(arrays):
        color = PALETTE[i % len(PALETTE)]
        inside = np.all(np.isfinite(P), axis=1)
        px, py = to_px(P[inside])
        out.append(f'<g fill="{color}" fill-opacity="0.5">')
        out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.5"/>' for a, b in zip(px, py)]
        out.append("</g>")
    out += _legend([label for label, _ in sets])
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def line_svg(path, series, title: str = "") -> None:
    """``series`` is a list of ``(label, x[n], y[n])``."""
    arrays = [np.stack([np.asarray(x, float), np.asarray(y, float)], axis=1) for _, x, y in series]
    x0, x1, y0, y1 = _bounds(arrays, None)
    to_px = _mapper(x0, x1, y0, y1)
    out = _frame(x0, x1, y0, y1, title)
    for i, P in enumerate(arrays):
        color = PALETTE[i % len(PALETTE)]
        px, py = to_px(P)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>' for a, b in zip(px, py)]
    out += _legend([label for label, _, _ in series])
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
