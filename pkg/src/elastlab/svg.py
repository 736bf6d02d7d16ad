"""Minimal standalone SVG line charts (polylines, optional log axes)."""
import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def _ticks(lo, hi, log, count=5):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // count)
        return [float(v) for v in range(a, b + 1, step)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _label(v, log):
    if log:
        return f"1e{int(v)}"
    return f"{v:.4g}"


def line_chart(series, path=None, title="", xlabel="", ylabel="", log_x=False, log_y=False,
               width=640, height=400):
    """Render ``series = [(label, xs, ys), ...]`` as an SVG document.

    Non-finite points (and nonpositive ones on a log axis) break the polyline.
    Returns the SVG text and writes it to ``path`` when given.
    """
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def tx(v):
        return np.log10(v) if log_x else v

    def ty(v):
        return np.log10(v) if log_y else v

    cleaned = []
    for label, xs, ys in series:
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        good = np.isfinite(xs) & np.isfinite(ys)
        if log_x:
            good &= xs > 0
        if log_y:
            good &= ys > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            cleaned.append((label, np.where(good, tx(np.where(good, xs, 1.0)), np.nan),
                            np.where(good, ty(np.where(good, ys, 1.0)), np.nan)))
    allx = np.concatenate([c[1] for c in cleaned]) if cleaned else np.array([])
    ally = np.concatenate([c[2] for c in cleaned]) if cleaned else np.array([])
    allx, ally = allx[np.isfinite(allx)], ally[np.isfinite(ally)]
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for v in _ticks(x0, x1, log_x):
        if x0 <= v <= x1:
            out.append(f'<line x1="{px(v):.2f}" y1="{top + ph}" x2="{px(v):.2f}" y2="{top + ph + 4}" stroke="#333"/>')
            out.append(f'<text x="{px(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{_label(v, log_x)}</text>')
    for v in _ticks(y0, y1, log_y):
        if y0 <= v <= y1:
            out.append(f'<line x1="{left - 4}" y1="{py(v):.2f}" x2="{left}" y2="{py(v):.2f}" stroke="#333"/>')
            out.append(f'<text x="{left - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{_label(v, log_y)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, xs, ys) in enumerate(cleaned):
        color = PALETTE[i % len(PALETTE)]
        run = []
        for a, b in zip(xs, ys):
            if np.isfinite(a) and np.isfinite(b):
                run.append(f"{px(a):.2f},{py(b):.2f}")
            elif run:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
                run = []
        if run:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
        ly = top + 12 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
