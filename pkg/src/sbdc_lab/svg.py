"""Hand-emitted SVG plots (polyline and circle primitives only).

Deterministic output: same data, same bytes. Used for phase-curve lines and
sample scatters colored by oracle class.
"""

from __future__ import annotations

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 60, 20, 30, 45


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return out_lo + (np.asarray(vals, dtype=np.float64) - lo) / span * (out_hi - out_lo)


def _fmt(v):
    return f"{v:.2f}"


def line_plot_svg(path, x, series, title="", x_label="", y_label="", log_x=False):
    """Write a line plot; ``series`` maps name -> y-array aligned with x.

    Emits one polyline point per x entry and one x-axis tick per entry (ticks
    are thinned visually but every data point is present in the polyline).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or any(len(ys) == 0 for ys in series.values()):
        raise ValueError("cannot plot empty series")
    xs = np.log10(x) if log_x else x
    all_y = np.concatenate([np.asarray(ys, dtype=np.float64) for ys in series.values()])
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    x_lo, x_hi = float(xs.min()), float(xs.max())

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W/2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
    ]
    # axes
    parts.append(f'<line x1="{_ML}" y1="{_H-_MB}" x2="{_W-_MR}" y2="{_H-_MB}" stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H-_MB}" stroke="black"/>')
    # x ticks: one per data point
    px_all = _scale(xs, x_lo, x_hi, _ML, _W - _MR)
    label_every = max(1, len(px_all) // 9)
    for i, px in enumerate(px_all):
        parts.append(f'<line x1="{px:.1f}" y1="{_H-_MB}" x2="{px:.1f}" y2="{_H-_MB+4}" stroke="black"/>')
        if i % label_every == 0:
            parts.append(
                f'<text x="{px:.1f}" y="{_H-_MB+18}" text-anchor="middle" '
                f'font-size="10">{_fmt(x[i])}</text>')
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        py = _scale([yv], y_lo, y_hi, _H - _MB, _MT)[0]
        parts.append(f'<line x1="{_ML-4}" y1="{py:.1f}" x2="{_ML}" y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML-8}" y="{py+3:.1f}" text-anchor="end" font-size="10">{_fmt(yv)}</text>')
    parts.append(
        f'<text x="{(_ML+_W-_MR)/2:.0f}" y="{_H-8}" text-anchor="middle" font-size="12">{x_label}</text>')
    parts.append(
        f'<text x="14" y="{(_MT+_H-_MB)/2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {(_MT+_H-_MB)/2:.0f})">{y_label}</text>')

    for idx, (name, ys) in enumerate(series.items()):
        ys = np.asarray(ys, dtype=np.float64)
        pys = _scale(ys, y_lo, y_hi, _H - _MB, _MT)
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(px_all[: ys.size], pys))
        color = _PALETTE[idx % len(_PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{_W-_MR-6}" y="{_MT+14*(idx+1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def scatter_plot_svg(path, points, labels, title="", n_classes=None):
    """Write a scatter of 2D points colored by integer label."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.int64)
    if points.shape[0] == 0:
        raise ValueError("cannot plot an empty sample set")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    x_lo, x_hi = float(points[:, 0].min()), float(points[:, 0].max())
    y_lo, y_hi = float(points[:, 1].min()), float(points[:, 1].max())
    pad_x = 0.05 * (x_hi - x_lo or 1.0)
    pad_y = 0.05 * (y_hi - y_lo or 1.0)
    x_lo, x_hi = x_lo - pad_x, x_hi + pad_x
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W/2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
    ]
    px = _scale(points[:, 0], x_lo, x_hi, _ML, _W - _MR)
    py = _scale(points[:, 1], y_lo, y_hi, _H - _MB, _MT)
    for c in range(n_classes):
        color = _PALETTE[c % len(_PALETTE)]
        idx = np.flatnonzero(labels == c)
        for i in idx:
            parts.append(f'<circle cx="{px[i]:.2f}" cy="{py[i]:.2f}" r="2" fill="{color}" fill-opacity="0.6"/>')
        parts.append(
            f'<text x="{_W-_MR-6}" y="{_MT+14*(c+1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">class {c}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
