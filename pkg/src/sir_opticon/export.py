"""CSV, JSON and SVG writers for scenario artifacts.

Floats go out with 17 significant digits so that every double round-trips.
"""

from __future__ import annotations

import csv
import json
from xml.sax.saxutils import escape

import numpy as np

from .zones import boundary_level, phi_a, phi_b


def fmt(x):
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def write_zones(path, params, step=1e-3):
    """Sample both zone boundaries on ``s = 0, step, ..., 1``.

    Besides the clamped boundaries, the raw level curves through the two corners
    are included as ``level_A`` and ``level_B`` (``-inf`` at ``s = 0``). They
    coincide with the unclamped boundaries right of the respective thresholds.
    """
    n = int(round(1.0 / step))
    s = np.linspace(0.0, 1.0, n + 1)
    rows = zip(
        s,
        phi_a(s, params),
        phi_b(s, params),
        phi_a(s, params, clamp=False),
        phi_b(s, params, clamp=False),
        boundary_level(s, params.herd, params.i_M),
        boundary_level(s, params.lock, params.i_M),
    )
    write_csv(path, ["s", "phi_A", "phi_B", "phi_A_unclamped", "phi_B_unclamped",
                     "level_A", "level_B"], rows)


def trajectory_grid(t_f, extra=(), step=0.5):
    """Uniform grid on ``[0, t_f]`` merged with the given switching times."""
    n = int(np.ceil(t_f / step))
    grid = np.linspace(0.0, t_f, n + 1)
    pts = [t for t in extra if t is not None and 0.0 < t < t_f]
    return np.unique(np.concatenate([grid, pts]))


def write_trajectory(path, times, s, i, b):
    write_csv(path, ["t", "s", "i", "b"], zip(times, s, i, b))


# -- SVG ----------------------------------------------------------------------


_W, _PANEL_H, _MARGIN_L, _MARGIN_R, _GAP = 760, 130, 90, 20, 36


def _polyline(xs, ys, x_map, y_map, color):
    pts = " ".join(f"{x_map(x):.2f},{y_map(y):.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{pts}"/>'


def svg_plot(series, t_max, title=""):
    """Stacked time-series panels.

    ``series`` is a list of ``(label, [(t_array, y_array), ...])``. Each inner
    pair is drawn as its own polyline, so costate jumps stay visible as gaps.
    """
    height = _GAP + len(series) * (_PANEL_H + _GAP)
    plot_w = _W - _MARGIN_L - _MARGIN_R
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
                   f'{escape(title)}</text>')
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    for k, (label, pieces) in enumerate(series):
        top = _GAP + k * (_PANEL_H + _GAP)
        ys = np.concatenate([np.asarray(y, dtype=float) for _, y in pieces])
        lo, hi = float(ys.min()), float(ys.max())
        if hi - lo < 1e-12 * max(1.0, abs(hi)):
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        lo, hi = lo - pad, hi + pad

        def x_map(t):
            return _MARGIN_L + plot_w * t / t_max

        def y_map(y, top=top, lo=lo, hi=hi):
            return top + _PANEL_H * (1.0 - (y - lo) / (hi - lo))

        out.append(f'<rect x="{_MARGIN_L}" y="{top}" width="{plot_w}" height="{_PANEL_H}" '
                   'fill="none" stroke="#444"/>')
        out.append(f'<text x="{_MARGIN_L - 8}" y="{top + 10}" text-anchor="end">{hi:.4g}</text>')
        out.append(f'<text x="{_MARGIN_L - 8}" y="{top + _PANEL_H}" text-anchor="end">'
                   f'{lo:.4g}</text>')
        out.append(f'<text x="{_MARGIN_L - 8}" y="{top + _PANEL_H / 2 + 4:.1f}" '
                   f'text-anchor="end" font-weight="bold">{escape(label)}</text>')
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            x = _MARGIN_L + plot_w * frac
            out.append(f'<text x="{x:.1f}" y="{top + _PANEL_H + 13}" text-anchor="middle">'
                       f'{t_max * frac:.4g}</text>')
        for t, y in pieces:
            out.append(_polyline(t, y, x_map, y_map, colors[k % len(colors)]))
    out.append("</svg>")
    return "\n".join(out) + "\n"
