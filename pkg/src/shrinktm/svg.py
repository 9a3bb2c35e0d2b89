"""Minimal SVG heatmaps for fields on (near-)regular 2-D grids."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

# blue - white - red, evaluated at -1, 0, 1
_COLD = np.array([33.0, 102.0, 172.0])
_MID = np.array([247.0, 247.0, 247.0])
_HOT = np.array([178.0, 24.0, 43.0])


def symmetric_limit(train, lo: float = 1.0, hi: float = 99.0) -> float:
    """Half-width of the color scale: the larger of |1st| and |99th| percentiles."""
    v = np.asarray(train, float).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 1.0
    lim = float(max(abs(np.percentile(v, lo)), abs(np.percentile(v, hi))))
    return lim if lim > 0 else 1.0


def diverging_color(value: float, limit: float) -> str:
    t = float(np.clip(value / limit, -1.0, 1.0))
    rgb = _MID + (t if t > 0 else -t) * ((_HOT if t > 0 else _COLD) - _MID)
    r, g, b = np.rint(rgb).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _cells(coords: np.ndarray):
    """Grid cell index (col, row) per location, or None if not a full grid."""
    xs, ix = np.unique(coords[:, 0], return_inverse=True)
    ys, iy = np.unique(coords[:, 1], return_inverse=True)
    if xs.size * ys.size != coords.shape[0]:
        return None
    return ix, iy, xs.size, ys.size


def field_svg(coords, values, limit: float, cell: int = 8, title: Optional[str] = None) -> str:
    """One panel; y increases upwards as on a map."""
    coords = np.asarray(coords, float)
    values = np.asarray(values, float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("heatmaps need 2-D locations")
    if values.shape != (coords.shape[0],):
        raise ValueError("one value per location required")
    top = 16 if title else 0
    grid = _cells(coords)
    parts = []
    if grid is not None:
        ix, iy, nx, ny = grid
        w, h = nx * cell, ny * cell
        for c, r, v in zip(ix, iy, values):
            parts.append(f'<rect x="{c * cell}" y="{top + (ny - 1 - r) * cell}" width="{cell}" '
                         f'height="{cell}" fill="{diverging_color(v, limit)}"/>')
    else:
        # scattered locations: dots on a unit square scaled to 100 cells
        w = h = 100 * cell // 2
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        p = (coords - lo) / span
        for (px, py), v in zip(p, values):
            parts.append(f'<circle cx="{px * (w - cell) + cell / 2:.2f}" '
                         f'cy="{top + (1 - py) * (h - cell) + cell / 2:.2f}" r="{cell / 2}" '
                         f'fill="{diverging_color(v, limit)}"/>')
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h + top}" '
            f'viewBox="0 0 {w} {h + top}">')
    if title:
        parts.insert(0, f'<text x="2" y="12" font-family="sans-serif" font-size="11">{_escape(title)}</text>')
    return "\n".join([head, *parts, "</svg>"]) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_panels(prefix: str, coords, fields, limit: float, titles: Optional[Sequence[str]] = None) -> list[str]:
    """Write one SVG per row of ``fields``; returns the paths written."""
    fields = np.atleast_2d(np.asarray(fields, float))
    paths = []
    for k, f in enumerate(fields):
        path = f"{prefix}_{k:03d}.svg"
        title = titles[k] if titles is not None else f"sample {k}"
        with open(path, "w") as fh:
            fh.write(field_svg(coords, f, limit, title=title))
        paths.append(path)
    return paths
