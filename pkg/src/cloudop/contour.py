"""Contour export: per-cell CSV and a dependency-free SVG heatmap with a
fixed color scale, so truth/prediction pairs render comparably."""

from __future__ import annotations

from pathlib import Path

import numpy as np

# Compact viridis-like ramp; linearly interpolated.
_RAMP = np.array(
    [
        (68, 1, 84),
        (59, 82, 139),
        (33, 145, 140),
        (94, 201, 98),
        (253, 231, 37),
    ],
    dtype=np.float64,
)


def _color(v: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB bytes along the ramp."""
    v = np.clip(v, 0.0, 1.0) * (len(_RAMP) - 1)
    lo = np.floor(v).astype(int)
    hi = np.minimum(lo + 1, len(_RAMP) - 1)
    frac = (v - lo)[..., None]
    return np.round(_RAMP[lo] * (1 - frac) + _RAMP[hi] * frac).astype(int)


def export_contour_csv(path, x: np.ndarray, y: np.ndarray, value: np.ndarray) -> None:
    data = np.column_stack([x.ravel(), y.ravel(), value.ravel()])
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def render_heatmap_svg(
    path,
    value: np.ndarray,
    vmin: float | None = None,
    vmax: float | None = None,
    mask: np.ndarray | None = None,
    cell_px: int = 6,
    title: str = "",
) -> None:
    """Write a standalone SVG heatmap of a (nx, ny) field.

    vmin/vmax pin the color scale; pass the same pair for every field that
    must share a scale.
    """
    value = np.asarray(value, dtype=np.float64)
    if value.size == 0:
        raise ValueError("empty field: nothing to render")
    vmin = float(np.min(value)) if vmin is None else vmin
    vmax = float(np.max(value)) if vmax is None else vmax
    span = vmax - vmin if vmax > vmin else 1.0
    rgb = _color((value - vmin) / span)
    nx, ny = value.shape
    width, height = nx * cell_px, ny * cell_px
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height + (18 if title else 0)}">'
    ]
    if title:
        parts.append(f'<text x="2" y="12" font-size="11">{title}</text>')
    y_off = 18 if title else 0
    for i in range(nx):
        for j in range(ny):
            if mask is not None and mask[i, j]:
                fill = "#888888"
            else:
                r, g, b = rgb[i, j]
                fill = f"#{r:02x}{g:02x}{b:02x}"
            # j indexes y upward; SVG y grows downward
            parts.append(
                f'<rect x="{i * cell_px}" y="{y_off + (ny - 1 - j) * cell_px}" '
                f'width="{cell_px}" height="{cell_px}" fill="{fill}"/>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
