"""Static SVG line charts of the per-flight comparison data (no plotting library)."""

from __future__ import annotations

import math
from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

PANELS = (
    ("altitude [m]", ("alt_ref", "alt_node", "alt_base", "sel_alt")),
    ("true air speed [m/s]", ("tas_ref", "tas_node", "tas_base")),
    ("gamma [deg]", ("fpa_deg_ref", "fpa_deg_node", "fpa_deg_base")),
    ("mass [kg]", ("mass_ref", "mass_node", "mass_base")),
)
STYLE = {
    "ref": ("#000000", "", "recorded"),
    "node": ("#1f77b4", "", "NODE-FDM"),
    "base": ("#ff7f0e", "", "baseline"),
    "sel_alt": ("#7f7f7f", "4,3", "selected altitude"),
}
WIDTH, PANEL_H, MARGIN_L, MARGIN_R, GAP = 900, 180, 80, 20, 40


def _style(column: str):
    return STYLE["sel_alt"] if column == "sel_alt" else STYLE[column.rsplit("_", 1)[1]]


def _polyline(t, y, x0, x1, y0, y1, tspan, yspan) -> list[str]:
    """Polyline point strings, split at missing values."""
    parts, cur = [], []
    for ti, yi in zip(t, y):
        if not (math.isfinite(ti) and math.isfinite(yi)):
            if len(cur) > 1:
                parts.append(" ".join(cur))
            cur = []
            continue
        px = x0 + (ti - tspan[0]) / (tspan[1] - tspan[0]) * (x1 - x0)
        py = y1 - (yi - yspan[0]) / (yspan[1] - yspan[0]) * (y1 - y0)
        cur.append(f"{px:.2f},{py:.2f}")
    if len(cur) > 1:
        parts.append(" ".join(cur))
    return parts


def render_svg(table: Mapping[str, np.ndarray], title: str = "") -> str:
    """Four stacked panels: altitude (with the selected altitude), TAS, gamma, mass."""
    t = np.asarray(table["time_s"], dtype=float)
    if len(t) < 2:
        raise ValueError("need at least two records to plot")
    tspan = (float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0)
    height = GAP + len(PANELS) * (PANEL_H + GAP)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
           f'<text x="{MARGIN_L}" y="20" font-size="14">{escape(title)}</text>']
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    for i, (label, columns) in enumerate(PANELS):
        y0 = GAP + i * (PANEL_H + GAP)
        y1 = y0 + PANEL_H
        vals = np.concatenate([np.asarray(table[c], dtype=float) for c in columns])
        vals = vals[np.isfinite(vals)]
        lo, hi = (float(vals.min()), float(vals.max())) if len(vals) else (0.0, 1.0)
        if hi - lo < 1e-9:
            lo, hi = lo - 1.0, hi + 1.0
        out.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{PANEL_H}" '
                   f'fill="none" stroke="#cccccc"/>')
        out.append(f'<text x="{x0 - 5}" y="{y0 + 10}" text-anchor="end">{hi:.4g}</text>')
        out.append(f'<text x="{x0 - 5}" y="{y1}" text-anchor="end">{lo:.4g}</text>')
        out.append(f'<text x="{x0 + 5}" y="{y0 - 5}">{escape(label)}</text>')
        for c in columns:
            colour, dash, _ = _style(c)
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            for pts in _polyline(t, np.asarray(table[c], dtype=float), x0, x1, y0, y1,
                                 tspan, (lo, hi)):
                out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2"'
                           f'{extra} points="{pts}"/>')
    # legend and time axis
    ly = height - 12
    out.append(f'<text x="{x0}" y="{ly}">time [s]: {tspan[0]:.0f} to {tspan[1]:.0f}</text>')
    lx = x0 + 220
    for key in ("ref", "node", "base", "sel_alt"):
        colour, dash, name = STYLE[key]
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"{extra}/>')
        out.append(f'<text x="{lx + 25}" y="{ly}">{name}</text>')
        lx += 140
    out.append("</svg>")
    return "\n".join(out) + "\n"
