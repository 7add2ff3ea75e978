"""SVG rendering of left/right hand trajectories (full and sampled side by side)."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np

PANEL_W = 320
PANEL_H = 240
MARGIN = 30
STYLES = {
    "left": {"stroke": "#1f77b4", "stroke-dasharray": "none"},
    "right": {"stroke": "#d62728", "stroke-dasharray": "6,3"},
}


def _runs(valid: np.ndarray) -> list[tuple[int, int]]:
    """Maximal ``[start, stop)`` runs of True."""
    runs, start = [], None
    for i, v in enumerate(valid):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(valid)))
    return runs


def _panel(root: ET.Element, name: str, coords: np.ndarray, x0: float, title: str) -> None:
    g = ET.SubElement(root, "g", {"id": name, "transform": f"translate({x0},{MARGIN})"})
    ET.SubElement(
        g, "rect", {"x": "0", "y": "0", "width": str(PANEL_W), "height": str(PANEL_H), "fill": "none", "stroke": "#444"}
    )
    for frac in (0.0, 0.5, 1.0):
        ET.SubElement(g, "text", {"x": f"{frac * PANEL_W:g}", "y": str(PANEL_H + 14), "font-size": "10"}).text = f"{frac:g}"
        ET.SubElement(g, "text", {"x": "-24", "y": f"{frac * PANEL_H + 4:g}", "font-size": "10"}).text = f"{frac:g}"
    ET.SubElement(g, "text", {"x": "0", "y": "-8", "font-size": "12"}).text = title
    for side, cols in (("left", slice(0, 2)), ("right", slice(2, 4))):
        xy = coords[:, cols]
        # sentinel positions sit below the frame (y > 1)
        valid = (xy[:, 1] <= 1.0) if len(xy) else np.zeros(0, dtype=bool)
        style = STYLES[side]
        for a, b in _runs(valid):
            pts = " ".join(f"{x * PANEL_W:.2f},{y * PANEL_H:.2f}" for x, y in xy[a:b])
            ET.SubElement(
                g,
                "polyline",
                {
                    "class": side,
                    "points": pts,
                    "fill": "none",
                    "stroke": style["stroke"],
                    "stroke-dasharray": style["stroke-dasharray"],
                    "stroke-width": "1.5",
                },
            )
        for x, y in xy[valid]:
            ET.SubElement(
                g,
                "circle",
                {"class": side, "cx": f"{x * PANEL_W:.2f}", "cy": f"{y * PANEL_H:.2f}", "r": "1.8", "fill": style["stroke"]},
            )


def render_svg(full: np.ndarray, sampled: Optional[np.ndarray] = None, title: str = "") -> str:
    """Render ``T x 4`` hand coordinates ``(Lx, Ly, Rx, Ry)`` as an SVG document.

    Frames where a hand is at its sentinel are left out of the polylines,
    breaking them into separate runs.
    """
    full = np.asarray(full, dtype=float).reshape(-1, 4)
    panels = 1 if sampled is None else 2
    width = panels * (PANEL_W + 2 * MARGIN)
    height = PANEL_H + 2 * MARGIN + 10
    root = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "version": "1.1",
            "width": str(width),
            "height": str(height),
            "viewBox": f"0 0 {width} {height}",
        },
    )
    if title:
        ET.SubElement(root, "title").text = title
    _panel(root, "full", full, MARGIN, f"full ({len(full)} steps)")
    if sampled is not None:
        sampled = np.asarray(sampled, dtype=float).reshape(-1, 4)
        _panel(root, "sampled", sampled, PANEL_W + 3 * MARGIN, f"sampled ({len(sampled)} steps)")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"
