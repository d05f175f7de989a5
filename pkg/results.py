"""
Result tables - CSV and SVG emission with provenance headers
"""
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from errors import OutputError

logger = logging.getLogger(__name__)

SVG_WIDTH = 640
SVG_HEIGHT = 400
SVG_MARGIN = 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]


@dataclass
class ResultTable:
    """A rectangular table plus the provenance lines written above it."""
    name: str
    frame: pd.DataFrame
    provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def columns(self) -> List[str]:
        return [str(c) for c in self.frame.columns]

    def __len__(self) -> int:
        return len(self.frame)


def provenance(command: str, cfg_hash: str, seed: Optional[int], **extra) -> Dict[str, str]:
    header = {
        "tool": "msrds",
        "version": config.VERSION,
        "command": command,
        "config_hash": cfg_hash,
        "seed": "none" if seed is None else str(seed),
    }
    header.update({key: _format_cell(value) for key, value in extra.items()})
    return header


def _format_cell(value) -> str:
    """Shortest round-trip decimal for floats; everything else as text."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(getattr(value, "value", value))


def emit_csv(table: ResultTable, path: Union[str, Path]) -> Path:
    """
    Write '#'-prefixed provenance lines, the header row and the rows.

    Raises:
        OutputError: the file could not be written
    """
    path = Path(path)
    body = table.frame.astype(object).apply(lambda col: col.map(_format_cell)) if len(table.frame) else table.frame
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            for key, value in table.provenance.items():
                f.write(f"# {key}: {value}\n")
            if len(table.frame):
                body.to_csv(f, index=False, lineterminator="\n")
            else:
                f.write(",".join(table.columns) + "\n")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info("[output] wrote %s (%d rows)", path, len(table))
    return path


def load_table(path: Union[str, Path], name: Optional[str] = None) -> ResultTable:
    """Parse a CSV written by emit_csv back into a ResultTable."""
    path = Path(path)
    header: Dict[str, str] = {}
    body_lines = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") and not body_lines:
                key, _, value = line[1:].strip().partition(": ")
                header[key] = value
            else:
                body_lines.append(line)
    frame = pd.read_csv(io.StringIO("".join(body_lines)), float_precision="round_trip")
    return ResultTable(name=name or path.stem, frame=frame, provenance=header)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

class _Axes:
    """Maps data coordinates onto the plotting box."""

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(values: Sequence[float]) -> Tuple[float, float]:
        finite = [v for v in values if math.isfinite(v)]
        if not finite:
            return 0.0, 1.0
        lo, hi = min(finite), max(finite)
        if hi - lo < 1e-12:
            pad = max(abs(lo), 1.0) * 0.05
            return lo - pad, hi + pad
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    def px(self, x: float) -> float:
        return SVG_MARGIN + (x - self.x0) / (self.x1 - self.x0) * (SVG_WIDTH - 2 * SVG_MARGIN)

    def py(self, y: float) -> float:
        return SVG_HEIGHT - SVG_MARGIN - (y - self.y0) / (self.y1 - self.y0) * (SVG_HEIGHT - 2 * SVG_MARGIN)


def _svg_document(title: str, x_label: str, y_label: str, axes: _Axes, body: List[str],
                  legend: List[Tuple[str, str]]) -> str:
    left, right = SVG_MARGIN, SVG_WIDTH - SVG_MARGIN
    top, bottom = SVG_MARGIN, SVG_HEIGHT - SVG_MARGIN
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2:.3f}" y="24.000" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{_escape(title)}</text>',
        f'<line x1="{left:.3f}" y1="{bottom:.3f}" x2="{right:.3f}" y2="{bottom:.3f}" stroke="black"/>',
        f'<line x1="{left:.3f}" y1="{top:.3f}" x2="{left:.3f}" y2="{bottom:.3f}" stroke="black"/>',
        f'<text x="{left:.3f}" y="{bottom + 16:.3f}" font-family="sans-serif" font-size="10">{axes.x0:.4g}</text>',
        f'<text x="{right:.3f}" y="{bottom + 16:.3f}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{axes.x1:.4g}</text>',
        f'<text x="{left - 4:.3f}" y="{bottom:.3f}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{axes.y0:.4g}</text>',
        f'<text x="{left - 4:.3f}" y="{top + 8:.3f}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{axes.y1:.4g}</text>',
        f'<text x="{SVG_WIDTH / 2:.3f}" y="{SVG_HEIGHT - 12:.3f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{_escape(x_label)}</text>',
        f'<text x="16.000" y="{SVG_HEIGHT / 2:.3f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16.000 {SVG_HEIGHT / 2:.3f})">{_escape(y_label)}</text>',
    ]
    lines.extend(body)
    for k, (label, color) in enumerate(legend):
        y = top + 14 * k
        lines.append(f'<rect x="{right - 110:.3f}" y="{y:.3f}" width="10" height="10" fill="{color}"/>')
        lines.append(f'<text x="{right - 96:.3f}" y="{y + 9:.3f}" font-family="sans-serif" '
                     f'font-size="10">{_escape(label)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _polyline(axes: _Axes, points: List[Tuple[float, float]], color: str, markers: bool) -> List[str]:
    points = [(x, y) for x, y in points if math.isfinite(x) and math.isfinite(y)]
    coords = " ".join(f"{axes.px(x):.3f},{axes.py(y):.3f}" for x, y in points)
    out = [f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>']
    if markers:
        out += [f'<circle cx="{axes.px(x):.3f}" cy="{axes.py(y):.3f}" r="3" fill="{color}"/>' for x, y in points]
    return out


def render_svg(table: ResultTable, x: str, ys: Sequence[str], group_by: Optional[str] = None,
               title: Optional[str] = None, markers: bool = False) -> str:
    """
    Line plot of the table: one polyline per y column, or, with group_by,
    one polyline of ys[0] per distinct group value (first-appearance order).
    """
    frame = table.frame
    xs = [float(v) for v in frame[x]] if len(frame) else []
    all_y = [float(v) for col in ys for v in frame[col]] if len(frame) else []
    axes = _Axes(xs, all_y)
    body: List[str] = []
    legend: List[Tuple[str, str]] = []
    if group_by is not None:
        labels = frame[group_by].map(_format_cell)
        groups = list(dict.fromkeys(labels))
        for k, group in enumerate(groups):
            rows = frame[labels == group]
            color = PALETTE[k % len(PALETTE)]
            body += _polyline(axes, list(zip(rows[x].astype(float), rows[ys[0]].astype(float))), color, markers)
            legend.append((group, color))
    else:
        for k, col in enumerate(ys):
            color = PALETTE[k % len(PALETTE)]
            body += _polyline(axes, list(zip(frame[x].astype(float), frame[col].astype(float))), color, markers)
            legend.append((col, color))
    return _svg_document(title or table.name, x, ys[0] if len(ys) == 1 else "value", axes, body, legend)


def render_interval_svg(table: ResultTable, lower: str = "lower", upper: str = "upper",
                        title: Optional[str] = None) -> str:
    """Spectral intervals on one axis; point intervals show as zero-length lines with markers."""
    frame = table.frame
    values = [float(v) for col in (lower, upper) for v in frame[col]] if len(frame) else []
    axes = _Axes(values, [0.0])
    body: List[str] = []
    for k, (lo, hi) in enumerate(zip(frame[lower].astype(float), frame[upper].astype(float))):
        body += _polyline(axes, [(lo, 0.0), (hi, 0.0)], PALETTE[k % len(PALETTE)], markers=True)
    return _svg_document(title or table.name, "growth rate", "", axes, body, [])


def emit_svg(document: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(document)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info("[output] wrote %s", path)
    return path


def emit(table: ResultTable, fmt: str, path: Union[str, Path], plot: Optional[Dict] = None) -> Path:
    """
    Write one table in one format.

    Args:
        table: The table
        fmt: "csv" or "svg"
        path: Target file
        plot: For svg, either {"intervals": True} or render_svg keyword arguments
    """
    if fmt == "csv":
        return emit_csv(table, path)
    if fmt == "svg":
        plot = dict(plot or {})
        if plot.pop("intervals", False):
            return emit_svg(render_interval_svg(table, **plot), path)
        return emit_svg(render_svg(table, **plot), path)
    raise ValueError(f"unknown output format '{fmt}'")
