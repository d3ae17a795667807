"""Render plot specs to SVG panels.

The renderer draws CSV columns exactly as parsed: no resampling,
smoothing, or unit changes. Styling is pinned (figure size, fonts, hash
salt, scrubbed timestamps) so rendering the same trace twice yields
byte-identical files.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .plotspec import PanelSpec, PlotSpec, PlotSpecError  # noqa: E402

__all__ = ["load_table", "build_panel", "render"]

log = logging.getLogger(__name__)

_STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "masim-plots",
    "svg.fonttype": "none",
}


def load_table(path: Path) -> dict[str, np.ndarray]:
    """Parse one trace CSV into float columns; empty cells become NaN."""
    if not path.exists():
        raise PlotSpecError(f"trace file {path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PlotSpecError(f"trace file {path} has no header") from None
        rows = list(reader)
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        values = [float(r[j]) if r[j] != "" else math.nan for r in rows]
        columns[name] = np.asarray(values, dtype=float)
    return columns


def _column(table: dict[str, np.ndarray], name: str,
            file: str) -> np.ndarray:
    if name not in table:
        raise PlotSpecError(
            f"column {name!r} not present in {file}; available columns: "
            + ", ".join(table))
    return table[name]


def build_panel(panel: PanelSpec, trace_dir: Path):
    """Build the figure for one panel, or None for an all-empty panel."""
    tables = {}
    n_points = 0
    for s in panel.series:
        if s.file not in tables:
            tables[s.file] = load_table(trace_dir / s.file)
        _column(tables[s.file], panel.x, s.file)
        n_points += _column(tables[s.file], s.column, s.file).size
    if n_points == 0:
        log.warning("panel %r has no data rows; skipping", panel.output)
        return None

    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for s in panel.series:
            table = tables[s.file]
            ax.plot(table[panel.x], table[s.column], label=s.label)
        for marker in panel.markers:
            ax.axvline(marker.at, color="0.4", linestyle="--",
                       linewidth=0.9,
                       label=marker.label or None)
        if panel.title:
            ax.set_title(panel.title)
        if panel.xlabel:
            ax.set_xlabel(panel.xlabel)
        if panel.ylabel:
            ax.set_ylabel(panel.ylabel)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
    return fig


def render(spec: PlotSpec, out_dir: str | Path,
           trace_dir: str | Path = ".") -> list[Path]:
    """Render every panel of the spec; returns the image paths written."""
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for panel in spec.panels:
        fig = build_panel(panel, Path(trace_dir))
        if fig is None:
            continue
        target = out_root / panel.output
        target.parent.mkdir(parents=True, exist_ok=True)
        # fixed hash salt and scrubbed date keep repeated renders
        # byte-identical; both are read at save time
        with plt.rc_context(_STYLE):
            fig.savefig(target, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(target)
    return written
