"""Vector-figure rendering for simulator trace CSVs.

This package consumes the CSV files the simulator writes and turns them
into SVG panels described by small TOML plot specs. It never imports the
simulator: the CSV column schema is the only contract between the two.
"""
from .plotspec import (MarkerSpec, PanelSpec, PlotSpec, PlotSpecError,
                       SeriesSpec, load_spec, packaged_specs)
from .render import load_table, render

__all__ = [
    "MarkerSpec",
    "PanelSpec",
    "PlotSpec",
    "PlotSpecError",
    "SeriesSpec",
    "load_spec",
    "load_table",
    "packaged_specs",
    "render",
]
