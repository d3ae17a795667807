"""Plot specification files.

A spec is a TOML document describing one or more panels. Every panel
renders to its own vector image and draws columns from simulator trace
CSVs:

    title = "baseline run"

    [[panel]]
    output = "states.svg"
    title = "first state component"
    x = "t"
    xlabel = "time [s]"
    ylabel = "x1"

        [[panel.series]]
        file = "trace_agent0.csv"
        column = "x1"
        label = "leader"

        [[panel.marker]]
        at = 10.0
        label = "attack onset"

Series file paths are resolved against the trace directory passed at
render time, so one shipped spec works for any run of the matching
scenario.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

__all__ = [
    "PlotSpecError",
    "SeriesSpec",
    "MarkerSpec",
    "PanelSpec",
    "PlotSpec",
    "load_spec",
    "packaged_specs",
]


class PlotSpecError(Exception):
    """Raised for malformed specs, unknown columns, or missing traces."""


@dataclass(frozen=True)
class SeriesSpec:
    file: str
    column: str
    label: str


@dataclass(frozen=True)
class MarkerSpec:
    at: float
    label: str = ""


@dataclass(frozen=True)
class PanelSpec:
    output: str
    x: str
    series: tuple[SeriesSpec, ...]
    markers: tuple[MarkerSpec, ...] = ()
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""


@dataclass(frozen=True)
class PlotSpec:
    title: str
    panels: tuple[PanelSpec, ...]


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise PlotSpecError(f"{where} is missing required key {key!r}")
    return table[key]


def _build_series(table: dict, where: str) -> SeriesSpec:
    if not isinstance(table, dict):
        raise PlotSpecError(f"{where} must be a table")
    file = _require(table, "file", where)
    column = _require(table, "column", where)
    if not isinstance(file, str) or not isinstance(column, str):
        raise PlotSpecError(f"{where}: file and column must be strings")
    label = table.get("label", f"{Path(file).stem}.{column}")
    unknown = set(table) - {"file", "column", "label"}
    if unknown:
        raise PlotSpecError(f"{where} has unknown keys {sorted(unknown)}")
    return SeriesSpec(file=file, column=column, label=str(label))


def _build_marker(table: dict, where: str) -> MarkerSpec:
    if not isinstance(table, dict):
        raise PlotSpecError(f"{where} must be a table")
    at = _require(table, "at", where)
    if not isinstance(at, (int, float)) or isinstance(at, bool):
        raise PlotSpecError(f"{where}: 'at' must be a number")
    unknown = set(table) - {"at", "label"}
    if unknown:
        raise PlotSpecError(f"{where} has unknown keys {sorted(unknown)}")
    return MarkerSpec(at=float(at), label=str(table.get("label", "")))


def _build_panel(table: dict, index: int) -> PanelSpec:
    where = f"panel {index}"
    if not isinstance(table, dict):
        raise PlotSpecError(f"{where} must be a table")
    output = _require(table, "output", where)
    if not isinstance(output, str) or not output:
        raise PlotSpecError(f"{where}: output must be a non-empty string")
    if Path(output).is_absolute():
        raise PlotSpecError(f"{where}: output must be a relative path")
    raw_series = table.get("series", [])
    if not isinstance(raw_series, list) or not raw_series:
        raise PlotSpecError(f"{where} needs at least one [[panel.series]]")
    series = tuple(_build_series(s, f"{where} series {k}")
                   for k, s in enumerate(raw_series))
    raw_markers = table.get("marker", [])
    if not isinstance(raw_markers, list):
        raise PlotSpecError(f"{where}: marker must be an array of tables")
    markers = tuple(_build_marker(m, f"{where} marker {k}")
                    for k, m in enumerate(raw_markers))
    unknown = set(table) - {"output", "x", "series", "marker", "title",
                            "xlabel", "ylabel"}
    if unknown:
        raise PlotSpecError(f"{where} has unknown keys {sorted(unknown)}")
    return PanelSpec(output=output,
                     x=str(table.get("x", "t")),
                     series=series,
                     markers=markers,
                     title=str(table.get("title", "")),
                     xlabel=str(table.get("xlabel", "")),
                     ylabel=str(table.get("ylabel", "")))


def parse_spec(text: str) -> PlotSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise PlotSpecError(f"spec is not valid TOML: {exc}") from exc
    panels = doc.get("panel", [])
    if not isinstance(panels, list) or not panels:
        raise PlotSpecError("spec needs at least one [[panel]]")
    unknown = set(doc) - {"title", "panel"}
    if unknown:
        raise PlotSpecError(f"spec has unknown root keys {sorted(unknown)}")
    built = tuple(_build_panel(p, k) for k, p in enumerate(panels))
    outputs = [p.output for p in built]
    if len(set(outputs)) != len(outputs):
        raise PlotSpecError("panel output paths must be distinct")
    return PlotSpec(title=str(doc.get("title", "")), panels=built)


def packaged_specs() -> tuple[str, ...]:
    """Names of the plot specs shipped with the package."""
    root = resources.files("masim_plots") / "specs"
    return tuple(sorted(p.name.removesuffix(".toml")
                        for p in root.iterdir() if p.name.endswith(".toml")))


def load_spec(source: str | Path) -> PlotSpec:
    """Load a spec from a file path or a packaged spec name."""
    path = Path(source)
    if path.suffix == ".toml" and path.exists():
        return parse_spec(path.read_text())
    packaged = resources.files("masim_plots") / "specs" / f"{source}.toml"
    if packaged.is_file():
        return parse_spec(packaged.read_text())
    if path.suffix == ".toml":
        raise PlotSpecError(f"spec file {source} does not exist")
    raise PlotSpecError(
        f"{source!r} is neither a spec file nor one of the packaged specs "
        f"{list(packaged_specs())}")
