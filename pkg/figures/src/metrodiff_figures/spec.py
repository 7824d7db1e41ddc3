"""Figure spec files: a TOML description of one figure.

Layout::

    [figure]
    kind = "loglog"            # loglog | density | contour | timeseries
    output = "fig/name.svg"
    title = "..."              # optional; also xlabel / ylabel
    xscale = "log"             # optional (density/timeseries axes)
    yscale = "log"
    bins = 40                  # optional (density of raw samples)

    [[input]]
    path = "out/experiment/study.csv"
    label = "staged drift"

    [[overlay]]                # contour only: trajectories drawn on top
    path = "out/experiment/trajectory.csv"
    label = "one-stage"

    [reference]                # kind-specific, all optional
    slopes = [1.5, 0.5]        # loglog: dashed O(h^p) guide lines
    path = "out/.../reference.csv"   # density: analytic curve, with `label`
    surface = "double_well_2d" # contour: potential contours to overlay

Paths are resolved against a root directory chosen at render time, so spec
files are relocatable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

KINDS = ("loglog", "density", "contour", "timeseries")

AXIS_KEYS = ("title", "xlabel", "ylabel", "xscale", "yscale")


class FigureError(Exception):
    """Anything that prevents rendering: bad spec, missing or odd-schema CSV."""


@dataclass(frozen=True)
class InputSpec:
    path: str
    label: str = ""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    output: str
    inputs: tuple = ()
    overlays: tuple = ()
    reference: dict = field(default_factory=dict)
    axes: dict = field(default_factory=dict)
    bins: int = 30


def _entry_list(raw, name) -> tuple:
    if not isinstance(raw, list):
        raise FigureError(f"[[{name}]] must be an array of tables")
    entries = []
    for item in raw:
        if not isinstance(item, dict) or not isinstance(item.get("path"), str):
            raise FigureError(f"every [[{name}]] needs a string `path`")
        label = item.get("label", "")
        if not isinstance(label, str):
            raise FigureError(f"[[{name}]] `label` must be a string")
        entries.append(InputSpec(path=item["path"], label=label))
    return tuple(entries)


def parse_spec(record: dict) -> FigureSpec:
    fig = record.get("figure")
    if not isinstance(fig, dict):
        raise FigureError("spec needs a [figure] table")
    kind = fig.get("kind")
    if kind not in KINDS:
        raise FigureError(f"figure.kind must be one of {', '.join(KINDS)}")
    output = fig.get("output")
    if not isinstance(output, str) or not output:
        raise FigureError("figure.output must be a file path")

    inputs = _entry_list(record.get("input", []), "input")
    if not inputs:
        raise FigureError("spec needs at least one [[input]]")
    overlays = _entry_list(record.get("overlay", []), "overlay")
    if overlays and kind != "contour":
        raise FigureError("[[overlay]] applies to contour figures only")

    reference = record.get("reference", {})
    if not isinstance(reference, dict):
        raise FigureError("[reference] must be a table")
    slopes = reference.get("slopes")
    if slopes is not None:
        if kind != "loglog":
            raise FigureError("reference.slopes applies to loglog figures only")
        if (not isinstance(slopes, list) or not slopes
                or any(isinstance(s, bool) or not isinstance(s, (int, float))
                       for s in slopes)):
            raise FigureError("reference.slopes must be a list of numbers")
    if "path" in reference and not isinstance(reference["path"], str):
        raise FigureError("reference.path must be a string")
    if "surface" in reference and not isinstance(reference["surface"], str):
        raise FigureError("reference.surface must be a string")

    bins = fig.get("bins", 30)
    if isinstance(bins, bool) or not isinstance(bins, int) or bins < 2:
        raise FigureError("figure.bins must be an integer >= 2")

    axes = {k: fig[k] for k in AXIS_KEYS if k in fig}
    for k, v in axes.items():
        if not isinstance(v, str):
            raise FigureError(f"figure.{k} must be a string")
    for k in ("xscale", "yscale"):
        if k in axes and axes[k] not in ("linear", "log"):
            raise FigureError(f"figure.{k} must be linear or log")

    return FigureSpec(kind=kind, output=output, inputs=inputs,
                      overlays=overlays, reference=dict(reference),
                      axes=axes, bins=bins)


def load_spec(path) -> FigureSpec:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            record = tomllib.load(f)
    except OSError as e:
        raise FigureError(f"cannot read spec {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise FigureError(f"spec {path} is not valid TOML: {e}") from None
    return parse_spec(record)
