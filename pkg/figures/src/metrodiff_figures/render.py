"""Render one FigureSpec to an SVG file.

CSV inputs are read-only; regenerating a figure from the same inputs writes
the same bytes (the SVG id hash salt is pinned and the embedded creation
date is disabled).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .spec import FigureError, FigureSpec  # noqa: E402
from .surfaces import SURFACES  # noqa: E402

HASH_SALT = "metrodiff-figures"

# Schemas by leading header columns; a table with extra trailing columns
# still matches (a trajectory CSV has one t column then one per coordinate).
STUDY_HEADER = ("h", "error", "stderr")
SERIES_HEADER = ("t", "mean", "stderr")
BINNED_HEADER = ("bin_center", "density")
GRID_HEADER = ("x1", "x2", "E")


def read_table(path: Path) -> tuple:
    """Read a numeric CSV with a header row; returns (header, 2D array)."""
    if not path.exists():
        raise FigureError(f"missing input {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureError(f"{path} is empty") from None
        rows = list(reader)
    if not rows:
        raise FigureError(f"{path} has a header but no data rows")
    try:
        data = np.array([[float(v) for v in row] for row in rows])
    except ValueError:
        raise FigureError(f"{path} has non-numeric cells") from None
    if data.ndim != 2 or any(len(r) != len(header) for r in rows):
        raise FigureError(f"{path} has ragged rows")
    return tuple(header), data


def _expect(path: Path, header: tuple, leading: tuple, what: str):
    if header[:len(leading)] != leading:
        raise FigureError(
            f"{path}: expected a {what} table with columns "
            f"{', '.join(leading)}; found {', '.join(header)}")


def _apply_axes(ax, spec: FigureSpec):
    axes = spec.axes
    if "title" in axes:
        ax.set_title(axes["title"])
    if "xlabel" in axes:
        ax.set_xlabel(axes["xlabel"])
    if "ylabel" in axes:
        ax.set_ylabel(axes["ylabel"])
    if "xscale" in axes:
        ax.set_xscale(axes["xscale"])
    if "yscale" in axes:
        ax.set_yscale(axes["yscale"])


def _render_loglog(spec: FigureSpec, root: Path, ax):
    anchor = None
    for inp in spec.inputs:
        path = root / inp.path
        header, data = read_table(path)
        _expect(path, header, STUDY_HEADER[:2], "step-size/error")
        order = np.argsort(data[:, 0])
        h, err = data[order, 0], data[order, 1]
        yerr = data[order, 2] if data.shape[1] > 2 else None
        if np.any(h <= 0) or np.any(err <= 0):
            raise FigureError(f"{path}: log-log needs positive h and error")
        ax.errorbar(h, err, yerr=yerr, marker="o", capsize=2.5,
                    label=inp.label or path.stem)
        if anchor is None:
            anchor = (h[-1], err[-1])
    for p in spec.reference.get("slopes", ()):
        h0, e0 = anchor
        hs = np.array([h0 / 16.0, h0])
        ax.plot(hs, e0 * (hs / h0) ** p, "--", color="0.4", linewidth=1.0)
        ax.annotate(f"$O(h^{{{p:g}}})$", (hs[0], e0 * (hs[0] / h0) ** p),
                    textcoords="offset points", xytext=(4, -10), fontsize=9)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(spec.axes.get("xlabel", "step size h"))
    ax.set_ylabel(spec.axes.get("ylabel", "error"))
    ax.legend()


def _render_density(spec: FigureSpec, root: Path, ax):
    for inp in spec.inputs:
        path = root / inp.path
        header, data = read_table(path)
        label = inp.label or path.stem
        if len(header) == 1:
            counts, edges = np.histogram(data[:, 0], bins=spec.bins,
                                         density=True)
            ax.stairs(counts, edges, label=label)
        else:
            _expect(path, header, BINNED_HEADER, "binned density")
            ax.plot(data[:, 0], data[:, 1], drawstyle="steps-mid",
                    label=label)
    ref = spec.reference
    if "path" in ref:
        path = root / ref["path"]
        header, data = read_table(path)
        _expect(path, header, BINNED_HEADER, "binned density")
        ax.plot(data[:, 0], data[:, 1], "k--", linewidth=1.2,
                label=ref.get("label", "reference"))
    ax.set_xlabel(spec.axes.get("xlabel", "x"))
    ax.set_ylabel(spec.axes.get("ylabel", "probability density"))
    ax.legend()


def _render_timeseries(spec: FigureSpec, root: Path, ax):
    for inp in spec.inputs:
        path = root / inp.path
        header, data = read_table(path)
        label = inp.label or path.stem
        if header[:3] == SERIES_HEADER:
            t, mean, se = data[:, 0], data[:, 1], data[:, 2]
            line, = ax.plot(t, mean, label=label)
            ax.fill_between(t, mean - 2.0 * se, mean + 2.0 * se,
                            color=line.get_color(), alpha=0.25,
                            linewidth=0)
        elif header[0] == "t" and len(header) > 1:
            for j, name in enumerate(header[1:], start=1):
                suffix = f" {name}" if len(header) > 2 else ""
                ax.plot(data[:, 0], data[:, j], label=f"{label}{suffix}")
        else:
            raise FigureError(
                f"{path}: expected a time series (t, mean, stderr) or "
                f"(t, coordinates...); found {', '.join(header)}")
    ax.set_xlabel(spec.axes.get("xlabel", "t"))
    ax.set_ylabel(spec.axes.get("ylabel", "value"))
    ax.legend()


def _grid_from_rows(path: Path, data: np.ndarray) -> tuple:
    x1 = np.unique(data[:, 0])
    x2 = np.unique(data[:, 1])
    if x1.size * x2.size != data.shape[0]:
        raise FigureError(f"{path}: rows do not form a full x1/x2 grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    grid = data[order, 2].reshape(x1.size, x2.size)
    return x1, x2, grid


def _render_contour(spec: FigureSpec, root: Path, ax):
    if len(spec.inputs) != 1:
        raise FigureError("contour figures take exactly one [[input]] grid")
    path = root / spec.inputs[0].path
    header, data = read_table(path)
    _expect(path, header, GRID_HEADER, "grid")
    x1, x2, grid = _grid_from_rows(path, data)
    masked = np.ma.masked_invalid(grid)

    # Shade the region where the exponent is nonnegative (moves that the
    # accept/reject step suppresses in the small-noise limit).
    nonneg = np.ma.filled(masked >= 0.0, False).astype(float)
    ax.contourf(x1, x2, nonneg.T, levels=[0.5, 1.5], colors=["0.8"])
    if masked.count():
        lo = float(masked.min())
        if lo < 0.0:
            levels = np.linspace(lo, 0.0, 9)[:-1]
            ax.contour(x1, x2, masked.T, levels=levels, colors="C0",
                       linewidths=0.7)
        ax.contour(x1, x2, masked.T, levels=[0.0], colors="k",
                   linewidths=1.2)

    surface = spec.reference.get("surface")
    if surface is not None:
        try:
            fn = SURFACES[surface]
        except KeyError:
            raise FigureError(
                f"unknown reference surface {surface!r}; known: "
                f"{', '.join(sorted(SURFACES))}") from None
        g1, g2 = np.meshgrid(x1, x2, indexing="ij")
        u = fn(g1, g2)
        levels = np.quantile(u, np.linspace(0.02, 0.9, 8))
        ax.contour(x1, x2, u.T, levels=np.unique(levels), colors="0.5",
                   linewidths=0.6, linestyles="dotted")

    for traj in spec.overlays:
        tpath = root / traj.path
        theader, tdata = read_table(tpath)
        if theader[0] != "t" or len(theader) < 3:
            raise FigureError(
                f"{tpath}: contour overlays need (t, x1, x2) trajectories")
        ax.plot(tdata[:, 1], tdata[:, 2], linewidth=1.3,
                label=traj.label or tpath.stem)
        ax.plot(tdata[0, 1], tdata[0, 2], marker="o", color="k",
                markersize=3)
    if spec.overlays:
        ax.legend(fontsize=8)
    ax.set_xlabel(spec.axes.get("xlabel", "x1"))
    ax.set_ylabel(spec.axes.get("ylabel", "x2"))


_RENDERERS = {
    "loglog": _render_loglog,
    "density": _render_density,
    "timeseries": _render_timeseries,
    "contour": _render_contour,
}


def make_figure(spec: FigureSpec, root=".") -> Path:
    """Render the spec against CSVs under root; returns the written path."""
    root = Path(root)
    with plt.rc_context({"svg.hashsalt": HASH_SALT,
                         "figure.figsize": (6.0, 4.2)}):
        fig, ax = plt.subplots()
        try:
            _RENDERERS[spec.kind](spec, root, ax)
            if "title" in spec.axes:
                ax.set_title(spec.axes["title"])
            fig.tight_layout()
            out = root / spec.output
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return out
