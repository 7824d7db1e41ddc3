"""Static figures from metrodiff experiment CSV outputs.

This package is deliberately decoupled from the simulation library: its only
interface is the CSV files an experiment run leaves behind.  A figure is
described by a small TOML spec (inputs, plot kind, reference descriptor,
output path) and rendered to SVG with embedded timestamps disabled, so
regenerating a figure from the same inputs reproduces the same bytes.
"""

from .spec import FigureError, FigureSpec, InputSpec, load_spec
from .render import make_figure

__all__ = ["FigureError", "FigureSpec", "InputSpec", "load_spec",
           "make_figure"]

__version__ = "0.1.0"
