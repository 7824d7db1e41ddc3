"""Analytic potential surfaces available as contour-figure overlays.

The simulation outputs only carry the scanned exponent values; the potential
landscape drawn behind them is re-evaluated here from its closed form.
"""

from __future__ import annotations

import numpy as np


def double_well_2d(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Two-well landscape with minima at (-2, -1) and (2, 1)."""
    return 5.0 * (x2 ** 2 - 1.0) ** 2 + 1.25 * (x2 - 0.5 * x1) ** 2


SURFACES = {
    "double_well_2d": double_well_2d,
}
