import csv

import numpy as np
import pytest


def write_rows(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def fabricate(path):
    """Write a small schema-correct CSV for the given output file name."""
    name = path.name
    if name == "study.csv":
        hs = [0.2, 0.1, 0.05, 0.025]
        write_rows(path, ("h", "error", "stderr"),
                   [(h, 0.5 * h ** 1.5, 0.025 * h ** 1.5) for h in hs])
    elif name.startswith("tau_"):
        rng = np.random.default_rng(7)
        write_rows(path, ("tau",), [(v,) for v in rng.gamma(4.0, 6.0, 200)])
    elif name.startswith("series_"):
        t = np.linspace(0.0, 50.0, 26)
        write_rows(path, ("t", "mean", "stderr"),
                   zip(t, 22.5 * np.exp(-t / 9.0) + 1.0,
                       np.full(t.size, 0.05)))
    elif name.startswith("trajectory"):
        t = np.linspace(0.0, 5.0, 40)
        write_rows(path, ("t", "x1", "x2"),
                   zip(t, -2.0 * t / 5.0, -0.01 - 0.99 * t / 5.0))
    elif name == "grid.csv":
        x1 = np.linspace(-3.0, 3.0, 9)
        x2 = np.linspace(-2.0, 2.0, 7)
        rows = []
        for i, a in enumerate(x1):
            for j, b in enumerate(x2):
                e = 0.1 * (a * b) - 0.05 * (a * a + b * b)
                if i == 0 and j == 0:
                    e = float("inf")
                if i == 1 and j == 2:
                    e = float("nan")
                rows.append((a, b, e))
        write_rows(path, ("x1", "x2", "E"), rows)
    elif name in ("density.csv", "reference.csv"):
        centers = np.linspace(1.25, 29.75, 58)
        write_rows(path, ("bin_center", "density"),
                   zip(centers, 0.5 * centers ** -1.5))
    else:
        raise AssertionError(f"no fabricator for {name}")


@pytest.fixture
def root(tmp_path):
    return tmp_path
