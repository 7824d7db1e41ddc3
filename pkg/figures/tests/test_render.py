import numpy as np
import pytest

from metrodiff_figures import FigureError, FigureSpec, InputSpec, make_figure
from metrodiff_figures.render import read_table

from conftest import fabricate, write_rows


def svg_of(spec, root):
    out = make_figure(spec, root=root)
    text = out.read_text(encoding="utf-8")
    assert text.startswith("<?xml")
    assert "</svg>" in text
    return text


class TestReadTable:
    def test_reads_header_and_rows(self, root):
        p = root / "a.csv"
        write_rows(p, ("h", "error", "stderr"), [(0.1, 0.2, 0.3)])
        header, data = read_table(p)
        assert header == ("h", "error", "stderr")
        assert data.shape == (1, 3)

    def test_missing_file(self, root):
        with pytest.raises(FigureError, match="missing input"):
            read_table(root / "absent.csv")

    def test_zero_byte_file(self, root):
        p = root / "a.csv"
        p.write_text("")
        with pytest.raises(FigureError, match="is empty"):
            read_table(p)

    def test_header_without_rows(self, root):
        p = root / "a.csv"
        p.write_text("h,error,stderr\n")
        with pytest.raises(FigureError, match="no data rows"):
            read_table(p)

    def test_non_numeric_cells(self, root):
        p = root / "a.csv"
        p.write_text("h,error\n0.1,oops\n")
        with pytest.raises(FigureError, match="non-numeric"):
            read_table(p)

    def test_ragged_rows(self, root):
        p = root / "a.csv"
        p.write_text("h,error\n0.1,0.2\n0.3\n")
        with pytest.raises(FigureError, match="ragged|non-numeric"):
            read_table(p)


class TestLoglog:
    def spec(self, n=1, slopes=(1.5,)):
        inputs = tuple(InputSpec(f"in{i}.csv", f"run {i}") for i in range(n))
        return FigureSpec(kind="loglog", output="fig/ll.svg", inputs=inputs,
                          reference={"slopes": list(slopes)})

    def test_renders_with_guides(self, root):
        for i in range(2):
            write_rows(root / f"in{i}.csv", ("h", "error", "stderr"),
                       [(h, (i + 1) * h ** 1.5, 0.01) for h in
                        (0.2, 0.1, 0.05)])
        svg_of(self.spec(n=2, slopes=(1.5, 0.5)), root)

    def test_wrong_schema(self, root):
        write_rows(root / "in0.csv", ("t", "mean", "stderr"), [(0, 1, 2)])
        with pytest.raises(FigureError, match="expected a step-size/error"):
            make_figure(self.spec(), root=root)

    def test_nonpositive_error_rejected(self, root):
        write_rows(root / "in0.csv", ("h", "error", "stderr"),
                   [(0.1, 0.0, 0.01)])
        with pytest.raises(FigureError, match="positive"):
            make_figure(self.spec(), root=root)


class TestDensity:
    def test_binned_with_reference(self, root):
        fabricate(root / "density.csv")
        fabricate(root / "reference.csv")
        spec = FigureSpec(kind="density", output="fig/d.svg",
                          inputs=(InputSpec("density.csv", "sampled"),),
                          reference={"path": "reference.csv",
                                     "label": "exact"},
                          axes={"xscale": "log", "yscale": "log"})
        svg_of(spec, root)

    def test_raw_samples_histogrammed(self, root):
        fabricate(root / "tau_h0.1.csv")
        spec = FigureSpec(kind="density", output="fig/d.svg",
                          inputs=(InputSpec("tau_h0.1.csv", "samples"),),
                          bins=17)
        svg_of(spec, root)

    def test_reference_schema_checked(self, root):
        fabricate(root / "density.csv")
        write_rows(root / "reference.csv", ("h", "error"), [(1, 2)])
        spec = FigureSpec(kind="density", output="fig/d.svg",
                          inputs=(InputSpec("density.csv"),),
                          reference={"path": "reference.csv"})
        with pytest.raises(FigureError, match="binned density"):
            make_figure(spec, root=root)


class TestTimeseries:
    def test_mean_band(self, root):
        fabricate(root / "series_mean_coord.csv")
        spec = FigureSpec(kind="timeseries", output="fig/t.svg",
                          inputs=(InputSpec("series_mean_coord.csv", "m"),))
        svg_of(spec, root)

    def test_coordinate_columns(self, root):
        fabricate(root / "trajectory.csv")
        spec = FigureSpec(kind="timeseries", output="fig/t.svg",
                          inputs=(InputSpec("trajectory.csv", "path"),))
        svg_of(spec, root)

    def test_bad_header(self, root):
        write_rows(root / "odd.csv", ("a", "b"), [(1, 2)])
        spec = FigureSpec(kind="timeseries", output="fig/t.svg",
                          inputs=(InputSpec("odd.csv"),))
        with pytest.raises(FigureError, match="expected a time series"):
            make_figure(spec, root=root)


class TestContour:
    def spec(self, **kw):
        base = dict(kind="contour", output="fig/c.svg",
                    inputs=(InputSpec("grid.csv", "grid"),))
        base.update(kw)
        return FigureSpec(**base)

    def test_grid_with_non_finite_cells(self, root):
        fabricate(root / "grid.csv")
        svg_of(self.spec(), root)

    def test_surface_and_overlays(self, root):
        fabricate(root / "grid.csv")
        fabricate(root / "trajectory.csv")
        spec = self.spec(reference={"surface": "double_well_2d"},
                         overlays=(InputSpec("trajectory.csv", "descent"),))
        svg_of(spec, root)

    def test_unknown_surface(self, root):
        fabricate(root / "grid.csv")
        spec = self.spec(reference={"surface": "volcano"})
        with pytest.raises(FigureError, match="unknown reference surface"):
            make_figure(spec, root=root)

    def test_exactly_one_input(self, root):
        fabricate(root / "grid.csv")
        spec = self.spec(inputs=(InputSpec("grid.csv"),
                                 InputSpec("grid.csv")))
        with pytest.raises(FigureError, match="exactly one"):
            make_figure(spec, root=root)

    def test_incomplete_grid(self, root):
        write_rows(root / "grid.csv", ("x1", "x2", "E"),
                   [(0, 0, 1), (0, 1, 2), (1, 0, 3)])
        with pytest.raises(FigureError, match="full x1/x2 grid"):
            make_figure(self.spec(), root=root)

    def test_overlay_needs_two_coordinates(self, root):
        fabricate(root / "grid.csv")
        write_rows(root / "trajectory.csv", ("t", "x1"), [(0, 1), (1, 2)])
        spec = self.spec(overlays=(InputSpec("trajectory.csv"),))
        with pytest.raises(FigureError, match="overlays need"):
            make_figure(spec, root=root)

    def test_grid_reconstruction_order_independent(self, root):
        rows = [(a, b, a + 10 * b) for a in (0.0, 1.0, 2.0)
                for b in (0.0, 0.5)]
        rng = np.random.default_rng(3)
        rng.shuffle(rows)
        write_rows(root / "grid.csv", ("x1", "x2", "E"), rows)
        svg_of(self.spec(), root)


class TestByteIdempotence:
    def test_same_inputs_same_bytes(self, root):
        fabricate(root / "study.csv")
        spec = FigureSpec(kind="loglog", output="fig/a.svg",
                          inputs=(InputSpec("study.csv", "run"),),
                          reference={"slopes": [1.5]})
        first = make_figure(spec, root=root).read_bytes()
        second = make_figure(spec, root=root).read_bytes()
        assert first == second

    def test_output_directories_created(self, root):
        fabricate(root / "study.csv")
        spec = FigureSpec(kind="loglog", output="deep/nested/fig.svg",
                          inputs=(InputSpec("study.csv"),))
        out = make_figure(spec, root=root)
        assert out == root / "deep" / "nested" / "fig.svg"
        assert out.exists()
