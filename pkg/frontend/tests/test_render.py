from pathlib import Path

import numpy as np
import pytest

from figures import (ALL_PRESETS, Curve, FigureError, FigureSpec,
                     build_preset, least_squares_slope, render,
                     two_point_slope)
from figures.cli import main

DATA = Path(__file__).parent / "data"


class TestRenderPresets:
    @pytest.mark.parametrize("name", ALL_PRESETS)
    def test_preset_renders(self, name, tmp_path):
        spec = build_preset(name, results=DATA, outdir=tmp_path)
        slopes = render(spec)
        assert Path(spec.output).exists()
        for value in slopes.values():
            assert np.isfinite(value)

    def test_cli_all(self, tmp_path):
        rc = main(["preset", "all", "--results", str(DATA),
                   "--out", str(tmp_path)])
        assert rc == 0
        assert len(list(tmp_path.glob("*.png"))) == 6


class TestSlopePrinting:
    def test_two_row_csv_slope_matches_two_point_ratio(self, tmp_path,
                                                       capsys):
        # on exactly two rows the least-squares fit IS the two-point ratio
        csv = tmp_path / "two.csv"
        csv.write_text("ndof,err\n100,0.5\n400,0.25\n")
        spec = FigureSpec(csv=str(csv),
                          curves=[Curve(x="ndof", y="err", label="err")],
                          output=str(tmp_path / "two.png"))
        slopes = render(spec)
        cols = {"x": np.array([100.0, 400.0]), "y": np.array([0.5, 0.25])}
        ref = two_point_slope(cols["x"], cols["y"])
        assert abs(slopes["err"] - ref) <= 1e-10
        out = capsys.readouterr().out
        assert "slope err:" in out

    def test_fit_tail_restricts_rows(self, tmp_path):
        csv = tmp_path / "t.csv"
        # first row off-trend; last two rows on slope -1
        csv.write_text("ndof,err\n10,1.0\n100,0.1\n1000,0.01\n")
        spec = FigureSpec(csv=str(csv),
                          curves=[Curve(x="ndof", y="err", label="e")],
                          output=str(tmp_path / "t.png"), fit_tail=2)
        slopes = render(spec)
        assert slopes["e"] == pytest.approx(-1.0, abs=1e-12)


class TestErrors:
    def test_missing_column_named_in_error(self, tmp_path):
        csv = tmp_path / "bad.csv"
        csv.write_text("ndof,err\n10,1.0\n100,0.1\n")
        spec = FigureSpec(csv=str(csv),
                          curves=[Curve(x="ndof", y="nonexistent")],
                          output=str(tmp_path / "bad.png"))
        with pytest.raises(FigureError, match="nonexistent"):
            render(spec)
        assert not (tmp_path / "bad.png").exists()

    def test_empty_csv_rejected_without_output(self, tmp_path):
        csv = tmp_path / "empty.csv"
        csv.write_text("ndof,err\n")
        spec = FigureSpec(csv=str(csv),
                          curves=[Curve(x="ndof", y="err")],
                          output=str(tmp_path / "empty.png"))
        with pytest.raises(FigureError):
            render(spec)
        assert not (tmp_path / "empty.png").exists()

    def test_cli_reports_failure(self, tmp_path):
        rc = main(["preset", "control-1d", "--results", str(tmp_path),
                   "--out", str(tmp_path)])
        assert rc == 1


class TestSpecFile:
    def test_render_from_json(self, tmp_path):
        import json
        spec = {
            "csv": str(DATA / "moving_1d.csv"),
            "curves": [{"x": "ndof", "y": "est", "label": "estimator"}],
            "output": str(tmp_path / "from_json.png"),
            "triangles": [-0.5],
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        rc = main(["render", "--spec", str(path)])
        assert rc == 0
        assert (tmp_path / "from_json.png").exists()


@pytest.mark.slow
class TestFreshRegeneration:
    def test_fresh_csvs_end_to_end(self, tmp_path):
        """Regenerate small fresh CSVs through the solver CLI and render all
        six figures; printed slopes must match an independent fit of the
        same rows."""
        solver = pytest.importorskip("stfosls.cli")
        results = tmp_path / "results"
        assert solver.main(["run", "control-1d", "--levels", "5",
                            "--out", str(results)]) == 0
        assert solver.main(["run", "control-2d", "--levels", "3",
                            "--out", str(results)]) == 0
        assert solver.main(["run", "moving-1d", "--levels", "5",
                            "--out", str(results)]) == 0
        assert solver.main(["run", "moving-2d", "--levels", "3",
                            "--out", str(results)]) == 0
        assert solver.main(["run", "rb-offline", "--out", str(results),
                            "--set", "truth_n=16", "--set", "train_n=5",
                            "--eps-tol", "1e-2"]) == 0
        assert solver.main(["run", "rb-online", "--out", str(results),
                            "--set", "truth_n=16", "--set", "points=5"]) == 0
        from figures.core import read_csv
        for name in ALL_PRESETS:
            spec = build_preset(name, results=results, outdir=tmp_path)
            slopes = render(spec)
            assert Path(spec.output).exists()
            for curve in spec.curves:
                if curve.label not in slopes:
                    continue
                cols = read_csv(curve.csv or spec.csv)
                sel = slice(-spec.fit_tail, None) if spec.fit_tail else \
                    slice(None)
                ref = least_squares_slope(cols[curve.x][sel],
                                          cols[curve.y][sel])
                assert abs(slopes[curve.label] - ref) <= 1e-12
