import numpy as np
import pytest

from stfosls.cli import main


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    return header, np.array(rows)


class TestControlCLI:
    def test_levels_and_columns(self, tmp_path):
        rc = main(["run", "control-1d", "--levels", "6",
                   "--out", str(tmp_path)])
        assert rc == 0
        header, rows = read_csv(tmp_path / "control_1d.csv")
        assert header == ["ndof", "err_U", "err_Y", "err_0", "err_T",
                          "err_l2", "err_z1", "err_J", "err_p"]
        assert rows.shape == (6, 9)
        meta = (tmp_path / "control_1d.meta").read_text()
        assert "experiment=control-1d" in meta
        assert "ndof_per_level=" in meta


class TestMovingCLI:
    def test_deterministic_rerun(self, tmp_path):
        for sub in ("a", "b"):
            rc = main(["run", "moving-1d", "--levels", "4",
                       "--out", str(tmp_path / sub)])
            assert rc == 0
        _, rows_a = read_csv(tmp_path / "a" / "moving_1d.csv")
        _, rows_b = read_csv(tmp_path / "b" / "moving_1d.csv")
        assert np.max(np.abs(rows_a - rows_b)) <= 1e-9 * np.max(np.abs(rows_a))

    def test_columns(self, tmp_path):
        rc = main(["run", "moving-1d", "--levels", "2", "--out", str(tmp_path)])
        assert rc == 0
        header, rows = read_csv(tmp_path / "moving_1d.csv")
        assert header == ["ndof", "est", "err_Y", "err_0", "err_T", "err_l2"]
        assert rows.shape == (2, 6)


class TestRBCLI:
    def test_smoke_offline_then_online(self, tmp_path):
        rc = main(["run", "rb-offline", "--out", str(tmp_path),
                   "--set", "truth_n=16", "--set", "train_n=5",
                   "--eps-tol", "1e-2"])
        assert rc == 0
        header, rows = read_csv(tmp_path / "rb_offline.csv")
        assert header == ["N", "maxtrain"]
        assert rows[-1, 1] <= 1e-2
        assert (tmp_path / "rb_model" / "meta.json").exists()
        # online phase reuses the persisted model
        rc = main(["run", "rb-online", "--out", str(tmp_path),
                   "--set", "truth_n=16", "--set", "points=3"])
        assert rc == 0
        header, rows = read_csv(tmp_path / "rb_online.csv")
        assert header == ["mu1", "est_mu1", "err_mu1",
                          "mu2", "est_mu2", "err_mu2"]
        assert rows.shape == (3, 6)
        assert np.all(rows[:, 1] >= rows[:, 2] - 1e-12)


class TestSelftestCLI:
    def test_green(self, tmp_path):
        assert main(["run", "selftest", "--out", str(tmp_path)]) == 0


class TestBadInput:
    def test_unknown_experiment(self, tmp_path):
        assert main(["run", "nope", "--out", str(tmp_path)]) == 2

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg"
        cfg.write_text("levels=3\n# comment\n")
        rc = main(["run", "moving-1d", "--config", str(cfg),
                   "--out", str(tmp_path)])
        assert rc == 0
        _, rows = read_csv(tmp_path / "moving_1d.csv")
        assert rows.shape[0] == 3
