import csv
import logging
import time

import pytest

from pollnet import cli, dataset, metrics, synthetic
from pollnet.ipps import POLLUTANTS

from test_bench import _linear_rows

SMOKE = """\
epochs = 5
restarts = 1
topologies = TLRN
hidden_range = 1
nodes_per_hidden = 3
memory_depth = 2
trajectory_length = 3
"""


@pytest.fixture
def rows_csv(tmp_path):
    path = tmp_path / "rows.csv"
    dataset.write_rows(path, synthetic.ipps_rows(years=range(2000, 2005), seed=5))
    return path


def _cfg(tmp_path, text, name="c.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestEstimate:
    def test_training_sample(self, fixtures_dir, tmp_path, capsys):
        out = tmp_path / "loads.csv"
        code = cli.main(["estimate", str(fixtures_dir / "sample_intensity.csv"),
                         str(fixtures_dir / "sample_activity.csv"),
                         "--config", str(fixtures_dir / "sample_scale.txt"), "--out", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            loads = list(csv.DictReader(fh))
        assert len(loads) == 9 * 8
        wwp = next(r for r in loads if (r["sector"], r["year"], r["pollutant"]) == ("WWP", "1997", "SO2"))
        assert float(wwp["load_ton_per_yr"]) == pytest.approx(324752 * 457 * 1e-6, rel=1e-12)
        assert (tmp_path / "loads_by_medium.csv").exists()

    def test_full_table(self, tmp_path):
        lines = ["sector,pollutant,intensity"] + [f"FBT,{p.value},2" for p in POLLUTANTS]
        (tmp_path / "i.csv").write_text("\n".join(lines) + "\n")
        (tmp_path / "a.csv").write_text("sector,year,employment,output_value\nFBT,2000,3,0\nFBT,2001,4,0\n")
        assert cli.main(["estimate", str(tmp_path / "i.csv"), str(tmp_path / "a.csv"),
                         "--out", str(tmp_path / "l.csv")]) == 0
        assert len((tmp_path / "l.csv").read_text().splitlines()) == 1 + 2 * 14

    def test_unknown_sector(self, tmp_path, capsys):
        (tmp_path / "i.csv").write_text("sector,pollutant,intensity\nFBT,SO2,1\n")
        (tmp_path / "a.csv").write_text("sector,year,employment,output_value\nFBT,2000,3,0\nABC,2001,4,0\n")
        code = cli.main(["estimate", str(tmp_path / "i.csv"), str(tmp_path / "a.csv"), "--out", str(tmp_path / "l.csv")])
        err = capsys.readouterr().err
        assert code == 2 and "ABC" in err and "line 3" in err


class TestSweep:
    def test_smoke_and_determinism(self, rows_csv, tmp_path):
        cfg = _cfg(tmp_path, SMOKE)
        t0 = time.perf_counter()
        assert cli.main(["sweep", str(rows_csv), "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert time.perf_counter() - t0 < 10.0
        assert cli.main(["sweep", str(rows_csv), "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        for name in ("bench.csv", "runs.json", "champion.model"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_defaults_logged(self, rows_csv, tmp_path, caplog):
        caplog.set_level(logging.INFO, logger="pollnet")
        cli.main(["sweep", str(rows_csv), "--config", _cfg(tmp_path, SMOKE), "--out", str(tmp_path / "a")])
        assert any("default" in r.getMessage() and "patience" in r.getMessage() for r in caplog.records)
        assert any(r.getMessage().startswith("resolved:") for r in caplog.records)

    def test_all_diverged(self, rows_csv, tmp_path, capsys):
        cfg = _cfg(tmp_path, "epochs = 20\nrestarts = 1\ntopologies = MLP\nhidden_range = 0\n"
                             "step_size = 1.0\noutput_momentum = 0.95\n")
        assert cli.main(["sweep", str(rows_csv), "--config", cfg, "--out", str(tmp_path / "d")]) == 3

    def test_seed_changes_result(self, rows_csv, tmp_path):
        cfg = _cfg(tmp_path, SMOKE)
        cli.main(["sweep", str(rows_csv), "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
        cli.main(["sweep", str(rows_csv), "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "runs.json").read_text() != (tmp_path / "b" / "runs.json").read_text()

    def test_report_rerenders(self, rows_csv, tmp_path, capsys):
        cli.main(["sweep", str(rows_csv), "--config", _cfg(tmp_path, SMOKE), "--out", str(tmp_path / "a")])
        capsys.readouterr()
        assert cli.main(["report", str(tmp_path / "a"), "--format", "csv", "--no-timing"]) == 0
        assert capsys.readouterr().out == (tmp_path / "a" / "bench.csv").read_text()


class TestPrepare:
    def test_writes_split_and_normalizer(self, rows_csv, tmp_path, capsys):
        assert cli.main(["prepare", str(rows_csv), "--out", str(tmp_path / "p"), "--no-include-year"]) == 0
        norm = dataset.NormalizationParams.load(tmp_path / "p" / "normalizer.txt")
        assert norm.include_year is False
        assert len((tmp_path / "p" / "split.csv").read_text().splitlines()) == 51


class TestTrainPredict:
    @pytest.fixture
    def trained(self, tmp_path):
        rows = tmp_path / "linear.csv"
        dataset.write_rows(rows, _linear_rows())
        cfg = _cfg(tmp_path, "epochs = 300\nrestarts = 1\nstep_size = 0.01\npatience = 0\n")
        code = cli.main(["train", str(rows), "--topology", "mlp", "--hidden", "0", "--config", cfg,
                         "--out", str(tmp_path / "t")])
        assert code == 0
        return rows, tmp_path / "t" / "model.model"

    def test_own_rows_trend(self, trained, tmp_path):
        rows, model = trained
        assert cli.main(["predict", str(model), str(rows), "--out", str(tmp_path / "h.csv")]) == 0
        with open(tmp_path / "h.csv", newline="") as fh:
            lines = list(csv.DictReader(fh))
        assert len(lines) == 14
        assert all(float(l["trend_pct"]) > 95.0 for l in lines)
        per, _ = metrics.trend_accuracy([float(l["desired"]) for l in lines], [float(l["actual"]) for l in lines])
        assert [float(l["trend_pct"]) for l in lines] == pytest.approx(list(per), abs=1e-3)

    def test_corrupted_model(self, trained, tmp_path, capsys):
        rows, model = trained
        model.write_bytes(model.read_bytes()[:100])
        assert cli.main(["predict", str(model), str(rows)]) == 4
        assert "model" in capsys.readouterr().err

    def test_bad_rows_file(self, trained, tmp_path):
        _, model = trained
        (tmp_path / "bad.csv").write_text("nope\n")
        assert cli.main(["predict", str(model), str(tmp_path / "bad.csv")]) == 4


def test_random_seed_accepted(rows_csv, tmp_path):
    assert cli.main(["prepare", str(rows_csv), "--seed", "random", "--out", str(tmp_path / "p")]) == 0
