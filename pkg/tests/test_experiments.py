import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmprobe import ValidationError
from pmprobe.experiments import (
    Column,
    ResultTable,
    ScenarioConfig,
    dominance_windows,
    load_config,
    parse_config_text,
    read_csv,
    read_csv_body,
    run_closed_form_report,
    run_compat_check,
    run_det_sweep,
    run_qfim_vs_gamma,
    run_ratio_sweep,
    run_thermometry,
    run_tilde_lambda_vs_time,
    run_wigner_snapshots,
)
from pmprobe.experiments.cli import main
from pmprobe.experiments.validate import ratio_max_iff_uncorrelated


class TestConfig:
    def test_defaults(self):
        cfg = ScenarioConfig()
        np.testing.assert_array_equal(cfg.lambda_values(), [3e15, 3e20, 3e22])
        assert cfg.times().size == 400
        assert cfg.times()[0] == pytest.approx(1e-8)
        assert cfg.gammas()[-1] == 3.0

    def test_parse_text(self):
        text = "# probe\nsigma0 = 8e-9  # width\nlambdas = 1e20, 2e20\n\n"
        assert parse_config_text(text) == {"sigma0": "8e-9", "lambdas": "1e20, 2e20"}

    @pytest.mark.parametrize(
        "text,match",
        [("foo = 1", "unknown key"), ("t_points = 3\nt_points = 4", "duplicate"), ("t_points", "key = value")],
    )
    def test_parse_errors(self, text, match):
        with pytest.raises(ValidationError, match=match):
            parse_config_text(text)

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("temperatures = 1, 10\nt_points = 50\nell0 = inf\n")
        cfg = load_config(path)
        assert cfg.temperatures == (1.0, 10.0)
        assert math.isinf(cfg.ell0)
        cfg2 = load_config(path, {"lambdas": "3e20", "t_points": "60"})
        assert cfg2.temperatures is None and cfg2.lambdas == (3e20,)
        assert cfg2.t_points == 60

    def test_temperatures_map_to_lambdas(self):
        cfg = ScenarioConfig(temperatures=(786.0,))
        assert cfg.lambda_values()[0] == pytest.approx(3e22, rel=0.03)
        np.testing.assert_array_equal(cfg.temperature_values(), [786.0])

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lambdas": (1.0,), "temperatures": (1.0,)},
            {"lambdas": ()},
            {"lambdas": (-1.0,)},
            {"t_min": 1e-3, "t_max": 1e-4},
            {"t_points": 1},
            {"sigma0": -1.0},
            {"wigner_times": (-1.0,)},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            ScenarioConfig(**kwargs)

    @pytest.mark.parametrize("key,value", [("t_points", "2.5"), ("sigma0", "wide"), ("missing", "1")])
    def test_bad_overrides(self, key, value):
        with pytest.raises(ValidationError):
            load_config(None, {key: value})

    def test_hash(self):
        a, b = ScenarioConfig(), ScenarioConfig()
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 16
        assert ScenarioConfig(t_points=401).config_hash() != a.config_hash()

    def test_mapping_round_trip(self, tmp_path):
        cfg = ScenarioConfig(lambdas=(1e21,), gamma_set=(-1.0, 1.0), t_fixed=1e-5)
        path = tmp_path / "cfg"
        path.write_text("\n".join(f"{k} = {v}" for k, v in cfg.to_mapping().items()))
        assert load_config(path) == cfg


class TestTable:
    def _table(self):
        cols = [Column("a", "s"), Column("b", "1", "int"), Column("c", "1", "str"), Column("d", "1", "bool")]
        data = {"a": np.array([0.1, math.nan]), "b": np.array([1, 2]), "c": np.array(["x", "y,z"]),
                "d": np.array([True, False])}
        return ResultTable("demo", cols, data, {"n": 2, "f": 0.5}, "abc")

    def test_csv_round_trip(self, tmp_path):
        (path,) = self._table().write(tmp_path)
        meta, header, rows = read_csv(path)
        assert meta["table"] == "demo" and meta["config_hash"] == "abc"
        assert meta["summary.n"] == "2"
        assert header == ["a", "b", "c", "d"]
        assert rows == [["0.10000000000000001", "1", "x", "1"], ["nan", "2", "y,z", "0"]]

    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
    def test_floats_round_trip_exactly(self, xs):
        tab = ResultTable("f", [Column("v")], {"v": np.array(xs)})
        assert [float(line) for line in tab.body_lines()] == xs

    def test_json(self, tmp_path):
        paths = self._table().write(tmp_path, fmt="json")
        obj = json.loads(paths[0].read_text())
        assert obj["rows"][1]["a"] is None
        assert obj["columns"][0] == {"name": "a", "unit": "s", "kind": "float"}

    def test_mirror(self, tmp_path):
        paths = self._table().write(tmp_path, mirror=True)
        assert sorted(p.suffix for p in paths) == [".csv", ".json"]

    def test_ragged_rejected(self):
        with pytest.raises(ValueError):
            ResultTable("r", [Column("a"), Column("b")], {"a": np.zeros(2), "b": np.zeros(3)})


class TestSweeps:
    def test_ratio(self, small_config):
        tab = run_ratio_sweep(small_config, threads=2)
        d = tab.data
        assert len(tab) == 3 * 9 * 9
        assert tab.summary["failed_rows"] == 0
        assert np.all((d["ratio"] > 0) & (d["ratio"] <= 2))
        assert np.all(d["tilde_gg"] <= d["f_gg"]) and np.all(d["tilde_ll"] <= d["f_ll"])
        assert np.all(ratio_max_iff_uncorrelated(d["ratio"], d["f_gg"], d["f_gl"], d["f_ll"], 1e-10))

    def test_threads_do_not_change_output(self, small_config):
        assert run_ratio_sweep(small_config, 4).body_lines() == run_ratio_sweep(small_config, 1).body_lines()

    def test_qfim_vs_gamma(self, small_config):
        tab = run_qfim_vs_gamma(small_config, t_fixed=1e-5)
        assert tab.summary["t_fixed"] == 1e-5
        assert tab.summary["tilde_le_diag"]
        np.testing.assert_allclose(tab.data["f_ll_rel"], tab.data["f_ll"] * tab.data["lambda"] ** 2, rtol=1e-15)
        with pytest.raises(ValidationError):
            run_qfim_vs_gamma(small_config, t_fixed=-1.0)

    def test_tilde_ranking(self, small_config):
        tab = run_tilde_lambda_vs_time(small_config)
        ranks = tab.data["rank"].reshape(3, 3, -1)
        np.testing.assert_array_equal(np.sort(ranks, axis=1), np.broadcast_to([[1], [2], [3]], ranks.shape))
        assert any(k.startswith("dominance@3e+22@gamma=-0.5") for k in tab.summary)

    def test_det(self, small_config):
        tab = run_det_sweep(small_config)
        assert tab.summary["all_positive"]
        assert len(tab) == 2 * 3 * 30

    def test_compat(self, small_config):
        tab = run_compat_check(small_config)
        assert tab.summary["saturable"]
        assert tab.summary["max_discrepancy"] < 1e-12

    def test_thermo(self, small_config):
        tab = run_thermometry(small_config)
        assert tab.summary["anchors_within_2pct"]
        assert tab.summary["max_roundtrip_rel_err"] < 1e-13

    def test_wigner(self, small_config):
        tab, snaps = run_wigner_snapshots(small_config)
        assert len(snaps) == 6
        assert tab.summary["max_norm_error"] < 1e-3
        assert not np.any(tab.data["under_resolved"])

    def test_closed_form_skip_for_pure_probe(self):
        rep = run_closed_form_report(ScenarioConfig(ell0=math.inf))
        assert "skipped" in rep

    def test_dominance_windows(self):
        t = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert dominance_windows(t, np.array([True, True, False, True, True])) == [(1.0, 2.0), (4.0, 5.0)]
        assert dominance_windows(t, np.zeros(5, bool)) == []


class TestUncorrelatedCriterion:
    def test_consistent_rows(self):
        ok = ratio_max_iff_uncorrelated(np.array([2.0, 1.5]), np.ones(2), np.array([0.0, 0.5]), np.ones(2), 1e-10)
        assert ok.all()

    def test_inconsistent_row(self):
        # ratio claims the maximum although the elements are correlated
        ok = ratio_max_iff_uncorrelated(np.array([2.0]), np.ones(1), np.array([0.5]), np.ones(1), 1e-10)
        assert not ok.any()


class TestCli:
    SMALL = ["--set", "t_points=20", "--set", "gamma_points=5", "--set", "contour_points=7",
             "--set", "wigner_points=41"]

    @pytest.mark.parametrize("cmd", ["ratio", "qfim", "tilde", "det", "compat", "thermo", "wigner"])
    def test_subcommands(self, tmp_path, capsys, cmd):
        assert main(["--out", str(tmp_path), *self.SMALL, cmd]) == 0
        out = capsys.readouterr().out
        assert "wrote" in out
        assert any(p.suffix == ".csv" for p in tmp_path.iterdir())

    def test_qfim_report(self, tmp_path):
        assert main(["--out", str(tmp_path), *self.SMALL, "qfim", "--t-fixed", "1e-5"]) == 0
        rep = json.loads((tmp_path / "closed_form_report.json").read_text())
        assert rep["authoritative"] == "general"

    def test_json_and_plot_script(self, tmp_path):
        assert main(["--out", str(tmp_path), "--format", "json", "--plot-script", *self.SMALL, "det"]) == 0
        assert (tmp_path / "det.json").exists()
        assert "matplotlib" in (tmp_path / "plot_det.py").read_text()

    def test_byte_identical_bodies(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["--out", str(out), *self.SMALL, "tilde"]) == 0
        assert read_csv_body(a / "tilde.csv") == read_csv_body(b / "tilde.csv")

    @pytest.mark.parametrize(
        "argv",
        [["--set", "nope=1", "thermo"], ["--set", "t_points", "thermo"], ["--threads", "0", "thermo"],
         ["--set", "lambdas=-3", "thermo"], ["wigner", "--times", "a,b"]],
    )
    def test_bad_input_exit_code(self, tmp_path, capsys, argv):
        assert main(["--out", str(tmp_path), *argv]) == 2
        err = json.loads(capsys.readouterr().err)
        assert "error" in err and "message" in err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["--config", str(tmp_path / "none.cfg"), "thermo"]) == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["bogus"])
