import json

import numpy as np
import pytest

from aeroinv.cli import main, parse_config, read_measurement, write_measurement
from aeroinv.errors import UsageError
from aeroinv.model_selection import Measurement


class TestParseConfig:
    def test_no_command_lists_commands(self):
        with pytest.raises(UsageError) as err:
            parse_config([])
        for cmd in ("simulate", "invert", "invert2", "study", "study2"):
            assert cmd in str(err.value)

    def test_invert_defaults(self, tmp_path):
        args = parse_config(
            ["invert", "--measurement", "m.csv", "--material", "H2O",
             "--reg", "twomey"]
        )
        assert args.command == "invert"
        assert args.reg == "twomey"
        assert args.method == "constrained"
        assert args.seed == 0

    def test_config_file_flag_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 7, "reg": "firstdiff"}))
        args = parse_config(
            ["invert", "--measurement", "m.csv", "--config", str(cfg),
             "--reg", "twomey"]
        )
        assert args.reg == "twomey"  # flag wins
        assert args.seed == 7  # file fills the default

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(UsageError):
            parse_config(["invert", "--measurement", "m.csv", "--config", str(cfg)])

    def test_bad_tau_grid(self):
        args = parse_config(
            ["invert", "--measurement", "m.csv", "--tau-grid", "a,b"]
        )
        from aeroinv.cli import _tau_grid

        with pytest.raises(UsageError):
            _tau_grid(args, (1.1,))


class TestMeasurementIo:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        meas = Measurement(
            np.sort(rng.uniform(0.5, 3.3, 6)),
            rng.uniform(1e3, 1e5, 6),
            rng.uniform(1e2, 1e6, 6),
            repeats=300,
        )
        path = tmp_path / "m.csv"
        write_measurement(path, meas)
        back = read_measurement(path)
        assert np.array_equal(back.wavelengths, meas.wavelengths)
        assert np.array_equal(back.mean_extinction, meas.mean_extinction)
        assert np.array_equal(back.variance, meas.variance)
        assert back.repeats == meas.repeats


@pytest.fixture(scope="module")
def measurement_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "meas.csv"
    code = main(
        ["simulate", "--family", "log_normal", "--param-index", "44",
         "--seed", "5", "--out", str(path)]
    )
    assert code == 0
    return path


class TestCommands:
    def test_simulate_then_invert_round_trip(self, measurement_file, tmp_path):
        out = tmp_path / "inv.json"
        code = main(
            ["invert", "--measurement", str(measurement_file), "--out", str(out),
             "--mc-samples", "3000", "--emit-plot-data"]
        )
        assert code == 0
        record = json.loads(out.read_text())
        assert record["schema"] == "aeroinv-inversion/1"
        posts = [c["posterior"] for c in record["candidates"]]
        assert sum(posts) == pytest.approx(1.0, abs=1e-9)
        recon = np.array(record["reconstruction"]["density"])
        assert np.all(recon >= 0.0)
        assert len(record["reconstruction"]["radius_um"]) == 200
        assert out.with_suffix(".recon.csv").exists()
        # json floats round-trip bit-exactly through repr
        again = json.loads(out.read_text())
        assert again == record

    def test_invert_no_models_exit_code(self, tmp_path):
        # data norm below every residual target: exit 2 plus an error record
        path = tmp_path / "weak.csv"
        wl = np.linspace(0.6, 3.3, 8)
        meas = Measurement(wl, np.full(8, 1e-9), np.ones(8), repeats=1)
        write_measurement(path, meas)
        out = tmp_path / "inv.json"
        code = main(["invert", "--measurement", str(path), "--out", str(out)])
        assert code == 2
        record = json.loads(out.read_text())
        assert record["error"]["type"] == "NoModels"

    def test_study_reduced_schema(self, tmp_path):
        out = tmp_path / "study.json"
        code = main(
            ["study", "--family", "log_normal", "--method", "constrained",
             "--params", "44", "--repeats", "1", "--mc-samples", "2000",
             "--out", str(out)]
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["schema"] == "aeroinv-report/1"
        assert report["method_stats"][0]["family"] == "log_normal"
        assert report["records"][0]["status"] in (
            "success", "l2_failure", "no_model_failure"
        )
        csv_path = out.with_suffix(".csv")
        assert csv_path.exists()
        header = csv_path.read_text().splitlines()[0]
        assert header.startswith("family,method,reg_kind,avg_l2_pct")

    def test_usage_error_exit_code(self):
        assert main([]) == 1
