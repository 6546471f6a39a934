import json
import os

import pytest

from wsnsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestOracle:
    def test_paper_value(self, capsys):
        code, out, _ = run_cli(capsys, "oracle", "20", "1e-9")
        assert code == EXIT_OK
        assert out.strip() == "1e-17"

    def test_single_layer(self, capsys):
        code, out, _ = run_cli(capsys, "oracle", "1", "1e-9")
        assert code == EXIT_OK
        assert out.strip() == "5e-19"

    def test_zero_sigma(self, capsys):
        code, out, _ = run_cli(capsys, "oracle", "1", "0")
        assert code == EXIT_OK
        assert out.strip() == "0"


class TestRun:
    def test_basic_run(self, capsys, tmp_path):
        out_csv = tmp_path / "records.csv"
        code, out, _ = run_cli(capsys, "run", "--layers", "1", "--seed", "7",
                               "--out", str(out_csv))
        assert code == EXIT_OK
        assert "mse_s2=" in out and "n_excluded=" in out
        lines = out_csv.read_text().splitlines()
        assert lines[0].startswith("# config: ")
        assert lines[1] == "index,t_true_ps,t_est_ps,error_ps,excluded,reason"

    def test_zero_noise_mse_below_floor(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "run", "--layers", "2", "--seed", "1",
                               "--jitter-std", "0", "--skew-ppm", "0",
                               "--out", str(tmp_path / "r.csv"))
        assert code == EXIT_OK
        value = float(out.split("mse_s2=")[1].split()[0])
        assert value < 1e-22

    def test_malformed_config_names_key(self, capsys, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"nmu_layers": 3}))
        code, _, err = run_cli(capsys, "run", "--config", str(config),
                               "--out", str(tmp_path / "r.csv"))
        assert code == EXIT_CONFIG
        assert "nmu_layers" in err

    def test_invalid_json_config(self, capsys, tmp_path):
        config = tmp_path / "broken.json"
        config.write_text("{not json")
        code, _, err = run_cli(capsys, "run", "--config", str(config))
        assert code == EXIT_CONFIG

    def test_bad_scenario_value(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"num_layers": 99}))
        code, _, err = run_cli(capsys, "run", "--config", str(config))
        assert code == EXIT_CONFIG
        assert "num_layers" in err

    def test_layers_range_rejected_for_run(self, capsys):
        code, _, err = run_cli(capsys, "run", "--layers", "1..5")
        assert code == EXIT_CONFIG

    def test_missing_out_directory(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "run", "--layers", "1", "--seed", "0",
                               "--out", str(tmp_path / "missing" / "r.csv"))
        assert code == EXIT_RUNTIME
        assert "missing" in err

    def test_trace_output(self, capsys, tmp_path):
        trace = tmp_path / "trace.txt"
        code, _, _ = run_cli(capsys, "run", "--layers", "1", "--seed", "1",
                             "--out", str(tmp_path / "r.csv"),
                             "--trace", str(trace))
        assert code == EXIT_OK
        lines = trace.read_text().splitlines()
        assert lines[0].startswith("# config: ")
        assert all(line.count("|") >= 4 for line in lines[1:])

    def test_env_seed_fallback(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("WSNSIM_SEED", "123")
        out_csv = tmp_path / "r.csv"
        code, _, _ = run_cli(capsys, "run", "--layers", "1", "--out", str(out_csv))
        assert code == EXIT_OK
        assert '"seed":123' in out_csv.read_text().splitlines()[0]

    def test_flag_overrides_config(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"seed": 5, "num_layers": 2}))
        out_csv = tmp_path / "r.csv"
        code, _, _ = run_cli(capsys, "run", "--config", str(config),
                             "--seed", "9", "--out", str(out_csv))
        assert code == EXIT_OK
        header = out_csv.read_text().splitlines()[0]
        assert '"seed":9' in header
        assert '"num_layers":2' in header


class TestSweep:
    def test_grid_cardinality(self, capsys, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        code, out, _ = run_cli(
            capsys, "sweep", "--layers", "1..2", "--seeds", "0..2",
            "--mode", "both", "--out", str(out_csv),
            "--config", str(self._fast_config(tmp_path)),
        )
        assert code == EXIT_OK
        rows = [l for l in out_csv.read_text().splitlines()
                if l and not l.startswith(("#", "mode,"))]
        assert len(rows) == 2 * 2 * 3  # modes x layers x seeds
        assert "mean_mse" in out

    def test_single_mode_halves_grid(self, capsys, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        code, _, _ = run_cli(
            capsys, "sweep", "--layers", "1..2", "--seeds", "0..2",
            "--mode", "relaying", "--out", str(out_csv),
            "--config", str(self._fast_config(tmp_path)),
        )
        assert code == EXIT_OK
        rows = [l for l in out_csv.read_text().splitlines()
                if l and not l.startswith(("#", "mode,"))]
        assert len(rows) == 1 * 2 * 3

    def test_svg_output(self, capsys, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        svg = tmp_path / "sweep.svg"
        code, _, _ = run_cli(
            capsys, "sweep", "--layers", "1..2", "--seeds", "0..1",
            "--mode", "relaying", "--out", str(out_csv), "--svg", str(svg),
            "--config", str(self._fast_config(tmp_path)),
        )
        assert code == EXIT_OK
        assert svg.stat().st_size > 0

    def test_missing_output_directory(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "sweep", "--layers", "1", "--seeds", "0",
            "--out", str(tmp_path / "nodir" / "s.csv"),
            "--config", str(self._fast_config(tmp_path)),
        )
        assert code == EXIT_RUNTIME

    @staticmethod
    def _fast_config(tmp_path):
        path = tmp_path / "fast.json"
        if not path.exists():
            path.write_text(json.dumps({"duration_s": 300.0, "n_measurements": 10}))
        return path


class TestPlot:
    def test_replot_from_csv(self, capsys, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        config = tmp_path / "fast.json"
        config.write_text(json.dumps({"duration_s": 300.0, "n_measurements": 10}))
        run_cli(capsys, "sweep", "--layers", "1..2", "--seeds", "0",
                "--mode", "relaying", "--out", str(out_csv),
                "--config", str(config))
        code, out, _ = run_cli(capsys, "plot", str(out_csv))
        assert code == EXIT_OK
        assert (tmp_path / "sweep.svg").exists()


class TestDeterminism:
    def test_repeated_run_is_byte_identical(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps(
            {"duration_s": 600.0, "n_measurements": 20, "num_layers": 3, "seed": 5}
        ))
        outputs = []
        for tag in ("a", "b"):
            out_csv = tmp_path / f"rec_{tag}.csv"
            trace = tmp_path / f"trace_{tag}.txt"
            code, _, _ = run_cli(capsys, "run", "--config", str(config),
                                 "--out", str(out_csv), "--trace", str(trace))
            assert code == EXIT_OK
            outputs.append((out_csv.read_bytes(), trace.read_bytes()))
        assert outputs[0] == outputs[1]
