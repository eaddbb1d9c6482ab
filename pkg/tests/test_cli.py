import json
from pathlib import Path

import pytest
import yaml

from amodlab.cli import main
from amodlab.runconfig import ConfigError, RunConfig, apply_overrides
from amodlab.streams import RequestStream


def base_config(tmp_path, **extra) -> Path:
    cfg = {
        "name": "t",
        "algorithm": "LRA",
        "instance": {"zones": 5, "scale": "small", "vehicles": 4,
                     "placement_zones": [1, 2, 3]},
        "training": {
            "total_steps": 120,
            "warmup_steps": 20,
            "validate_every": 60,
            "buffer_capacity": 500,
        },
        "data": {
            "source": "synthetic",
            "rate_per_step": [0.0, 0.25, 0.06, 0.25, 0.0],
            "dest_weights": [
                [0, 0, 0, 0, 0],
                [0, 0, 1, 20, 0],
                [0, 1, 0, 1, 0],
                [0, 20, 1, 0, 0],
                [0, 0, 0, 0, 0],
            ],
            "train_streams": 2,
            "val_streams": 2,
            "test_streams": 2,
            "stream_seed": 3,
        },
        "seeds": [1],
        "output_root": str(tmp_path / "runs"),
    }
    cfg.update(extra)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestRunConfig:
    def test_load_and_builders(self, tmp_path):
        cfg = RunConfig.load(base_config(tmp_path))
        env = cfg.build_env()
        assert env.n_vehicles == 4
        assert env.placement_zones == (1, 2, 3)
        tc = cfg.build_training()
        assert tc.algorithm == "LRA"
        assert tc.total_steps == 120
        streams = cfg.build_streams("val")
        assert len(streams) == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = base_config(tmp_path)
        raw = yaml.safe_load(path.read_text())
        raw["trainnig"] = {}
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="unknown config key: trainnig"):
            RunConfig.load(path)

    def test_nested_unknown_key_rejected(self, tmp_path):
        path = base_config(tmp_path)
        raw = yaml.safe_load(path.read_text())
        raw["training"]["learning_rate"] = 0.1
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="training.learning_rate"):
            RunConfig.load(path)

    def test_missing_file_reference_rejected(self, tmp_path):
        path = base_config(tmp_path)
        raw = yaml.safe_load(path.read_text())
        raw["data"] = {
            "source": "historical",
            "trips_file": "missing.csv",
            "hour": 8,
            "train_dates": ["2015-01-15"],
            "val_dates": ["2015-01-16"],
            "test_dates": ["2015-01-19"],
        }
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="does not exist"):
            RunConfig.load(path)

    def test_overrides(self, tmp_path):
        cfg = RunConfig.load(
            base_config(tmp_path),
            overrides=["training.total_steps=64", "algorithm=GRA"],
        )
        assert cfg.build_training().total_steps == 64
        assert cfg.algorithm == "GRA"

    def test_override_parse_error(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["no_equals_sign"])

    def test_streams_deterministic(self, tmp_path):
        cfg = RunConfig.load(base_config(tmp_path))
        a = cfg.build_streams("test")
        b = cfg.build_streams("test")
        assert [s.entries for s in a] == [s.entries for s in b]


class TestCliCommands:
    def test_gen_data(self, tmp_path, capsys):
        rc = main(["gen-data", "--config", str(base_config(tmp_path))])
        assert rc == 0
        streams = list((tmp_path / "runs" / "t" / "streams").rglob("*.stream"))
        assert len(streams) == 6
        RequestStream.load(streams[0])

    def test_ingest(self, tmp_path, capsys):
        from test_streams import geo_of, write_trips
        from amodlab.hexgrid import build_hex_grid

        grid = build_hex_grid(5, "small")
        lat1, lon1 = geo_of(grid, 0)
        lat2, lon2 = geo_of(grid, 2)
        trips = tmp_path / "trips.csv"
        write_trips(trips, [f"2015-01-15 08:05:00,{lat1},{lon1},{lat2},{lon2}"])
        out = tmp_path / "s.stream"
        rc = main([
            "ingest", "--trips", str(trips), "--zones", "5", "--date", "2015-01-15",
            "--hour", "8", "--out", str(out),
        ])
        assert rc == 0
        assert len(RequestStream.load(out)) == 1

    def test_train_dry_run(self, tmp_path, capsys):
        rc = main(["train", "--config", str(base_config(tmp_path)), "--dry-run"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "would train" in out
        assert not (tmp_path / "runs" / "t").exists()

    def test_train_eval_analyze_plot_pipeline(self, tmp_path, capsys):
        config = str(base_config(tmp_path))
        assert main(["train", "--config", config]) == 0
        run_dir = tmp_path / "runs" / "t"
        assert (run_dir / "seed_1" / "best.npz").exists()
        assert (run_dir / "config.yaml").exists()
        metrics = (run_dir / "seed_1" / "metrics.jsonl").read_text().splitlines()
        assert len(metrics) > 50
        json.loads(metrics[0])

        assert main(["eval", "--config", config]) == 0
        scores = (run_dir / "eval" / "scores.csv").read_text().splitlines()
        assert scores[0] == "policy,seed,date,profit"
        assert len(scores) == 1 + 2 + 2  # header + greedy x2 + LRA x2

        assert main(["analyze", "--run", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "rejection rate" in out
        assert (run_dir / "analysis" / "breakdown.csv").exists()
        assert (run_dir / "analysis" / "validation_curves.csv").exists()

        assert main(["plot", "--run", str(run_dir)]) == 0
        assert (run_dir / "plots" / "validation.png").exists()

    def test_eval_missing_checkpoint_is_config_error(self, tmp_path, capsys):
        config = str(base_config(tmp_path))
        rc = main(["eval", "--config", config])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_resume_continues(self, tmp_path, capsys):
        config_path = base_config(tmp_path)
        raw = yaml.safe_load(config_path.read_text())
        raw["training"]["total_steps"] = 60
        config_path.write_text(yaml.safe_dump(raw))
        assert main(["train", "--config", str(config_path)]) == 0
        assert main([
            "train", "--config", str(config_path), "--resume",
            "--set", "training.total_steps=90",
        ]) == 0
        out = capsys.readouterr().out
        assert "resumed at step 60" in out

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("name: x\nalgorithm: NOPE\n")
        assert main(["train", "--config", str(path)]) == 2

    def test_gen_data_regenerates_bit_identically(self, tmp_path, capsys):
        config = str(base_config(tmp_path))
        out1, out2 = tmp_path / "g1", tmp_path / "g2"
        assert main(["gen-data", "--config", config, "--out", str(out1)]) == 0
        assert main(["gen-data", "--config", config, "--out", str(out2)]) == 0
        files1 = sorted(out1.rglob("*.stream"))
        files2 = sorted(out2.rglob("*.stream"))
        assert [f.relative_to(out1) for f in files1] == [
            f.relative_to(out2) for f in files2
        ]
        for a, b in zip(files1, files2):
            assert a.read_bytes() == b.read_bytes()

    def test_parallel_workers_match_sequential(self, tmp_path, capsys):
        config_path = base_config(tmp_path)
        raw = yaml.safe_load(config_path.read_text())
        raw["seeds"] = [1, 2]
        raw["training"]["total_steps"] = 60
        raw["training"]["warmup_steps"] = 10
        raw["output_root"] = str(tmp_path / "seq")
        config_path.write_text(yaml.safe_dump(raw))
        assert main(["train", "--config", str(config_path)]) == 0
        raw["output_root"] = str(tmp_path / "par")
        config_path.write_text(yaml.safe_dump(raw))
        assert main(["train", "--config", str(config_path), "--workers", "2"]) == 0
        for seed in (1, 2):
            seq = (tmp_path / "seq" / "t" / f"seed_{seed}" / "metrics.jsonl").read_text()
            par = (tmp_path / "par" / "t" / f"seed_{seed}" / "metrics.jsonl").read_text()
            assert seq == par

    def test_output_root_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AMODLAB_OUT", str(tmp_path / "elsewhere"))
        cfg = RunConfig.load(base_config(tmp_path))
        assert cfg.run_dir() == tmp_path / "elsewhere" / "t"
