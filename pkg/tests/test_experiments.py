"""Config validation, run orchestration, emission atomicity, and the CLI."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kanforget.errors import ConfigError
from kanforget.experiments import (
    EXPERIMENT_KINDS,
    emit_reports,
    load_bundle,
    run_experiment,
    validate_config,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def tiny_mc_config(kind="interval-overlap-mc", **mc):
    payload = {"trials": 2000, "s_values": [0.2, 0.5]}
    payload.update(mc)
    return {"kind": kind, "seeds": [0], "mc": payload}


class TestValidateConfig:
    def test_minimal_valid_config(self):
        cfg, diagnostics = validate_config(
            {"kind": "binary-add", "seeds": [0]}
        )
        assert diagnostics == []
        assert cfg["network"]["dims"] == [3, 2, 2]
        assert cfg["training"]["learning_rate"] == 1e-3

    def test_defaults_made_explicit(self):
        cfg, _ = validate_config({"kind": "decimal-add", "seeds": [1]})
        for section in ("network", "training", "analysis", "mc", "data"):
            assert section in cfg
        assert cfg["training"]["weight_decay"] == 1e-4
        assert cfg["analysis"]["bins"] == 400
        assert cfg["network"]["grid_epsilon"] == 0.02

    def test_negative_learning_rate_named(self):
        _, diagnostics = validate_config(
            {"kind": "binary-add", "seeds": [0], "training": {"learning_rate": -1}}
        )
        assert any("learning_rate" in d for d in diagnostics)

    def test_missing_seeds_suggests_default(self):
        _, diagnostics = validate_config({"kind": "binary-add"})
        assert any("seeds" in d and "suggest" in d for d in diagnostics)

    def test_unknown_kind(self):
        _, diagnostics = validate_config({"kind": "nonsense", "seeds": [0]})
        assert any("kind" in d for d in diagnostics)

    def test_unknown_fields_flagged(self):
        _, diagnostics = validate_config(
            {"kind": "binary-add", "seeds": [0], "bogus": 1,
             "training": {"nope": 2}}
        )
        assert any("bogus" in d for d in diagnostics)
        assert any("training.nope" in d for d in diagnostics)

    def test_image_experiments_need_data(self):
        _, diagnostics = validate_config({"kind": "intrinsic-dim-ratio", "seeds": [0]})
        assert any(d.startswith("data:") for d in diagnostics)

    def test_all_presets_validate(self):
        for preset in CONFIG_DIR.glob("*.json"):
            raw = json.loads(preset.read_text())
            _, diagnostics = validate_config(raw)
            assert diagnostics == [], f"{preset.name}: {diagnostics}"
        assert len(list(CONFIG_DIR.glob("*.json"))) == len(EXPERIMENT_KINDS)


class TestRunExperiment:
    def test_interval_mc_run_and_reports(self, tmp_path):
        out = tmp_path / "run"
        manifest = run_experiment(tiny_mc_config(), out)
        assert manifest.status == "complete"
        assert (out / "manifest.json").exists()
        assert (out / "bundle.json").exists()
        assert (out / "interval_overlap.csv").exists()
        assert (out / "config_echo.json").exists()
        listed = set(manifest.files)
        on_disk = {p.name for p in out.iterdir() if p.name != "manifest.json"}
        assert on_disk <= listed | {"manifest.json"}
        # Config echo carries every filled default.
        echo = json.loads((out / "config_echo.json").read_text())
        assert echo["training"]["learning_rate"] == 1e-3

    def test_existing_directory_rejected_before_work(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        with pytest.raises(FileExistsError):
            run_experiment(tiny_mc_config(), out)

    def test_invalid_config_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_experiment({"kind": "nope"}, tmp_path / "x")

    def test_reproducibility_bitwise(self, tmp_path):
        cfg = tiny_mc_config()
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        csv_a = (tmp_path / "a" / "interval_overlap.csv").read_bytes()
        csv_b = (tmp_path / "b" / "interval_overlap.csv").read_bytes()
        assert csv_a == csv_b

    def test_seed_offset_changes_streams(self, tmp_path):
        run_experiment(tiny_mc_config(), tmp_path / "a")
        run_experiment(tiny_mc_config(), tmp_path / "b", seed_offset=1)
        assert (tmp_path / "a" / "interval_overlap.csv").read_bytes() != (
            tmp_path / "b" / "interval_overlap.csv"
        ).read_bytes()

    def test_binary_add_tiny_run(self, tmp_path):
        cfg = {
            "kind": "binary-add",
            "seeds": [0],
            "training": {"epochs_per_task": 2, "batch_size": 4},
        }
        out = tmp_path / "run"
        run_experiment(cfg, out)
        assert (out / "ledger_grid5_seed0.csv").exists()
        assert (out / "forgetting_summary.csv").exists()
        assert (out / "final_grid5_seed0.ckpt").exists()
        curve = (out / "curve_grid5_seed0_task1.dat").read_text().splitlines()
        assert len(curve) == 10  # 5 tasks x 2 epochs
        assert curve[0].split()[0] == "1"

    def test_bundle_round_trip_bit_exact(self, tmp_path):
        out = tmp_path / "run"
        run_experiment(tiny_mc_config(), out)
        bundle = load_bundle(out / "bundle.json")
        rewritten = tmp_path / "bundle2.json"
        with open(rewritten, "w", encoding="utf-8") as fh:
            json.dump(bundle, fh)
        assert load_bundle(rewritten) == bundle

    def test_emit_reports_regenerates_identical_csv(self, tmp_path):
        out = tmp_path / "run"
        run_experiment(tiny_mc_config(), out)
        original = (out / "interval_overlap.csv").read_bytes()
        (out / "interval_overlap.csv").unlink()
        emit_reports(load_bundle(out / "bundle.json"), out)
        assert (out / "interval_overlap.csv").read_bytes() == original

    def test_workers_do_not_change_results(self, tmp_path):
        cfg = {
            "kind": "decimal-add",
            "seeds": [0, 1],
            "network": {"grid_sizes": [5]},
            "training": {"epochs_per_task": 2, "batch_size": 4},
        }
        run_experiment(cfg, tmp_path / "serial", workers=1)
        run_experiment(cfg, tmp_path / "parallel", workers=2)
        for name in ("forgetting_summary.csv", "ledger_grid5_seed0.csv"):
            assert (tmp_path / "serial" / name).read_bytes() == (
                tmp_path / "parallel" / name
            ).read_bytes()

    def test_scaling_mc_outputs(self, tmp_path):
        cfg = {
            "kind": "dimension-mc",
            "seeds": [0],
            "mc": {"trials": 2000, "r_sweep": [0.1, 0.2, 0.3, 0.4],
                    "d_pairs": [[1, 1]]},
        }
        out = tmp_path / "run"
        run_experiment(cfg, out)
        fits = (out / "dimension_scaling_fits.csv").read_text().splitlines()
        assert fits[0] == "seed,axis,d_i,d_j,slope,slope_stderr,expected_slope"
        assert len(fits) == 2

    def test_saturation_mc_outputs(self, tmp_path):
        cfg = {
            "kind": "saturation-mc",
            "seeds": [0],
            "mc": {"trials": 300, "base_length": 0.3,
                    "later_lengths": [0.3] * 5},
        }
        out = tmp_path / "run"
        run_experiment(cfg, out)
        rows = (out / "saturation_curve.csv").read_text().splitlines()
        assert len(rows) == 6


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "kanforget.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_validate_preset(self):
        proc = self.run_cli("validate", str(CONFIG_DIR / "interval-overlap-mc.json"))
        assert proc.returncode == 0
        assert "ok:" in proc.stdout

    def test_validate_bad_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"kind": "binary-add", "seeds": [0],
                                   "training": {"learning_rate": -5}}))
        proc = self.run_cli("validate", str(bad))
        assert proc.returncode == 2
        assert "learning_rate" in proc.stderr

    def test_validate_unparsable_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        proc = self.run_cli("validate", str(bad))
        assert proc.returncode == 2
        assert "line" in proc.stderr

    def test_run_and_report_cycle(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(tiny_mc_config()))
        out = tmp_path / "run"
        proc = self.run_cli("run", str(cfg_path), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        proc = self.run_cli("report", str(out))
        assert proc.returncode == 0, proc.stderr

    def test_run_existing_dir_exits_4(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(tiny_mc_config()))
        out = tmp_path / "run"
        out.mkdir()
        proc = self.run_cli("run", str(cfg_path), "--out", str(out))
        assert proc.returncode == 4

    def test_report_missing_bundle_exits_4(self, tmp_path):
        proc = self.run_cli("report", str(tmp_path))
        assert proc.returncode == 4

    def test_default_out_root_env(self, tmp_path):
        import os

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(tiny_mc_config()))
        env = dict(os.environ, KANFORGET_OUT=str(tmp_path / "root"))
        proc = subprocess.run(
            [sys.executable, "-m", "kanforget.cli", "run", str(cfg_path)],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode == 0, proc.stderr
        produced = list((tmp_path / "root").iterdir())
        assert len(produced) == 1
        assert produced[0].name.startswith("interval-overlap-mc-")
