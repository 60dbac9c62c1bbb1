import csv
import json
from pathlib import Path

import pytest

from gradweld.cli import main

TINY = {
    "task": {
        "n_base": 3,
        "n_novel": 2,
        "feature_dim": 6,
        "k_novel": 6,
        "n_abundant": 24,
        "n_test": 12,
    },
    "train": {
        "hidden_dims": [12],
        "epochs_base": 3,
        "epochs_finetune": 8,
        "k_memory": 4,
    },
    "strategy": "cfa",
    "seeds": [0],
    "output_dir": "",
}


def _write_config(tmp_path, **overrides):
    doc = json.loads(json.dumps(TINY))
    doc["output_dir"] = str(tmp_path / "runs")
    for key, value in overrides.items():
        if isinstance(value, dict):
            doc.setdefault(key, {}).update(value)
        else:
            doc[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestVerifyCommand:
    def test_passes_and_prints_suites(self, capsys):
        code = main(["verify", "--trials", "15", "--dims", "2,8", "--seed", "0", "--adversarial", "6"])
        out = capsys.readouterr().out
        assert code == 0
        assert "oracle-agreement" in out
        assert "PASS" in out
        assert "all 6 suites passed" in out

    def test_zero_trials_usage_error(self):
        assert main(["verify", "--trials", "0", "--seed", "0"]) == 2

    def test_injected_bug_fails(self, capsys):
        code = main(
            ["verify", "--trials", "5", "--dims", "2", "--seed", "0", "--adversarial", "3", "--inject-bug"]
        )
        assert code == 5
        assert "FAIL" in capsys.readouterr().out

    def test_bad_dims_usage_error(self):
        assert main(["verify", "--trials", "5", "--dims", "2,x", "--seed", "0"]) == 2


class TestRunCommand:
    def test_smoke_and_outputs(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        assert main(["run", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "strategy=cfa seed=0" in out
        run_dir = tmp_path / "runs" / "cfa" / "seed_0"
        assert (run_dir / "report.json").exists()
        assert (run_dir / "steps.csv").exists()
        assert (run_dir / "final_model.json").exists()
        doc = json.loads((run_dir / "report.json").read_text())
        for key in ("format_version", "config", "metrics", "violation_rate", "wall_time"):
            assert key in doc

    def test_refuses_clobber_then_overwrites_identically(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        assert main(["run", "--config", str(config)]) == 0
        first = (tmp_path / "runs" / "cfa" / "seed_0" / "steps.csv").read_bytes()
        assert main(["run", "--config", str(config)]) == 3
        assert main(["run", "--config", str(config), "--overwrite"]) == 0
        second = (tmp_path / "runs" / "cfa" / "seed_0" / "steps.csv").read_bytes()
        assert first == second

    def test_missing_config_exit_code(self):
        assert main(["run", "--config", "/nonexistent.json"]) == 3

    def test_unknown_key_exit_code(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = json.loads(json.dumps(TINY))
        doc["output_dir"] = str(tmp_path / "runs")
        doc["surprise"] = True
        path.write_text(json.dumps(doc))
        assert main(["run", "--config", str(path)]) == 3

    def test_multi_seed_run(self, tmp_path, capsys):
        config = _write_config(tmp_path, seeds=[0, 1])
        assert main(["run", "--config", str(config)]) == 0
        assert (tmp_path / "runs" / "cfa" / "seed_0" / "report.json").exists()
        assert (tmp_path / "runs" / "cfa" / "seed_1" / "report.json").exists()

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        config = _write_config(tmp_path, seeds=[0, 1])
        assert main(["run", "--config", str(config)]) == 0
        serial = [
            (tmp_path / "runs" / "cfa" / f"seed_{s}" / "steps.csv").read_bytes()
            for s in (0, 1)
        ]
        monkeypatch.setenv("GRADWELD_THREADS", "2")
        assert main(["run", "--config", str(config), "--overwrite"]) == 0
        parallel = [
            (tmp_path / "runs" / "cfa" / f"seed_{s}" / "steps.csv").read_bytes()
            for s in (0, 1)
        ]
        assert serial == parallel

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        config = _write_config(tmp_path)
        monkeypatch.setenv("GRADWELD_THREADS", "many")
        assert main(["run", "--config", str(config)]) == 3

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_exit_code(self, tmp_path, capsys):
        config = _write_config(tmp_path, train={"epochs_base": 80, "lr_base": 1e6})
        assert main(["run", "--config", str(config)]) == 4
        assert "diverged" in capsys.readouterr().err


def _read_table(path):
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


class TestAblateCommand:
    def test_head_kind_cells(self, tmp_path):
        config = _write_config(tmp_path)
        assert main(["ablate", "--kind", "head", "--config", str(config)]) == 0
        rows = _read_table(tmp_path / "runs" / "ablate_head.csv")
        assert {row["cell"] for row in rows} == {"head=fc", "head=cosine"}
        for row in rows:
            assert 0.0 <= float(row["base_acc"]) <= 1.0
            assert 0.0 <= float(row["novel_acc"]) <= 1.0

    def test_freeze_cells(self, tmp_path):
        config = _write_config(tmp_path)
        assert main(["ablate", "--kind", "freeze", "--config", str(config)]) == 0
        rows = _read_table(tmp_path / "runs" / "ablate_freeze.csv")
        assert len(rows) == 10  # 5 mask rows x {joint, cfa}
        cells = {row["cell"] for row in rows}
        assert "unfrozen=head" in cells
        assert "unfrozen=none" in cells
        assert "unfrozen=backbone+intermediate+head" in cells
        assert {row["strategy"] for row in rows} == {"joint", "cfa"}
        json_rows = json.loads((tmp_path / "runs" / "ablate_freeze.json").read_text())
        assert len(json_rows) == 10

    def test_base_shot_cells(self, tmp_path):
        config = _write_config(tmp_path, train={"epochs_finetune": 4})
        assert main(["ablate", "--kind", "base_shots", "--config", str(config)]) == 0
        rows = _read_table(tmp_path / "runs" / "ablate_base_shots.csv")
        assert len(rows) == 10  # K in {1,2,3,5,10} x {joint, cfa}
        assert {row["cell"] for row in rows} == {f"k={k}" for k in (1, 2, 3, 5, 10)}

    def test_refuses_clobber(self, tmp_path):
        config = _write_config(tmp_path)
        assert main(["ablate", "--kind", "head", "--config", str(config)]) == 0
        assert main(["ablate", "--kind", "head", "--config", str(config)]) == 3
        assert main(["ablate", "--kind", "head", "--config", str(config), "--overwrite"]) == 0


class TestReportCommand:
    def test_summary_and_figures(self, tmp_path):
        config = _write_config(tmp_path, seeds=[0, 1])
        assert main(["run", "--config", str(config)]) == 0
        run_dirs = [str(tmp_path / "runs" / "cfa" / f"seed_{s}") for s in (0, 1)]
        out_dir = tmp_path / "summary"
        assert main(["report", "--runs", *run_dirs, "--out", str(out_dir), "--smooth", "3"]) == 0
        rows = _read_table(out_dir / "summary.csv")
        assert len(rows) == 2
        assert rows[0]["strategy"] == "cfa"
        for name in ("angles_to_novel.png", "angles_to_base.png", "losses.png"):
            assert (out_dir / name).exists()
            assert (out_dir / name).stat().st_size > 0

    def test_refuses_clobber(self, tmp_path):
        config = _write_config(tmp_path)
        assert main(["run", "--config", str(config)]) == 0
        run_dir = str(tmp_path / "runs" / "cfa" / "seed_0")
        out_dir = str(tmp_path / "summary")
        assert main(["report", "--runs", run_dir, "--out", out_dir]) == 0
        assert main(["report", "--runs", run_dir, "--out", out_dir]) == 3
        assert main(["report", "--runs", run_dir, "--out", out_dir, "--overwrite"]) == 0


def test_usage_error_on_missing_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
