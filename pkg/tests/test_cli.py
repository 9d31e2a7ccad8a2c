"""CLI contracts: subcommand behavior, exit codes, file outputs."""

import json

import numpy as np
import pytest

from depthcast.cli import main
from depthcast.data import read_pfm, read_pgm
from depthcast.evaluate import model_predictor
from depthcast.network import build_model, desk_config
from depthcast.train import load_training_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny dataset plus a 2-step training run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--out", str(data), "--clips", "2", "--seed", "11"]) == 0
    cfg = {
        "train": {"dataset": str(data), "out_dir": str(root / "run"),
                  "steps": 2, "batch_size": 2, "checkpoint_every": 0},
        "eval": {"dataset": str(data), "out_csv": str(root / "metrics.csv")},
    }
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(cfg_path)]) == 0
    return root


class TestGenData:
    def test_writes_manifest_with_requested_clips(self, tmp_path):
        out = tmp_path / "d"
        assert main(["gen-data", "--out", str(out), "--clips", "2", "--seed", "7"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["clips"]) == 2

    def test_same_flags_twice_identical_directories(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen-data", "--out", str(out), "--clips", "1", "--seed", "3"]) == 0
        rels = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert rels
        for rel in rels:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_zero_clips_is_usage_error(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path / "d"), "--clips", "0"])
        assert code == 2
        assert "--clips" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path), "--clips", "1", "--bogus"]) == 2


class TestTrain:
    def test_missing_dataset_key_names_it(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"steps": 1}}))
        assert main(["train", "--config", str(cfg)]) == 2
        assert "train.dataset" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"dataset": "x", "bogus_key": 1}}))
        assert main(["train", "--config", str(cfg)]) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_config_parse_error_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text("{\n  broken\n}")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_override_lands_in_archived_config(self, workspace, tmp_path, capsys):
        cfg_path = workspace / "cfg.json"
        out_dir = tmp_path / "run2"
        code = main(["train", "--config", str(cfg_path),
                     "--override", "train.lr=0.001",
                     "--override", f"train.out_dir={out_dir}",
                     "--override", "train.steps=1"])
        assert code == 0
        archived = json.loads((out_dir / "config.json").read_text())
        assert archived["train"]["lr"] == 0.001

    def test_run_echoes_resolved_config(self, workspace, tmp_path, capsys):
        cfg_path = workspace / "cfg.json"
        out_dir = tmp_path / "run3"
        main(["train", "--config", str(cfg_path),
              "--override", f"train.out_dir={out_dir}", "--override", "train.steps=1"])
        out = capsys.readouterr().out
        assert '"lr": 0.0001' in out and '"window_size": 2' in out

    def test_resume_continues_step_counter(self, workspace, tmp_path):
        cfg_path = workspace / "cfg.json"
        out_dir = tmp_path / "resume_run"
        assert main(["train", "--config", str(cfg_path),
                     "--override", f"train.out_dir={out_dir}",
                     "--override", "train.steps=2"]) == 0
        assert main(["train", "--config", str(cfg_path),
                     "--override", f"train.out_dir={out_dir}",
                     "--override", "train.steps=4",
                     "--resume", str(out_dir / "final.dsq")]) == 0
        steps = [int(line.split(",")[0])
                 for line in (out_dir / "train.csv").read_text().strip().split("\n")[1:]]
        assert steps == [0, 1, 2, 3]


class TestEval:
    def test_writes_four_horizon_rows(self, workspace):
        cfg_path = workspace / "cfg.json"
        code = main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(workspace / "run" / "final.dsq")])
        assert code == 0
        lines = (workspace / "metrics.csv").read_text().strip().split("\n")
        assert len(lines) == 5
        assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1", "3", "5"]

    def test_missing_checkpoint_is_runtime_error(self, workspace, capsys):
        code = main(["eval", "--config", str(workspace / "cfg.json"),
                     "--checkpoint", str(workspace / "nope.dsq")])
        assert code == 1


class TestInfer:
    def test_emits_pfm_and_pgm_per_horizon(self, workspace, tmp_path):
        out = tmp_path / "preview"
        code = main(["infer", "--checkpoint", str(workspace / "run" / "final.dsq"),
                     "--clip", str(workspace / "data" / "clips" / "clip_0000"),
                     "--out", str(out)])
        assert code == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [f"depth_{h}.{ext}" for h in (0, 1, 3, 5) for ext in ("pfm", "pgm")]

    def test_pfm_matches_in_memory_prediction_bitwise(self, workspace, tmp_path):
        out = tmp_path / "preview2"
        main(["render-depth", "--checkpoint", str(workspace / "run" / "final.dsq"),
              "--clip", str(workspace / "data" / "clips" / "clip_0001"),
              "--out", str(out)])
        model = build_model(desk_config(), seed=0)
        load_training_checkpoint(workspace / "run" / "final.dsq", model)
        from depthcast.data import ClipDataset
        ds = ClipDataset(workspace / "data")
        preds = model_predictor(model)(ds[1])
        for h in (0, 1, 3, 5):
            assert np.array_equal(read_pfm(out / f"depth_{h}.pfm"),
                                  preds[h].astype(np.float32))

    def test_pgm_preview_spans_full_range(self, workspace, tmp_path):
        out = tmp_path / "preview3"
        main(["infer", "--checkpoint", str(workspace / "run" / "final.dsq"),
              "--clip", str(workspace / "data" / "clips" / "clip_0000"),
              "--out", str(out)])
        gray = read_pgm(out / "depth_0.pgm")
        assert gray.min() == 0 and gray.max() == 255

    def test_missing_context_frames_is_usage_error(self, workspace, tmp_path, capsys):
        empty = tmp_path / "emptyclip"
        empty.mkdir()
        code = main(["infer", "--checkpoint", str(workspace / "run" / "final.dsq"),
                     "--clip", str(empty), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "context frames" in capsys.readouterr().err
