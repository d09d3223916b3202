"""Command-line surface: happy paths, artifacts on disk, exit codes, and the
one-line error protocol on stderr."""

import json
import re

import numpy as np
import pytest

from atrousseg import fileio
from atrousseg.cli import main
from atrousseg.models import param_count, build_model, ModelSpec


def write_config(tmp_path, **extra):
    doc = {
        "model": {"depth": "d6", "initial_filters": 4, "n_classes": 3,
                  "input_channels": 3, "head": "cmtsk"},
        "train": {"lr": 0.005, "micro_batch": 2, "max_epochs": 2, "seed": 2,
                  "loss_id": "tanimoto-complement", "plateau_patience": 5},
        "data": {"kind": "synthetic", "size": 64, "n_classes": 3,
                 "n_images": 4, "seed": 1, "split": [0.5, 0.25, 0.25]},
        "out_dir": str(tmp_path / "run"),
    }
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def stderr_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    m = re.fullmatch(r'error kind=(\w+) msg="(.*)"', err)
    assert m, f"stderr line not in protocol form: {err!r}"
    return m.group(1), m.group(2)


class TestErrorProtocol:
    def test_missing_config_is_data_error(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "none.json")])
        assert code == 2
        kind, msg = stderr_error(capsys)
        assert kind == "data" and "none.json" in msg

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"trian": {}}))
        assert main(["train", "--config", str(path)]) == 1
        kind, msg = stderr_error(capsys)
        assert kind == "config" and "trian" in msg

    def test_invalid_json_is_config_error(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text("{oops")
        assert main(["train", "--config", str(path)]) == 1
        assert stderr_error(capsys)[0] == "config"

    def test_bad_gt_flag_is_config_error(self, tmp_path, capsys):
        code = main(["loss-field", "--loss", "d1", "--gt", "1,0,1",
                     "--out", str(tmp_path / "f.csv")])
        assert code == 1
        assert stderr_error(capsys)[0] == "config"


class TestLossField:
    def test_grid_written(self, tmp_path, capsys):
        out = tmp_path / "field.csv"
        code = main(["loss-field", "--loss", "tanimoto-complement",
                     "--gt", "1,0", "--grid", "11", "--out", str(out)])
        assert code == 0
        assert "121 samples" in capsys.readouterr().out
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "px,py,value,gx,gy,laplacian"
        assert len(lines) == 122


class TestParamCount:
    def test_json_line_matches_library(self, capsys):
        code = main(["param-count", "--model", "d6", "--head", "single",
                     "--filters", "4", "--classes", "3", "--channels", "3"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        spec = ModelSpec(depth="d6", initial_filters=4, n_classes=3,
                         input_channels=3, head="single")
        assert doc["param_count"] == param_count(build_model(spec, seed=0))
        assert doc["depth"] == "d6"


class TestEval:
    def test_identical_masks_score_one(self, tmp_path, capsys, rng):
        mask = rng.integers(0, 3, (20, 20)).astype(np.uint8)
        pred = tmp_path / "pred.pgm"
        ref = tmp_path / "ref.pgm"
        fileio.write_pgm(pred, mask)
        fileio.write_pgm(ref, mask)
        out = tmp_path / "eval"
        code = main(["eval", "--pred", str(pred), "--ref", str(ref),
                     "--out", str(out)])
        assert code == 0
        overall = json.loads(capsys.readouterr().out)
        assert overall["oa"] == 1.0 and overall["mcc"] == 1.0
        saved = json.loads((out / "metrics.json").read_text())
        assert saved["overall"] == overall
        emap = fileio.read_ppm(out / "error_map.ppm")
        assert (emap == [0, 200, 0]).all()  # everything correct -> green

    def test_shape_mismatch_is_data_error(self, tmp_path, capsys):
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        fileio.write_pgm(a, np.zeros((4, 4), dtype=np.uint8))
        fileio.write_pgm(b, np.zeros((5, 4), dtype=np.uint8))
        code = main(["eval", "--pred", str(a), "--ref", str(b),
                     "--out", str(tmp_path / "e")])
        assert code == 2
        assert stderr_error(capsys)[0] == "data"


class TestSynthAndLabels:
    def test_synth_writes_dataset(self, tmp_path, capsys):
        cfg = write_config(tmp_path, out_dir=str(tmp_path / "ds"))
        assert main(["synth", "--config", str(cfg)]) == 0
        assert "wrote 4 scenes" in capsys.readouterr().out
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert manifest["n_images"] == 4
        assert (tmp_path / "ds" / "scene_0003.ppm").is_file()

    def test_derive_labels_round_trip(self, tmp_path, capsys):
        cfg = write_config(tmp_path, out_dir=str(tmp_path / "ds"))
        main(["synth", "--config", str(cfg)])
        out = tmp_path / "labels"
        code = main(["derive-labels", "--data", str(tmp_path / "ds"),
                     "--out", str(out), "--classes", "3", "--workers", "2"])
        assert code == 0
        onehot = fileio.read_nct(out / "record_0000.onehot.nct")
        assert onehot.shape == (3, 64, 64)
        assert np.allclose(onehot.sum(axis=0), 1.0)
        distance = fileio.read_nct(out / "record_0000.distance.nct")
        assert distance.shape == (3, 64, 64)
        assert distance.max() <= 1.0 + 1e-6

    def test_derive_labels_missing_dataset(self, tmp_path, capsys):
        code = main(["derive-labels", "--data", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "x")])
        assert code == 2
        assert stderr_error(capsys)[0] == "data"


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One small end-to-end training run shared by the pipeline tests."""
    tmp_path = tmp_path_factory.mktemp("cli_train")
    cfg = write_config(tmp_path)
    code = main(["train", "--config", str(cfg)])
    assert code == 0
    return tmp_path


class TestTrainPipeline:
    def test_artifacts(self, trained_run):
        run = trained_run / "run"
        history = (run / "history.csv").read_text().strip().splitlines()
        assert history[0] == "epoch,train_loss,val_loss,val_mcc,lr"
        assert len(history) == 3  # header + 2 epochs
        summary = json.loads((run / "summary.json").read_text())
        assert summary["epochs_run"] == 2
        assert not summary["halted"]
        assert summary["param_count"] > 0
        manifest = json.loads((run / "checkpoint" / "manifest.json").read_text())
        assert manifest["format"] == "nct1"

    def test_snapshot_rerun_reproduces_history(self, trained_run):
        run = trained_run / "run"
        rerun_out = trained_run / "rerun"
        code = main(["train", "--config", str(run / "config.json"),
                     "--out", str(rerun_out)])
        assert code == 0
        assert (rerun_out / "history.csv").read_text() == \
            (run / "history.csv").read_text()

    def test_infer_then_eval(self, trained_run, capsys):
        run = trained_run / "run"
        # reuse a training scene as the inference tile
        ds = trained_run / "ds"
        cfg = write_config(trained_run, out_dir=str(ds))
        main(["synth", "--config", str(cfg)])
        capsys.readouterr()

        out = trained_run / "infer"
        code = main(["infer", "--checkpoint", str(run / "checkpoint"),
                     "--image", str(ds / "scene_0000.ppm"),
                     "--out", str(out), "--window", "64"])
        assert code == 0
        probs = fileio.read_nct(out / "probabilities.nct")
        assert probs.shape == (3, 64, 64)
        assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-5)
        pred = fileio.read_pgm(out / "prediction.pgm")
        assert pred.shape == (64, 64)
        assert (pred == probs.argmax(axis=0)).all()
        capsys.readouterr()

        code = main(["eval", "--pred", str(out / "prediction.pgm"),
                     "--ref", str(ds / "scene_0000.pgm"),
                     "--out", str(trained_run / "metrics")])
        assert code == 0
        overall = json.loads(capsys.readouterr().out)
        assert 0.0 <= overall["oa"] <= 1.0

    def test_corrupt_checkpoint_is_numeric_error(self, trained_run, capsys):
        run = trained_run / "run"
        import shutil
        broken = trained_run / "broken_ckpt"
        shutil.copytree(run / "checkpoint", broken)
        manifest = json.loads((broken / "manifest.json").read_text())
        victim = sorted(manifest["tensors"].values())[0]
        arr = fileio.read_nct(broken / victim)
        fileio.write_nct(broken / victim, np.full_like(arr, np.nan))

        ds = trained_run / "ds"
        code = main(["infer", "--checkpoint", str(broken),
                     "--image", str(ds / "scene_0000.ppm"),
                     "--out", str(trained_run / "x"), "--window", "64"])
        assert code == 3
        kind, msg = stderr_error(capsys)
        assert kind == "numeric" and "non-finite" in msg


class TestLrFind:
    def test_curve_and_suggestion(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "sweep"
        code = main(["lr-find", "--config", str(cfg), "--out", str(out),
                     "--steps", "12", "--lr-lo", "1e-5", "--lr-hi", "1e-1"])
        assert code == 0
        assert "suggested lr" in capsys.readouterr().out
        curve = (out / "lr_curve.csv").read_text().strip().splitlines()
        assert curve[0] == "lr,loss,smoothed"
        assert len(curve) == 13
        doc = json.loads((out / "lr_suggestion.json").read_text())
        assert not doc["diverged"]
        assert doc["suggestion"] > 0
