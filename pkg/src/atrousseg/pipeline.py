"""End-to-end assembly: dataset construction, record splitting, and the
training entry point shared by the CLI and the test-suite."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import fileio, synth
from .augment import PatchRef, split_dataset
from .config import DataConfig, RunConfig, write_snapshot
from .labels import SampleRecord, derive_record
from .models import build_model, param_count, save_checkpoint
from .trainer import TrainResult, evaluate_records, history_to_csv, train


def build_records(data: DataConfig) -> list[SampleRecord]:
    """Materialize SampleRecords from a synthetic recipe or a directory."""
    if data.kind == "synthetic":
        spec = synth.SceneSpec(size=data.size, n_classes=data.n_classes,
                               n_images=data.n_images, channels=data.channels,
                               shapes_per_class=data.shapes_per_class,
                               seed=data.seed, max_extent=dict(data.max_extent))
        pairs = [(s.image, s.mask) for s in synth.generate(spec)]
    else:
        pairs = synth.load_dataset(data.path)
    return [derive_record(img, mask, data.n_classes) for img, mask in pairs]


def split_records(records, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic 3-way split; whole records never straddle splits."""
    refs = [PatchRef(tile_id=i, row=0, col=0, size=1) for i in range(len(records))]
    parts = split_dataset(refs, ratios=tuple(ratios), seed=seed)
    return tuple([records[r.tile_id] for r in part] for part in parts)


def run_training(cfg: RunConfig, out_dir=None):
    """Train per config; writes snapshot, history CSV, checkpoint, metrics.

    Returns (model, TrainResult, dict of artifact paths).
    """
    out = fileio.ensure_dir(out_dir if out_dir is not None else cfg.out_dir)
    write_snapshot(cfg, out / "config.json")

    records = build_records(cfg.data)
    train_recs, val_recs, _ = split_records(records, cfg.data.split, cfg.data.seed)
    if not train_recs or not val_recs:
        raise ValueError("split produced an empty train or val set; "
                         "increase data.n_images or adjust data.split")

    train_cfg = dataclasses.replace(cfg.train, augment=cfg.augment)
    model = build_model(cfg.model, seed=cfg.train.seed)
    result = train(model, train_recs, val_recs, train_cfg)

    history_to_csv(result.history, out / "history.csv")
    ckpt_dir = fileio.ensure_dir(out / "checkpoint")
    save_checkpoint(model, ckpt_dir)
    val_loss, val_mcc = evaluate_records(model, val_recs, train_cfg.loss_id,
                                         train_cfg.micro_batch, cfg.model.n_classes)
    summary = {
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "final_val_loss": val_loss,
        "final_val_mcc": val_mcc,
        "halted": result.halted,
        "param_count": param_count(model),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    paths = {"config": out / "config.json", "history": out / "history.csv",
             "checkpoint": ckpt_dir, "summary": out / "summary.json"}
    return model, result, paths


def load_image(path) -> np.ndarray:
    """Read a (C, H, W) float32 image from NCT1 or PPM."""
    p = Path(path)
    if p.suffix == ".nct":
        arr = fileio.read_nct(p)
        if arr.ndim != 3:
            raise ValueError(f"{p}: expected a (C, H, W) tensor, got shape {arr.shape}")
        return arr
    rgb = fileio.read_ppm(p)
    return (rgb.astype(np.float32) / 255.0).transpose(2, 0, 1)
