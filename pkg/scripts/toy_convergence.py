"""Small-scale convergence experiments on synthetic scenes.

Two comparisons, both on a tiny d6 trunk so a run takes seconds per epoch
on CPU:

  losses  race loss functions on a single-head model and report the first
          epoch at which training MCC crosses a threshold;
  heads   train mtsk vs cmtsk under augmentation and report how much the
          validation MCC still wobbles over the final stretch.

Every run writes a history CSV next to a summary.json, so the traces can
be replotted later.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from atrousseg.augment import AugmentConfig
from atrousseg.labels import derive_record
from atrousseg.models import ModelSpec, build_model
from atrousseg.synth import SceneSpec, generate
from atrousseg.trainer import TrainConfig, history_to_csv, train


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Toy convergence comparisons")
    parser.add_argument("mode", choices=("losses", "heads"))
    parser.add_argument("--out", default="runs/toy_convergence")
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--size", type=int, default=64, help="Scene edge length")
    parser.add_argument("--images", type=int, default=12,
                        help="Scenes to generate (first 8 train, rest validate)")
    parser.add_argument("--filters", type=int, default=4)
    parser.add_argument("--mcc-threshold", type=float, default=0.9)
    parser.add_argument("--losses", nargs="*",
                        default=["tanimoto-complement", "d1"],
                        help="Loss ids to race in 'losses' mode")
    parser.add_argument("--augment", action="store_true",
                        help="Enable augmentation (implied in 'heads' mode)")
    parser.add_argument("--tail", type=int, default=30,
                        help="Epoch window for the stability variance")
    return parser.parse_args()


def make_records(args):
    scenes = generate(SceneSpec(size=args.size, n_classes=4,
                                n_images=args.images, seed=5))
    records = [derive_record(s.image, s.mask, 4) for s in scenes]
    return records[:8], records[8:]


def run_one(args, tag: str, head: str, loss_id: str, train_recs, val_recs,
            augment: AugmentConfig | None, out: Path):
    spec = ModelSpec(depth="d6", initial_filters=args.filters, n_classes=4,
                     input_channels=3, head=head)
    model = build_model(spec, seed=args.seed)
    cfg = TrainConfig(lr=args.lr, micro_batch=4, max_epochs=args.epochs,
                      seed=args.seed, loss_id=loss_id, plateau_patience=100,
                      augment=augment)
    start = time.monotonic()
    result = train(model, train_recs, val_recs, cfg)
    elapsed = time.monotonic() - start
    history_to_csv(result.history, out / f"history_{tag}.csv")
    print(f"  {tag}: {len(result.history)} epochs in {elapsed:.0f}s, "
          f"best val loss {result.best_val_loss:.4f} at epoch {result.best_epoch}")
    return result


def first_crossing(history, threshold: float):
    for row in history:
        if row.train_mcc >= threshold:
            return row.epoch
    return None


def main() -> None:
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_recs, val_recs = make_records(args)
    augment = AugmentConfig() if (args.augment or args.mode == "heads") else None

    summary: dict = {"mode": args.mode, "lr": args.lr, "seed": args.seed,
                     "epochs": args.epochs, "runs": {}}
    if args.mode == "losses":
        print(f"racing {args.losses} to train MCC {args.mcc_threshold}")
        for loss_id in args.losses:
            result = run_one(args, loss_id, "single", loss_id,
                             train_recs, val_recs, augment, out)
            epoch = first_crossing(result.history, args.mcc_threshold)
            summary["runs"][loss_id] = {
                "first_epoch_at_threshold": epoch,
                "final_train_mcc": result.history[-1].train_mcc,
            }
            label = epoch if epoch is not None else f"not within {args.epochs}"
            print(f"  {loss_id}: threshold reached at epoch {label}")
    else:
        print(f"comparing heads over {args.epochs} epochs "
              f"(variance window: last {args.tail})")
        for head in ("cmtsk", "mtsk"):
            result = run_one(args, head, head, "tanimoto-complement",
                             train_recs, val_recs, augment, out)
            tail = [r.val_mcc for r in result.history[-args.tail:]]
            summary["runs"][head] = {
                "val_mcc_tail_var": float(np.var(tail)),
                "val_mcc_tail_mean": float(np.mean(tail)),
            }
            print(f"  {head}: tail val-MCC mean {np.mean(tail):.4f}, "
                  f"variance {np.var(tail):.3e}")

    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"histories and summary.json written to {out}/")


if __name__ == "__main__":
    main()
