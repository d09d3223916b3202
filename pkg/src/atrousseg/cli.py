"""Command-line surface.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.  Failures print exactly one machine-parsable line on stderr:
``error kind=<config|data|numeric> msg="..."``.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate, fileio, losses, pipeline, synth
from .config import apply_overrides, load_config
from .labels import derive_record
from .models import DEPTHS, HEADS, ModelSpec, build_model, load_checkpoint, param_count
from .trainer import lr_finder


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _config_error(msg) -> CliError:
    return CliError("config", 1, str(msg))


def _data_error(msg) -> CliError:
    return CliError("data", 2, str(msg))


def _numeric_error(msg) -> CliError:
    return CliError("numeric", 3, str(msg))


def _load_run_config(args):
    try:
        cfg = load_config(args.config)
        return apply_overrides(
            cfg,
            seed=getattr(args, "seed", None),
            epochs=getattr(args, "epochs", None),
            model=getattr(args, "model", None),
            head=getattr(args, "head", None),
            loss=getattr(args, "loss", None),
            out_dir=getattr(args, "out", None),
        )
    except FileNotFoundError as exc:
        raise _data_error(exc) from exc
    except (ValueError, TypeError, KeyError) as exc:
        raise _config_error(exc) from exc


def _build_dataset(cfg, workers: int = 1):
    try:
        records = pipeline.build_records(cfg.data)
    except (FileNotFoundError, OSError) as exc:
        raise _data_error(exc) from exc
    except ValueError as exc:
        raise _data_error(exc) from exc
    return records


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    d = cfg.data
    spec = synth.SceneSpec(size=d.size, n_classes=d.n_classes, n_images=d.n_images,
                           channels=d.channels, shapes_per_class=d.shapes_per_class,
                           seed=d.seed, max_extent=dict(d.max_extent))
    out = fileio.ensure_dir(Path(cfg.out_dir))
    synth.write_dataset(synth.generate(spec), out, spec)
    print(f"wrote {d.n_images} scenes to {out}")
    return 0


def cmd_derive_labels(args) -> int:
    try:
        pairs = synth.load_dataset(args.data)
    except (FileNotFoundError, OSError, json.JSONDecodeError, ValueError) as exc:
        raise _data_error(exc) from exc
    out = fileio.ensure_dir(args.out)

    def derive_one(item):
        i, (image, mask) = item
        rec = derive_record(image, mask, int(mask.max()) + 1 if args.classes is None
                            else args.classes)
        stem = out / f"record_{i:04d}"
        for name in ("onehot", "boundary", "distance", "hsv"):
            fileio.write_nct(f"{stem}.{name}.nct", getattr(rec, name))
        return i

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        done = list(pool.map(derive_one, enumerate(pairs)))
    print(f"derived labels for {len(done)} records under {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    try:
        model, result, paths = pipeline.run_training(cfg)
    except (FileNotFoundError, OSError) as exc:
        raise _data_error(exc) from exc
    except ValueError as exc:
        raise _config_error(exc) from exc
    if result.halted:
        raise _numeric_error(
            f"non-finite loss after epoch {len(result.history)}; "
            f"best checkpoint (epoch {result.best_epoch}) restored and saved")
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; "
          f"best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; "
          f"final val MCC {last.val_mcc:.4f}; artifacts in {paths['checkpoint'].parent}")
    return 0


def cmd_lr_find(args) -> int:
    cfg = _load_run_config(args)
    records = _build_dataset(cfg)
    train_recs, _, _ = pipeline.split_records(records, cfg.data.split, cfg.data.seed)
    if not train_recs:
        raise _data_error("no training records after split")
    model = build_model(cfg.model, seed=cfg.train.seed)
    params = [p for _, p in model.named_parameters()]
    mb = cfg.train.micro_batch
    batches = [train_recs[i:i + mb] for i in range(0, len(train_recs), mb)]

    from .trainer import _batch_loss

    def loss_fn(chunk):
        return _batch_loss(model, chunk, cfg.train.loss_id)[0]

    res = lr_finder(loss_fn, params, batches, lr_lo=args.lr_lo, lr_hi=args.lr_hi,
                    steps=args.steps)
    out = fileio.ensure_dir(Path(cfg.out_dir))
    with open(out / "lr_curve.csv", "w") as fh:
        fh.write("lr,loss,smoothed\n")
        for row in zip(res.lrs, res.losses, res.smoothed):
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")
    with open(out / "lr_suggestion.json", "w") as fh:
        json.dump({"suggestion": res.suggestion, "diverged": res.diverged,
                   "diagnostic": res.diagnostic}, fh, indent=2)
    if res.diverged:
        raise _numeric_error(f"lr finder diverged: {res.diagnostic}")
    print(f"suggested lr: {res.suggestion:.3e} (curve: {out / 'lr_curve.csv'})")
    return 0


def cmd_infer(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
        tile = pipeline.load_image(args.image)
    except (FileNotFoundError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise _data_error(exc) from exc
    try:
        probs = evaluate.sliding_window_inference(tile, model, window=args.window)
    except ValueError as exc:
        raise _data_error(exc) from exc
    if not np.isfinite(probs).all():
        raise _numeric_error("non-finite probabilities produced during inference")
    out = fileio.ensure_dir(args.out)
    fileio.write_nct(out / "probabilities.nct", probs)
    fileio.write_pgm(out / "prediction.pgm", probs.argmax(axis=0).astype(np.uint8))
    print(f"wrote probabilities and prediction to {out}")
    return 0


def cmd_eval(args) -> int:
    try:
        pred = fileio.read_pgm(args.pred)
        ref = fileio.read_pgm(args.ref)
        cm = evaluate.confusion(pred, ref, ignore=args.ignore)
        result = evaluate.metrics(cm, exclude=set(args.exclude or []))
    except (FileNotFoundError, OSError, ValueError) as exc:
        raise _data_error(exc) from exc
    out = fileio.ensure_dir(args.out)
    with open(out / "metrics.json", "w") as fh:
        json.dump(result, fh, indent=2)
    evaluate.write_error_map(out / "error_map.ppm",
                             evaluate.error_map(pred, ref, ignore=args.ignore))
    print(json.dumps(result["overall"]))
    return 0


def cmd_loss_field(args) -> int:
    try:
        gt = tuple(float(v) for v in args.gt.split(","))
        if len(gt) != 2:
            raise ValueError("--gt expects two comma-separated values, e.g. 1,0")
        field = losses.field_sample(args.loss, l=gt, grid_n=args.grid)
    except ValueError as exc:
        raise _config_error(exc) from exc
    out = Path(args.out)
    if out.parent != Path(""):
        fileio.ensure_dir(out.parent)
    losses.field_to_csv(field, out)
    print(f"wrote {args.grid * args.grid} samples to {out}")
    return 0


def cmd_param_count(args) -> int:
    try:
        spec = ModelSpec(depth=args.model, initial_filters=args.filters,
                         n_classes=args.classes, input_channels=args.channels,
                         head=args.head)
        model = build_model(spec, seed=0)
    except ValueError as exc:
        raise _config_error(exc) from exc
    print(json.dumps({"depth": spec.depth, "head": spec.head,
                      "initial_filters": spec.initial_filters,
                      "input_channels": spec.input_channels,
                      "n_classes": spec.n_classes,
                      "param_count": param_count(model)}))
    return 0


def _add_config_flags(p, with_overrides: bool = True):
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    if with_overrides:
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--model", choices=DEPTHS)
        p.add_argument("--head", choices=HEADS)
        p.add_argument("--loss", choices=losses.LOSS_IDS)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atrousseg",
        description="Multitask semantic segmentation with atrous residual encoders")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_flags(p, with_overrides=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("derive-labels", help="derive target channels for a dataset")
    p.add_argument("--data", required=True, help="dataset directory (manifest.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_derive_labels)

    p = sub.add_parser("train", help="train a model per config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("lr-find", help="learning-rate range sweep")
    _add_config_flags(p)
    p.add_argument("--lr-lo", type=float, default=1e-6)
    p.add_argument("--lr-hi", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.set_defaults(func=cmd_lr_find)

    p = sub.add_parser("infer", help="sliding-window inference over a tile")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--image", required=True, help="input tile (.ppm or .nct)")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=256)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metrics between predicted and reference masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--ignore", type=int)
    p.add_argument("--exclude", type=int, nargs="*",
                   help="class ids excluded from avg_F1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-field", help="sample a loss surface on [0,1]^2")
    p.add_argument("--loss", required=True, choices=losses.LOSS_IDS)
    p.add_argument("--gt", default="1,0", help="ground-truth pair, e.g. 1,0")
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_loss_field)

    p = sub.add_parser("param-count", help="parameter count for a model spec")
    p.add_argument("--model", default="d6", choices=DEPTHS)
    p.add_argument("--head", default="single", choices=HEADS)
    p.add_argument("--filters", type=int, default=32)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--channels", type=int, default=3)
    p.set_defaults(func=cmd_param_count)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        msg = str(exc).replace('"', "'").replace("\n", " ")
        print(f'error kind={exc.kind} msg="{msg}"', file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
