"""
CLI entry point for yoro.

Every command prints a single JSON document on stdout (or writes files);
diagnostics go to stderr. Exit status: 0 success, 1 runtime failure,
2 usage error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, List, Optional

import numpy as np

from yoro._checkpoint import load_checkpoint, save_checkpoint
from yoro._errors import InputError, YoroError
from yoro._log import get_logger, set_debug
from yoro.config import VARIANTS, Config, load_config
from yoro.data import (ANNOTATIONS, SyntheticSpec, export_samples, generate, ingest, read_image,
                       resize_image, tokenize, write_pgm)

logger = get_logger("cli")


def _emit(document: Any) -> None:
    sys.stdout.write(json.dumps(document, sort_keys=True) + "\n")
    sys.stdout.flush()


def _annotation_file(path: str) -> Path:
    p = Path(path)
    return p / ANNOTATIONS if p.is_dir() else p


def _load_samples(path: str, config: Config):
    mc = config.model
    samples = ingest(_annotation_file(path), resize=(mc.image_height, mc.image_width))
    if not samples:
        raise InputError(f"no usable samples in {path}", path=path)
    return samples


def _load_pixels(path: str, model):
    image = read_image(path)
    height, width = image.shape[:2]
    image = resize_image(image, model.config.image_width, model.config.image_height)
    return image.astype(np.float64) / 255.0, width, height


def _train_config(args) -> Config:
    config = load_config(args.config)
    model_changes, train_changes = {}, {}
    if args.variant is not None:
        model_changes["variant"] = args.variant
    if args.epochs is not None:
        train_changes["epochs"] = args.epochs
    if args.batch_size is not None:
        train_changes["batch_size"] = args.batch_size
    if args.seed is not None:
        train_changes["seed"] = args.seed
    if getattr(args, "no_oa", False):
        train_changes["use_oa"] = False
    if getattr(args, "no_pa", False):
        train_changes["use_pa"] = False
    if args.no_progress:
        train_changes["progress"] = False
    return Config(model=config.model.replace(**model_changes),
                  train=config.train.replace(**train_changes))


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------

def cmd_gen(args) -> None:
    # object sides scale with the canvas: 12..20 pixels at 64
    spec = SyntheticSpec(seed=args.seed, size=args.size, min_side=args.size * 3 // 16,
                         max_side=args.size * 5 // 16)
    ann = export_samples(generate(spec, args.count), args.out)
    _emit({"annotations": str(ann), "count": args.count, "seed": args.seed})


def cmd_train(args) -> None:
    from yoro.runtime import train

    config = _train_config(args)
    samples = _load_samples(args.data, config)
    val = _load_samples(args.val, config) if args.val else None
    out = Path(args.out)
    metrics = Path(args.metrics) if args.metrics else out.with_name(out.name + ".metrics.jsonl")
    result = train(config, samples, val_samples=val, metrics_path=metrics)
    save_checkpoint(out, result.model, result.vocab,
                    extra={"train": config.train.to_dict(), "samples": len(samples)})
    _emit({"checkpoint": str(out), "metrics": str(metrics),
           "final": result.history[-1] if result.history else None})


def cmd_eval(args) -> None:
    from yoro.runtime import evaluate

    model, vocab, _ = load_checkpoint(args.ckpt)
    samples = _load_samples(args.data, Config(model=model.config))
    evaluation = evaluate(model, samples, vocab)
    if args.records:
        with open(args.records, "w", encoding="utf-8", newline="\n") as f:
            for record in evaluation.records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    _emit(evaluation.to_dict())


def cmd_infer(args) -> None:
    from yoro.runtime import attention, heatmap_image, infer

    model, vocab, _ = load_checkpoint(args.ckpt)
    pixels, width, height = _load_pixels(args.image, model)
    if args.heatmap:
        weights, result = attention(model, vocab, pixels, args.phrase, layer=args.layer)
        grid = model.config.grid()
        write_pgm(args.heatmap, heatmap_image(weights, grid.rows, grid.cols))
    else:
        result = infer(model, vocab, pixels, args.phrase)
    document = result.to_dict(width, height)
    document["phrase"] = args.phrase
    if args.heatmap:
        document["heatmap"] = args.heatmap
    _emit(document)


def cmd_bench(args) -> None:
    from yoro.bench import benchmark

    model, vocab, _ = load_checkpoint(args.ckpt)
    if args.image:
        pixels, _, _ = _load_pixels(args.image, model)
    else:
        pixels = np.full((model.config.image_height, model.config.image_width, 3), 0.5)
    ids = tokenize(args.phrase, vocab, model.config.m_max)
    report = benchmark(model, ids, pixels, iterations=args.iters, warmup=args.warmup,
                       batch=args.batch)
    _emit(report.to_dict())


def cmd_attn(args) -> None:
    from yoro.runtime import attention, heatmap_image

    model, vocab, _ = load_checkpoint(args.ckpt)
    pixels, _, _ = _load_pixels(args.image, model)
    weights, result = attention(model, vocab, pixels, args.phrase, layer=args.layer,
                                token=args.token, per_head=args.per_head)
    grid = model.config.grid()
    mean_map = weights.mean(axis=0) if args.per_head else weights
    write_pgm(args.out, heatmap_image(mean_map, grid.rows, grid.cols))
    raw = Path(args.out).with_suffix(".json")
    raw.write_text(json.dumps({
        "layer": args.layer,
        "token": result.token if args.token is None else args.token,
        "rows": grid.rows,
        "cols": grid.cols,
        "weights": weights.tolist(),
    }, sort_keys=True), encoding="utf-8")
    _emit({"heatmap": args.out, "weights": str(raw), "token": result.token,
           "box": list(result.box.as_tuple())})


def cmd_ablate(args) -> None:
    from yoro.runtime import ablate

    config = _train_config(args)
    samples = _load_samples(args.data, config)
    val = _load_samples(args.val, config)
    summary = ablate(config, samples, val, seeds=args.seeds, variants=args.variants,
                     metrics_path=args.metrics)
    _emit(summary)


def cmd_info(args) -> None:
    import yoro

    config = load_config(args.config)
    _emit({"version": yoro.__version__, "numpy": np.__version__,
           "config": {"model": config.model.to_dict(), "train": config.train.to_dict()}})


# ---------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------

def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (default: $YORO_CONFIG, then built-ins)")
    p.add_argument("--data", required=True, help="annotation file or directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--no-progress", action="store_true", help="hide the progress bar")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="yoro", description="Encoder-only visual grounding")
    parser.add_argument("--debug", action="store_true", help="verbose diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=64, help="canvas side in pixels")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    _training_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--val", help="held-out annotation file or directory")
    p.add_argument("--metrics", help="metrics log (default: <out>.metrics.jsonl)")
    p.add_argument("--no-oa", action="store_true", help="drop the object-text alignment loss")
    p.add_argument("--no-pa", action="store_true", help="drop the patch-text alignment loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy@0.5 on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--records", help="write per-sample IoU records here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="ground one phrase in one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--phrase", required=True)
    p.add_argument("--heatmap", help="write the selected token's attention as PGM")
    p.add_argument("--layer", type=int, default=-1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="latency breakdown and FPS")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--image")
    p.add_argument("--phrase", default="the red circle")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attn", help="export detection-token attention over patches")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--phrase", required=True)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--out", required=True, help="PGM output; raw weights go next to it with a .json suffix")
    p.add_argument("--token", type=int, help="detection token (default: the selected one)")
    p.add_argument("--per-head", action="store_true")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("ablate", help="train and score the ablation variants")
    _training_flags(p)
    p.add_argument("--val", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--variants", nargs="+")
    p.add_argument("--metrics", help="append results to this log")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("info", help="show version and effective configuration")
    p.add_argument("--config")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point for the yoro console script."""
    args = build_parser().parse_args(argv)
    if args.debug:
        set_debug(True)
    try:
        args.func(args)
    except (YoroError, OSError) as e:
        logger.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
