"""Command-line entry point: analyze, train, eval, predict, selftest.

Exit codes: 0 success, 1 selftest failure, 2 config error, 3 data error,
4 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, DataError, NumericError

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _write_json(obj, path=None) -> None:
    text = json.dumps(obj, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_analyze(args) -> int:
    from .complexity import analyze
    from .config import profile

    enc, dec, (h, w) = profile(args.profile)
    h = args.height or h
    w = args.width or w
    report = analyze(enc, dec, h, w, profile=args.profile).to_dict()
    if args.json:
        _write_json(report, args.json)
    summary = {k: report[k] for k in ("profile", "height", "width", "params_total", "omega_eq1", "flops_detailed")}
    _write_json(summary if args.json else report)
    return 0


def _dataset(source: str, synth, which: str = "train"):
    from .data import load_dataset, synth_dataset

    if source == "synth":
        if which == "train":
            return synth_dataset(synth.seed, synth.n_samples, synth.height, synth.width, synth.n_classes)
        return synth_dataset(synth.eval_seed, synth.eval_samples, synth.height, synth.width, synth.n_classes)
    if not os.path.isdir(source):
        raise DataError(f"data directory {source} not found")
    return load_dataset(source)


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .config import load_config
    from .train import train

    train_cfg, enc, dec, synth = load_config(args.config)
    if args.data == "synth" and synth.n_classes != dec.num_classes:
        raise ConfigError(f"synth n_classes {synth.n_classes} != decoder num_classes {dec.num_classes}")
    dataset = _dataset(args.data, synth)
    eval_set = _dataset(args.eval_data, synth, "eval") if args.eval_data else (
        _dataset("synth", synth, "eval") if args.data == "synth" else None)
    metrics_path = args.metrics or os.path.join(os.path.dirname(os.path.abspath(args.out)), "metrics.jsonl")
    with open(metrics_path, "w") as log:
        def on_event(event):
            log.write(json.dumps(event) + "\n")
            log.flush()
        result = train(train_cfg, enc, dec, dataset, eval_set, on_event=on_event)
    save_checkpoint(args.out, result.checkpoint())
    final = [e for e in result.history if e["event"] == "eval"][-1:]
    print(json.dumps({"checkpoint": args.out, "metrics": metrics_path, "final": final[0] if final else None}))
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_dataset
    from .train import evaluate

    ckpt = load_checkpoint(args.ckpt)
    if not os.path.isdir(args.data):
        raise DataError(f"data directory {args.data} not found")
    report = evaluate(ckpt, load_dataset(args.data), batch_size=args.batch_size)
    _write_json(report, args.out)
    if args.out:
        print(json.dumps({"miou": report["miou"], "pixel_acc": report["pixel_acc"]}))
    return 0


def cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_image_pgm_ppm, write_label_pgm
    from .tensor import Tensor

    model = load_checkpoint(args.ckpt).build_model()
    image = load_image_pgm_ppm(args.image)
    if image.shape[2] != model.enc_cfg.in_channels:
        raise DataError(f"{args.image} has {image.shape[2]} channels, model expects {model.enc_cfg.in_channels}")
    mask = model.predict(Tensor(image)).astype(np.uint8)
    write_label_pgm(args.out, mask)
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    return 0 if selftest.run() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter and FLOP report")
    p.add_argument("--profile", choices=["ade20k", "cityscapes", "toy"], default="ade20k")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--json", help="write the full report here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory or 'synth'")
    p.add_argument("--eval-data", help="held-out dataset directory or 'synth'")
    p.add_argument("--out", required=True, help="checkpoint path (.ssfm)")
    p.add_argument("--metrics", help="JSONL log path (default: metrics.jsonl next to --out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write the argmax class map of one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
