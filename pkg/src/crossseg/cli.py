"""Command-line entry point: synth, train, eval, infer, selfcheck.

Exit codes: 0 success, 1 self-check failure, 2 usage or configuration
error, 3 numerical abort during training.
"""

import argparse
import json
import os
import sys

import numpy as np

from .blocks import CrossScanNet, load_model
from .config import (CliConfig, DatasetSpec, config_to_dict, dataclass_from_dict,
                     desk_config, load_config)
from .data import load_split, read_manifest, resize_bilinear, synth_generate
from .errors import (CheckpointError, ConfigError, DatasetError, NumericsError,
                     ShapeError)
from .metrics import evaluate_dataset
from .netpbm import read_ppm, write_mask, write_pgm
from .selfcheck import format_report, run_selfcheck
from .train import predict_probs, train_loop

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _load_cli_config(path) -> CliConfig:
    return load_config(path) if path else desk_config()


def cmd_synth(args) -> int:
    if args.print_defaults:
        print(json.dumps(config_to_dict(desk_config()), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.out:
        raise ConfigError("synth needs --out (or --print-defaults)")
    spec = desk_config().dataset
    if args.spec:
        try:
            with open(args.spec) as handle:
                doc = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read spec {args.spec}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed spec {args.spec}: {exc}") from exc
        spec = dataclass_from_dict(DatasetSpec, doc, where="dataset")
    overrides = {k: getattr(args, k) for k in ("count", "size", "seed") if getattr(args, k) is not None}
    if overrides:
        fields = dict(spec.__dict__)
        fields.update({"image_size" if k == "size" else k: v for k, v in overrides.items()})
        spec = DatasetSpec(**fields).validate()
    manifest = synth_generate(spec, args.out)
    print(manifest)
    return EXIT_OK


def _apply_ablation_flags(cfg: CliConfig, args) -> CliConfig:
    model = cfg.model
    if args.no_cmd:
        model.use_cmd = False
    if args.no_msa:
        model.use_msa = False
    if args.no_fd:
        model.use_fd = False
    if args.attention:
        model.attention = args.attention
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg.validate()


def cmd_train(args) -> int:
    cfg = _apply_ablation_flags(_load_cli_config(args.config), args)
    manifest = read_manifest(args.data)
    data_size = manifest.get("spec", {}).get("image_size")
    if data_size != cfg.model.input_size:
        raise ConfigError(
            f"dataset images are {data_size}x{data_size} but the model wants "
            f"{cfg.model.input_size}x{cfg.model.input_size}")
    train_samples = load_split(args.data, "train")
    val_samples = load_split(args.data, "test")
    model = CrossScanNet(cfg.model, seed=cfg.train.seed)

    def show(record):
        print(json.dumps(record))

    out = train_loop(model, train_samples, val_samples, cfg.train, cfg.augment,
                     out_dir=args.out, on_epoch=show)
    print(f"best val mDice {out['best_val_mdice']:.4f} after {out['steps']} steps")
    print(out["checkpoint_path"])
    return EXIT_OK


def _predict_split(model, samples, batch_size: int = 8):
    preds = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        probs = predict_probs(model, np.stack([s.image for s in batch]))
        preds.extend(probs[:, 0])
    return preds


def cmd_eval(args) -> int:
    model, _meta = load_model(args.model)
    samples = load_split(args.data, args.split)
    size = model.config.input_size
    for sample in samples:
        if sample.mask.shape != (size, size):
            raise ConfigError(
                f"sample {sample.id} is {sample.mask.shape} but the checkpoint "
                f"expects {size}x{size}")
    preds = _predict_split(model, samples)
    report = evaluate_dataset(preds, [s.mask for s in samples],
                              ids=[s.id for s in samples])
    if args.report:
        with open(args.report, "w") as handle:
            handle.write(report.to_json())
            handle.write("\n")
    print(report.table())
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _meta = load_model(args.model)
    image = read_ppm(args.image)
    size = model.config.input_size
    h, w = image.shape[1:]
    resized = resize_bilinear(image, size, size)
    prob = predict_probs(model, resized[None])[0, 0]
    prob = resize_bilinear(prob, h, w)
    write_mask(args.out, (prob >= 0.5).astype(np.uint8))
    if args.prob:
        write_pgm(args.prob, np.rint(prob * 255).astype(np.uint8))
    print(args.out)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(inject_fault=args.inject_fault)
    print(format_report(results))
    return EXIT_OK if all(ok for _, ok, *_ in results) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossseg",
        description="Cross-scanning state-space lesion segmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic lesion dataset")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--spec", help="JSON file with dataset fields")
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--size", type=int, help="square image size in pixels")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--print-defaults", action="store_true",
                   help="print the default configuration document and exit")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--no-cmd", action="store_true", help="replace cross-scan decoding with plain fusion")
    p.add_argument("--no-msa", action="store_true", help="drop the multi-scale skip blocks")
    p.add_argument("--no-fd", action="store_true", help="drop the fusion decoder")
    p.add_argument("--attention", choices=("gab", "cbam"), help="attention variant")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", help="split name (default: test)")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="segment one image")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--image", required=True, help="input image (binary PPM)")
    p.add_argument("--out", required=True, help="output binary mask (PGM)")
    p.add_argument("--prob", help="also write the 8-bit probability map here")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("selfcheck", help="run the oracle suites")
    p.add_argument("--inject-fault", choices=("scan",), help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DatasetError, CheckpointError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
