"""Command-line entry point: prepare, train, infer, eval, visualize, ablate."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from urcod import __version__
from urcod.checkpoint import CheckpointError

log = logging.getLogger("urcod")

USER_ERRORS = (FileNotFoundError, ValueError, CheckpointError, NotADirectoryError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _pseudo_arg(p, default="corrupted:2,0.1"):
    p.add_argument(
        "--pseudo",
        default=default,
        help="pseudo-map source: builtin, precomputed:<dir> or corrupted:<radius>,<sigma> (default %(default)s)",
    )


def build_parser():
    parser = Parser(prog="urcod", description="Pseudo-label refinement for camouflaged object detection.")
    parser.add_argument("--version", action="version", version=f"urcod {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("prepare", help="write a synthetic camouflage dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--similarity", type=float, default=0.5, help="foreground/background texture similarity in [0, 1]")

    def training_flags(p):
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--config", type=Path, help="key=value file; --set and --seed override it")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int)
        p.add_argument("--preset", choices=("desk", "paper"), default="desk", help="base schedule (default %(default)s)")
        p.add_argument("--size", type=int, help="resize samples to SIZE x SIZE")
        _pseudo_arg(p)

    p = sub.add_parser("train", help="train the edge generator and the refiner")
    training_flags(p)
    p.add_argument("--variant", choices=("full", "no_peg", "no_pmg"), default="full")

    p = sub.add_parser("ablate", help="train and score the full, no_peg and no_pmg variants")
    training_flags(p)
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("infer", help="write <out>/<id>.png predictions")
    p.add_argument("--data", required=True, type=Path, help="directory with images/ (masks/ needed for corrupted sources)")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mode", choices=("mean", "sample"), default="mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pseudo", help="override the pseudo-map source stored in the checkpoint")

    p = sub.add_parser("eval", help="score predictions against masks; writes CSV")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("visualize", help="image | pseudo-edge | gt | prediction panels")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--pred", type=Path, help="use saved predictions instead of running the model")
    p.add_argument("--pseudo")
    p.add_argument("--limit", type=int, default=8)
    return parser


# -- helpers --------------------------------------------------------------


def _config(args):
    from urcod.trainer import DESK_SCALE, TrainConfig, parse_config_text

    values = dict(DESK_SCALE) if args.preset == "desk" else {}
    if args.config is not None:
        values.update(parse_config_text(args.config.read_text()))
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = args.seed
    return TrainConfig.from_mapping(values)


def _source(spec, seed, model=None):
    from urcod.pmg import PseudoMapSource

    return PseudoMapSource.parse(spec, model=model, seed=seed)


def _load_inputs(root, size):
    """Samples resized to ``size`` plus the original (h, w) of each."""
    from urcod.imagedata import ImageSample, derive_edge_label, list_ids, load_dataset, read_rgb, resize_sample

    root = Path(root)
    if (root / "masks").is_dir():
        originals = load_dataset(root)
    else:
        originals = []
        for sid in list_ids(root):
            image = read_rgb(root / "images" / f"{sid}.png")
            blank = np.zeros(image.shape[:2])
            originals.append(ImageSample(sid, image, blank, derive_edge_label(blank)))
        if not originals:
            raise ValueError(f"{root}: no images found")
    return [resize_sample(s, size) for s in originals], [s.size for s in originals], (root / "masks").is_dir()


def _pipeline(args):
    from urcod.checkpoint import load_checkpoint
    from urcod.trainer import load_pipeline

    _, meta = load_checkpoint(args.checkpoint)
    source = _source(args.pseudo or meta["pseudo"], meta["config"]["seed"])
    return load_pipeline(args.checkpoint, source)


def _to_size(values, hw):
    import cv2

    h, w = hw
    if values.shape == (h, w):
        return values
    return np.clip(cv2.resize(values, (w, h), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)


# -- verbs ----------------------------------------------------------------


def cmd_prepare(args):
    from urcod.imagedata import SyntheticConfig, generate_synthetic_dataset, write_dataset

    cfg = SyntheticConfig(count=args.count, size=args.size, texture_similarity=args.similarity, seed=args.seed)
    write_dataset(generate_synthetic_dataset(cfg), args.out)
    print(f"wrote {cfg.count} samples to {args.out}")


def cmd_train(args):
    from urcod.imagedata import load_dataset
    from urcod.trainer import train

    cfg = _config(args)
    data = load_dataset(args.data, args.size, cfg.edge_width)
    path = train(cfg, data, _source(args.pseudo, cfg.seed), args.out, args.variant)
    print(path)


def cmd_ablate(args):
    from urcod.imagedata import load_dataset, split_samples
    from urcod.trainer import ablate, evaluate_pseudo

    cfg = _config(args)
    data = load_dataset(args.data, args.size, cfg.edge_width)
    source = _source(args.pseudo, cfg.seed)
    result = ablate(cfg, data, source, test_fraction=args.test_fraction)
    test = split_samples(data, args.test_fraction, cfg.seed).test
    # raw pseudo-maps on the same held-out split, for reference
    baseline = evaluate_pseudo(source, test)
    text = result.to_csv() + "pseudo," + ",".join(f"{v:.6f}" for v in baseline.means) + "\n"
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "ablation.csv").write_text(text)
    sys.stdout.write(text)


def cmd_infer(args):
    from urcod.imagedata import write_gray

    pipe = _pipeline(args)
    samples, sizes, has_masks = _load_inputs(args.data, pipe.peg.input_size)
    if pipe.source.kind == "corrupted" and not has_masks:
        raise ValueError(f"{args.data}: corrupted pseudo-maps need masks/; pass --pseudo builtin or precomputed:<dir>")
    preds = pipe.predict(samples, mode=args.mode, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for s, p, hw in zip(samples, preds, sizes):
        write_gray(args.out / f"{s.id}.png", _to_size(p, hw))
    print(f"wrote {len(samples)} predictions to {args.out}")


def cmd_eval(args):
    from urcod.imagedata import load_dataset, read_gray
    from urcod.metrics import evaluate_dataset

    samples = load_dataset(args.data)
    preds = []
    for s in samples:
        path = args.pred / f"{s.id}.png"
        if not path.is_file():
            raise FileNotFoundError(f"no prediction for {s.id!r} (expected {path})")
        preds.append(read_gray(path))
    text = evaluate_dataset(preds, samples).to_csv()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)


def cmd_visualize(args):
    import cv2

    from urcod.imagedata import read_gray
    from urcod.trainer import predict_edges

    pipe = _pipeline(args)
    samples, sizes, _ = _load_inputs(args.data, pipe.peg.input_size)
    samples = samples[: args.limit]
    edges = predict_edges(pipe.peg, samples)
    if args.pred is not None:
        preds = [_to_size(read_gray(args.pred / f"{s.id}.png"), s.size) for s in samples]
    else:
        preds = pipe.predict(samples)
    args.out.mkdir(parents=True, exist_ok=True)
    for s, e, p in zip(samples, edges, preds):
        gray = [np.repeat(m[..., None], 3, axis=2) for m in (e, s.gt_map, p)]
        panel = np.concatenate([s.image] + gray, axis=1)
        q = np.rint(np.clip(panel, 0, 1) * 255).astype(np.uint8)
        cv2.imwrite(str(args.out / f"{s.id}_panel.png"), cv2.cvtColor(q, cv2.COLOR_RGB2BGR))
    print(f"wrote {len(samples)} panels to {args.out}")


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
}


def run(argv=None):
    """Execute one command; returns 0 on success, 1 on user error, 2 on internal error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    import torch

    from urcod.imagedata import thread_count

    torch.set_num_threads(thread_count())
    try:
        COMMANDS[args.verb](args)
    except USER_ERRORS as exc:
        print(f"urcod {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"urcod {args.verb}: internal error: {exc!r}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())
