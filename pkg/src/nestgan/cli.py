"""Command-line entry point: ``nestgan <subcommand> --run-dir DIR ...``.

Relative paths given to any subcommand are resolved against ``--run-dir``.
When ``--run-dir`` is omitted, ``$NESTGAN_RUN_ROOT`` is used. Exit codes:
0 success, 1 usage or configuration error, 2 runtime failure.

Config files are INI style with optional ``[dataset]``, ``[train]`` and
``[evaluate]`` sections; values are Python literals (``scales = (16, 32, 64)``,
``local_loss = False``) or bare strings. Unknown sections or keys are
rejected. Flags override file values.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from .conditioning import UnknownTokenError
from .data import Dataset, DatasetError, DatasetSpec, generate_synthetic_dataset, ingest_external
from .evaluation import (METRICS, ClassifierConfig, EvalClassifier, LeakageError, VSConfig, VSModel,
                         format_table, train_eval_classifier, train_vs_model)
from .trainer import (CheckpointError, NonFiniteLossError, TrainConfig, evaluate_model, interpolate,
                      load_checkpoint, run_ablation, sample, save_interpolation, train)

RUN_ROOT_ENV = "NESTGAN_RUN_ROOT"
EVAL_KEYS = {"metrics", "n_images", "pairs_per_class", "seed"}

log = logging.getLogger("nestgan")


class UsageError(Exception):
    """Bad arguments or configuration (exit code 1)."""


# -- configuration ---------------------------------------------------------------

def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_config(path) -> dict[str, dict]:
    """Parse a config file into ``{section: {key: value}}``, rejecting unknown keys."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from exc
    known = {"dataset": {f.name for f in fields(DatasetSpec)},
             "train": {f.name for f in fields(TrainConfig)},
             "evaluate": EVAL_KEYS}
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in known:
            raise UsageError(f"unknown config section [{section}] in {path}")
        values = {k: _literal(v) for k, v in parser[section].items()}
        unknown = sorted(set(values) - known[section])
        if unknown:
            raise UsageError(f"unknown key(s) {unknown} in [{section}] of {path}")
        out[section] = values
    return out


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = _literal(value.strip())
    return out


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _words(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(" ", "").split(",") if v)


def resolve_train_config(args) -> TrainConfig:
    values = dict(read_config(_path(args, args.config)).get("train", {})) if args.config else {}
    if getattr(args, "preset", None) == "light":
        values = {**TrainConfig.desk_light().to_dict(), **values}
    values.update(_parse_set(args.set))
    flag_map = {"epochs": args.epochs, "seed": args.seed, "batch_size": args.batch_size,
                "enabled_scales": args.scales}
    values.update({k: v for k, v in flag_map.items() if v is not None})
    if args.no_local_loss:
        values["local_loss"] = False
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from exc


# -- paths -----------------------------------------------------------------------

def run_dir(args) -> Path:
    root = args.run_dir or os.environ.get(RUN_ROOT_ENV)
    if not root:
        raise UsageError(f"--run-dir is required (or set {RUN_ROOT_ENV})")
    return Path(root)


def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else run_dir(args) / p


def load_dataset(args, path, text_dim: int | None = None) -> Dataset:
    root = _path(args, path)
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    if (root / "embeddings.txt").exists():
        if text_dim is None:
            raise UsageError("external embedding datasets need the model's text_dim")
        return ingest_external(root, text_dim, split=getattr(args, "split", "train"))
    return Dataset.load(root)


def _captions(args) -> list[tuple[str, ...]]:
    caps = [c.split() for c in args.caption or []]
    if args.captions_file:
        caps += [line.split() for line in _path(args, args.captions_file).read_text().splitlines()
                 if line.strip()]
    if not caps:
        raise UsageError("give at least one --caption or a --captions-file")
    return [tuple(c) for c in caps]


# -- subcommands -------------------------------------------------------------------

def cmd_make_dataset(args) -> int:
    values = dict(read_config(_path(args, args.config)).get("dataset", {})) if args.config else {}
    flag_map = {"colors": args.colors, "shapes": args.shapes, "resolution": args.resolution,
                "samples_per_class": args.samples_per_class, "seed": args.seed}
    values.update({k: v for k, v in flag_map.items() if v is not None})
    try:
        spec = DatasetSpec(**values)
    except TypeError as exc:
        raise UsageError(f"invalid dataset config: {exc}") from exc
    except DatasetError as exc:
        raise UsageError(str(exc)) from exc
    dataset = generate_synthetic_dataset(spec)
    out = _path(args, args.out)
    dataset.save(out)
    print(f"wrote {len(dataset)} samples in {len(dataset.class_names)} classes to {out}")
    for name in dataset.class_names:
        print(f"  {name}: {int((np.asarray(dataset.class_names)[dataset.labels] == name).sum())}")
    return 0


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    dataset = load_dataset(args, args.dataset, config.text_dim)
    out = run_dir(args) / args.name if args.name else run_dir(args)
    state = None
    if args.resume:
        state = load_checkpoint(_path(args, args.resume), scales=config.scales)
        state.config = config
    result = train(config, dataset, out, state=state)
    print(f"trained {result.state.epoch} epochs ({result.state.step} steps); "
          f"final checkpoint {result.checkpoint}")
    return 0


def cmd_sample(args) -> int:
    state = load_checkpoint(_path(args, args.checkpoint))
    captions = _captions(args)
    out = _path(args, args.out)
    sample(state, captions, args.n_per_caption, args.seed, out)
    print(f"wrote {len(captions) * args.n_per_caption} samples per scale to {out}")
    return 0


def cmd_interpolate(args) -> int:
    state = load_checkpoint(_path(args, args.checkpoint))
    frames = interpolate(state, tuple(args.source.split()), tuple(args.target.split()),
                         args.steps, args.seed)
    out = _path(args, args.out)
    save_interpolation(frames, out)
    print(f"wrote {args.steps} frames per scale to {out}")
    return 0


def _metric_list(text: str) -> tuple[str, ...]:
    names = _words(text)
    bad = [m for m in names if m not in METRICS]
    if bad or not names:
        raise UsageError(f"unknown metric(s) {bad}; choose from {list(METRICS)}")
    return names


def _eval_models(args, dataset: Dataset, metrics, seed: int):
    """Load or train the VS model and classifier on real data, caching them in the run dir."""
    vs = clf = None
    if "vs" in metrics:
        path = _path(args, args.vs_model) if args.vs_model else run_dir(args) / "vs_model.pt"
        if path.exists():
            vs = VSModel.load(path)
        else:
            vs = train_vs_model(dataset, VSConfig(seed=seed))
            vs.save(path)
    if "inception" in metrics:
        path = _path(args, args.classifier) if args.classifier else run_dir(args) / "classifier.pt"
        if path.exists():
            clf = EvalClassifier.load(path)
        else:
            clf = train_eval_classifier(dataset, ClassifierConfig(seed=seed))
            clf.save(path)
    return vs, clf


def cmd_evaluate(args) -> int:
    metrics = _metric_list(args.metrics)
    state = load_checkpoint(_path(args, args.checkpoint))
    dataset = load_dataset(args, args.dataset, state.config.text_dim)
    vs, clf = _eval_models(args, dataset, metrics, args.seed)
    report = evaluate_model(state, dataset, vs, clf, metrics, n_images=args.n_images, seed=args.seed,
                            pairs_per_class=args.pairs_per_class, ground_truth=args.ground_truth)
    out = _path(args, args.out)
    report.save(out)
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    base = resolve_train_config(args)
    metrics = _metric_list(args.metrics)
    dataset = load_dataset(args, args.dataset, base.text_dim)
    subsets = [_ints(s) for s in args.subsets.split(";") if s.strip()]
    local = tuple({"on": True, "off": False}[v] for v in _words(args.local))
    vs, clf = _eval_models(args, dataset, metrics, base.seed)
    rows = run_ablation(base, dataset, subsets, local, _ints(args.seeds), vs, clf,
                        n_images=args.n_images, run_root=run_dir(args) / "ablation", metrics=metrics)
    columns = ["color_accuracy", "vs_mean", "msssim_overall", "inception_mean"]
    table = format_table(rows, columns)
    (run_dir(args) / "ablation.txt").write_text(table)
    print(table, end="")
    return 0


# -- parser ----------------------------------------------------------------------

def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file ([train] section)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--preset", choices=["default", "light"], default="default",
                   help="'light' uses narrow channel widths for single-core machines")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--scales", type=_ints, help="enabled discriminator scales, e.g. 64 or 16,32,64")
    p.add_argument("--no-local-loss", action="store_true", help="disable the local image loss")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", help=f"base directory for all paths (default ${RUN_ROOT_ENV})")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nestgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", parents=[common], help="render the synthetic shapes dataset")
    p.add_argument("--out", default="dataset")
    p.add_argument("--config", help="INI config file ([dataset] section)")
    p.add_argument("--colors", type=_words)
    p.add_argument("--shapes", type=_words)
    p.add_argument("--resolution", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", parents=[common], help="train generator and discriminators")
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--name", help="subdirectory of the run dir for this run")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--split", default="train", help="split list for external datasets")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="sample image pyramids for captions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--caption", action="append", help="space-separated caption tokens")
    p.add_argument("--captions-file", help="one caption per line")
    p.add_argument("--n-per-caption", type=int, default=6)
    p.add_argument("--out", default="samples")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", parents=[common], help="interpolate between two captions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", default="interpolation")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", parents=[common], help="score samples with the metric suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--split", default="test")
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--pairs-per-class", type=int, default=400)
    p.add_argument("--ground-truth", action="store_true", help="score the real images instead")
    p.add_argument("--vs-model", help="saved VS model (trained on real data if absent)")
    p.add_argument("--classifier", help="saved eval classifier (trained on real data if absent)")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="train and compare discriminator subsets")
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--subsets", default="64;16,32,64", help="';'-separated scale subsets")
    p.add_argument("--local", default="on", help="comma list of on/off")
    p.add_argument("--seeds", default="0")
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--vs-model")
    p.add_argument("--classifier")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; this tool reserves 2 for runtime failures
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command in ("sample", "interpolate", "evaluate"):
        args.seed = 0
    torch.set_num_threads(1)  # single-threaded math keeps reruns bit-identical
    try:
        return args.func(args)
    except (UsageError, DatasetError, UnknownTokenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, NonFiniteLossError, LeakageError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
