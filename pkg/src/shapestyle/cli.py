"""Operator surface: dataset generation, training, transfer, evaluation, ablation."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (
    DatasetManifest,
    build_template,
    export_manifest_meshes,
    generate_body,
    make_manifest,
    sample_pair_specs,
)
from .evaluation import ablation_table, evaluate
from .mesh import MeshError, load_mesh, save_mesh
from .models import TemplateMismatchError, TransferPipeline
from .training import NonFiniteLossError, TrainConfig, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

OUT_DIR_ENV = "SHAPESTYLE_OUT"


class UsageError(Exception):
    pass


def _resolve_out(args):
    """--out falls back to $SHAPESTYLE_OUT when the flag is omitted."""
    if args.out is None:
        args.out = os.environ.get(OUT_DIR_ENV)
    if args.out is None:
        raise UsageError(f"--out is required (or set {OUT_DIR_ENV})")


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the CLI contract reserves 2
    # for data errors, so usage failures are rerouted through UsageError
    def error(self, message):
        raise UsageError(message)


def _print_resolved(command: str, args: argparse.Namespace):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"[shapestyle {command}] resolved config: "
          + json.dumps(resolved, sort_keys=True, default=str))


def _read_plain_config(path: str) -> dict:
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _write_plain_config(path: str, values: dict):
    with open(path, "w", encoding="ascii") as fh:
        for key, value in values.items():
            fh.write(f"{key}={value}\n")


def _cmd_gen_data(args) -> int:
    _resolve_out(args)
    if args.config:
        file_values = _read_plain_config(args.config)
        for key, cast in (("shapes", int), ("poses", int), ("seed", int),
                          ("resolution", int), ("split_fraction", float)):
            if getattr(args, key) is None and key in file_values:
                setattr(args, key, cast(file_values[key]))
    defaults = {"shapes": 4, "poses": 6, "seed": 0, "resolution": 1, "split_fraction": 0.25}
    for key, value in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    _print_resolved("gen-data", args)

    manifest = make_manifest(
        num_shapes=args.shapes,
        num_poses=args.poses,
        seed=args.seed,
        split_fraction=args.split_fraction,
        resolution=args.resolution,
    )
    os.makedirs(args.out, exist_ok=True)
    manifest_path = os.path.join(args.out, "manifest.json")
    manifest.to_json(manifest_path)
    _write_plain_config(
        os.path.join(args.out, "config.txt"),
        {
            "shapes": args.shapes,
            "poses": args.poses,
            "seed": args.seed,
            "resolution": args.resolution,
            "split_fraction": args.split_fraction,
        },
    )
    names = [] if args.no_objs else export_manifest_meshes(manifest, args.out)
    print(f"wrote {manifest_path} ({len(manifest.bodies)} cells, "
          f"{len(manifest.cells('train'))} train / {len(manifest.cells('validation'))} validation)"
          + (f" and {len(names)} OBJ files" if names else ""))
    return EXIT_OK


def _cmd_train(args) -> int:
    _resolve_out(args)
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    for key in ("steps", "batch_size", "seed"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if overrides:
        d = config.to_dict()
        d.update(overrides)
        config = TrainConfig.from_dict(d)
    args.effective_config = config.to_dict()
    _print_resolved("train", args)

    manifest = DatasetManifest.from_json(args.data)
    checkpoint = fit(manifest, config, args.out, resume_from=args.resume)
    print(f"final checkpoint: {checkpoint}")
    return EXIT_OK


def _cmd_transfer(args) -> int:
    _print_resolved("transfer", args)
    pipeline, _ = TransferPipeline.load(args.checkpoint)
    posed = load_mesh(args.posed)
    identity = load_mesh(args.identity)
    result = pipeline.transfer(posed, identity)
    save_mesh(result, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    _print_resolved("eval", args)
    manifest = DatasetManifest.from_json(args.data)
    report = evaluate(args.checkpoint, manifest, args.split)
    print(report.summary())
    if args.csv:
        report.to_csv(args.csv)
        print(f"wrote {args.csv}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    _resolve_out(args)
    _print_resolved("ablate", args)
    manifest = DatasetManifest.from_json(args.data)
    configs = [
        (args.label_a, TrainConfig.from_json(args.config_a)),
        (args.label_b, TrainConfig.from_json(args.config_b)),
    ]
    table = ablation_table(manifest, configs, args.out)
    print(table.to_text())
    print(table.to_csv())
    return EXIT_OK


def _cmd_export_pair(args) -> int:
    _resolve_out(args)
    _print_resolved("export-pair", args)
    manifest = DatasetManifest.from_json(args.data)
    template = build_template(manifest.resolution)
    rng = np.random.default_rng(args.seed)
    specs = sample_pair_specs(manifest, rng)
    os.makedirs(args.out, exist_ok=True)
    for name, spec in zip(("posed", "identity", "ground_truth"), specs):
        path = os.path.join(args.out, f"{name}.obj")
        save_mesh(generate_body(template, spec), path)
        print(f"wrote {path} (shape {spec.shape_id}, pose {spec.pose_id})")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="shapestyle", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--shapes", type=int, default=None)
    p.add_argument("--poses", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--split-fraction", dest="split_fraction", type=float, default=None)
    p.add_argument("--config", default=None, help="plain-text config driving regeneration")
    p.add_argument("--out", default=None, help=f"output dir (default ${OUT_DIR_ENV})")
    p.add_argument("--no-objs", action="store_true", help="skip per-cell OBJ export")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--config", default=None, help="TrainConfig JSON (flags win)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out", default=None, help=f"output dir (default ${OUT_DIR_ENV})")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("transfer", help="transfer an identity's style onto a posed mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--posed", required=True)
    p.add_argument("--identity", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "validation"), default="validation")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train two configs and tabulate both splits")
    p.add_argument("--data", required=True)
    p.add_argument("--config-a", dest="config_a", required=True)
    p.add_argument("--config-b", dest="config_b", required=True)
    p.add_argument("--label-a", dest="label_a", default="config_a")
    p.add_argument("--label-b", dest="label_b", default="config_b")
    p.add_argument("--out", default=None, help=f"output dir (default ${OUT_DIR_ENV})")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-pair", help="dump a (posed, identity, ground-truth) triple")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help=f"output dir (default ${OUT_DIR_ENV})")
    p.set_defaults(func=_cmd_export_pair)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, MeshError, TemplateMismatchError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, ValueError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())
