"""Command-line surface: generate datasets, train, evaluate.

Exit codes are part of the contract so sweep scripts can branch on the
failure class: 0 ok, 2 config/usage error, 3 I/O error, 4 non-finite
training abort, 5 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import load_run_config, write_resolved
from .errors import ConfigError, CorruptCheckpointError, NonFiniteError
from .evaluate import (
    append_report_csv,
    evaluate_model,
    export_attention_images,
    write_report,
)
from .network import GroupingNetwork, model_config_from_arrays
from .scenes import SceneConfig, load_manifest, load_scene, split_entries, write_dataset
from .tensor import Tensor
from .trainer import Trainer, train_loop

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONFINITE = 4
EXIT_CORRUPT = 5


def _read_manifest(data_dir):
    try:
        return load_manifest(data_dir)
    except json.JSONDecodeError as exc:
        raise OSError(f"corrupt manifest in {data_dir}: {exc}") from None


def cmd_generate(args):
    if args.count < 0:
        raise ConfigError(f"--count must be nonnegative, got {args.count}")
    scene_config = SceneConfig(size=args.size)
    write_dataset(args.count, scene_config, args.out, args.seed)
    print(f"wrote {args.count} scenes to {args.out}")
    return EXIT_OK


def _load_images(data_dir, entries):
    return [load_scene(data_dir, entry).image for entry in entries]


def cmd_train(args):
    run = load_run_config(args.config)
    manifest = _read_manifest(args.data)
    if manifest["size"] != run.model.input_size:
        raise ConfigError(
            f"dataset size {manifest['size']} does not match "
            f"model input_size {run.model.input_size}"
        )
    train_entries, _ = split_entries(manifest)
    if not train_entries:
        raise ConfigError("dataset has no training scenes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(run, out / "config.resolved")
    trainer = Trainer(run.model, run.train, run.augment, run.weights)
    if args.resume:
        trainer.load_state(load_checkpoint(args.resume))
    images = _load_images(args.data, train_entries)
    final = train_loop(trainer, images, out, status=print)
    print(f"final checkpoint: {final}")
    return EXIT_OK


def _scene_tuples(data_dir, entries):
    scenes = []
    for entry in entries:
        scene = load_scene(data_dir, entry)
        scenes.append(
            (scene.image, scene.semantic_map, scene.instance_map, scene.group_map)
        )
    return scenes


def cmd_eval(args):
    arrays = load_checkpoint(args.ckpt)
    model_config = model_config_from_arrays(arrays)
    network = GroupingNetwork(model_config, seed=0)
    network.load_arrays(arrays, "teacher")
    network.freeze()
    manifest = _read_manifest(args.data)
    if manifest["size"] != model_config.input_size:
        raise ConfigError(
            f"dataset size {manifest['size']} does not match "
            f"checkpoint input_size {model_config.input_size}"
        )
    _, val_entries = split_entries(manifest)
    if not val_entries:
        raise ConfigError("dataset has no validation scenes")
    scenes = _scene_tuples(args.data, val_entries)
    report = evaluate_model(network, scenes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    step = int(arrays["meta/step"][0])
    write_report(report, out / "metrics.json")
    append_report_csv(report, out / "eval.csv", step)
    if args.export_maps:
        image = scenes[0][0]
        export_attention_images(network(Tensor(image)), image, out / "maps")
    print(
        f"step {step}: purity {report.semantic_purity:.4f} "
        f"instance_ari {report.instance_ari:.4f} "
        f"hierarchy_ari {report.hierarchy_ari:.4f} "
        f"usage_entropy {report.usage_entropy:.4f} "
        f"({report.n_scenes} scenes)"
    )
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="protoscale",
        description="prototype grouping: dataset generation, training, evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic scene dataset")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=64)
    gen.set_defaults(func=cmd_generate)

    train = sub.add_parser("train", help="run the training loop")
    train.add_argument("--config", required=True)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--resume", default=None)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on the validation split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--export-maps", action="store_true")
    ev.set_defaults(func=cmd_eval)
    return parser


def entrypoint(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptCheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except NonFiniteError as exc:
        print(f"training aborted on non-finite value: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(entrypoint())


if __name__ == "__main__":
    main()
